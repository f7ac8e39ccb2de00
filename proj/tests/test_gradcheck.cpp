#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "gridsight/common.hpp"
#include "gridsight/models.hpp"
#include "gridsight/nn.hpp"

// Central finite-difference checks at 64-bit for every differentiable op:
// conv block, ConvLSTM cell, both losses, the full auxiliary stack and the
// sequential head. Tiny instances, relative error < 1e-4.

using namespace gridsight;
using models::Mode;

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kTol = 1e-4;

// Relative error with an absolute floor: differences below ~1e-9 are
// within central-difference truncation noise and count as agreement.
double rel_err(double a, double b) {
  if (std::abs(a - b) <= 1e-9) return 0.0;
  const double denom = std::max(std::abs(a) + std::abs(b), 1e-8);
  return std::abs(a - b) / denom;
}

void fill_random(TensorD& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t) v = rng.uniform(lo, hi);
}

// Checks every trainable parameter of `params` and, optionally, extra
// input tensors, against central differences of `loss_only`.
void check_grads(nn::ParamStore<double>& params, const std::function<double()>& loss_only,
                 const std::function<double()>& loss_and_grad,
                 std::vector<std::pair<TensorD*, const TensorD*>> inputs_and_grads = {}) {
  params.zero_grads();
  loss_and_grad();

  int checked = 0;
  for (auto& [name, entry] : params) {
    if (!entry.trainable) continue;
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double orig = entry.value[i];
      entry.value[i] = orig + kFdStep;
      const double lp = loss_only();
      entry.value[i] = orig - kFdStep;
      const double lm = loss_only();
      entry.value[i] = orig;
      const double fd = (lp - lm) / (2 * kFdStep);
      const double an = entry.grad[i];
      if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
      INFO("param ", name, "[", i, "] analytic=", an, " fd=", fd);
      REQUIRE(rel_err(an, fd) < kTol);
      ++checked;
    }
  }
  for (auto& [x, dx] : inputs_and_grads) {
    for (std::size_t i = 0; i < x->size(); ++i) {
      const double orig = (*x)[i];
      (*x)[i] = orig + kFdStep;
      const double lp = loss_only();
      (*x)[i] = orig - kFdStep;
      const double lm = loss_only();
      (*x)[i] = orig;
      const double fd = (lp - lm) / (2 * kFdStep);
      const double an = (*dx)[i];
      if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
      INFO("input grad [", i, "] analytic=", an, " fd=", fd);
      REQUIRE(rel_err(an, fd) < kTol);
      ++checked;
    }
  }
  CHECK(checked > 0);
}

codec::GridSpec tiny_grid() {
  codec::GridSpec g;
  g.rows = 2;
  g.cols = 3;
  g.stride = 4;
  g.anchors = {{3.0f, 6.0f}, {6.0f, 3.0f}};
  return g;
}

}  // namespace

TEST_CASE("conv + batchnorm + leaky block gradients") {
  Rng rng(11);
  TensorD x({2, 5, 6});
  fill_random(x, rng);
  nn::ParamStore<double> params;
  auto& w = params.add("blk.conv.w", {3, 2, 3, 3});
  models::he_init(w, 18, rng);
  params.add("blk.bn.gamma", {3}).fill(1.0);
  auto& beta = params.add("blk.bn.beta", {3});
  fill_random(beta, rng, -0.2, 0.2);
  TensorD r({3, 3, 3});  // projection to a scalar (stride-2 conv output is 3x3)
  fill_random(r, rng);

  nn::Conv2dSpec cs{2, 3, 3, 2, 1};
  TensorD dx_store;

  auto forward = [&](nn::BnCache<double>* bn_cache, TensorD* conv_out_store,
                     TensorD* bn_out_store) {
    TensorD conv_out;
    nn::conv2d_forward<double>(x, params.value("blk.conv.w"), nullptr, cs, conv_out);
    TensorD bn_out;
    nn::bn_forward_train<double>(conv_out, params.value("blk.bn.gamma"), params.value("blk.bn.beta"),
                         nullptr, nullptr, 0.1, 1e-5, bn_out, bn_cache);
    TensorD act(bn_out.shape());
    nn::Ops<double>::leaky_relu(static_cast<int>(bn_out.size()), bn_out.data(), act.data(), 0.1);
    double loss = 0;
    for (std::size_t i = 0; i < act.size(); ++i) loss += r[i] * act[i];
    if (conv_out_store) *conv_out_store = std::move(conv_out);
    if (bn_out_store) *bn_out_store = std::move(bn_out);
    return loss;
  };

  auto loss_only = [&] { return forward(nullptr, nullptr, nullptr); };
  auto loss_and_grad = [&] {
    nn::BnCache<double> bn_cache;
    TensorD conv_out, bn_out;
    const double loss = forward(&bn_cache, &conv_out, &bn_out);
    TensorD dy(bn_out.shape());
    nn::Ops<double>::leaky_relu_grad(static_cast<int>(bn_out.size()), bn_out.data(), r.data(),
                                     dy.data(), 0.1);
    TensorD d_conv;
    nn::bn_backward(dy, bn_cache, params.value("blk.bn.gamma"), d_conv,
                    params.grad("blk.bn.gamma"), params.grad("blk.bn.beta"));
    nn::conv2d_backward<double>(x, params.value("blk.conv.w"), cs, d_conv, &dx_store,
                        params.grad("blk.conv.w"), nullptr);
    return loss;
  };

  check_grads(params, loss_only, loss_and_grad, {{&x, &dx_store}});
}

TEST_CASE("convlstm cell gradients including states") {
  Rng rng(12);
  const nn::ConvLstmSpec spec{2, 2, 3};
  TensorD x({2, 3, 3}), h0({2, 3, 3}), c0({2, 3, 3});
  fill_random(x, rng);
  fill_random(h0, rng, -0.5, 0.5);
  fill_random(c0, rng, -0.5, 0.5);
  nn::ParamStore<double> params;
  auto& w = params.add("cell.w", {8, 4, 3, 3});
  models::he_init(w, 36, rng);
  auto& b = params.add("cell.b", {8});
  fill_random(b, rng, -0.3, 0.3);
  TensorD rh({2, 3, 3}), rc({2, 3, 3});
  fill_random(rh, rng);
  fill_random(rc, rng);

  TensorD dx_store, dh0_store, dc0_store;

  auto loss_only = [&] {
    TensorD h, c;
    nn::convlstm_forward<double>(x, h0, c0, params.value("cell.w"), params.value("cell.b"), spec, h, c,
                         nullptr);
    double loss = 0;
    for (std::size_t i = 0; i < h.size(); ++i) loss += rh[i] * h[i] + rc[i] * c[i];
    return loss;
  };
  auto loss_and_grad = [&] {
    nn::ConvLstmCache<double> cache;
    TensorD h, c;
    nn::convlstm_forward<double>(x, h0, c0, params.value("cell.w"), params.value("cell.b"), spec, h, c,
                         &cache);
    double loss = 0;
    for (std::size_t i = 0; i < h.size(); ++i) loss += rh[i] * h[i] + rc[i] * c[i];
    nn::convlstm_backward(rh, &rc, params.value("cell.w"), spec, cache, params.grad("cell.w"),
                          params.grad("cell.b"), &dx_store, &dh0_store, &dc0_store);
    return loss;
  };

  check_grads(params, loss_only, loss_and_grad,
              {{&x, &dx_store}, {&h0, &dh0_store}, {&c0, &dc0_store}});
}

TEST_CASE("detection loss gradients vs finite differences") {
  Rng rng(13);
  const auto grid = tiny_grid();
  TensorD raw({grid.rows, grid.cols, grid.n_anchors(), grid.det_channels()});
  fill_random(raw, rng, -2.0, 2.0);
  TensorD target(raw.shape());
  // two object cells with plausible residual targets
  auto set_obj = [&](int i, int j, int k, int cls, double tx, double ty, double tw, double th) {
    target.at(i, j, k, 0) = 1.0;
    target.at(i, j, k, 1 + cls) = 1.0;
    target.at(i, j, k, grid.ch_tx()) = tx;
    target.at(i, j, k, grid.ch_ty()) = ty;
    target.at(i, j, k, grid.ch_tw()) = tw;
    target.at(i, j, k, grid.ch_th()) = th;
  };
  set_obj(0, 1, 0, 0, 0.3, 0.7, 0.2, -0.1);
  set_obj(1, 2, 1, 2, 0.9, 0.1, -0.4, 0.5);

  TensorD d_raw;
  auto loss_only = [&] {
    return models::detection_loss<double>(raw, target, grid, 0.5, 5.0, nullptr).total;
  };
  auto loss_and_grad = [&] {
    return models::detection_loss<double>(raw, target, grid, 0.5, 5.0, &d_raw).total;
  };
  nn::ParamStore<double> empty;
  loss_and_grad();
  // FD over every raw entry
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double orig = raw[i];
    raw[i] = orig + kFdStep;
    const double lp = loss_only();
    raw[i] = orig - kFdStep;
    const double lm = loss_only();
    raw[i] = orig;
    const double fd = (lp - lm) / (2 * kFdStep);
    if (std::abs(fd) < 1e-10 && std::abs(d_raw[i]) < 1e-10) continue;
    INFO("raw[", i, "]");
    REQUIRE(rel_err(d_raw[i], fd) < kTol);
  }
}

TEST_CASE("intent loss gradients and exact mask locality") {
  Rng rng(14);
  const auto grid = tiny_grid();
  TensorD logits({grid.rows, grid.cols, grid.n_anchors(), 2});
  fill_random(logits, rng, -2.0, 2.0);
  TensorD target(logits.shape());
  TensorF mask({grid.rows, grid.cols, grid.n_anchors()});
  mask.at(0, 0, 1) = 1.0f;
  target.at(0, 0, 1, 1) = 1.0;
  mask.at(1, 2, 0) = 1.0f;
  target.at(1, 2, 0, 0) = 1.0;

  TensorD d;
  auto loss_only = [&] { return models::intent_loss<double>(logits, target, mask, nullptr); };
  models::intent_loss<double>(logits, target, mask, &d);

  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double orig = logits[i];
    logits[i] = orig + kFdStep;
    const double lp = loss_only();
    logits[i] = orig - kFdStep;
    const double lm = loss_only();
    logits[i] = orig;
    const double fd = (lp - lm) / (2 * kFdStep);
    if (std::abs(fd) < 1e-10 && std::abs(d[i]) < 1e-10) continue;
    REQUIRE(rel_err(d[i], fd) < kTol);
  }

  // gradients at mask=0 cells are exactly zero (not just small)
  for (int i = 0; i < grid.rows; ++i)
    for (int j = 0; j < grid.cols; ++j)
      for (int k = 0; k < grid.n_anchors(); ++k) {
        if (mask.at(i, j, k) > 0.5f) continue;
        CHECK(d.at(i, j, k, 0) == 0.0);
        CHECK(d.at(i, j, k, 1) == 0.0);
      }
}

TEST_CASE("detector end-to-end gradients through detection loss") {
  Rng rng(15);
  codec::GridSpec grid = tiny_grid();  // 2x3 grid, stride 4 -> 8x12 image
  models::DetectorConfig cfg;
  cfg.image_h = 8;
  cfg.image_w = 12;
  cfg.blocks = {{4, 3, 2, true, true}, {6, 3, 2, true, true}};
  cfg.tap_layer = 1;
  models::Detector<double> det(cfg, grid);
  nn::ParamStore<double> params;
  det.init_params(params, rng);

  TensorD img({3, 8, 12});
  fill_random(img, rng, 0.0, 1.0);
  TensorD target({grid.rows, grid.cols, grid.n_anchors(), grid.det_channels()});
  target.at(0, 1, 0, 0) = 1.0;
  target.at(0, 1, 0, 1) = 1.0;
  target.at(0, 1, 0, grid.ch_tx()) = 0.4;
  target.at(0, 1, 0, grid.ch_ty()) = 0.6;

  auto loss_only = [&] {
    TensorD raw = det.forward_full(img, params, Mode::train, nullptr, nullptr, nullptr);
    return models::detection_loss<double>(raw, target, grid, 0.5, 5.0, nullptr).total;
  };
  auto loss_and_grad = [&] {
    models::DetectorCache<double> lower, upper;
    TensorD tap;
    TensorD raw = det.forward_full(img, params, Mode::train, &tap, &lower, &upper);
    TensorD d_raw;
    const double loss = models::detection_loss<double>(raw, target, grid, 0.5, 5.0, &d_raw).total;
    TensorD d_tap = det.backward_upper(d_raw, upper, params);
    det.backward_lower(d_tap, lower, params);
    return loss;
  };

  check_grads(params, loss_only, loss_and_grad);
}

TEST_CASE("auxiliary stack gradients (3 layers over 2 frames)") {
  Rng rng(16);
  codec::GridSpec grid = tiny_grid();
  models::AuxiliaryConfig acfg;
  acfg.adapter_ch = 2;
  acfg.hidden_ch = 2;
  acfg.seq_len = 2;
  // tap of 3 channels at 2x grid resolution
  models::AuxiliaryHead<double> aux(acfg, grid, 3, grid.rows * 2, grid.cols * 2);
  nn::ParamStore<double> params;
  aux.init_params(params, rng);

  std::vector<TensorD> taps(2, TensorD({3, grid.rows * 2, grid.cols * 2}));
  for (auto& t : taps) fill_random(t, rng);
  TensorD target({grid.rows, grid.cols, grid.n_anchors(), 2});
  TensorF mask({grid.rows, grid.cols, grid.n_anchors()});
  mask.at(0, 2, 1) = 1.0f;
  target.at(0, 2, 1, 1) = 1.0;
  mask.at(1, 0, 0) = 1.0f;
  target.at(1, 0, 0, 0) = 1.0;

  TensorD dtap0, dtap1;
  auto loss_only = [&] {
    TensorD logits = aux.forward(taps, params, nullptr);
    return models::intent_loss<double>(logits, target, mask, nullptr);
  };
  auto loss_and_grad = [&] {
    models::AuxCache<double> cache;
    TensorD logits = aux.forward(taps, params, &cache);
    TensorD d_logits;
    const double loss = models::intent_loss<double>(logits, target, mask, &d_logits);
    auto dtaps = aux.backward(d_logits, cache, params, true);
    dtap0 = std::move(dtaps[0]);
    dtap1 = std::move(dtaps[1]);
    return loss;
  };

  check_grads(params, loss_only, loss_and_grad, {{&taps[0], &dtap0}, {&taps[1], &dtap1}});
}

TEST_CASE("sequential head gradients on a reduced config") {
  Rng rng(17);
  models::SequentialBaselineConfig cfg;
  cfg.crop_h = 8;
  cfg.crop_w = 8;
  cfg.encoder = {{3, 3, 2, true, true}, {4, 3, 2, true, true}};
  cfg.lstm_hidden = 2;
  cfg.seq_len = 2;
  models::SequentialBaseline<double> model(cfg);
  nn::ParamStore<double> params;
  model.init_params(params, rng);

  std::vector<TensorD> crops(2, TensorD({3, 8, 8}));
  for (auto& c : crops) fill_random(c, rng, 0.0, 1.0);
  const double label = 1.0;

  auto loss_of_logit = [&](double z) { return nn::bce_with_logit(z, label); };
  auto loss_only = [&] {
    return loss_of_logit(model.forward(crops, params, Mode::train, nullptr));
  };
  auto loss_and_grad = [&] {
    models::SequentialCache<double> cache;
    const double z = model.forward(crops, params, Mode::train, &cache);
    const double loss = loss_of_logit(z);
    model.backward(nn::sigmoid(z) - label, cache, params);
    return loss;
  };

  check_grads(params, loss_only, loss_and_grad);
}
