#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gridsight/checkpoint.hpp"
#include "gridsight/common.hpp"
#include "gridsight/config.hpp"
#include "gridsight/models.hpp"

using namespace gridsight;
using models::Mode;

namespace {

config::RunConfig desk() { return config::preset("desk"); }

template <typename T>
void zero_all(nn::ParamStore<T>& params) {
  for (auto& [name, e] : params) e.value.zero();
}

}  // namespace

TEST_CASE("zeroed detector maps any image to zeros (tap and raw)") {
  auto rc = desk();
  models::Detector<float> det(rc.detector, rc.grid);
  nn::ParamStore<float> params;
  Rng rng(1);
  det.init_params(params, rng);
  zero_all(params);

  TensorF img({3, 192, 320});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>((i % 7) * 0.1);
  TensorF tap;
  TensorF raw = det.forward_full(img, params, Mode::train, &tap, nullptr, nullptr);
  for (std::size_t i = 0; i < tap.size(); ++i) REQUIRE(tap[i] == 0.0f);
  for (std::size_t i = 0; i < raw.size(); ++i) REQUIRE(raw[i] == 0.0f);
}

TEST_CASE("paper-shape preset produces the contract tensor shapes") {
  auto rc = config::preset("paper-shape");
  models::Detector<float> det(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid,
                                   rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));
  nn::ParamStore<float> params;
  Rng rng(2);
  det.init_params(params, rng);
  aux.init_params(params, rng);

  TensorF img({3, 352, 640});
  TensorF tap;
  TensorF raw = det.forward_full(img, params, Mode::eval, &tap, nullptr, nullptr);
  CHECK(raw.shape() == std::vector<int>{11, 20, 5, 9});
  CHECK(raw.size() == 9900u);

  std::vector<TensorF> taps(15, tap);
  TensorF logits = aux.forward(taps, params, nullptr);
  CHECK(logits.shape() == std::vector<int>{11, 20, 5, 2});
  CHECK(logits.size() == 2200u);
}

TEST_CASE("single-pixel perturbation stays inside the receptive field at the tap") {
  auto rc = desk();
  models::Detector<float> det(rc.detector, rc.grid);
  nn::ParamStore<float> params;
  Rng rng(3);
  det.init_params(params, rng);

  TensorF img({3, 192, 320});
  Rng drng(4);
  for (auto& v : img) v = static_cast<float>(drng.uniform());
  TensorF tap0 = det.forward_lower(img, params, Mode::eval, nullptr);

  const int py = 100, px = 163;
  img.at(1, py, px) += 0.5f;
  TensorF tap1 = det.forward_lower(img, params, Mode::eval, nullptr);

  // receptive-field bound computed from the layer specs
  const int L = rc.detector.tap_layer;
  const int rf = rc.detector.receptive_field(L);
  const int jump = 192 / rc.detector.layer_out_h(L);  // tap grid stride in px
  int changed = 0;
  for (int c = 0; c < tap0.dim(0); ++c)
    for (int y = 0; y < tap0.dim(1); ++y)
      for (int x = 0; x < tap0.dim(2); ++x) {
        if (tap0.at(c, y, x) == tap1.at(c, y, x)) continue;
        ++changed;
        // a tap unit at (y,x) sees pixels within rf/2 of its center
        const float cy = (y + 0.5f) * jump, cx = (x + 0.5f) * jump;
        CHECK(std::fabs(cy - py) <= rf / 2.0f + jump);
        CHECK(std::fabs(cx - px) <= rf / 2.0f + jump);
      }
  CHECK(changed > 0);
}

TEST_CASE("convlstm gate saturation example") {
  // zero weights, b_f = +10, b_i = b_o = -10: the cell nearly preserves
  // its state and the output collapses
  const nn::ConvLstmSpec spec{2, 2, 3};
  TensorD w({8, 4, 3, 3});
  TensorD b({8});
  for (int c = 0; c < 2; ++c) {
    b[static_cast<std::size_t>(0 + c)] = -10.0;  // i
    b[static_cast<std::size_t>(2 + c)] = 10.0;   // f
    b[static_cast<std::size_t>(4 + c)] = -10.0;  // o
  }
  TensorD x({2, 3, 3});
  TensorD h0({2, 3, 3});
  TensorD c0({2, 3, 3});
  for (std::size_t i = 0; i < c0.size(); ++i) c0[i] = 0.5 + 0.1 * static_cast<double>(i % 3);
  TensorD h1, c1;
  nn::convlstm_forward<double>(x, h0, c0, w, b, spec, h1, c1, nullptr);
  const double sig10 = 1.0 / (1.0 + std::exp(-10.0));
  for (std::size_t i = 0; i < c1.size(); ++i) {
    CHECK(c1[i] == doctest::Approx(sig10 * c0[i]).epsilon(1e-6));
    CHECK(std::abs(c1[i] / c0[i] - 0.99995) < 1e-4);
    CHECK(std::abs(h1[i]) < 1e-4 * std::abs(std::tanh(c1[i])));
  }
}

TEST_CASE("auxiliary: t=1 reduces to a feedforward stack and wrong t errors") {
  auto rc = desk();
  rc.aux.seq_len = 1;
  rc.world.seq_len = 8;  // model-level check only
  models::Detector<float> det(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid,
                                   rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));
  nn::ParamStore<float> params;
  Rng rng(5);
  det.init_params(params, rng);
  aux.init_params(params, rng);

  TensorF tap({rc.detector.layer_out_ch(rc.detector.tap_layer),
               rc.detector.layer_out_h(rc.detector.tap_layer),
               rc.detector.layer_out_w(rc.detector.tap_layer)});
  Rng drng(6);
  for (auto& v : tap) v = static_cast<float>(drng.uniform(-1, 1));

  TensorF a = aux.forward({tap}, params, nullptr);
  TensorF b = aux.forward({tap}, params, nullptr);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);  // purity
  CHECK_THROWS_AS(aux.forward({tap, tap}, params, nullptr), ConfigError);
}

TEST_CASE("auxiliary statefulness: permuting earlier frames changes the output") {
  auto rc = desk();
  models::Detector<float> det(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid,
                                   rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));
  nn::ParamStore<float> params;
  Rng rng(7);
  det.init_params(params, rng);
  aux.init_params(params, rng);

  std::vector<TensorF> taps;
  Rng drng(8);
  for (int t = 0; t < 8; ++t) {
    TensorF tap({rc.detector.layer_out_ch(rc.detector.tap_layer),
                 rc.detector.layer_out_h(rc.detector.tap_layer),
                 rc.detector.layer_out_w(rc.detector.tap_layer)});
    for (auto& v : tap) v = static_cast<float>(drng.uniform(-1, 1));
    taps.push_back(std::move(tap));
  }
  TensorF base = aux.forward(taps, params, nullptr);
  std::swap(taps[0], taps[1]);
  TensorF permuted = aux.forward(taps, params, nullptr);
  CHECK(base.shape() == permuted.shape());
  bool any_diff = false;
  for (std::size_t i = 0; i < base.size(); ++i)
    if (base[i] != permuted[i]) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("tap purity: upper detector layers cannot influence the intention output") {
  auto rc = desk();
  models::Detector<float> det(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid,
                                   rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));
  nn::ParamStore<float> params;
  Rng rng(9);
  det.init_params(params, rng);
  aux.init_params(params, rng);

  TensorF img({3, 192, 320});
  Rng drng(10);
  for (auto& v : img) v = static_cast<float>(drng.uniform());
  std::vector<TensorF> taps;
  for (int t = 0; t < 8; ++t)
    taps.push_back(det.forward_lower(img, params, Mode::eval, nullptr));
  TensorF before = aux.forward(taps, params, nullptr);

  // ablate everything above the tap
  for (auto& [name, e] : params) {
    if (name.rfind("det.", 0) != 0) continue;
    const int block = name.rfind("det.b", 0) == 0 ? std::stoi(name.substr(5, 2)) : 999;
    if (block > rc.detector.tap_layer) e.value.zero();
  }
  std::vector<TensorF> taps2;
  for (int t = 0; t < 8; ++t)
    taps2.push_back(det.forward_lower(img, params, Mode::eval, nullptr));
  TensorF after = aux.forward(taps2, params, nullptr);
  for (std::size_t i = 0; i < before.size(); ++i) REQUIRE(before[i] == after[i]);
}

TEST_CASE("sequential baseline: zero weights give probability one half, purity holds") {
  auto rc = desk();
  models::SequentialBaseline<float> model(rc.seq_baseline);
  nn::ParamStore<float> params;
  Rng rng(11);
  model.init_params(params, rng);
  zero_all(params);

  std::vector<TensorF> crops(8, TensorF({3, 48, 48}));
  Rng drng(12);
  for (auto& c : crops)
    for (auto& v : c) v = static_cast<float>(drng.uniform());
  const float z = model.forward(crops, params, Mode::eval, nullptr);
  CHECK(z == 0.0f);
  CHECK(nn::sigmoid(z) == 0.5f);

  // purity: identical crops, identical logits (with random weights)
  Rng rng2(13);
  nn::ParamStore<float> params2;
  model.init_params(params2, rng2);
  const float z1 = model.forward(crops, params2, Mode::eval, nullptr);
  const float z2 = model.forward(crops, params2, Mode::eval, nullptr);
  CHECK(z1 == z2);
  CHECK_THROWS_AS(model.forward({}, params2, Mode::eval, nullptr), ConfigError);
}

TEST_CASE("detection loss analytic examples") {
  auto rc = desk();
  const auto& g = rc.grid;
  TensorD raw({g.rows, g.cols, g.n_anchors(), g.det_channels()});
  TensorD target(raw.shape());

  // empty target, zero logits: lambda_noobj * H*W*A * ln 2
  auto terms = models::detection_loss<double>(raw, target, g, 0.5, 5.0, nullptr);
  const double expect = 0.5 * g.rows * g.cols * g.n_anchors() * std::log(2.0);
  CHECK(terms.total == doctest::Approx(expect).epsilon(1e-12));
  CHECK(terms.cls == 0.0);
  CHECK(terms.box == 0.0);

  // a logit-space encoding of a target leaves only the background term
  target.at(2, 3, 1, 0) = 1.0;
  target.at(2, 3, 1, 1 + codec::kClassVehicle) = 1.0;
  target.at(2, 3, 1, g.ch_tx()) = 0.25;
  target.at(2, 3, 1, g.ch_ty()) = 0.75;
  target.at(2, 3, 1, g.ch_tw()) = 0.4;
  target.at(2, 3, 1, g.ch_th()) = -0.2;
  raw.fill(-30.0);
  for (int c = 0; c < g.n_classes; ++c) raw.at(2, 3, 1, 1 + c) = -30.0;
  raw.at(2, 3, 1, 0) = 30.0;
  raw.at(2, 3, 1, 1 + codec::kClassVehicle) = 30.0;
  raw.at(2, 3, 1, g.ch_tx()) = std::log(0.25 / 0.75);
  raw.at(2, 3, 1, g.ch_ty()) = std::log(0.75 / 0.25);
  raw.at(2, 3, 1, g.ch_tw()) = 0.4;
  raw.at(2, 3, 1, g.ch_th()) = -0.2;
  terms = models::detection_loss<double>(raw, target, g, 0.5, 5.0, nullptr);
  CHECK(terms.cls < 1e-8);
  CHECK(terms.box < 1e-8);
  CHECK(terms.obj < 1e-8);  // saturated logits: even the background term vanishes
}

TEST_CASE("intent loss analytic examples") {
  auto rc = desk();
  const auto& g = rc.grid;
  TensorD logits({g.rows, g.cols, g.n_anchors(), 2});
  TensorD target(logits.shape());
  TensorF mask({g.rows, g.cols, g.n_anchors()});

  TensorD d;
  CHECK(models::intent_loss<double>(logits, target, mask, &d) == 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) REQUIRE(d[i] == 0.0);

  mask.at(1, 2, 0) = 1.0f;
  target.at(1, 2, 0, codec::kIntentCross) = 1.0;
  // equal logits at the one masked cell: ln 2
  const double loss = models::intent_loss<double>(logits, target, mask, nullptr);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("parameter counting: hand-checked examples") {
  nn::ParamStore<float> params;
  params.add("m.conv.w", {4, 2, 3, 3});
  params.add("m.conv.b", {4});
  const auto count = models::parameter_count(params);
  CHECK(count.total == 76u);  // 3*3*2*4 + 4
  CHECK(count.per_module.at("m") == 76u);
  CHECK(count.element_bytes == 4u);
  CHECK(count.total_bytes() == 304u);

  nn::ParamStore<float> empty;
  CHECK(models::parameter_count(empty).total == 0u);
}

TEST_CASE("checkpoint save/load round-trip with exact bytes") {
  auto rc = desk();
  models::Detector<float> det(rc.detector, rc.grid);
  nn::ParamStore<float> params;
  Rng rng(14);
  det.init_params(params, rng);

  const auto dir = std::filesystem::temp_directory_path() / "gridsight_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "det.gsck").string();
  ckpt::save(path, params, nlohmann::json{{"regime", "detector_only"}});

  nn::ParamStore<float> loaded;
  Rng rng2(999);  // different init; load must overwrite every value
  det.init_params(loaded, rng2);
  ckpt::load(path, loaded);
  for (const auto& [name, e] : params) {
    const auto& l = loaded.at(name);
    REQUIRE(l.value.size() == e.value.size());
    for (std::size_t i = 0; i < e.value.size(); ++i) REQUIRE(l.value[i] == e.value[i]);
  }
  CHECK(ckpt::load_metadata(path).at("regime") == "detector_only");

  // saving the same params twice is byte-identical
  const std::string path2 = (dir / "det2.gsck").string();
  ckpt::save(path2, params, nlohmann::json{{"regime", "detector_only"}});
  CHECK(file_digest(path) == file_digest(path2));
  std::filesystem::remove_all(dir);
}

TEST_CASE("desk parameter budget: auxiliary head is lighter than the crop classifier") {
  auto rc = desk();
  models::Detector<float> det(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid,
                                   rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));
  models::SequentialBaseline<float> baseline(rc.seq_baseline);
  nn::ParamStore<float> main_store, base_store;
  Rng rng(15);
  det.init_params(main_store, rng);
  aux.init_params(main_store, rng);
  baseline.init_params(base_store, rng);
  const auto main_count = models::parameter_count(main_store);
  const auto base_count = models::parameter_count(base_store);
  CHECK(main_count.per_module.at("aux") < base_count.per_module.at("seq"));
}
