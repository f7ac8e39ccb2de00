#include "gridsight/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace gridsight::models {

namespace {

std::string block_name(const char* prefix, int idx) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s.b%02d", prefix, idx);
  return buf;
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
void he_init(Tensor<T>& w, int fan_in, Rng& rng) {
  const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w) v = static_cast<T>(rng.normal(0.0, sigma));
}

// ---------------------------------------------------------------------------
// DetectorConfig geometry
// ---------------------------------------------------------------------------

int DetectorConfig::layer_out_h(int layer) const {
  int h = image_h;
  for (int b = 0; b < layer; ++b) {
    const auto& s = blocks[static_cast<std::size_t>(b)];
    h = nn::conv_out_dim(h, s.kernel, s.stride, s.kernel / 2);
  }
  return h;
}

int DetectorConfig::layer_out_w(int layer) const {
  int w = image_w;
  for (int b = 0; b < layer; ++b) {
    const auto& s = blocks[static_cast<std::size_t>(b)];
    w = nn::conv_out_dim(w, s.kernel, s.stride, s.kernel / 2);
  }
  return w;
}

int DetectorConfig::composed_stride() const {
  int s = 1;
  for (const auto& b : blocks) s *= b.stride;
  return s;
}

int DetectorConfig::receptive_field(int layer) const {
  int rf = 1;
  int jump = 1;
  for (int b = 0; b < layer; ++b) {
    const auto& s = blocks[static_cast<std::size_t>(b)];
    rf += (s.kernel - 1) * jump;
    jump *= s.stride;
  }
  return rf;
}

void DetectorConfig::validate(const codec::GridSpec& grid) const {
  if (blocks.empty()) throw ConfigError("detector: no conv blocks configured");
  if (tap_layer < 1 || tap_layer >= n_blocks())
    throw ConfigError("detector: tap layer must satisfy 1 <= L < n_blocks");
  if (composed_stride() != grid.stride)
    throw ConfigError("detector: composed stride does not equal grid stride");
  if (image_h != grid.image_h() || image_w != grid.image_w())
    throw ConfigError("detector: image dims do not match grid dims * stride");
  if (layer_out_h(n_blocks()) != grid.rows || layer_out_w(n_blocks()) != grid.cols)
    throw ConfigError("detector: final feature map does not match grid");
  if (layer_out_h(tap_layer) < grid.rows || layer_out_w(tap_layer) < grid.cols)
    throw ConfigError("detector: tap output smaller than grid");
}

void AuxiliaryConfig::validate() const {
  if (n_layers != 3) throw ConfigError("auxiliary: n_layers is fixed at 3");
  if (adapter_ch < 1 || hidden_ch < 1) throw ConfigError("auxiliary: channels must be >= 1");
  if (seq_len < 1) throw ConfigError("auxiliary: seq_len must be >= 1");
}

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------

template <typename T>
Detector<T>::Detector(DetectorConfig cfg, codec::GridSpec grid)
    : cfg_(std::move(cfg)), grid_(std::move(grid)) {
  grid_.validate();
  cfg_.validate(grid_);
}

template <typename T>
void Detector<T>::init_params(nn::ParamStore<T>& params, Rng& rng) const {
  int in_ch = cfg_.in_ch;
  for (int b = 1; b <= cfg_.n_blocks(); ++b) {
    const auto& spec = cfg_.blocks[static_cast<std::size_t>(b - 1)];
    const std::string base = block_name("det", b);
    auto& w = params.add(base + ".conv.w", {spec.out_ch, in_ch, spec.kernel, spec.kernel});
    he_init(w, in_ch * spec.kernel * spec.kernel, rng);
    if (spec.batchnorm) {
      params.add(base + ".bn.gamma", {spec.out_ch}).fill(T(1));
      params.add(base + ".bn.beta", {spec.out_ch});
      params.add(base + ".bn.rmean", {spec.out_ch}, false);
      params.add(base + ".bn.rvar", {spec.out_ch}, false).fill(T(1));
    } else {
      params.add(base + ".conv.b", {spec.out_ch});
    }
    in_ch = spec.out_ch;
  }
  auto& hw = params.add("det.head.w", {head_channels(), in_ch, 1, 1});
  he_init(hw, in_ch, rng);
  auto& hb = params.add("det.head.b", {head_channels()});
  // start near "no object": objectness logits biased low
  for (int k = 0; k < grid_.n_anchors(); ++k)
    hb[static_cast<std::size_t>(k * grid_.det_channels() + codec::GridSpec::ch_obj())] = T(-2);
}

template <typename T>
Tensor<T> Detector<T>::forward_blocks(const Tensor<T>& x, nn::ParamStore<T>& params, Mode mode,
                                      int from, int to, DetectorCache<T>* cache) const {
  if (cache) {
    cache->blocks.assign(static_cast<std::size_t>(to - from + 1), BlockCache<T>{});
    cache->first_block = from;
  }
  Tensor<T> cur = x;
  for (int b = from; b <= to; ++b) {
    const auto& spec = cfg_.blocks[static_cast<std::size_t>(b - 1)];
    const std::string base = block_name("det", b);
    BlockCache<T>* bc = cache ? &cache->blocks[static_cast<std::size_t>(b - from)] : nullptr;
    if (bc) bc->input = cur;

    nn::Conv2dSpec cs{cur.dim(0), spec.out_ch, spec.kernel, spec.stride, spec.kernel / 2};
    Tensor<T> conv_out;
    const Tensor<T>* bias = spec.batchnorm ? nullptr : &params.value(base + ".conv.b");
    nn::conv2d_forward(cur, params.value(base + ".conv.w"), bias, cs, conv_out);

    Tensor<T> bn_out;
    if (spec.batchnorm) {
      if (mode == Mode::eval) {
        nn::bn_forward_eval(conv_out, params.value(base + ".bn.gamma"),
                            params.value(base + ".bn.beta"), params.value(base + ".bn.rmean"),
                            params.value(base + ".bn.rvar"), T(kBnEps), bn_out);
      } else {
        const bool update = mode == Mode::stat_update;
        nn::bn_forward_train(conv_out, params.value(base + ".bn.gamma"),
                             params.value(base + ".bn.beta"),
                             update ? &params.value(base + ".bn.rmean") : nullptr,
                             update ? &params.value(base + ".bn.rvar") : nullptr, T(kBnMomentum),
                             T(kBnEps), bn_out, bc ? &bc->bn : nullptr);
      }
    } else {
      bn_out = std::move(conv_out);
    }

    if (spec.activation) {
      Tensor<T> act(bn_out.shape());
      nn::Ops<T>::leaky_relu(static_cast<int>(bn_out.size()), bn_out.data(), act.data(),
                             T(kLeakySlope));
      if (bc) bc->bn_out = std::move(bn_out);
      cur = std::move(act);
    } else {
      cur = bn_out;
      if (bc) bc->bn_out = std::move(bn_out);
    }
    if (bc) bc->out = cur;
  }
  return cur;
}

template <typename T>
Tensor<T> Detector<T>::backward_blocks(const Tensor<T>& dy_in, const DetectorCache<T>& cache,
                                       nn::ParamStore<T>& params, int from, int to,
                                       bool need_dx) const {
  Tensor<T> dy = dy_in;
  for (int b = to; b >= from; --b) {
    const auto& spec = cfg_.blocks[static_cast<std::size_t>(b - 1)];
    const std::string base = block_name("det", b);
    const BlockCache<T>& bc = cache.blocks[static_cast<std::size_t>(b - cache.first_block)];

    Tensor<T> d_bnout;
    if (spec.activation) {
      d_bnout = Tensor<T>(dy.shape());
      nn::Ops<T>::leaky_relu_grad(static_cast<int>(dy.size()), bc.bn_out.data(), dy.data(),
                                  d_bnout.data(), T(kLeakySlope));
    } else {
      d_bnout = std::move(dy);
    }

    Tensor<T> d_convout;
    if (spec.batchnorm) {
      nn::bn_backward(d_bnout, bc.bn, params.value(base + ".bn.gamma"), d_convout,
                      params.grad(base + ".bn.gamma"), params.grad(base + ".bn.beta"));
    } else {
      d_convout = std::move(d_bnout);
    }

    nn::Conv2dSpec cs{bc.input.dim(0), spec.out_ch, spec.kernel, spec.stride, spec.kernel / 2};
    Tensor<T> dx;
    const bool want_dx = need_dx || b > from;
    nn::conv2d_backward(bc.input, params.value(base + ".conv.w"), cs, d_convout,
                        want_dx ? &dx : nullptr, params.grad(base + ".conv.w"),
                        spec.batchnorm ? nullptr : &params.grad(base + ".conv.b"));
    dy = std::move(dx);
  }
  return dy;
}

template <typename T>
Tensor<T> Detector<T>::forward_lower(const Tensor<T>& image, nn::ParamStore<T>& params, Mode mode,
                                     DetectorCache<T>* cache) const {
  if (image.dim(0) != cfg_.in_ch || image.dim(1) != cfg_.image_h || image.dim(2) != cfg_.image_w)
    throw ConfigError("detector: input image dims do not match config");
  return forward_blocks(image, params, mode, 1, cfg_.tap_layer, cache);
}

template <typename T>
Tensor<T> Detector<T>::forward_upper(const Tensor<T>& tap, nn::ParamStore<T>& params, Mode mode,
                                     DetectorCache<T>* cache) const {
  Tensor<T> feat = forward_blocks(tap, params, mode, cfg_.tap_layer + 1, cfg_.n_blocks(), cache);
  if (cache) cache->head_in = feat;
  nn::Conv2dSpec hs{feat.dim(0), head_channels(), 1, 1, 0};
  Tensor<T> raw_chw;
  nn::conv2d_forward(feat, params.value("det.head.w"), &params.value("det.head.b"), hs, raw_chw);
  return chw_to_grid(raw_chw, grid_.n_anchors(), grid_.det_channels());
}

template <typename T>
Tensor<T> Detector<T>::forward_full(const Tensor<T>& image, nn::ParamStore<T>& params, Mode mode,
                                    Tensor<T>* tap_out, DetectorCache<T>* lower_cache,
                                    DetectorCache<T>* upper_cache) const {
  Tensor<T> tap = forward_lower(image, params, mode, lower_cache);
  Tensor<T> raw = forward_upper(tap, params, mode, upper_cache);
  if (tap_out) *tap_out = std::move(tap);
  return raw;
}

template <typename T>
Tensor<T> Detector<T>::backward_upper(const Tensor<T>& d_raw_grid, const DetectorCache<T>& cache,
                                      nn::ParamStore<T>& params) const {
  Tensor<T> d_chw = grid_to_chw(d_raw_grid);
  nn::Conv2dSpec hs{cache.head_in.dim(0), head_channels(), 1, 1, 0};
  Tensor<T> d_feat;
  nn::conv2d_backward(cache.head_in, params.value("det.head.w"), hs, d_chw, &d_feat,
                      params.grad("det.head.w"), &params.grad("det.head.b"));
  return backward_blocks(d_feat, cache, params, cfg_.tap_layer + 1, cfg_.n_blocks(), true);
}

template <typename T>
void Detector<T>::backward_lower(const Tensor<T>& d_tap, const DetectorCache<T>& cache,
                                 nn::ParamStore<T>& params) const {
  backward_blocks(d_tap, cache, params, 1, cfg_.tap_layer, false);
}

// ---------------------------------------------------------------------------
// Layout converters
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> chw_to_grid(const Tensor<T>& chw, int anchors, int channels) {
  const int h = chw.dim(1), w = chw.dim(2);
  if (chw.dim(0) != anchors * channels) throw ConfigError("chw_to_grid: channel mismatch");
  Tensor<T> grid({h, w, anchors, channels});
  for (int k = 0; k < anchors; ++k)
    for (int c = 0; c < channels; ++c) {
      const T* src = chw.data() + (static_cast<std::size_t>(k) * channels + c) * h * w;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) grid.at(i, j, k, c) = src[static_cast<std::size_t>(i) * w + j];
    }
  return grid;
}

template <typename T>
Tensor<T> grid_to_chw(const Tensor<T>& grid) {
  const int h = grid.dim(0), w = grid.dim(1), anchors = grid.dim(2), channels = grid.dim(3);
  Tensor<T> chw({anchors * channels, h, w});
  for (int k = 0; k < anchors; ++k)
    for (int c = 0; c < channels; ++c) {
      T* dst = chw.data() + (static_cast<std::size_t>(k) * channels + c) * h * w;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) dst[static_cast<std::size_t>(i) * w + j] = grid.at(i, j, k, c);
    }
  return chw;
}

// ---------------------------------------------------------------------------
// Auxiliary head
// ---------------------------------------------------------------------------

template <typename T>
AuxiliaryHead<T>::AuxiliaryHead(AuxiliaryConfig cfg, codec::GridSpec grid, int tap_ch, int tap_h,
                                int tap_w)
    : cfg_(cfg), grid_(std::move(grid)), tap_ch_(tap_ch), tap_h_(tap_h), tap_w_(tap_w) {
  cfg_.validate();
  if (tap_h % grid_.rows != 0 || tap_w % grid_.cols != 0)
    throw ConfigError("auxiliary: tap dims not an integer multiple of grid dims");
  adapter_stride_ = tap_h / grid_.rows;
  if (tap_w / grid_.cols != adapter_stride_)
    throw ConfigError("auxiliary: tap aspect does not match grid aspect");
  if (nn::conv_out_dim(tap_h, 3, adapter_stride_, 1) != grid_.rows)
    throw ConfigError("auxiliary: adapter stride does not reduce tap to grid dims");
}

template <typename T>
void AuxiliaryHead<T>::init_params(nn::ParamStore<T>& params, Rng& rng) const {
  auto& aw = params.add("aux.adapter.w", {cfg_.adapter_ch, tap_ch_, 3, 3});
  he_init(aw, tap_ch_ * 9, rng);
  params.add("aux.adapter.b", {cfg_.adapter_ch});
  int in_ch = cfg_.adapter_ch;
  for (int l = 1; l <= cfg_.n_layers; ++l) {
    const std::string base = "aux.lstm" + std::to_string(l);
    auto& w = params.add(base + ".w",
                         {4 * cfg_.hidden_ch, in_ch + cfg_.hidden_ch, cfg_.kernel, cfg_.kernel});
    he_init(w, (in_ch + cfg_.hidden_ch) * cfg_.kernel * cfg_.kernel, rng);
    auto& b = params.add(base + ".b", {4 * cfg_.hidden_ch});
    // forget-gate bias +1 (slab order i, f, o, g)
    for (int c = 0; c < cfg_.hidden_ch; ++c) b[static_cast<std::size_t>(cfg_.hidden_ch + c)] = T(1);
    in_ch = cfg_.hidden_ch;
  }
  auto& hw = params.add("aux.head.w", {grid_.n_anchors() * grid_.n_intents, cfg_.hidden_ch, 1, 1});
  he_init(hw, cfg_.hidden_ch, rng);
  params.add("aux.head.b", {grid_.n_anchors() * grid_.n_intents});
}

template <typename T>
Tensor<T> AuxiliaryHead<T>::forward(const std::vector<Tensor<T>>& taps, nn::ParamStore<T>& params,
                                    AuxCache<T>* cache) const {
  if (static_cast<int>(taps.size()) != cfg_.seq_len)
    throw ConfigError("auxiliary: expected " + std::to_string(cfg_.seq_len) + " tap frames, got " +
                      std::to_string(taps.size()));
  const int t_len = cfg_.seq_len;
  const int hc = cfg_.hidden_ch;

  if (cache) {
    cache->tap_in.assign(static_cast<std::size_t>(t_len), {});
    cache->adapter_pre.assign(static_cast<std::size_t>(t_len), {});
    cache->adapter_out.assign(static_cast<std::size_t>(t_len), {});
    cache->lstm.assign(static_cast<std::size_t>(t_len),
                       std::vector<nn::ConvLstmCache<T>>(static_cast<std::size_t>(cfg_.n_layers)));
  }

  std::vector<Tensor<T>> h(static_cast<std::size_t>(cfg_.n_layers),
                           Tensor<T>({hc, grid_.rows, grid_.cols}));
  std::vector<Tensor<T>> c(static_cast<std::size_t>(cfg_.n_layers),
                           Tensor<T>({hc, grid_.rows, grid_.cols}));

  nn::Conv2dSpec as{tap_ch_, cfg_.adapter_ch, 3, adapter_stride_, 1};
  for (int t = 0; t < t_len; ++t) {
    const Tensor<T>& tap = taps[static_cast<std::size_t>(t)];
    if (tap.dim(0) != tap_ch_ || tap.dim(1) != tap_h_ || tap.dim(2) != tap_w_)
      throw ConfigError("auxiliary: tap feature dims do not match configured tap layer");
    Tensor<T> pre;
    nn::conv2d_forward(tap, params.value("aux.adapter.w"), &params.value("aux.adapter.b"), as, pre);
    Tensor<T> x(pre.shape());
    nn::Ops<T>::leaky_relu(static_cast<int>(pre.size()), pre.data(), x.data(), T(kLeakySlope));
    if (cache) {
      cache->tap_in[static_cast<std::size_t>(t)] = tap;
      cache->adapter_pre[static_cast<std::size_t>(t)] = std::move(pre);
      cache->adapter_out[static_cast<std::size_t>(t)] = x;
    }

    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string base = "aux.lstm" + std::to_string(l + 1);
      nn::ConvLstmSpec ls{l == 0 ? cfg_.adapter_ch : hc, hc, cfg_.kernel};
      Tensor<T> h_new, c_new;
      nn::convlstm_forward(
          x, h[static_cast<std::size_t>(l)], c[static_cast<std::size_t>(l)],
          params.value(base + ".w"), params.value(base + ".b"), ls, h_new, c_new,
          cache ? &cache->lstm[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)] : nullptr);
      h[static_cast<std::size_t>(l)] = h_new;
      c[static_cast<std::size_t>(l)] = std::move(c_new);
      x = std::move(h_new);
    }
  }

  const Tensor<T>& top = h[static_cast<std::size_t>(cfg_.n_layers - 1)];
  if (cache) cache->head_in = top;
  nn::Conv2dSpec hs{hc, grid_.n_anchors() * grid_.n_intents, 1, 1, 0};
  Tensor<T> logits_chw;
  nn::conv2d_forward(top, params.value("aux.head.w"), &params.value("aux.head.b"), hs, logits_chw);
  return chw_to_grid(logits_chw, grid_.n_anchors(), grid_.n_intents);
}

template <typename T>
std::vector<Tensor<T>> AuxiliaryHead<T>::backward(const Tensor<T>& d_logits_grid,
                                                  const AuxCache<T>& cache,
                                                  nn::ParamStore<T>& params,
                                                  bool need_dtaps) const {
  const int t_len = cfg_.seq_len;
  const int hc = cfg_.hidden_ch;
  const int nl = cfg_.n_layers;

  Tensor<T> d_chw = grid_to_chw(d_logits_grid);
  nn::Conv2dSpec hs{hc, grid_.n_anchors() * grid_.n_intents, 1, 1, 0};
  Tensor<T> d_top;
  nn::conv2d_backward(cache.head_in, params.value("aux.head.w"), hs, d_chw, &d_top,
                      params.grad("aux.head.w"), &params.grad("aux.head.b"));

  std::vector<Tensor<T>> dh(static_cast<std::size_t>(nl), Tensor<T>({hc, grid_.rows, grid_.cols}));
  std::vector<Tensor<T>> dc(static_cast<std::size_t>(nl), Tensor<T>({hc, grid_.rows, grid_.cols}));
  dh[static_cast<std::size_t>(nl - 1)] = std::move(d_top);

  std::vector<Tensor<T>> d_taps(static_cast<std::size_t>(t_len));
  nn::Conv2dSpec as{tap_ch_, cfg_.adapter_ch, 3, adapter_stride_, 1};

  for (int t = t_len - 1; t >= 0; --t) {
    Tensor<T> dx_below;  // gradient flowing into the input of the current layer
    for (int l = nl - 1; l >= 0; --l) {
      const std::string base = "aux.lstm" + std::to_string(l + 1);
      nn::ConvLstmSpec ls{l == 0 ? cfg_.adapter_ch : hc, hc, cfg_.kernel};
      Tensor<T> dx, dh_prev, dc_prev;
      nn::convlstm_backward(dh[static_cast<std::size_t>(l)], &dc[static_cast<std::size_t>(l)],
                            params.value(base + ".w"), ls,
                            cache.lstm[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)],
                            params.grad(base + ".w"), params.grad(base + ".b"), &dx, &dh_prev,
                            &dc_prev);
      dh[static_cast<std::size_t>(l)] = std::move(dh_prev);
      dc[static_cast<std::size_t>(l)] = std::move(dc_prev);
      if (l > 0) {
        accumulate(dh[static_cast<std::size_t>(l - 1)], dx);
      } else {
        dx_below = std::move(dx);
      }
    }

    // adapter backward for this frame
    Tensor<T> d_pre(dx_below.shape());
    nn::Ops<T>::leaky_relu_grad(static_cast<int>(dx_below.size()),
                                cache.adapter_pre[static_cast<std::size_t>(t)].data(),
                                dx_below.data(), d_pre.data(), T(kLeakySlope));
    Tensor<T> d_tap;
    nn::conv2d_backward(cache.tap_in[static_cast<std::size_t>(t)], params.value("aux.adapter.w"),
                        as, d_pre, need_dtaps ? &d_tap : nullptr, params.grad("aux.adapter.w"),
                        &params.grad("aux.adapter.b"));
    if (need_dtaps) d_taps[static_cast<std::size_t>(t)] = std::move(d_tap);
  }
  return d_taps;
}

// ---------------------------------------------------------------------------
// Sequential baseline
// ---------------------------------------------------------------------------

template <typename T>
SequentialBaseline<T>::SequentialBaseline(SequentialBaselineConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.encoder.empty()) throw ConfigError("sequential: encoder has no blocks");
  int h = cfg_.crop_h, w = cfg_.crop_w;
  for (const auto& b : cfg_.encoder) {
    h = nn::conv_out_dim(h, b.kernel, b.stride, b.kernel / 2);
    w = nn::conv_out_dim(w, b.kernel, b.stride, b.kernel / 2);
  }
  feat_h_ = h;
  feat_w_ = w;
  feat_ch_ = cfg_.encoder.back().out_ch;
  if (h < 1 || w < 1) throw ConfigError("sequential: encoder reduces crop to nothing");
}

template <typename T>
void SequentialBaseline<T>::init_params(nn::ParamStore<T>& params, Rng& rng) const {
  int in_ch = cfg_.in_ch;
  for (int b = 1; b <= static_cast<int>(cfg_.encoder.size()); ++b) {
    const auto& spec = cfg_.encoder[static_cast<std::size_t>(b - 1)];
    const std::string base = block_name("seq", b);
    auto& w = params.add(base + ".conv.w", {spec.out_ch, in_ch, spec.kernel, spec.kernel});
    he_init(w, in_ch * spec.kernel * spec.kernel, rng);
    if (spec.batchnorm) {
      params.add(base + ".bn.gamma", {spec.out_ch}).fill(T(1));
      params.add(base + ".bn.beta", {spec.out_ch});
      params.add(base + ".bn.rmean", {spec.out_ch}, false);
      params.add(base + ".bn.rvar", {spec.out_ch}, false).fill(T(1));
    } else {
      params.add(base + ".conv.b", {spec.out_ch});
    }
    in_ch = spec.out_ch;
  }
  auto& lw = params.add("seq.lstm.w",
                        {4 * cfg_.lstm_hidden, feat_ch_ + cfg_.lstm_hidden, 3, 3});
  he_init(lw, (feat_ch_ + cfg_.lstm_hidden) * 9, rng);
  auto& lb = params.add("seq.lstm.b", {4 * cfg_.lstm_hidden});
  for (int c = 0; c < cfg_.lstm_hidden; ++c) lb[static_cast<std::size_t>(cfg_.lstm_hidden + c)] = T(1);
  auto& hw = params.add("seq.head.w", {cfg_.lstm_hidden});
  he_init(hw, cfg_.lstm_hidden, rng);
  params.add("seq.head.b", {1});
}

template <typename T>
T SequentialBaseline<T>::forward(const std::vector<Tensor<T>>& crops, nn::ParamStore<T>& params,
                                 Mode mode, SequentialCache<T>* cache) const {
  if (crops.empty()) throw ConfigError("sequential: empty crop track");
  if (static_cast<int>(crops.size()) != cfg_.seq_len)
    throw ConfigError("sequential: expected " + std::to_string(cfg_.seq_len) + " crops");
  const int t_len = cfg_.seq_len;
  const int nb = static_cast<int>(cfg_.encoder.size());

  if (cache) {
    cache->encoder.assign(static_cast<std::size_t>(t_len),
                          std::vector<BlockCache<T>>(static_cast<std::size_t>(nb)));
    cache->lstm.assign(static_cast<std::size_t>(t_len), {});
  }

  Tensor<T> h({cfg_.lstm_hidden, feat_h_, feat_w_});
  Tensor<T> c({cfg_.lstm_hidden, feat_h_, feat_w_});
  nn::ConvLstmSpec ls{feat_ch_, cfg_.lstm_hidden, 3};

  for (int t = 0; t < t_len; ++t) {
    const Tensor<T>& crop = crops[static_cast<std::size_t>(t)];
    if (crop.dim(0) != cfg_.in_ch || crop.dim(1) != cfg_.crop_h || crop.dim(2) != cfg_.crop_w)
      throw ConfigError("sequential: crop dims do not match config");
    Tensor<T> cur = crop;
    for (int b = 1; b <= nb; ++b) {
      const auto& spec = cfg_.encoder[static_cast<std::size_t>(b - 1)];
      const std::string base = block_name("seq", b);
      BlockCache<T>* bc =
          cache ? &cache->encoder[static_cast<std::size_t>(t)][static_cast<std::size_t>(b - 1)]
                : nullptr;
      if (bc) bc->input = cur;
      nn::Conv2dSpec cs{cur.dim(0), spec.out_ch, spec.kernel, spec.stride, spec.kernel / 2};
      Tensor<T> conv_out;
      const Tensor<T>* bias = spec.batchnorm ? nullptr : &params.value(base + ".conv.b");
      nn::conv2d_forward(cur, params.value(base + ".conv.w"), bias, cs, conv_out);
      Tensor<T> bn_out;
      if (spec.batchnorm) {
        if (mode == Mode::eval) {
          nn::bn_forward_eval(conv_out, params.value(base + ".bn.gamma"),
                              params.value(base + ".bn.beta"), params.value(base + ".bn.rmean"),
                              params.value(base + ".bn.rvar"), T(kBnEps), bn_out);
        } else {
          const bool update = mode == Mode::stat_update;
          nn::bn_forward_train(conv_out, params.value(base + ".bn.gamma"),
                               params.value(base + ".bn.beta"),
                               update ? &params.value(base + ".bn.rmean") : nullptr,
                               update ? &params.value(base + ".bn.rvar") : nullptr, T(kBnMomentum),
                               T(kBnEps), bn_out, bc ? &bc->bn : nullptr);
        }
      } else {
        bn_out = std::move(conv_out);
      }
      Tensor<T> act(bn_out.shape());
      if (spec.activation) {
        nn::Ops<T>::leaky_relu(static_cast<int>(bn_out.size()), bn_out.data(), act.data(),
                               T(kLeakySlope));
      } else {
        act = bn_out;
      }
      if (bc) bc->bn_out = std::move(bn_out);
      cur = std::move(act);
    }

    Tensor<T> h_new, c_new;
    nn::convlstm_forward(cur, h, c, params.value("seq.lstm.w"), params.value("seq.lstm.b"), ls,
                         h_new, c_new, cache ? &cache->lstm[static_cast<std::size_t>(t)] : nullptr);
    h = std::move(h_new);
    c = std::move(c_new);
  }

  // global average pool per channel, then a linear head
  const auto& hw = params.value("seq.head.w");
  const T beta = params.value("seq.head.b")[0];
  const int plane = feat_h_ * feat_w_;
  T logit = beta;
  std::vector<T> pooled(static_cast<std::size_t>(cfg_.lstm_hidden));
  for (int ch = 0; ch < cfg_.lstm_hidden; ++ch) {
    const T* hp = h.data() + static_cast<std::size_t>(ch) * plane;
    T s = T(0);
    for (int i = 0; i < plane; ++i) s += hp[i];
    pooled[static_cast<std::size_t>(ch)] = s / T(plane);
    logit += hw[static_cast<std::size_t>(ch)] * pooled[static_cast<std::size_t>(ch)];
  }
  if (cache) {
    cache->last_hidden = std::move(h);
    cache->pooled = std::move(pooled);
  }
  return logit;
}

template <typename T>
void SequentialBaseline<T>::backward(T d_logit, const SequentialCache<T>& cache,
                                     nn::ParamStore<T>& params) const {
  const int t_len = cfg_.seq_len;
  const int nb = static_cast<int>(cfg_.encoder.size());
  const int plane = feat_h_ * feat_w_;
  const auto& hw = params.value("seq.head.w");

  params.grad("seq.head.b")[0] += d_logit;
  auto& dhw = params.grad("seq.head.w");
  Tensor<T> dh({cfg_.lstm_hidden, feat_h_, feat_w_});
  for (int ch = 0; ch < cfg_.lstm_hidden; ++ch) {
    dhw[static_cast<std::size_t>(ch)] += d_logit * cache.pooled[static_cast<std::size_t>(ch)];
    const T g = d_logit * hw[static_cast<std::size_t>(ch)] / T(plane);
    T* dhp = dh.data() + static_cast<std::size_t>(ch) * plane;
    for (int i = 0; i < plane; ++i) dhp[i] = g;
  }

  Tensor<T> dc({cfg_.lstm_hidden, feat_h_, feat_w_});
  nn::ConvLstmSpec ls{feat_ch_, cfg_.lstm_hidden, 3};
  for (int t = t_len - 1; t >= 0; --t) {
    Tensor<T> dx, dh_prev, dc_prev;
    nn::convlstm_backward(dh, &dc, params.value("seq.lstm.w"), ls,
                          cache.lstm[static_cast<std::size_t>(t)], params.grad("seq.lstm.w"),
                          params.grad("seq.lstm.b"), &dx, &dh_prev, &dc_prev);
    dh = std::move(dh_prev);
    dc = std::move(dc_prev);

    Tensor<T> dy = std::move(dx);
    for (int b = nb; b >= 1; --b) {
      const auto& spec = cfg_.encoder[static_cast<std::size_t>(b - 1)];
      const std::string base = block_name("seq", b);
      const BlockCache<T>& bc =
          cache.encoder[static_cast<std::size_t>(t)][static_cast<std::size_t>(b - 1)];
      Tensor<T> d_bnout;
      if (spec.activation) {
        d_bnout = Tensor<T>(dy.shape());
        nn::Ops<T>::leaky_relu_grad(static_cast<int>(dy.size()), bc.bn_out.data(), dy.data(),
                                    d_bnout.data(), T(kLeakySlope));
      } else {
        d_bnout = std::move(dy);
      }
      Tensor<T> d_convout;
      if (spec.batchnorm) {
        nn::bn_backward(d_bnout, bc.bn, params.value(base + ".bn.gamma"), d_convout,
                        params.grad(base + ".bn.gamma"), params.grad(base + ".bn.beta"));
      } else {
        d_convout = std::move(d_bnout);
      }
      nn::Conv2dSpec cs{bc.input.dim(0), spec.out_ch, spec.kernel, spec.stride, spec.kernel / 2};
      Tensor<T> dx_blk;
      nn::conv2d_backward(bc.input, params.value(base + ".conv.w"), cs, d_convout,
                          b > 1 ? &dx_blk : nullptr, params.grad(base + ".conv.w"),
                          spec.batchnorm ? nullptr : &params.grad(base + ".conv.b"));
      dy = std::move(dx_blk);
    }
  }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename T>
DetectionLossTerms<T> detection_loss(const Tensor<T>& raw_grid, const Tensor<T>& target,
                                     const codec::GridSpec& spec, T lambda_noobj, T lambda_box,
                                     Tensor<T>* d_raw_grid) {
  if (raw_grid.shape() != target.shape())
    throw ConfigError("detection_loss: raw/target shape mismatch");
  nn::check_finite(raw_grid, "detection_loss input");
  DetectionLossTerms<T> terms;
  if (d_raw_grid) {
    *d_raw_grid = Tensor<T>(raw_grid.shape());
  }
  const int nc = spec.n_classes;
  for (int i = 0; i < spec.rows; ++i) {
    for (int j = 0; j < spec.cols; ++j) {
      for (int k = 0; k < spec.n_anchors(); ++k) {
        const T tobj = target.at(i, j, k, codec::GridSpec::ch_obj());
        const T zobj = raw_grid.at(i, j, k, codec::GridSpec::ch_obj());
        const T wobj = tobj > T(0.5) ? T(1) : lambda_noobj;
        terms.obj += wobj * nn::bce_with_logit(zobj, tobj);
        if (d_raw_grid)
          d_raw_grid->at(i, j, k, codec::GridSpec::ch_obj()) =
              wobj * (nn::sigmoid(zobj) - tobj);
        if (tobj <= T(0.5)) continue;

        // class cross entropy (softmax)
        T maxz = raw_grid.at(i, j, k, codec::GridSpec::ch_class0());
        for (int c = 1; c < nc; ++c)
          maxz = std::max(maxz, raw_grid.at(i, j, k, codec::GridSpec::ch_class0() + c));
        T denom = T(0);
        for (int c = 0; c < nc; ++c)
          denom += std::exp(raw_grid.at(i, j, k, codec::GridSpec::ch_class0() + c) - maxz);
        for (int c = 0; c < nc; ++c) {
          const T y = target.at(i, j, k, codec::GridSpec::ch_class0() + c);
          const T p =
              std::exp(raw_grid.at(i, j, k, codec::GridSpec::ch_class0() + c) - maxz) / denom;
          if (y > T(0.5)) terms.cls -= std::log(std::max(p, T(1e-30)));
          if (d_raw_grid) d_raw_grid->at(i, j, k, codec::GridSpec::ch_class0() + c) = p - y;
        }

        // box residuals: logistic on tx/ty, identity on tw/th
        for (int ch : {spec.ch_tx(), spec.ch_ty()}) {
          const T z = raw_grid.at(i, j, k, ch);
          const T p = nn::sigmoid(z);
          const T diff = p - target.at(i, j, k, ch);
          terms.box += lambda_box * diff * diff;
          if (d_raw_grid)
            d_raw_grid->at(i, j, k, ch) = lambda_box * T(2) * diff * p * (T(1) - p);
        }
        for (int ch : {spec.ch_tw(), spec.ch_th()}) {
          const T diff = raw_grid.at(i, j, k, ch) - target.at(i, j, k, ch);
          terms.box += lambda_box * diff * diff;
          if (d_raw_grid) d_raw_grid->at(i, j, k, ch) = lambda_box * T(2) * diff;
        }
      }
    }
  }
  terms.total = terms.obj + terms.cls + terms.box;
  return terms;
}

template <typename T>
T intent_loss(const Tensor<T>& logits_grid, const Tensor<T>& target, const TensorF& mask,
              Tensor<T>* d_logits_grid) {
  if (logits_grid.shape() != target.shape())
    throw ConfigError("intent_loss: logits/target shape mismatch");
  const int rows = logits_grid.dim(0), cols = logits_grid.dim(1), anchors = logits_grid.dim(2),
            ni = logits_grid.dim(3);
  if (mask.rank() != 3 || mask.dim(0) != rows || mask.dim(1) != cols || mask.dim(2) != anchors)
    throw ConfigError("intent_loss: mask shape mismatch");

  if (d_logits_grid) *d_logits_grid = Tensor<T>(logits_grid.shape());
  T count = T(0);
  for (std::size_t idx = 0; idx < mask.size(); ++idx)
    if (mask[idx] > 0.5f) count += T(1);
  if (count == T(0)) return T(0);

  T loss = T(0);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      for (int k = 0; k < anchors; ++k) {
        if (mask.at(i, j, k) <= 0.5f) continue;
        T maxz = logits_grid.at(i, j, k, 0);
        for (int c = 1; c < ni; ++c) maxz = std::max(maxz, logits_grid.at(i, j, k, c));
        T denom = T(0);
        for (int c = 0; c < ni; ++c) denom += std::exp(logits_grid.at(i, j, k, c) - maxz);
        for (int c = 0; c < ni; ++c) {
          const T p = std::exp(logits_grid.at(i, j, k, c) - maxz) / denom;
          const T y = target.at(i, j, k, c);
          if (y > T(0.5)) loss -= std::log(std::max(p, T(1e-30)));
          if (d_logits_grid) d_logits_grid->at(i, j, k, c) = (p - y) / count;
        }
      }
    }
  }
  return loss / count;
}

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

template <typename T>
ParamCount parameter_count(const nn::ParamStore<T>& params) {
  ParamCount out;
  out.element_bytes = sizeof(T);
  for (const auto& [name, entry] : params) {
    out.per_tensor[name] = entry.value.size();
    const auto dot = name.find('.');
    out.per_module[name.substr(0, dot)] += entry.value.size();
    out.total += entry.value.size();
  }
  return out;
}

// ---------------------------------------------------------------------------

#define GS_INSTANTIATE_MODELS(T)                                                               \
  template void he_init<T>(Tensor<T>&, int, Rng&);                                            \
  template class Detector<T>;                                                                  \
  template class AuxiliaryHead<T>;                                                             \
  template class SequentialBaseline<T>;                                                        \
  template Tensor<T> chw_to_grid<T>(const Tensor<T>&, int, int);                              \
  template Tensor<T> grid_to_chw<T>(const Tensor<T>&);                                        \
  template DetectionLossTerms<T> detection_loss<T>(const Tensor<T>&, const Tensor<T>&,        \
                                                   const codec::GridSpec&, T, T, Tensor<T>*); \
  template T intent_loss<T>(const Tensor<T>&, const Tensor<T>&, const TensorF&, Tensor<T>*);  \
  template ParamCount parameter_count<T>(const nn::ParamStore<T>&);

GS_INSTANTIATE_MODELS(float)
GS_INSTANTIATE_MODELS(double)

#undef GS_INSTANTIATE_MODELS

}  // namespace gridsight::models
