#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridsight/common.hpp"
#include "gridsight/grid_codec.hpp"
#include "gridsight/nn.hpp"
#include "gridsight/tensor.hpp"

// The three networks: the grid detector with a feature tap at block L, the
// three-layer ConvLSTM intention head fed from that tap, and the sequential
// crop-classifier baseline. Parameters live in a ParamStore under the
// prefixes "det.", "aux." and "seq.".

namespace gridsight::models {

// train: per-sample BN statistics, no running-stat writes (keeps batch
// workers pure); stat_update: per-sample statistics while refreshing the
// running averages (deterministic single-threaded pass after training);
// eval: running statistics.
enum class Mode { train, stat_update, eval };

struct ConvBlockSpec {
  int out_ch = 0;
  int kernel = 3;
  int stride = 1;
  bool batchnorm = true;
  bool activation = true;  // leaky ReLU, slope 0.1
};

inline constexpr float kLeakySlope = 0.1f;
inline constexpr float kBnMomentum = 0.1f;
inline constexpr float kBnEps = 1e-5f;

struct DetectorConfig {
  int in_ch = 3;
  int image_h = 192;
  int image_w = 320;
  std::vector<ConvBlockSpec> blocks;
  int tap_layer = 5;  // 1-based block index; tap = post-bn post-activation output

  int n_blocks() const { return static_cast<int>(blocks.size()); }
  void validate(const codec::GridSpec& grid) const;

  // spatial dims / channels of the activated output of block L (1-based)
  int layer_out_ch(int layer) const { return blocks[static_cast<std::size_t>(layer - 1)].out_ch; }
  int layer_out_h(int layer) const;
  int layer_out_w(int layer) const;
  int composed_stride() const;

  // receptive field (px) of one output unit of block `layer`
  int receptive_field(int layer) const;
};

struct AuxiliaryConfig {
  int n_layers = 3;  // fixed by contract
  int adapter_ch = 32;
  int hidden_ch = 32;
  int kernel = 3;
  int seq_len = 8;  // t
  void validate() const;
};

struct SequentialBaselineConfig {
  int crop_h = 48;
  int crop_w = 48;
  int in_ch = 3;
  std::vector<ConvBlockSpec> encoder;
  int lstm_hidden = 48;
  int seq_len = 8;
};

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------
template <typename T>
struct BlockCache {
  Tensor<T> input;       // pre-conv input
  nn::BnCache<T> bn;     // xhat + inv_std (train mode)
  Tensor<T> bn_out;      // post-bn, pre-activation
  Tensor<T> out;         // post-activation
};

template <typename T>
struct DetectorCache {
  std::vector<BlockCache<T>> blocks;  // one per block in the forwarded range
  int first_block = 1;                // 1-based index of blocks[0]
  Tensor<T> head_in;
};

template <typename T>
class Detector {
 public:
  Detector(DetectorConfig cfg, codec::GridSpec grid);

  const DetectorConfig& config() const { return cfg_; }
  const codec::GridSpec& grid() const { return grid_; }

  // Registers all det.* parameters with random init.
  void init_params(nn::ParamStore<T>& params, Rng& rng) const;

  // Blocks 1..tap_layer; returns the tap feature map.
  Tensor<T> forward_lower(const Tensor<T>& image, nn::ParamStore<T>& params, Mode mode,
                          DetectorCache<T>* cache) const;
  // Blocks tap_layer+1..N plus the 1x1 head; returns raw output in grid
  // layout (H, W, A, 1+N_C+4).
  Tensor<T> forward_upper(const Tensor<T>& tap, nn::ParamStore<T>& params, Mode mode,
                          DetectorCache<T>* cache) const;
  Tensor<T> forward_full(const Tensor<T>& image, nn::ParamStore<T>& params, Mode mode,
                         Tensor<T>* tap_out, DetectorCache<T>* lower_cache,
                         DetectorCache<T>* upper_cache) const;

  // Backward passes accumulate parameter gradients. backward_upper returns
  // the gradient w.r.t. the tap; backward_lower consumes a tap gradient.
  Tensor<T> backward_upper(const Tensor<T>& d_raw_grid, const DetectorCache<T>& cache,
                           nn::ParamStore<T>& params) const;
  void backward_lower(const Tensor<T>& d_tap, const DetectorCache<T>& cache,
                      nn::ParamStore<T>& params) const;

  int head_channels() const { return grid_.n_anchors() * grid_.det_channels(); }

 private:
  Tensor<T> forward_blocks(const Tensor<T>& x, nn::ParamStore<T>& params, Mode mode, int from,
                           int to, DetectorCache<T>* cache) const;
  Tensor<T> backward_blocks(const Tensor<T>& dy, const DetectorCache<T>& cache,
                            nn::ParamStore<T>& params, int from, int to, bool need_dx) const;

  DetectorConfig cfg_;
  codec::GridSpec grid_;
};

// raw CHW (A*C, H, W) <-> grid (H, W, A, C) layout converters
template <typename T>
Tensor<T> chw_to_grid(const Tensor<T>& chw, int anchors, int channels);
template <typename T>
Tensor<T> grid_to_chw(const Tensor<T>& grid);

// ---------------------------------------------------------------------------
// Auxiliary intention head: strided conv adapter per frame, 3 ConvLSTM
// layers scanned over time, 1x1 head on the final hidden state.
// ---------------------------------------------------------------------------
template <typename T>
struct AuxCache {
  std::vector<Tensor<T>> tap_in;       // per frame (adapter conv input)
  std::vector<Tensor<T>> adapter_pre;  // per frame, pre-activation
  std::vector<Tensor<T>> adapter_out;  // per frame
  // [t][layer]
  std::vector<std::vector<nn::ConvLstmCache<T>>> lstm;
  Tensor<T> head_in;  // final hidden state of the top layer
};

template <typename T>
class AuxiliaryHead {
 public:
  AuxiliaryHead(AuxiliaryConfig cfg, codec::GridSpec grid, int tap_ch, int tap_h, int tap_w);

  const AuxiliaryConfig& config() const { return cfg_; }
  int adapter_stride() const { return adapter_stride_; }

  void init_params(nn::ParamStore<T>& params, Rng& rng) const;

  // taps: t feature maps (tap_ch, tap_h, tap_w). Returns intent logits in
  // grid layout (H, W, A, N_I). Throws ConfigError if len(taps) != t.
  Tensor<T> forward(const std::vector<Tensor<T>>& taps, nn::ParamStore<T>& params,
                    AuxCache<T>* cache) const;

  // Returns d_tap per frame (empty tensors when need_dtaps is false).
  std::vector<Tensor<T>> backward(const Tensor<T>& d_logits_grid, const AuxCache<T>& cache,
                                  nn::ParamStore<T>& params, bool need_dtaps) const;

 private:
  AuxiliaryConfig cfg_;
  codec::GridSpec grid_;
  int tap_ch_, tap_h_, tap_w_;
  int adapter_stride_;
};

// ---------------------------------------------------------------------------
// Sequential crop-classifier baseline (one pedestrian track at a time).
// ---------------------------------------------------------------------------
template <typename T>
struct SequentialCache {
  std::vector<std::vector<BlockCache<T>>> encoder;  // [t][block]
  std::vector<nn::ConvLstmCache<T>> lstm;           // [t]
  Tensor<T> last_hidden;
  std::vector<T> pooled;
};

template <typename T>
class SequentialBaseline {
 public:
  explicit SequentialBaseline(SequentialBaselineConfig cfg);

  const SequentialBaselineConfig& config() const { return cfg_; }

  void init_params(nn::ParamStore<T>& params, Rng& rng) const;

  // crops: t images (in_ch, crop_h, crop_w) for one track. Returns the
  // binary cross-intent logit. Throws ConfigError on an empty track.
  T forward(const std::vector<Tensor<T>>& crops, nn::ParamStore<T>& params, Mode mode,
            SequentialCache<T>* cache) const;

  void backward(T d_logit, const SequentialCache<T>& cache, nn::ParamStore<T>& params) const;

 private:
  int feat_h_ = 0, feat_w_ = 0, feat_ch_ = 0;
  SequentialBaselineConfig cfg_;
};

// ---------------------------------------------------------------------------
// Losses. Inputs/outputs use grid layout (H, W, A, channels).
// ---------------------------------------------------------------------------
template <typename T>
struct DetectionLossTerms {
  T obj = 0;    // lambda_noobj-weighted background BCE + foreground BCE
  T cls = 0;    // class cross entropy at object cells
  T box = 0;    // weighted squared residual error at object cells
  T total = 0;
};

// Sum-form loss (no normalization), per the tensor-size-scaled contract:
// empty target with zero logits gives lambda_noobj * H*W*A * ln 2.
template <typename T>
DetectionLossTerms<T> detection_loss(const Tensor<T>& raw_grid, const Tensor<T>& target,
                                     const codec::GridSpec& spec, T lambda_noobj, T lambda_box,
                                     Tensor<T>* d_raw_grid);

// Masked two-class softmax cross entropy, mean over mask=1 cells (0 when
// the mask is empty). Gradients are exactly zero at mask=0 cells.
template <typename T>
T intent_loss(const Tensor<T>& logits_grid, const Tensor<T>& target, const TensorF& mask,
              Tensor<T>* d_logits_grid);

// ---------------------------------------------------------------------------
// Parameter accounting.
// ---------------------------------------------------------------------------
struct ParamCount {
  std::map<std::string, std::size_t> per_module;  // top-level prefix -> count
  std::map<std::string, std::size_t> per_tensor;
  std::size_t total = 0;
  std::size_t element_bytes = 4;
  std::size_t total_bytes() const { return total * element_bytes; }
};

template <typename T>
ParamCount parameter_count(const nn::ParamStore<T>& params);

// He-style init used by all three networks; exposed for tests.
template <typename T>
void he_init(Tensor<T>& w, int fan_in, Rng& rng);

}  // namespace gridsight::models
