#pragma once

#include <array>
#include <vector>

#include "gridsight/tensor.hpp"

// Bidirectional mapping between box annotations and the grid-anchor tensor
// representation shared by the detection and intention heads.
//
// Tensor layouts are row-major (row i, col j, anchor k, channel):
//   detection target  (H, W, A, 1 + N_C + 4)  channels: [obj | class one-hot | tx ty tw th]
//   intention target  (H, W, A, N_I)          channels: [not_cross, cross]
//   intention mask    (H, W, A)

namespace gridsight::codec {

inline constexpr int kClassPedestrian = 0;
inline constexpr int kClassCrosswalk = 1;
inline constexpr int kClassVehicle = 2;
inline constexpr int kClassTrafficLight = 3;

inline constexpr int kIntentNotCross = 0;
inline constexpr int kIntentCross = 1;

struct GridSpec {
  int rows = 6;     // H
  int cols = 10;    // W
  int stride = 32;  // px per cell
  std::vector<std::array<float, 2>> anchors;  // (w, h) px
  int n_classes = 4;
  int n_intents = 2;

  int image_h() const { return rows * stride; }
  int image_w() const { return cols * stride; }
  int n_anchors() const { return static_cast<int>(anchors.size()); }
  int det_channels() const { return 1 + n_classes + 4; }

  // channel offsets within the detection slot
  static constexpr int ch_obj() { return 0; }
  static constexpr int ch_class0() { return 1; }
  int ch_tx() const { return 1 + n_classes; }
  int ch_ty() const { return 2 + n_classes; }
  int ch_tw() const { return 3 + n_classes; }
  int ch_th() const { return 4 + n_classes; }

  void validate() const;
};

struct GtBox {
  float cx = 0, cy = 0, w = 0, h = 0;
  int class_id = 0;
  int intent = -1;  // -1 n/a; kIntentNotCross / kIntentCross for pedestrians
  int track_id = -1;
};

struct CellIndex {
  int i = 0, j = 0, k = 0;
  bool operator==(const CellIndex&) const = default;
};

struct Detection {
  float cx = 0, cy = 0, w = 0, h = 0;
  int class_id = 0;
  float score = 0;  // sigmoid(obj) * max softmax class prob
  CellIndex cell;
};

struct EncodedTargets {
  TensorF detection;  // (H, W, A, 1+N_C+4)
  TensorF intent;     // (H, W, A, N_I)
  TensorF mask;       // (H, W, A)
  int dropped_assignments = 0;  // collisions resolved by keeping the larger box
};

// Row from cy, column from cx (floor), anchor by best centered IoU
// (ties -> lowest k). Throws ConfigError if the center is outside the image.
CellIndex assign_cell_anchor(float cx, float cy, float w, float h, const GridSpec& spec);

// Centered IoU between a (w,h) box and an anchor, both sharing a center.
float anchor_iou(float w, float h, float aw, float ah);

// Corner IoU between two center-format boxes.
float box_iou(float cx1, float cy1, float w1, float h1, float cx2, float cy2, float w2, float h2);

EncodedTargets encode_targets(const std::vector<GtBox>& boxes, const GridSpec& spec);

// raw: (H, W, A, 1+N_C+4) logits. Objectness and tx/ty go through the
// logistic, class through softmax-argmax, boxes invert the encoding;
// then greedy per-class NMS. Throws NumericError on non-finite input.
std::vector<Detection> decode_predictions(const TensorF& raw, const GridSpec& spec,
                                          float conf_threshold, float nms_iou);

// Lifts a target tensor into logit space so decode_predictions inverts
// encode_targets exactly: obj/class one-hots become +/-saturation logits,
// tx/ty go through the inverse logistic. Test-oracle companion to encode.
TensorF target_to_logits(const TensorF& target, const GridSpec& spec);

}  // namespace gridsight::codec
