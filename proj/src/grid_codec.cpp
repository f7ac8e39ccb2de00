#include "gridsight/grid_codec.hpp"

#include <algorithm>
#include <cmath>

#include "gridsight/common.hpp"

namespace gridsight::codec {

void GridSpec::validate() const {
  if (rows < 1 || cols < 1 || stride < 1) throw ConfigError("grid: rows/cols/stride must be >= 1");
  if (anchors.empty()) throw ConfigError("grid: need at least one anchor");
  for (const auto& a : anchors) {
    if (a[0] <= 0 || a[1] <= 0) throw ConfigError("grid: anchor sides must be positive");
  }
  if (n_classes < 1) throw ConfigError("grid: n_classes must be >= 1");
  if (n_intents != 2) throw ConfigError("grid: n_intents must be 2");
}

float anchor_iou(float w, float h, float aw, float ah) {
  const float inter = std::min(w, aw) * std::min(h, ah);
  const float uni = w * h + aw * ah - inter;
  return uni > 0 ? inter / uni : 0.0f;
}

float box_iou(float cx1, float cy1, float w1, float h1, float cx2, float cy2, float w2, float h2) {
  const float x1a = cx1 - w1 / 2, x1b = cx1 + w1 / 2;
  const float y1a = cy1 - h1 / 2, y1b = cy1 + h1 / 2;
  const float x2a = cx2 - w2 / 2, x2b = cx2 + w2 / 2;
  const float y2a = cy2 - h2 / 2, y2b = cy2 + h2 / 2;
  const float iw = std::min(x1b, x2b) - std::max(x1a, x2a);
  const float ih = std::min(y1b, y2b) - std::max(y1a, y2a);
  if (iw <= 0 || ih <= 0) return 0.0f;
  const float inter = iw * ih;
  const float uni = w1 * h1 + w2 * h2 - inter;
  return uni > 0 ? inter / uni : 0.0f;
}

CellIndex assign_cell_anchor(float cx, float cy, float w, float h, const GridSpec& spec) {
  if (cx < 0 || cx >= static_cast<float>(spec.image_w()) || cy < 0 ||
      cy >= static_cast<float>(spec.image_h())) {
    throw ConfigError("assign_cell_anchor: box center outside image bounds");
  }
  CellIndex cell;
  cell.i = static_cast<int>(std::floor(cy / static_cast<float>(spec.stride)));
  cell.j = static_cast<int>(std::floor(cx / static_cast<float>(spec.stride)));
  cell.i = std::min(cell.i, spec.rows - 1);
  cell.j = std::min(cell.j, spec.cols - 1);
  float best = -1.0f;
  for (int k = 0; k < spec.n_anchors(); ++k) {
    const float iou = anchor_iou(w, h, spec.anchors[k][0], spec.anchors[k][1]);
    if (iou > best) {
      best = iou;
      cell.k = k;
    }
  }
  return cell;
}

EncodedTargets encode_targets(const std::vector<GtBox>& boxes, const GridSpec& spec) {
  spec.validate();
  EncodedTargets out;
  out.detection = TensorF({spec.rows, spec.cols, spec.n_anchors(), spec.det_channels()});
  out.intent = TensorF({spec.rows, spec.cols, spec.n_anchors(), spec.n_intents});
  out.mask = TensorF({spec.rows, spec.cols, spec.n_anchors()});

  // area of the box currently holding each slot, for the collision rule
  TensorF owner_area({spec.rows, spec.cols, spec.n_anchors()});

  for (const auto& box : boxes) {
    if (box.class_id < 0 || box.class_id >= spec.n_classes)
      throw ConfigError("encode_targets: class id out of range");
    const CellIndex cell = assign_cell_anchor(box.cx, box.cy, box.w, box.h, spec);
    const float area = box.w * box.h;
    if (out.mask.at(cell.i, cell.j, cell.k) > 0 ||
        out.detection.at(cell.i, cell.j, cell.k, GridSpec::ch_obj()) > 0) {
      // collision: keep the larger box
      if (area <= owner_area.at(cell.i, cell.j, cell.k)) {
        ++out.dropped_assignments;
        continue;
      }
      ++out.dropped_assignments;
      for (int c = 0; c < spec.det_channels(); ++c) out.detection.at(cell.i, cell.j, cell.k, c) = 0;
      for (int c = 0; c < spec.n_intents; ++c) out.intent.at(cell.i, cell.j, cell.k, c) = 0;
      out.mask.at(cell.i, cell.j, cell.k) = 0;
    }
    owner_area.at(cell.i, cell.j, cell.k) = area;

    out.detection.at(cell.i, cell.j, cell.k, GridSpec::ch_obj()) = 1.0f;
    out.detection.at(cell.i, cell.j, cell.k, GridSpec::ch_class0() + box.class_id) = 1.0f;
    const float s = static_cast<float>(spec.stride);
    out.detection.at(cell.i, cell.j, cell.k, spec.ch_tx()) = box.cx / s - static_cast<float>(cell.j);
    out.detection.at(cell.i, cell.j, cell.k, spec.ch_ty()) = box.cy / s - static_cast<float>(cell.i);
    out.detection.at(cell.i, cell.j, cell.k, spec.ch_tw()) =
        std::log(box.w / spec.anchors[cell.k][0]);
    out.detection.at(cell.i, cell.j, cell.k, spec.ch_th()) =
        std::log(box.h / spec.anchors[cell.k][1]);

    if (box.class_id == kClassPedestrian) {
      if (box.intent != kIntentNotCross && box.intent != kIntentCross)
        throw ConfigError("encode_targets: pedestrian without intent label");
      out.mask.at(cell.i, cell.j, cell.k) = 1.0f;
      out.intent.at(cell.i, cell.j, cell.k, box.intent) = 1.0f;
    }
  }
  return out;
}

namespace {

inline float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

std::vector<Detection> decode_predictions(const TensorF& raw, const GridSpec& spec,
                                          float conf_threshold, float nms_iou) {
  const int a = spec.n_anchors();
  const int ch = spec.det_channels();
  if (raw.rank() != 4 || raw.dim(0) != spec.rows || raw.dim(1) != spec.cols || raw.dim(2) != a ||
      raw.dim(3) != ch) {
    throw ConfigError("decode_predictions: raw tensor shape does not match grid spec");
  }
  for (std::size_t idx = 0; idx < raw.size(); ++idx) {
    if (!std::isfinite(raw[idx])) throw NumericError("decode_predictions: non-finite input");
  }

  std::vector<Detection> cands;
  const float s = static_cast<float>(spec.stride);
  for (int i = 0; i < spec.rows; ++i) {
    for (int j = 0; j < spec.cols; ++j) {
      for (int k = 0; k < a; ++k) {
        const float obj = sigmoidf(raw.at(i, j, k, GridSpec::ch_obj()));
        // softmax over class logits
        float maxlogit = raw.at(i, j, k, GridSpec::ch_class0());
        int argmax = 0;
        for (int c = 1; c < spec.n_classes; ++c) {
          const float v = raw.at(i, j, k, GridSpec::ch_class0() + c);
          if (v > maxlogit) {
            maxlogit = v;
            argmax = c;
          }
        }
        float denom = 0.0f;
        for (int c = 0; c < spec.n_classes; ++c)
          denom += std::exp(raw.at(i, j, k, GridSpec::ch_class0() + c) - maxlogit);
        const float clsprob = 1.0f / denom;
        const float score = obj * clsprob;
        if (score < conf_threshold) continue;

        Detection d;
        d.cx = (static_cast<float>(j) + sigmoidf(raw.at(i, j, k, spec.ch_tx()))) * s;
        d.cy = (static_cast<float>(i) + sigmoidf(raw.at(i, j, k, spec.ch_ty()))) * s;
        d.w = spec.anchors[k][0] * std::exp(raw.at(i, j, k, spec.ch_tw()));
        d.h = spec.anchors[k][1] * std::exp(raw.at(i, j, k, spec.ch_th()));
        d.class_id = argmax;
        d.score = score;
        d.cell = {i, j, k};
        cands.push_back(d);
      }
    }
  }

  // greedy per-class NMS, deterministic ordering
  std::sort(cands.begin(), cands.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.cell.i != b.cell.i) return a.cell.i < b.cell.i;
    if (a.cell.j != b.cell.j) return a.cell.j < b.cell.j;
    return a.cell.k < b.cell.k;
  });
  std::vector<Detection> kept;
  std::vector<bool> removed(cands.size(), false);
  for (std::size_t p = 0; p < cands.size(); ++p) {
    if (removed[p]) continue;
    kept.push_back(cands[p]);
    for (std::size_t q = p + 1; q < cands.size(); ++q) {
      if (removed[q] || cands[q].class_id != cands[p].class_id) continue;
      const float iou = box_iou(cands[p].cx, cands[p].cy, cands[p].w, cands[p].h, cands[q].cx,
                                cands[q].cy, cands[q].w, cands[q].h);
      if (iou > nms_iou) removed[q] = true;
    }
  }
  return kept;
}

TensorF target_to_logits(const TensorF& target, const GridSpec& spec) {
  constexpr float kSat = 12.0f;
  constexpr float kEps = 1e-7f;
  TensorF out = target;
  for (int i = 0; i < spec.rows; ++i) {
    for (int j = 0; j < spec.cols; ++j) {
      for (int k = 0; k < spec.n_anchors(); ++k) {
        const bool on = target.at(i, j, k, GridSpec::ch_obj()) > 0.5f;
        out.at(i, j, k, GridSpec::ch_obj()) = on ? kSat : -kSat;
        for (int c = 0; c < spec.n_classes; ++c) {
          const bool hot = target.at(i, j, k, GridSpec::ch_class0() + c) > 0.5f;
          out.at(i, j, k, GridSpec::ch_class0() + c) = hot ? kSat : -kSat;
        }
        for (int ch : {spec.ch_tx(), spec.ch_ty()}) {
          const float p = std::clamp(target.at(i, j, k, ch), kEps, 1.0f - kEps);
          out.at(i, j, k, ch) = std::log(p / (1.0f - p));
        }
        // tw/th are already in the raw parameterization
      }
    }
  }
  return out;
}

}  // namespace gridsight::codec
