#include "gridsight/association.hpp"

#include <chrono>
#include <cmath>

#include "gridsight/common.hpp"
#include "gridsight/kernels/kernels.hpp"

namespace gridsight::assoc {

using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

std::vector<IntentAssignment> associate(const std::vector<codec::Detection>& detections,
                                        const TensorF& intent_logits_grid) {
  if (intent_logits_grid.rank() != 4)
    throw ConfigError("associate: intent logits must be (H, W, A, N_I)");
  const int rows = intent_logits_grid.dim(0);
  const int cols = intent_logits_grid.dim(1);
  const int anchors = intent_logits_grid.dim(2);
  const int ni = intent_logits_grid.dim(3);

  std::vector<IntentAssignment> out;
  out.reserve(detections.size());
  for (const auto& det : detections) {
    if (det.class_id != codec::kClassPedestrian) continue;
    const auto& c = det.cell;
    if (c.i < 0 || c.i >= rows || c.j < 0 || c.j >= cols || c.k < 0 || c.k >= anchors)
      throw NumericError("associate: detection cell outside the intention grid");
    // two-class softmax at the one cell
    float maxz = intent_logits_grid.at(c.i, c.j, c.k, 0);
    for (int q = 1; q < ni; ++q) maxz = std::max(maxz, intent_logits_grid.at(c.i, c.j, c.k, q));
    float denom = 0;
    for (int q = 0; q < ni; ++q)
      denom += std::exp(intent_logits_grid.at(c.i, c.j, c.k, q) - maxz);
    const float p_cross =
        std::exp(intent_logits_grid.at(c.i, c.j, c.k, codec::kIntentCross) - maxz) / denom;
    out.push_back(IntentAssignment{det, p_cross, c});
  }
  return out;
}

PipelineOutput pipeline_single_shot(const models::Detector<float>& detector,
                                    const models::AuxiliaryHead<float>& aux,
                                    nn::ParamStore<float>& params,
                                    const std::vector<TensorF>& frames, float conf_threshold,
                                    float nms_iou) {
  if (static_cast<int>(frames.size()) != aux.config().seq_len)
    throw ConfigError("pipeline_single_shot: expected exactly t frames");
  PipelineOutput out;

  kernels::reset_flop_counter();
  auto t0 = Clock::now();
  std::vector<TensorF> taps;
  taps.reserve(frames.size());
  TensorF raw;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    taps.push_back(detector.forward_lower(frames[t], params, models::Mode::eval, nullptr));
    if (t + 1 == frames.size())
      raw = detector.forward_upper(taps.back(), params, models::Mode::eval, nullptr);
  }
  out.timing.detector_ms = ms_since(t0);

  t0 = Clock::now();
  out.intent_logits = aux.forward(taps, params, nullptr);
  out.timing.aux_ms = ms_since(t0);
  out.timing.tensor_flops = kernels::flop_counter();

  t0 = Clock::now();
  out.detections = codec::decode_predictions(raw, detector.grid(), conf_threshold, nms_iou);
  out.timing.decode_ms = ms_since(t0);

  t0 = Clock::now();
  out.intents = associate(out.detections, out.intent_logits);
  out.timing.associate_ms = ms_since(t0);
  return out;
}

PipelineOutput pipeline_sequential(const models::Detector<float>& detector,
                                   const models::SequentialBaseline<float>& baseline,
                                   nn::ParamStore<float>& det_params,
                                   nn::ParamStore<float>& baseline_params,
                                   const std::vector<TensorF>& frames,
                                   const std::vector<std::vector<scenario::AgentState>>& annotations,
                                   float conf_threshold, float nms_iou) {
  if (frames.empty() || frames.size() != annotations.size())
    throw ConfigError("pipeline_sequential: frames/annotations length mismatch");
  if (static_cast<int>(frames.size()) != baseline.config().seq_len)
    throw ConfigError("pipeline_sequential: expected exactly t frames");
  PipelineOutput out;

  kernels::reset_flop_counter();
  auto t0 = Clock::now();
  TensorF tap;
  TensorF raw = detector.forward_full(frames.back(), det_params, models::Mode::eval, &tap, nullptr,
                                      nullptr);
  out.timing.detector_ms = ms_since(t0);
  out.timing.tensor_flops = kernels::flop_counter();

  t0 = Clock::now();
  out.detections = codec::decode_predictions(raw, detector.grid(), conf_threshold, nms_iou);
  out.timing.decode_ms = ms_since(t0);

  const auto& cfg = baseline.config();
  for (const auto& det : out.detections) {
    if (det.class_id != codec::kClassPedestrian) continue;

    // oracle tracking: best-IoU ground-truth pedestrian owns this detection
    t0 = Clock::now();
    const scenario::AgentState* owner = nullptr;
    float best_iou = 0.0f;
    float best_dist = std::numeric_limits<float>::max();
    for (const auto& a : annotations.back()) {
      if (a.cls != scenario::AgentClass::pedestrian) continue;
      const float iou = codec::box_iou(det.cx, det.cy, det.w, det.h, a.cx, a.cy, a.w, a.h);
      const float dist = std::hypot(det.cx - a.cx, det.cy - a.cy);
      if (iou > best_iou || (best_iou == 0.0f && iou == 0.0f && dist < best_dist)) {
        best_iou = iou;
        best_dist = dist;
        owner = &a;
      }
    }

    std::vector<TensorF> crops;
    crops.reserve(frames.size());
    const scenario::AgentState* last_seen = nullptr;
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
      const scenario::AgentState* found = nullptr;
      if (owner) {
        for (const auto& a : annotations[t])
          if (a.track_id == owner->track_id) found = &a;
      }
      if (found) last_seen = found;
      float cx = det.cx, cy = det.cy, w = det.w, h = det.h;
      if (const auto* use = found ? found : last_seen; use) {
        cx = use->cx;
        cy = use->cy;
        w = use->w;
        h = use->h;
      }
      crops.push_back(img::crop_resize(frames[t], cx, cy, w, h, cfg.crop_h, cfg.crop_w));
    }
    // final frame: the predicted box
    crops.push_back(
        img::crop_resize(frames.back(), det.cx, det.cy, det.w, det.h, cfg.crop_h, cfg.crop_w));

    const float logit = baseline.forward(crops, baseline_params, models::Mode::eval, nullptr);
    ++out.timing.baseline_invocations;
    out.timing.baseline_ms += ms_since(t0);

    IntentAssignment ia;
    ia.detection = det;
    ia.cell = det.cell;
    ia.intent_prob = nn::sigmoid(logit);
    out.intents.push_back(ia);
  }
  return out;
}

}  // namespace gridsight::assoc
