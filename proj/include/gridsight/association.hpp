#pragma once

#include <cstdint>
#include <vector>

#include "gridsight/grid_codec.hpp"
#include "gridsight/models.hpp"
#include "gridsight/scenario.hpp"

// Constant-time spatial join of detections and the intention grid, plus
// the two end-to-end inference pipelines it anchors: the single-shot
// pipeline (detector taps -> ConvLSTM head -> per-cell lookup) and the
// sequential crop-then-classify baseline.

namespace gridsight::assoc {

struct IntentAssignment {
  codec::Detection detection;
  float intent_prob = 0;  // softmax probability of "cross" at the detection's cell
  codec::CellIndex cell;
};

struct StageTimings {
  double detector_ms = 0;   // all per-frame detector passes
  double decode_ms = 0;     // final-frame decode + NMS
  double aux_ms = 0;        // auxiliary scan over the tap sequence
  double associate_ms = 0;  // per-detection lookups
  double baseline_ms = 0;   // sequential classifier passes (baseline pipeline)
  int baseline_invocations = 0;
  std::uint64_t tensor_flops = 0;  // detector+aux tensor work (scene-independent)

  double total_ms() const {
    return detector_ms + decode_ms + aux_ms + associate_ms + baseline_ms;
  }
};

struct PipelineOutput {
  std::vector<codec::Detection> detections;      // all classes
  std::vector<IntentAssignment> intents;         // pedestrians only
  TensorF intent_logits;                         // (H, W, A, N_I), single-shot only
  StageTimings timing;
};

// O(1) lookup per pedestrian detection: softmax of the intent logits at
// the detection's own (i,j,k). Non-pedestrian detections are skipped;
// output order equals input order. Throws on an out-of-range cell.
std::vector<IntentAssignment> associate(const std::vector<codec::Detection>& detections,
                                        const TensorF& intent_logits_grid);

PipelineOutput pipeline_single_shot(const models::Detector<float>& detector,
                                    const models::AuxiliaryHead<float>& aux,
                                    nn::ParamStore<float>& params,
                                    const std::vector<TensorF>& frames, float conf_threshold,
                                    float nms_iou);

// Detects on the final frame, then classifies each pedestrian detection's
// crop track separately. Past crops come from ground-truth tracks (oracle
// tracking); the final frame uses the predicted box.
PipelineOutput pipeline_sequential(const models::Detector<float>& detector,
                                   const models::SequentialBaseline<float>& baseline,
                                   nn::ParamStore<float>& det_params,
                                   nn::ParamStore<float>& baseline_params,
                                   const std::vector<TensorF>& frames,
                                   const std::vector<std::vector<scenario::AgentState>>& annotations,
                                   float conf_threshold, float nms_iou);

}  // namespace gridsight::assoc
