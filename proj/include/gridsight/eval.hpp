#pragma once

#include <map>
#include <string>
#include <vector>

#include "gridsight/association.hpp"
#include "gridsight/grid_codec.hpp"
#include "gridsight/nn.hpp"

namespace gridsight::config {
struct RunConfig;
}
namespace gridsight::dataset {
struct Manifest;
}

namespace gridsight::eval {

struct Confusion {
  int tp = 0, fp = 0, tn = 0, fn = 0;  // "cross" is the positive class
  int unmatched_gt = 0;
};

struct IntentMetrics {
  double accuracy = 0;
  double f1 = 0;
  Confusion confusion;
  int scored = 0;
  int low_confidence = 0;  // assignments with |p - 0.5| < 0.15 (untrained-cell flag)
};

// Accumulates intention scoring over scenes. Ground-truth pedestrians
// taller than height_filter_px are scored (strict >; 0 scores all).
// Assignments match GT greedily by detection score at IoU >= match_iou;
// a scored GT pedestrian left unmatched counts as an intention error.
class IntentScorer {
 public:
  explicit IntentScorer(float height_filter_px, float match_iou = 0.5f)
      : height_filter_(height_filter_px), match_iou_(match_iou) {}

  void add_scene(const std::vector<assoc::IntentAssignment>& assignments,
                 const std::vector<codec::GtBox>& gt);

  // Throws ConfigError when nothing was scored (empty test set).
  IntentMetrics finalize() const;

 private:
  float height_filter_;
  float match_iou_;
  Confusion counts_;
  int scored_ = 0;
  int low_confidence_ = 0;
};

struct ApResult {
  double map = 0;
  std::map<int, double> per_class;  // class id -> AP (classes present in GT)
  std::map<int, int> gt_counts;
};

// 101-point interpolated AP at a fixed IoU, averaged over classes present
// in the ground truth.
class MapScorer {
 public:
  void add_scene(const std::vector<codec::Detection>& detections,
                 const std::vector<codec::GtBox>& gt);
  ApResult finalize(float iou) const;

 private:
  struct Det {
    float score;
    int scene;
    float cx, cy, w, h;
  };
  std::map<int, std::vector<Det>> dets_;                       // per class
  std::map<int, std::vector<std::vector<codec::GtBox>>> gts_;  // per class per scene
  int scenes_ = 0;
};

struct MemoryReport {
  std::map<std::string, std::size_t> per_module_params;
  std::size_t single_shot_params = 0;   // det + aux
  std::size_t sequential_params = 0;    // det + crop encoder + recurrent head
  std::size_t element_bytes = 4;
  long long head_delta_bytes = 0;  // sequential head bytes - aux head bytes

  std::size_t single_shot_bytes() const { return single_shot_params * element_bytes; }
  std::size_t sequential_bytes() const { return sequential_params * element_bytes; }
};

MemoryReport memory_report(const nn::ParamStore<float>& det_aux_params,
                           const nn::ParamStore<float>& baseline_params);

struct MetricsBundle {
  int sequences = 0;
  bool has_intent = false;
  IntentMetrics intent;
  ApResult detection;
  bool has_baseline = false;
  IntentMetrics baseline_intent;
};

// Evaluates a checkpoint on the manifest's test split; writes report.json
// and report.csv into out_dir when non-empty. baseline_checkpoint adds the
// sequential pipeline's intention metrics.
MetricsBundle evaluate(const config::RunConfig& rc, const dataset::Manifest& manifest,
                       const std::string& checkpoint_path,
                       const std::string& baseline_checkpoint_path, const std::string& out_dir);

}  // namespace gridsight::eval
