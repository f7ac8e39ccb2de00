#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "gridsight/grid_codec.hpp"
#include "gridsight/models.hpp"
#include "gridsight/scenario.hpp"
#include "gridsight/training.hpp"

// Declarative run configuration. A named preset supplies every value; an
// optional JSON config file overlays it; CLI flags override individual
// fields. The effective merged config is echoed into every output
// directory as effective_config.json.

namespace gridsight::config {

struct EvalConfig {
  float conf_threshold = 0.5f;
  float nms_iou = 0.45f;
  float height_filter_px = 0.0f;  // score only GT pedestrians taller than this
  float map_iou = 0.5f;
};

struct BenchConfig {
  std::vector<int> counts = {1, 2, 4, 8, 16};
  int reps = 30;
  int warmups = 5;
};

struct RunConfig {
  std::string preset = "desk";
  scenario::WorldConfig world;
  codec::GridSpec grid;
  models::DetectorConfig detector;
  models::AuxiliaryConfig aux;
  models::SequentialBaselineConfig seq_baseline;
  training::TrainConfig train;
  EvalConfig eval;
  BenchConfig bench;

  void validate() const;
};

// Built-in presets: "desk" (192x320, grid 6x10, t=8, A=3, 8 blocks, L=5)
// and "paper-shape" (352x640, grid 11x20, t=15, A=5, 20 blocks, L=18).
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json to_json(const RunConfig& rc);
RunConfig from_json(const nlohmann::json& j);

// preset -> file overlay -> caller-supplied JSON overrides (flags)
RunConfig load(const std::string& preset_name, const std::string& config_path,
               const nlohmann::json& overrides);

void echo_effective_config(const RunConfig& rc, const std::string& out_dir);

}  // namespace gridsight::config
