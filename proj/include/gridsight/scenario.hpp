#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridsight/grid_codec.hpp"
#include "gridsight/image.hpp"
#include "gridsight/tensor.hpp"

// Deterministic synthetic street scenes. Crossing intent is decodable from
// motion history (crossers walk perpendicular toward the road band, biased
// toward a crosswalk; non-crossers walk parallel or stand) and from the
// heading marker each pedestrian carries on its leading edge.

namespace gridsight::scenario {

struct WorldConfig {
  int image_height = 192;
  int image_width = 320;
  int road_band_top = 64;     // y range of the road, [top, bottom)
  int road_band_bottom = 128;
  int n_pedestrians = 0;  // 0 = auto: dataset_build samples counts with mean 2.12
  int n_vehicles = 2;
  int n_crosswalks = 1;
  bool has_traffic_light = true;
  double crosser_fraction = 0.5;
  int n_crossers = -1;  // -1 = round(crosser_fraction * n_pedestrians)
  int seq_len = 8;      // t
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError naming the violated field
};

enum class AgentClass { pedestrian = 0, crosswalk = 1, vehicle = 2, traffic_light = 3 };
enum class Intent { cross, not_cross, not_applicable };

struct AgentState {
  int track_id = -1;
  AgentClass cls = AgentClass::pedestrian;
  float cx = 0, cy = 0;  // continuous center, px
  float w = 0, h = 0;
  float vx = 0, vy = 0;  // px per frame
  Intent intent = Intent::not_applicable;
  float heading_x = 1, heading_y = 0;  // unit vector
  bool light_green = false;            // meaningful for traffic lights only
};

struct SceneSequence {
  WorldConfig config;
  std::uint64_t seed = 0;
  std::vector<TensorF> frames;                       // t x (3, H, W), values in [0, 1]
  std::vector<std::vector<AgentState>> annotations;  // clipped; zero-area boxes dropped
  std::vector<std::vector<AgentState>> raw_states;   // unclipped simulation states
};

// Pure renderer: uniform background, one flat-shaded box per agent
// (pedestrians additionally carry a heading marker inside the box).
TensorF render_frame(int image_h, int image_w, const std::vector<AgentState>& agents);

// Deterministic in (config, seed); agents move with constant velocity.
SceneSequence generate_sequence(const WorldConfig& config, std::uint64_t seed);

// Clips an agent box to the image; returns false if nothing remains.
bool clip_agent(const AgentState& raw, int image_h, int image_w, AgentState* clipped);

// Ground-truth boxes (codec view) of one frame's clipped annotations.
std::vector<codec::GtBox> to_gt_boxes(const std::vector<AgentState>& annotations);

const char* class_name(AgentClass cls);
const char* intent_name(Intent intent);
AgentClass parse_class(const std::string& name);   // throws ConfigError
Intent parse_intent(const std::string& name);      // throws ConfigError

// Fixed per-class fill colors (RGB in [0,1]).
img::Color class_color(AgentClass cls, bool light_green);
img::Color background_color();
img::Color heading_marker_color();

// Deterministic scene family for the latency benchmark: identical layout,
// only the number of pedestrians varies (the first `count` slots of a
// fixed 16-slot pattern are populated).
SceneSequence make_bench_sequence(const WorldConfig& base, int pedestrian_count,
                                  std::uint64_t seed);

}  // namespace gridsight::scenario
