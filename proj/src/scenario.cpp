#include "gridsight/scenario.hpp"

#include <algorithm>
#include <cmath>

#include "gridsight/common.hpp"

namespace gridsight::scenario {

void WorldConfig::validate() const {
  if (image_height < 32 || image_width < 32)
    throw ConfigError("world.image_height/image_width: must be at least 32 px");
  if (road_band_top < 0 || road_band_bottom > image_height || road_band_top >= road_band_bottom)
    throw ConfigError("world.road_band: must satisfy 0 <= top < bottom <= image_height");
  if (n_pedestrians < 0) throw ConfigError("world.n_pedestrians: must be >= 0");
  if (n_vehicles < 0) throw ConfigError("world.n_vehicles: must be >= 0");
  if (n_crosswalks < 0) throw ConfigError("world.n_crosswalks: must be >= 0");
  if (crosser_fraction < 0.0 || crosser_fraction > 1.0)
    throw ConfigError("world.crosser_fraction: must be in [0, 1]");
  if (n_crossers != -1 && (n_crossers < 0 || n_crossers > n_pedestrians))
    throw ConfigError("world.n_crossers: must be -1 or in [0, n_pedestrians]");
  if (seq_len < 2) throw ConfigError("world.seq_len: must be >= 2");
}

img::Color background_color() { return {0.10f, 0.10f, 0.12f}; }
img::Color heading_marker_color() { return {1.0f, 0.95f, 0.30f}; }

img::Color class_color(AgentClass cls, bool light_green) {
  switch (cls) {
    case AgentClass::pedestrian: return {0.85f, 0.20f, 0.20f};
    case AgentClass::crosswalk: return {0.72f, 0.72f, 0.78f};
    case AgentClass::vehicle: return {0.20f, 0.35f, 0.85f};
    case AgentClass::traffic_light:
      return light_green ? img::Color{0.10f, 0.85f, 0.25f} : img::Color{1.0f, 0.45f, 0.05f};
  }
  return {0, 0, 0};
}

TensorF render_frame(int image_h, int image_w, const std::vector<AgentState>& agents) {
  TensorF frame = img::make(image_h, image_w, background_color());
  // fixed draw order: crosswalks under vehicles under lights under pedestrians
  for (AgentClass layer : {AgentClass::crosswalk, AgentClass::vehicle, AgentClass::traffic_light,
                           AgentClass::pedestrian}) {
    for (const auto& a : agents) {
      if (a.cls != layer) continue;
      img::fill_rect(frame, a.cx, a.cy, a.w, a.h, class_color(a.cls, a.light_green));
      if (a.cls == AgentClass::pedestrian) {
        // 3x3 marker at the leading edge, kept inside the box
        const float mx = a.cx + a.heading_x * std::max(0.0f, a.w / 2 - 2.0f);
        const float my = a.cy + a.heading_y * std::max(0.0f, a.h / 2 - 2.0f);
        img::fill_rect(frame, mx, my, 3.0f, 3.0f, heading_marker_color());
      }
    }
  }
  return frame;
}

bool clip_agent(const AgentState& raw, int image_h, int image_w, AgentState* clipped) {
  const float x0 = std::max(0.0f, raw.cx - raw.w / 2);
  const float x1 = std::min(static_cast<float>(image_w), raw.cx + raw.w / 2);
  const float y0 = std::max(0.0f, raw.cy - raw.h / 2);
  const float y1 = std::min(static_cast<float>(image_h), raw.cy + raw.h / 2);
  if (x1 - x0 <= 0.0f || y1 - y0 <= 0.0f) return false;
  *clipped = raw;
  clipped->cx = (x0 + x1) / 2;
  clipped->cy = (y0 + y1) / 2;
  clipped->w = x1 - x0;
  clipped->h = y1 - y0;
  return true;
}

std::vector<codec::GtBox> to_gt_boxes(const std::vector<AgentState>& annotations) {
  std::vector<codec::GtBox> out;
  out.reserve(annotations.size());
  for (const auto& a : annotations) {
    codec::GtBox b;
    b.cx = a.cx;
    b.cy = a.cy;
    b.w = a.w;
    b.h = a.h;
    b.class_id = static_cast<int>(a.cls);
    b.track_id = a.track_id;
    switch (a.intent) {
      case Intent::cross: b.intent = codec::kIntentCross; break;
      case Intent::not_cross: b.intent = codec::kIntentNotCross; break;
      case Intent::not_applicable: b.intent = -1; break;
    }
    out.push_back(b);
  }
  return out;
}

namespace {

struct WorldBuilder {
  const WorldConfig& cfg;
  Rng& rng;
  std::vector<AgentState> agents;
  int next_track = 1;
  std::vector<float> crosswalk_x;

  float band_top() const { return static_cast<float>(cfg.road_band_top); }
  float band_bottom() const { return static_cast<float>(cfg.road_band_bottom); }
  float band_h() const { return band_bottom() - band_top(); }
  float img_w() const { return static_cast<float>(cfg.image_width); }
  float img_h() const { return static_cast<float>(cfg.image_height); }

  void add_crosswalks() {
    for (int i = 0; i < cfg.n_crosswalks; ++i) {
      AgentState a;
      a.track_id = next_track++;
      a.cls = AgentClass::crosswalk;
      const float base = img_w() * static_cast<float>(i + 1) / static_cast<float>(cfg.n_crosswalks + 1);
      a.cx = base + static_cast<float>(rng.uniform(-20.0, 20.0));
      a.cy = (band_top() + band_bottom()) / 2;
      a.w = 40.0f;
      a.h = band_h();
      a.intent = Intent::not_applicable;
      crosswalk_x.push_back(a.cx);
      agents.push_back(a);
    }
  }

  void add_traffic_light() {
    if (!cfg.has_traffic_light) return;
    AgentState a;
    a.track_id = next_track++;
    a.cls = AgentClass::traffic_light;
    const float anchor_x = crosswalk_x.empty() ? img_w() / 2 : crosswalk_x.front();
    a.cx = std::clamp(anchor_x + static_cast<float>(rng.uniform(26.0, 40.0)), 8.0f, img_w() - 8.0f);
    a.cy = std::max(12.0f, band_top() - 14.0f);
    a.w = 10.0f;
    a.h = 20.0f;
    a.intent = Intent::not_applicable;
    a.light_green = rng.bernoulli(0.5);
    agents.push_back(a);
  }

  void add_vehicles() {
    for (int i = 0; i < cfg.n_vehicles; ++i) {
      AgentState a;
      a.track_id = next_track++;
      a.cls = AgentClass::vehicle;
      a.w = static_cast<float>(rng.uniform(28.0, 44.0));
      a.h = static_cast<float>(rng.uniform(12.0, 18.0));
      // two lanes, direction fixed per lane
      const bool top_lane = (i % 2 == 0);
      a.cy = band_top() + band_h() * (top_lane ? 0.28f : 0.72f);
      const float dir = top_lane ? 1.0f : -1.0f;
      const float speed = static_cast<float>(rng.uniform(4.0, 9.0));
      a.vx = dir * speed;
      a.vy = 0.0f;
      // spawn in the half the vehicle is leaving so it stays visible
      const float lo = dir > 0 ? 20.0f : img_w() * 0.4f;
      const float hi = dir > 0 ? img_w() * 0.6f : img_w() - 20.0f;
      a.cx = static_cast<float>(rng.uniform(lo, hi));
      a.heading_x = dir;
      a.heading_y = 0.0f;
      a.intent = Intent::not_applicable;
      agents.push_back(a);
    }
  }

  void add_pedestrians(int n_peds, int n_crossers) {
    for (int i = 0; i < n_peds; ++i) {
      const bool crosser = i < n_crossers;
      AgentState a;
      a.track_id = next_track++;
      a.cls = AgentClass::pedestrian;
      a.w = static_cast<float>(rng.uniform(12.0, 18.0));
      a.h = static_cast<float>(rng.uniform(24.0, 36.0));
      a.intent = crosser ? Intent::cross : Intent::not_cross;

      const bool below = rng.bernoulli(0.5);
      const float margin = a.h / 2 + 2.0f;
      const float side_lo = below ? band_bottom() + 15.0f : margin + 2.0f;
      const float side_hi = below ? img_h() - margin - 2.0f : band_top() - 15.0f;
      a.cy = static_cast<float>(rng.uniform(side_lo, std::max(side_lo + 1.0f, side_hi)));

      if (crosser) {
        // spawn near a crosswalk and give the velocity a component toward it
        const float cw =
            crosswalk_x.empty()
                ? static_cast<float>(rng.uniform(40.0, img_w() - 40.0))
                : crosswalk_x[rng.uniform_int(crosswalk_x.size())];
        a.cx = std::clamp(cw + static_cast<float>(rng.uniform(-60.0, 60.0)), 10.0f, img_w() - 10.0f);
        const float vy_mag = static_cast<float>(rng.uniform(3.0, 6.0));
        a.vy = below ? -vy_mag : vy_mag;  // toward the band
        const float steps = static_cast<float>(std::max(2, cfg.seq_len - 1));
        a.vx = std::clamp((cw - a.cx) / steps, -2.0f, 2.0f);
        if (std::abs(a.vx) >= vy_mag) a.vx = 0.0f;  // keep perpendicular dominant
      } else {
        a.cx = static_cast<float>(rng.uniform(15.0, img_w() - 15.0));
        if (rng.bernoulli(0.5)) {
          a.vx = static_cast<float>(rng.uniform(2.0, 5.0)) * (rng.bernoulli(0.5) ? 1.0f : -1.0f);
          a.vy = 0.0f;  // walking parallel to the road
        } else {
          a.vx = 0.0f;  // standing
          a.vy = 0.0f;
        }
      }
      const float norm = std::hypot(a.vx, a.vy);
      if (norm > 1e-6f) {
        a.heading_x = a.vx / norm;
        a.heading_y = a.vy / norm;
      } else {
        a.heading_x = rng.bernoulli(0.5) ? 1.0f : -1.0f;
        a.heading_y = 0.0f;
      }
      agents.push_back(a);
    }
  }
};

}  // namespace

SceneSequence generate_sequence(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(config.seed, seed));

  const int n_peds = config.n_pedestrians;
  const int n_crossers = config.n_crossers >= 0
                             ? config.n_crossers
                             : static_cast<int>(std::lround(config.crosser_fraction * n_peds));
  if (n_crossers > n_peds) throw ConfigError("world.n_crossers exceeds n_pedestrians");

  WorldBuilder builder{config, rng, {}, 1, {}};
  builder.add_crosswalks();
  builder.add_traffic_light();
  builder.add_vehicles();
  builder.add_pedestrians(n_peds, n_crossers);

  SceneSequence seq;
  seq.config = config;
  seq.seed = seed;
  std::vector<AgentState> state = builder.agents;
  for (int t = 0; t < config.seq_len; ++t) {
    if (t > 0) {
      for (auto& a : state) {
        a.cx += a.vx;
        a.cy += a.vy;
      }
    }
    seq.raw_states.push_back(state);
    seq.frames.push_back(render_frame(config.image_height, config.image_width, state));
    std::vector<AgentState> clipped;
    for (const auto& a : state) {
      AgentState c;
      if (clip_agent(a, config.image_height, config.image_width, &c)) clipped.push_back(c);
    }
    seq.annotations.push_back(std::move(clipped));
  }
  return seq;
}

SceneSequence make_bench_sequence(const WorldConfig& base, int pedestrian_count,
                                  std::uint64_t seed) {
  if (pedestrian_count < 0 || pedestrian_count > 16)
    throw ConfigError("bench scenes support 0..16 pedestrians");
  WorldConfig cfg = base;
  cfg.n_pedestrians = 0;  // placed by hand below
  cfg.n_vehicles = 1;
  cfg.n_crosswalks = 1;
  cfg.validate();

  SceneSequence seq = generate_sequence(cfg, seed);

  // 16 fixed slots spread over distinct grid cells, half above and half
  // below the band; alternating crossers/non-crossers
  const float iw = static_cast<float>(cfg.image_width);
  const float bt = static_cast<float>(cfg.road_band_top);
  const float bb = static_cast<float>(cfg.road_band_bottom);
  const float ih = static_cast<float>(cfg.image_height);
  std::vector<AgentState> slots;
  for (int s = 0; s < 16; ++s) {
    AgentState a;
    a.track_id = 100 + s;
    a.cls = AgentClass::pedestrian;
    a.w = 14.0f;
    a.h = 28.0f;
    const bool below = s % 2 == 0;
    const int col = s % 8;
    a.cx = iw * (0.08f + 0.115f * static_cast<float>(col)) + (below ? 0.0f : 14.0f);
    a.cy = below ? bb + 24.0f + 18.0f * static_cast<float>(s / 8)
                 : bt - 26.0f - 16.0f * static_cast<float>(s / 8);
    (void)ih;
    const bool crosser = (s % 4) < 2;
    a.intent = crosser ? Intent::cross : Intent::not_cross;
    if (crosser) {
      a.vy = below ? -4.0f : 4.0f;
      a.vx = 0.0f;
      a.heading_x = 0.0f;
      a.heading_y = below ? -1.0f : 1.0f;
    } else {
      a.vx = (s % 2 == 0) ? 3.0f : -3.0f;
      a.vy = 0.0f;
      a.heading_x = (s % 2 == 0) ? 1.0f : -1.0f;
      a.heading_y = 0.0f;
    }
    slots.push_back(a);
  }
  slots.resize(static_cast<std::size_t>(pedestrian_count));

  // re-simulate with the pedestrians appended
  std::vector<AgentState> state = seq.raw_states.front();
  state.insert(state.end(), slots.begin(), slots.end());
  SceneSequence out;
  out.config = cfg;
  out.seed = seed;
  for (int t = 0; t < cfg.seq_len; ++t) {
    if (t > 0) {
      for (auto& a : state) {
        a.cx += a.vx;
        a.cy += a.vy;
      }
    }
    out.raw_states.push_back(state);
    out.frames.push_back(render_frame(cfg.image_height, cfg.image_width, state));
    std::vector<AgentState> clipped;
    for (const auto& a : state) {
      AgentState c;
      if (clip_agent(a, cfg.image_height, cfg.image_width, &c)) clipped.push_back(c);
    }
    out.annotations.push_back(std::move(clipped));
  }
  return out;
}

}  // namespace gridsight::scenario

namespace gridsight::scenario {

const char* class_name(AgentClass cls) {
  switch (cls) {
    case AgentClass::pedestrian: return "pedestrian";
    case AgentClass::crosswalk: return "crosswalk";
    case AgentClass::vehicle: return "vehicle";
    case AgentClass::traffic_light: return "traffic_light";
  }
  return "?";
}

const char* intent_name(Intent intent) {
  switch (intent) {
    case Intent::cross: return "cross";
    case Intent::not_cross: return "not_cross";
    case Intent::not_applicable: return "not_applicable";
  }
  return "?";
}

AgentClass parse_class(const std::string& name) {
  for (AgentClass c : {AgentClass::pedestrian, AgentClass::crosswalk, AgentClass::vehicle,
                       AgentClass::traffic_light}) {
    if (name == class_name(c)) return c;
  }
  throw ConfigError("unknown agent class: " + name);
}

Intent parse_intent(const std::string& name) {
  for (Intent i : {Intent::cross, Intent::not_cross, Intent::not_applicable}) {
    if (name == intent_name(i)) return i;
  }
  throw ConfigError("unknown intent: " + name);
}

}  // namespace gridsight::scenario
