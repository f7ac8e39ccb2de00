#include "gridsight/dataset.hpp"
#include <cmath>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "gridsight/common.hpp"

namespace gridsight::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kFramesMagic[4] = {'G', 'S', 'Q', '1'};

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError("frames.bin: truncated header: " + path);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

json agent_to_json(const scenario::AgentState& a) {
  json j{{"track_id", a.track_id},
         {"class", scenario::class_name(a.cls)},
         {"cx", a.cx},
         {"cy", a.cy},
         {"w", a.w},
         {"h", a.h},
         {"vx", a.vx},
         {"vy", a.vy},
         {"intent", scenario::intent_name(a.intent)},
         {"heading", {a.heading_x, a.heading_y}}};
  if (a.cls == scenario::AgentClass::traffic_light) j["light_green"] = a.light_green;
  return j;
}

scenario::AgentState agent_from_json(const json& j) {
  scenario::AgentState a;
  a.track_id = j.at("track_id").get<int>();
  a.cls = scenario::parse_class(j.at("class").get<std::string>());
  a.cx = j.at("cx").get<float>();
  a.cy = j.at("cy").get<float>();
  a.w = j.at("w").get<float>();
  a.h = j.at("h").get<float>();
  a.vx = j.at("vx").get<float>();
  a.vy = j.at("vy").get<float>();
  a.intent = scenario::parse_intent(j.at("intent").get<std::string>());
  a.heading_x = j.at("heading").at(0).get<float>();
  a.heading_y = j.at("heading").at(1).get<float>();
  a.light_green = j.value("light_green", false);
  return a;
}

json entry_to_json(const SequenceEntry& e) {
  return json{{"seq_id", e.seq_id},
              {"path", e.path},
              {"seed", e.seed},
              {"n_pedestrians", e.n_pedestrians},
              {"n_crossers", e.n_crossers}};
}

SequenceEntry entry_from_json(const json& j) {
  SequenceEntry e;
  e.seq_id = j.at("seq_id").get<std::string>();
  e.path = j.at("path").get<std::string>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.n_pedestrians = j.at("n_pedestrians").get<int>();
  e.n_crossers = j.at("n_crossers").get<int>();
  return e;
}

json stats_to_json(const SplitStats& s) {
  return json{{"sequences", s.sequences},
              {"pedestrian_tracks", s.pedestrian_tracks},
              {"crosser_tracks", s.crosser_tracks},
              {"crosser_ratio", s.crosser_ratio},
              {"class_boxes", s.class_boxes}};
}

SplitStats stats_from_json(const json& j) {
  SplitStats s;
  s.sequences = j.at("sequences").get<int>();
  s.pedestrian_tracks = j.at("pedestrian_tracks").get<int>();
  s.crosser_tracks = j.at("crosser_tracks").get<int>();
  s.crosser_ratio = j.at("crosser_ratio").get<double>();
  s.class_boxes = j.at("class_boxes").get<std::map<std::string, int>>();
  return s;
}

// per-sequence pedestrian count distribution with mean 2.12
int sample_ped_count(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.28) return 1;
  if (u < 0.68) return 2;
  if (u < 0.92) return 3;
  return 4;
}

struct BalanceState {
  long long peds = 0;
  long long crossers = 0;
};

int balanced_crossers(BalanceState& bal, double fraction, int n_peds) {
  const long long target =
      static_cast<long long>(std::llround(fraction * static_cast<double>(bal.peds + n_peds)));
  long long want = target - bal.crossers;
  want = std::max(0ll, std::min<long long>(want, n_peds));
  bal.peds += n_peds;
  bal.crossers += want;
  return static_cast<int>(want);
}

void accumulate_stats(SplitStats& stats, const scenario::SceneSequence& seq,
                      const SequenceEntry& entry) {
  ++stats.sequences;
  stats.pedestrian_tracks += entry.n_pedestrians;
  stats.crosser_tracks += entry.n_crossers;
  for (const auto& frame : seq.annotations)
    for (const auto& a : frame) ++stats.class_boxes[scenario::class_name(a.cls)];
}

std::vector<SequenceEntry> build_split(const config::RunConfig& rc, const std::string& split,
                                       int count, std::uint64_t split_tag, const fs::path& root,
                                       SplitStats& stats) {
  Rng count_rng(mix_seed(rc.world.seed, split_tag ^ 0x9d2c5680ULL));
  BalanceState bal;
  std::vector<SequenceEntry> entries;
  for (int i = 0; i < count; ++i) {
    SequenceEntry e;
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%04d", split.c_str(), i);
    e.seq_id = id;
    e.path = split + "/" + e.seq_id;
    e.seed = mix_seed(rc.world.seed, split_tag + static_cast<std::uint64_t>(i));
    e.n_pedestrians =
        rc.world.n_pedestrians > 0 ? rc.world.n_pedestrians : sample_ped_count(count_rng);
    e.n_crossers = balanced_crossers(bal, rc.world.crosser_fraction, e.n_pedestrians);

    scenario::WorldConfig wc = rc.world;
    wc.n_pedestrians = e.n_pedestrians;
    wc.n_crossers = e.n_crossers;
    const auto seq = scenario::generate_sequence(wc, e.seed);

    const fs::path dir = root / e.path;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("dataset: cannot create " + dir.string() + ": " + ec.message());
    write_frames_bin((dir / "frames.bin").string(), seq.frames);
    write_annotations_json((dir / "annotations.json").string(), seq);
    accumulate_stats(stats, seq, e);
    entries.push_back(std::move(e));
  }
  if (stats.pedestrian_tracks > 0)
    stats.crosser_ratio =
        static_cast<double>(stats.crosser_tracks) / static_cast<double>(stats.pedestrian_tracks);
  return entries;
}

}  // namespace

const std::vector<SequenceEntry>& Manifest::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  throw ConfigError("unknown split: " + name);
}

void write_frames_bin(const std::string& path, const std::vector<TensorF>& frames) {
  if (frames.empty()) throw ConfigError("write_frames_bin: no frames");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write(kFramesMagic, 4);
  put_u32(f, static_cast<std::uint32_t>(frames.size()));
  put_u32(f, static_cast<std::uint32_t>(frames[0].dim(0)));
  put_u32(f, static_cast<std::uint32_t>(frames[0].dim(1)));
  put_u32(f, static_cast<std::uint32_t>(frames[0].dim(2)));
  static_assert(sizeof(float) == 4);
  for (const auto& frame : frames) {
    f.write(reinterpret_cast<const char*>(frame.data()),
            static_cast<std::streamsize>(frame.size() * sizeof(float)));
  }
  if (!f) throw IoError("short write: " + path);
}

std::vector<TensorF> read_frames_bin(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kFramesMagic, 4) != 0)
    throw IoError("frames.bin: bad magic: " + path);
  const int t = static_cast<int>(get_u32(f, path));
  const int c = static_cast<int>(get_u32(f, path));
  const int h = static_cast<int>(get_u32(f, path));
  const int w = static_cast<int>(get_u32(f, path));
  if (t < 1 || c < 1 || h < 1 || w < 1 || t > 10000 || c > 16)
    throw IoError("frames.bin: implausible header: " + path);
  std::vector<TensorF> frames;
  frames.reserve(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) {
    TensorF frame({c, h, w});
    f.read(reinterpret_cast<char*>(frame.data()),
           static_cast<std::streamsize>(frame.size() * sizeof(float)));
    if (!f) throw IoError("frames.bin: truncated payload: " + path);
    frames.push_back(std::move(frame));
  }
  return frames;
}

void write_annotations_json(const std::string& path, const scenario::SceneSequence& seq) {
  json frames = json::array();
  for (std::size_t t = 0; t < seq.annotations.size(); ++t) {
    json agents = json::array();
    for (const auto& a : seq.annotations[t]) agents.push_back(agent_to_json(a));
    frames.push_back(json{{"frame", t}, {"agents", std::move(agents)}});
  }
  json j{{"seed", seq.seed},
         {"seq_len", seq.config.seq_len},
         {"image_height", seq.config.image_height},
         {"image_width", seq.config.image_width},
         {"frames", std::move(frames)}};
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << j.dump() << "\n";
  if (!f) throw IoError("short write: " + path);
}

std::vector<std::vector<scenario::AgentState>> read_annotations_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("annotations.json: parse error: " + path + ": " + e.what());
  }
  std::vector<std::vector<scenario::AgentState>> out;
  for (const auto& frame : j.at("frames")) {
    std::vector<scenario::AgentState> agents;
    for (const auto& aj : frame.at("agents")) agents.push_back(agent_from_json(aj));
    out.push_back(std::move(agents));
  }
  return out;
}

Manifest dataset_build(const config::RunConfig& rc, int n_train, int n_test,
                       const std::string& out_dir) {
  if (n_train < 0 || n_test < 0) throw ConfigError("dataset: split sizes must be >= 0");
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("dataset: cannot create " + out_dir + ": " + ec.message());

  Manifest m;
  m.root = out_dir;
  m.run = rc;
  m.train = build_split(rc, "train", n_train, 0x100000ULL, root, m.train_stats);
  m.test = build_split(rc, "test", n_test, 0x200000ULL, root, m.test_stats);

  json entries_train = json::array(), entries_test = json::array();
  for (const auto& e : m.train) entries_train.push_back(entry_to_json(e));
  for (const auto& e : m.test) entries_test.push_back(entry_to_json(e));
  const json j{{"format_version", 1},
               {"config", config::to_json(rc)},
               {"splits", json{{"train", entries_train}, {"test", entries_test}}},
               {"stats",
                json{{"train", stats_to_json(m.train_stats)}, {"test", stats_to_json(m.test_stats)}}}};
  std::ofstream f(root / "manifest.json");
  if (!f) throw IoError("dataset: cannot write manifest in " + out_dir);
  f << j.dump(2) << "\n";
  return m;
}

Manifest load_manifest(const std::string& root) {
  std::ifstream f(fs::path(root) / "manifest.json");
  if (!f) throw IoError("dataset: missing manifest.json in " + root);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError(std::string("dataset: manifest parse error: ") + e.what());
  }
  Manifest m;
  m.root = root;
  m.run = config::from_json(j.at("config"));
  for (const auto& e : j.at("splits").at("train")) m.train.push_back(entry_from_json(e));
  for (const auto& e : j.at("splits").at("test")) m.test.push_back(entry_from_json(e));
  m.train_stats = stats_from_json(j.at("stats").at("train"));
  m.test_stats = stats_from_json(j.at("stats").at("test"));
  return m;
}

scenario::SceneSequence load_sequence(const Manifest& manifest, const SequenceEntry& entry) {
  const fs::path dir = fs::path(manifest.root) / entry.path;
  scenario::SceneSequence seq;
  seq.config = manifest.run.world;
  seq.config.n_pedestrians = entry.n_pedestrians;
  seq.config.n_crossers = entry.n_crossers;
  seq.seed = entry.seed;
  seq.frames = read_frames_bin((dir / "frames.bin").string());
  seq.annotations = read_annotations_json((dir / "annotations.json").string());
  if (seq.frames.size() != seq.annotations.size())
    throw IoError("dataset: frame/annotation count mismatch in " + dir.string());
  return seq;
}

}  // namespace gridsight::dataset
