#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gridsight/config.hpp"
#include "gridsight/scenario.hpp"

// On-disk dataset layout:
//   <root>/<split>/<seq_id>/frames.bin       "GSQ1" + u32 t,C,H,W (LE) + f32 LE payload
//   <root>/<split>/<seq_id>/annotations.json per-frame agent states
//   <root>/manifest.json                     splits, seeds, statistics, config echo

namespace gridsight::dataset {

struct SequenceEntry {
  std::string seq_id;
  std::string path;  // relative to the dataset root
  std::uint64_t seed = 0;
  int n_pedestrians = 0;
  int n_crossers = 0;
};

struct SplitStats {
  int sequences = 0;
  int pedestrian_tracks = 0;
  int crosser_tracks = 0;
  double crosser_ratio = 0;
  std::map<std::string, int> class_boxes;  // per-frame box counts over the split
};

struct Manifest {
  std::string root;
  config::RunConfig run;  // world + grid as generated
  std::vector<SequenceEntry> train;
  std::vector<SequenceEntry> test;
  SplitStats train_stats;
  SplitStats test_stats;

  const std::vector<SequenceEntry>& split(const std::string& name) const;
};

// Generates and writes the dataset. Per-sequence pedestrian counts come
// from config.world.n_pedestrians, or, when that is 0, are sampled from
// {1,2,3,4} with mean 2.12; crosser counts track crosser_fraction
// cumulatively so the split balance lands within one pedestrian.
Manifest dataset_build(const config::RunConfig& rc, int n_train, int n_test,
                       const std::string& out_dir);

Manifest load_manifest(const std::string& root);

scenario::SceneSequence load_sequence(const Manifest& manifest, const SequenceEntry& entry);

// Low-level helpers (exposed for tests).
void write_frames_bin(const std::string& path, const std::vector<TensorF>& frames);
std::vector<TensorF> read_frames_bin(const std::string& path);
void write_annotations_json(const std::string& path, const scenario::SceneSequence& seq);
std::vector<std::vector<scenario::AgentState>> read_annotations_json(const std::string& path);

}  // namespace gridsight::dataset
