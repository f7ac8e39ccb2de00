#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Training regimes: detector-only, auxiliary-with-frozen-detector,
// end-to-end multitask, plus the sequential crop-classifier baseline.

namespace gridsight::config {
struct RunConfig;
}
namespace gridsight::dataset {
struct Manifest;
}

namespace gridsight::training {

enum class Regime { detector_only, auxiliary_frozen, multitask, sequential_baseline };
enum class OptimizerKind { adam, sgd_momentum };

const char* regime_name(Regime r);
Regime parse_regime(const std::string& name);  // throws ConfigError

struct TrainConfig {
  Regime regime = Regime::multitask;
  int epochs = 16;
  int batch_size = 8;  // sequences per optimizer step
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double lambda_det = 1.0;
  double lambda_int = 1.0;
  double lambda_noobj = 0.5;
  double lambda_box = 5.0;
  double grad_clip = 5.0;  // global max-norm, <= 0 disables
  std::uint64_t seed = 1;
  bool halve_on_plateau = false;
  int plateau_patience = 4;
  std::string detector_checkpoint;  // required for auxiliary_frozen

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss_det = 0;
  double loss_int = 0;
  double loss_total = 0;
  double wall_ms = 0;
  double learning_rate = 0;
};

struct TrainRun {
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  double wall_ms_total = 0;
  std::string checkpoint_path;
  std::string log_path;
  bool diverged = false;
};

// Trains per the regime in rc.train, writing checkpoint.gsck, train_log.jsonl
// and effective_config.json under out_dir. On divergence (non-finite loss)
// the last finite-epoch parameters are saved and the run is marked.
TrainRun train(const config::RunConfig& rc, const dataset::Manifest& manifest,
               const std::string& out_dir);

struct AblationRow {
  int tap_layer = 0;
  double accuracy = 0;
  double f1 = 0;
};

// One auxiliary_frozen training per unique L (duplicates dropped with a
// warning on stderr), all on identical data and seed; rows sorted by L.
std::vector<AblationRow> ablate_tap_layer(const config::RunConfig& rc,
                                          const dataset::Manifest& manifest,
                                          const std::vector<int>& layers,
                                          const std::string& detector_checkpoint,
                                          const std::string& out_dir);

}  // namespace gridsight::training
