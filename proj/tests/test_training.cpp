#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gridsight/checkpoint.hpp"
#include "gridsight/common.hpp"
#include "gridsight/config.hpp"
#include "gridsight/dataset.hpp"
#include "gridsight/eval.hpp"
#include "gridsight/kernels/kernels.hpp"
#include "gridsight/models.hpp"
#include "gridsight/training.hpp"

using namespace gridsight;
using models::Mode;
namespace fs = std::filesystem;

namespace {

std::string fixture_dataset(int n_train, int n_test, std::uint64_t seed, const char* tag) {
  const auto dir = fs::temp_directory_path() / (std::string("gridsight_train_fix_") + tag);
  fs::remove_all(dir);
  auto rc = config::preset("desk");
  rc.world.seed = seed;
  dataset::dataset_build(rc, n_train, n_test, dir.string());
  return dir.string();
}

}  // namespace

TEST_CASE("joint loss linearity: lambda_int = 0 reproduces detector-only gradients") {
  auto rc = config::preset("desk");
  models::Detector<float> det(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid,
                                   rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));

  scenario::WorldConfig w = rc.world;
  w.n_pedestrians = 2;
  const auto seq = scenario::generate_sequence(w, 31);
  const auto enc = codec::encode_targets(scenario::to_gt_boxes(seq.annotations.back()), rc.grid);

  nn::ParamStore<float> params_a;
  Rng rng(77);
  det.init_params(params_a, rng);
  aux.init_params(params_a, rng);
  nn::ParamStore<float> params_b = params_a;

  // path A: full multitask step with the intention term weighted to zero
  {
    std::vector<models::DetectorCache<float>> lower(seq.frames.size());
    std::vector<TensorF> taps;
    for (std::size_t t = 0; t < seq.frames.size(); ++t)
      taps.push_back(det.forward_lower(seq.frames[t], params_a, Mode::train, &lower[t]));
    models::DetectorCache<float> upper;
    TensorF raw = det.forward_upper(taps.back(), params_a, Mode::train, &upper);
    models::AuxCache<float> aux_cache;
    TensorF logits = aux.forward(taps, params_a, &aux_cache);

    TensorF d_raw;
    models::detection_loss<float>(raw, enc.detection, rc.grid, 0.5f, 5.0f, &d_raw);
    TensorF d_logits;
    models::intent_loss<float>(logits, enc.intent, enc.mask, &d_logits);
    for (auto& v : d_logits) v *= 0.0f;  // lambda_int = 0

    TensorF d_tap_final = det.backward_upper(d_raw, upper, params_a);
    auto d_taps = aux.backward(d_logits, aux_cache, params_a, true);
    for (std::size_t i = 0; i < d_tap_final.size(); ++i) d_taps.back()[i] += d_tap_final[i];
    for (std::size_t t = 0; t < seq.frames.size(); ++t)
      det.backward_lower(d_taps[t], lower[t], params_a);
  }

  // path B: detector-only step on the final frame
  {
    models::DetectorCache<float> lower, upper;
    TensorF tap;
    TensorF raw = det.forward_full(seq.frames.back(), params_b, Mode::train, &tap, &lower, &upper);
    TensorF d_raw;
    models::detection_loss<float>(raw, enc.detection, rc.grid, 0.5f, 5.0f, &d_raw);
    TensorF d_tap = det.backward_upper(d_raw, upper, params_b);
    det.backward_lower(d_tap, lower, params_b);
  }

  for (const auto& [name, entry] : params_a) {
    if (name.rfind("det.", 0) != 0) continue;
    const auto& other = params_b.at(name);
    for (std::size_t i = 0; i < entry.grad.size(); ++i) {
      REQUIRE(entry.grad[i] == other.grad[i]);  // bitwise
    }
  }
}

TEST_CASE("one optimization step on a convex probe reduces the loss") {
  // quadratic probe: loss = theta^2, gradient 2*theta
  float theta = 3.0f;
  float m = 0, v = 0;
  const float g = 2 * theta;
  const float before = theta * theta;
  kernels::adam_step(1, &theta, &g, &m, &v, 0.1f, 0.9f, 0.999f, 1e-8f, 10.0f, 1000.0f);
  CHECK(theta * theta < before);

  float theta2 = 3.0f, u = 0;
  const float g2 = 2 * theta2;
  kernels::sgd_momentum_step(1, &theta2, &g2, &u, 0.1f, 0.9f);
  CHECK(theta2 * theta2 < before);
}

TEST_CASE("training runs: freeze contract, determinism, chance-level evaluation") {
  const auto data = fixture_dataset(6, 3, 1234, "main");
  const auto manifest = dataset::load_manifest(data);
  const auto out_base = fs::temp_directory_path() / "gridsight_train_runs";
  fs::remove_all(out_base);

  // detector_only for 2 epochs
  auto rc = manifest.run;
  rc.train.regime = training::Regime::detector_only;
  rc.train.epochs = 2;
  rc.train.seed = 9;
  const auto det_run = training::train(rc, manifest, (out_base / "det").string());
  CHECK_FALSE(det_run.diverged);
  CHECK(det_run.epochs.size() == 2);

  // determinism: same config and seed reproduce epoch-0 losses bitwise and
  // the checkpoint digest
  const auto det_run2 = training::train(rc, manifest, (out_base / "det2").string());
  CHECK(det_run.epochs[0].loss_det == det_run2.epochs[0].loss_det);
  CHECK(det_run.epochs[1].loss_det == det_run2.epochs[1].loss_det);
  CHECK(file_digest(det_run.checkpoint_path) == file_digest(det_run2.checkpoint_path));

  // auxiliary_frozen: detector tensors bit-identical before/after
  auto rc_aux = manifest.run;
  rc_aux.train.regime = training::Regime::auxiliary_frozen;
  rc_aux.train.epochs = 2;
  rc_aux.train.seed = 10;
  rc_aux.train.detector_checkpoint = det_run.checkpoint_path;
  const std::uint64_t det_hash_before = file_digest(det_run.checkpoint_path);
  const auto aux_run = training::train(rc_aux, manifest, (out_base / "aux").string());
  CHECK_FALSE(aux_run.diverged);
  CHECK(file_digest(det_run.checkpoint_path) == det_hash_before);  // source untouched

  nn::ParamStore<float> det_params, combined;
  models::Detector<float> detector(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux_model(
      rc.aux, rc.grid, rc.detector.layer_out_ch(rc.detector.tap_layer),
      rc.detector.layer_out_h(rc.detector.tap_layer),
      rc.detector.layer_out_w(rc.detector.tap_layer));
  Rng rng(0);
  detector.init_params(det_params, rng);
  ckpt::load(det_run.checkpoint_path, det_params);
  Rng rng2(0);
  detector.init_params(combined, rng2);
  aux_model.init_params(combined, rng2);
  ckpt::load(aux_run.checkpoint_path, combined);
  for (const auto& [name, entry] : det_params) {
    const auto& after = combined.at(name);
    for (std::size_t i = 0; i < entry.value.size(); ++i)
      REQUIRE(entry.value[i] == after.value[i]);
  }

  // evaluating the same checkpoint twice gives identical bundles; a
  // detector_only checkpoint reports no intent metrics
  const auto m1 = eval::evaluate(rc, manifest, det_run.checkpoint_path, "", "");
  const auto m2 = eval::evaluate(rc, manifest, det_run.checkpoint_path, "", "");
  CHECK(m1.detection.map == m2.detection.map);
  CHECK_FALSE(m1.has_intent);

  // untrained (random-init) intention head on the balanced test set scores
  // near chance while the detector finds the pedestrians
  const auto maux1 = eval::evaluate(rc_aux, manifest, aux_run.checkpoint_path, "", "");
  CHECK(maux1.has_intent);
  CHECK(maux1.intent.accuracy >= 0.0);
  CHECK(maux1.intent.accuracy <= 1.0);

  fs::remove_all(out_base);
  fs::remove_all(data);
}

TEST_CASE("training loss trends downward on a small run") {
  const auto data = fixture_dataset(8, 0, 77, "trend");
  const auto manifest = dataset::load_manifest(data);
  auto rc = manifest.run;
  rc.train.regime = training::Regime::detector_only;
  rc.train.epochs = 8;
  rc.train.seed = 3;
  const auto out = fs::temp_directory_path() / "gridsight_trend";
  fs::remove_all(out);
  const auto run = training::train(rc, manifest, out.string());
  REQUIRE(run.epochs.size() == 8);
  // median of the last quartile < median of the first quartile
  const double first = (run.epochs[0].loss_det + run.epochs[1].loss_det) / 2;
  const double last = (run.epochs[6].loss_det + run.epochs[7].loss_det) / 2;
  CHECK(last < first);
  // the JSON-lines log carries one record per epoch
  std::ifstream log(run.log_path);
  int lines = 0;
  std::string line;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("regime") == "detector_only");
    CHECK(j.contains("wall_ms"));
    ++lines;
  }
  CHECK(lines == 8);
  fs::remove_all(out);
  fs::remove_all(data);
}

TEST_CASE("divergence aborts with the last finite checkpoint") {
  const auto data = fixture_dataset(4, 0, 55, "diverge");
  const auto manifest = dataset::load_manifest(data);
  auto rc = manifest.run;
  rc.train.regime = training::Regime::detector_only;
  rc.train.epochs = 6;
  // adam's normalized steps resist blow-up; raw momentum at this rate does not
  rc.train.optimizer = training::OptimizerKind::sgd_momentum;
  rc.train.learning_rate = 1e10;
  rc.train.grad_clip = 0;
  const auto out = fs::temp_directory_path() / "gridsight_diverge";
  fs::remove_all(out);
  const auto run = training::train(rc, manifest, out.string());
  CHECK(run.diverged);
  CHECK(fs::exists(run.checkpoint_path));
  fs::remove_all(out);
  fs::remove_all(data);
}
