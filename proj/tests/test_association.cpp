#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gridsight/association.hpp"
#include "gridsight/common.hpp"
#include "gridsight/config.hpp"

using namespace gridsight;

namespace {

struct Fixture {
  config::RunConfig rc = config::preset("desk");
  models::Detector<float> det;
  models::AuxiliaryHead<float> aux;
  models::SequentialBaseline<float> baseline;
  nn::ParamStore<float> params;
  nn::ParamStore<float> baseline_params;

  Fixture()
      : det(rc.detector, rc.grid),
        aux(rc.aux, rc.grid, rc.detector.layer_out_ch(rc.detector.tap_layer),
            rc.detector.layer_out_h(rc.detector.tap_layer),
            rc.detector.layer_out_w(rc.detector.tap_layer)),
        baseline(rc.seq_baseline) {
    Rng rng(2024);
    det.init_params(params, rng);
    aux.init_params(params, rng);
    baseline.init_params(baseline_params, rng);
  }
};

// exhaustive-scan oracle: compute the softmax at every cell, then read the
// one the detection points at
float scan_oracle(const TensorF& logits, const codec::CellIndex& cell) {
  TensorF probs(logits.shape());
  for (int i = 0; i < logits.dim(0); ++i)
    for (int j = 0; j < logits.dim(1); ++j)
      for (int k = 0; k < logits.dim(2); ++k) {
        const float a = logits.at(i, j, k, 0), b = logits.at(i, j, k, 1);
        const float m = std::max(a, b);
        const float ea = std::exp(a - m), eb = std::exp(b - m);
        probs.at(i, j, k, codec::kIntentCross) = eb / (ea + eb);
        probs.at(i, j, k, codec::kIntentNotCross) = ea / (ea + eb);
      }
  return probs.at(cell.i, cell.j, cell.k, codec::kIntentCross);
}

}  // namespace

TEST_CASE("associate: direct lookup at the detection's cell") {
  TensorF logits({6, 10, 3, 2});
  // softmax at (2,3,1) equal to (0.1, 0.9) with cross at index 1
  logits.at(2, 3, 1, 0) = std::log(0.1f);
  logits.at(2, 3, 1, 1) = std::log(0.9f);
  codec::Detection d;
  d.class_id = codec::kClassPedestrian;
  d.cell = {2, 3, 1};
  const auto out = assoc::associate({d}, logits);
  REQUIRE(out.size() == 1);
  CHECK(out[0].intent_prob == doctest::Approx(0.9f).epsilon(1e-5));
  CHECK(out[0].cell == d.cell);

  CHECK(assoc::associate({}, logits).empty());

  codec::Detection vehicle = d;
  vehicle.class_id = codec::kClassVehicle;
  CHECK(assoc::associate({vehicle}, logits).empty());

  codec::Detection bad = d;
  bad.cell = {99, 0, 0};
  CHECK_THROWS_AS(assoc::associate({bad}, logits), NumericError);
}

TEST_CASE("associate equals the exhaustive-scan oracle on random grids") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    TensorF logits({6, 10, 3, 2});
    for (auto& v : logits) v = static_cast<float>(rng.uniform(-3, 3));
    std::vector<codec::Detection> dets;
    for (int n = 0; n < 5; ++n) {
      codec::Detection d;
      d.class_id = static_cast<int>(rng.uniform_int(4));
      d.cell = {static_cast<int>(rng.uniform_int(6)), static_cast<int>(rng.uniform_int(10)),
                static_cast<int>(rng.uniform_int(3))};
      d.score = static_cast<float>(rng.uniform());
      dets.push_back(d);
    }
    const auto out = assoc::associate(dets, logits);
    std::size_t expected = 0;
    std::size_t oi = 0;
    for (const auto& d : dets) {
      if (d.class_id != codec::kClassPedestrian) continue;
      ++expected;
      REQUIRE(oi < out.size());
      CHECK(out[oi].intent_prob == doctest::Approx(scan_oracle(logits, d.cell)).epsilon(1e-6));
      CHECK(out[oi].cell == d.cell);  // order preserved
      ++oi;
    }
    CHECK(out.size() == expected);
  }
}

TEST_CASE("single-shot pipeline: zero-pedestrian scenes complete; flops are count-blind") {
  Fixture fx;
  scenario::WorldConfig w = fx.rc.world;

  const auto s0 = scenario::make_bench_sequence(w, 0, 5);
  const auto out0 = assoc::pipeline_single_shot(fx.det, fx.aux, fx.params, s0.frames, 0.5f, 0.45f);
  for (const auto& d : out0.detections) CHECK(d.score >= 0.5f);
  CHECK(out0.intents.size() <= out0.detections.size());

  const auto s1 = scenario::make_bench_sequence(w, 1, 5);
  const auto s2 = scenario::make_bench_sequence(w, 2, 5);
  const auto o1 = assoc::pipeline_single_shot(fx.det, fx.aux, fx.params, s1.frames, 0.5f, 0.45f);
  const auto o2 = assoc::pipeline_single_shot(fx.det, fx.aux, fx.params, s2.frames, 0.5f, 0.45f);
  // doubling the pedestrian count changes detector+aux tensor work by zero
  CHECK(o1.timing.tensor_flops == o2.timing.tensor_flops);
  CHECK(o1.timing.tensor_flops > 0);

  // every pedestrian detection carries exactly one intent assignment
  std::size_t peds = 0;
  for (const auto& d : o2.detections)
    if (d.class_id == codec::kClassPedestrian) ++peds;
  CHECK(o2.intents.size() == peds);

  CHECK_THROWS_AS(
      assoc::pipeline_single_shot(fx.det, fx.aux, fx.params,
                                  std::vector<TensorF>(3, s1.frames[0]), 0.5f, 0.45f),
      ConfigError);
}

TEST_CASE("sequential pipeline: one classifier invocation per pedestrian detection") {
  Fixture fx;
  scenario::WorldConfig w = fx.rc.world;
  const auto scene = scenario::make_bench_sequence(w, 3, 6);
  const auto out = assoc::pipeline_sequential(fx.det, fx.baseline, fx.params, fx.baseline_params,
                                              scene.frames, scene.annotations, 0.5f, 0.45f);
  std::size_t peds = 0;
  for (const auto& d : out.detections)
    if (d.class_id == codec::kClassPedestrian) ++peds;
  CHECK(out.timing.baseline_invocations == static_cast<int>(peds));
  CHECK(out.intents.size() == peds);

  const auto empty_scene = scenario::make_bench_sequence(w, 0, 6);
  const auto out0 =
      assoc::pipeline_sequential(fx.det, fx.baseline, fx.params, fx.baseline_params,
                                 empty_scene.frames, empty_scene.annotations, 0.5f, 0.45f);
  std::size_t peds0 = 0;
  for (const auto& d : out0.detections)
    if (d.class_id == codec::kClassPedestrian) ++peds0;
  CHECK(out0.timing.baseline_invocations == static_cast<int>(peds0));
}

TEST_CASE("both pipelines share the detector: identical detection lists") {
  Fixture fx;
  const auto scene = scenario::make_bench_sequence(fx.rc.world, 4, 7);
  const auto a = assoc::pipeline_single_shot(fx.det, fx.aux, fx.params, scene.frames, 0.5f, 0.45f);
  const auto b = assoc::pipeline_sequential(fx.det, fx.baseline, fx.params, fx.baseline_params,
                                            scene.frames, scene.annotations, 0.5f, 0.45f);
  REQUIRE(a.detections.size() == b.detections.size());
  for (std::size_t i = 0; i < a.detections.size(); ++i) {
    CHECK(a.detections[i].cx == b.detections[i].cx);
    CHECK(a.detections[i].cy == b.detections[i].cy);
    CHECK(a.detections[i].score == b.detections[i].score);
    CHECK(a.detections[i].class_id == b.detections[i].class_id);
    CHECK(a.detections[i].cell == b.detections[i].cell);
  }
}
