#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gridsight/bench.hpp"
#include "gridsight/common.hpp"
#include "gridsight/config.hpp"
#include "gridsight/eval.hpp"

using namespace gridsight;

namespace {

assoc::IntentAssignment make_assignment(float cx, float cy, float w, float h, float prob,
                                        float score = 0.9f) {
  assoc::IntentAssignment a;
  a.detection.cx = cx;
  a.detection.cy = cy;
  a.detection.w = w;
  a.detection.h = h;
  a.detection.class_id = codec::kClassPedestrian;
  a.detection.score = score;
  a.intent_prob = prob;
  return a;
}

codec::GtBox make_ped(float cx, float cy, float w, float h, int intent) {
  codec::GtBox b;
  b.cx = cx;
  b.cy = cy;
  b.w = w;
  b.h = h;
  b.class_id = codec::kClassPedestrian;
  b.intent = intent;
  return b;
}

}  // namespace

TEST_CASE("intent metrics: hand-computed confusion (TP=2 FP=1 FN=1 -> F1=2/3)") {
  eval::IntentScorer scorer(0.0f);
  std::vector<codec::GtBox> gt = {
      make_ped(50, 50, 10, 20, codec::kIntentCross),      // predicted cross: TP
      make_ped(100, 50, 10, 20, codec::kIntentCross),     // predicted cross: TP
      make_ped(150, 50, 10, 20, codec::kIntentNotCross),  // predicted cross: FP
      make_ped(200, 50, 10, 20, codec::kIntentCross),     // predicted not:   FN
  };
  std::vector<assoc::IntentAssignment> assignments = {
      make_assignment(50, 50, 10, 20, 0.9f),
      make_assignment(100, 50, 10, 20, 0.8f),
      make_assignment(150, 50, 10, 20, 0.7f),
      make_assignment(200, 50, 10, 20, 0.2f),
  };
  scorer.add_scene(assignments, gt);
  const auto m = scorer.finalize();
  CHECK(m.confusion.tp == 2);
  CHECK(m.confusion.fp == 1);
  CHECK(m.confusion.fn == 1);
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.accuracy == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("intent metrics: strict height filter and unmatched-GT errors") {
  eval::IntentScorer scorer(120.0f);
  std::vector<codec::GtBox> gt = {
      make_ped(50, 100, 30, 120, codec::kIntentCross),   // exactly 120: excluded (strict >)
      make_ped(150, 100, 30, 121, codec::kIntentCross),  // scored, matched, correct
      make_ped(250, 100, 30, 130, codec::kIntentNotCross),  // scored, unmatched -> error
  };
  std::vector<assoc::IntentAssignment> assignments = {
      make_assignment(150, 100, 30, 121, 0.95f),
  };
  scorer.add_scene(assignments, gt);
  const auto m = scorer.finalize();
  CHECK(m.scored == 2);  // the 120 px pedestrian is not scored
  CHECK(m.confusion.tp == 1);
  CHECK(m.confusion.unmatched_gt == 1);
  CHECK(m.confusion.fp == 1);  // unmatched non-crosser imputed wrong
  CHECK(m.accuracy == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("intent metrics: perfect predictions give accuracy and F1 of 1") {
  eval::IntentScorer scorer(0.0f);
  std::vector<codec::GtBox> gt;
  std::vector<assoc::IntentAssignment> assignments;
  for (int i = 0; i < 10; ++i) {
    const bool cross = i % 2 == 0;
    gt.push_back(make_ped(20.0f + 30.0f * i, 60, 10, 20,
                          cross ? codec::kIntentCross : codec::kIntentNotCross));
    assignments.push_back(
        make_assignment(20.0f + 30.0f * i, 60, 10, 20, cross ? 0.9f : 0.1f));
  }
  scorer.add_scene(assignments, gt);
  const auto m = scorer.finalize();
  CHECK(m.accuracy == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.scored == 10);
}

TEST_CASE("intent metrics: raising the filter never increases the scored count") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<codec::GtBox> gt;
    std::vector<assoc::IntentAssignment> assignments;
    const int n = 3 + static_cast<int>(rng.uniform_int(8));
    for (int i = 0; i < n; ++i) {
      const float h = static_cast<float>(rng.uniform(10, 40));
      const float cx = 20.0f + 30.0f * i;
      gt.push_back(make_ped(cx, 60, 10, h, codec::kIntentCross));
      assignments.push_back(make_assignment(cx, 60, 10, h, 0.9f));
    }
    int prev = std::numeric_limits<int>::max();
    for (float filter : {0.0f, 15.0f, 25.0f, 35.0f}) {
      eval::IntentScorer scorer(filter);
      scorer.add_scene(assignments, gt);
      int scored = 0;
      try {
        scored = scorer.finalize().scored;
      } catch (const ConfigError&) {
        scored = 0;  // nothing above the filter
      }
      CHECK(scored <= prev);
      prev = scored;
    }
  }
}

TEST_CASE("empty test set raises the undefined-metrics error") {
  eval::IntentScorer scorer(0.0f);
  CHECK_THROWS_AS(scorer.finalize(), ConfigError);
}

TEST_CASE("mAP: perfect and empty detections") {
  {
    eval::MapScorer scorer;
    std::vector<codec::GtBox> gt = {make_ped(50, 50, 10, 20, codec::kIntentCross)};
    codec::Detection d;
    d.cx = 50;
    d.cy = 50;
    d.w = 10;
    d.h = 20;
    d.class_id = codec::kClassPedestrian;
    d.score = 0.9f;
    scorer.add_scene({d}, gt);
    const auto r = scorer.finalize(0.5f);
    CHECK(r.map == doctest::Approx(1.0).epsilon(1e-12));
  }
  {
    eval::MapScorer scorer;
    scorer.add_scene({}, {make_ped(50, 50, 10, 20, codec::kIntentCross)});
    CHECK(scorer.finalize(0.5f).map == 0.0);
  }
}

TEST_CASE("mAP: 3-detection 2-GT staircase matches the hand-computed value") {
  eval::MapScorer scorer;
  std::vector<codec::GtBox> gt = {make_ped(50, 50, 10, 20, codec::kIntentCross),
                                  make_ped(150, 50, 10, 20, codec::kIntentCross)};
  auto det = [](float cx, float score) {
    codec::Detection d;
    d.cx = cx;
    d.cy = 50;
    d.w = 10;
    d.h = 20;
    d.class_id = codec::kClassPedestrian;
    d.score = score;
    return d;
  };
  // score order: TP(0.9), FP(0.8, off target), TP(0.7)
  scorer.add_scene({det(50, 0.9f), det(250, 0.8f), det(150, 0.7f)}, gt);
  const auto r = scorer.finalize(0.5f);
  // precision after each detection: 1, 1/2, 2/3; recall: 1/2, 1/2, 1.
  // 101-point AP: recalls 0..0.50 take precision 1 (51 points), recalls
  // 0.51..1.00 take 2/3 (50 points).
  const double expected = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
  CHECK(r.per_class.at(codec::kClassPedestrian) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("mAP: a false positive below every true positive never raises AP") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<codec::GtBox> gt;
    std::vector<codec::Detection> dets;
    const int n = 2 + static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < n; ++i) {
      gt.push_back(make_ped(30.0f + 40.0f * i, 60, 12, 24, codec::kIntentCross));
      codec::Detection d;
      d.cx = 30.0f + 40.0f * i;
      d.cy = 60;
      d.w = 12;
      d.h = 24;
      d.class_id = codec::kClassPedestrian;
      d.score = 0.5f + 0.4f * static_cast<float>(rng.uniform());
      dets.push_back(d);
    }
    eval::MapScorer base;
    base.add_scene(dets, gt);
    const double ap0 = base.finalize(0.5f).per_class.at(codec::kClassPedestrian);

    codec::Detection fp;
    fp.cx = 300;
    fp.cy = 150;
    fp.w = 10;
    fp.h = 20;
    fp.class_id = codec::kClassPedestrian;
    fp.score = 0.01f;  // below all true positives
    auto dets2 = dets;
    dets2.push_back(fp);
    eval::MapScorer with_fp;
    with_fp.add_scene(dets2, gt);
    const double ap1 = with_fp.finalize(0.5f).per_class.at(codec::kClassPedestrian);
    CHECK(ap1 <= ap0 + 1e-12);
  }
}

TEST_CASE("latency bench: synthetic-clock targets recover their slopes") {
  scenario::WorldConfig w;
  auto provider = [&](int count) { return scenario::make_bench_sequence(w, count, 1); };

  int ped_count_of_last_scene = 0;
  const double c = 3.5;  // ms per pedestrian
  bench::BenchTarget linear{"linear", [&](const scenario::SceneSequence& seq) {
                              int peds = 0;
                              for (const auto& a : seq.annotations.back())
                                if (a.cls == scenario::AgentClass::pedestrian) ++peds;
                              ped_count_of_last_scene = peds;
                              bench::StageSample s;
                              s.total_ms = 2.0 + c * peds;  // fake clock, no real work
                              s.baseline_ms = c * peds;
                              s.baseline_invocations = peds;
                              return s;
                            }};
  bench::BenchTarget constant{"constant", [](const scenario::SceneSequence&) {
                                bench::StageSample s;
                                s.total_ms = 7.0;
                                return s;
                              }};

  const auto report =
      bench::latency_bench({linear, constant}, {1, 2, 4, 8, 16}, 30, 5, provider);
  REQUIRE(report.targets.size() == 2);
  CHECK(report.targets[0].slope_ms_per_ped == doctest::Approx(c).epsilon(0.01));
  CHECK(report.targets[1].slope_ms_per_ped == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(report.targets[0].buckets.size() == 5);
  CHECK(report.targets[0].buckets.back().baseline_invocations == 16);
  CHECK(ped_count_of_last_scene == 16);
  // medians are over the full repetition count
  CHECK(report.targets[0].buckets[0].samples_ms.size() == 30);

  CHECK_THROWS_AS(bench::latency_bench({linear}, {1, 2}, 10, 5, provider), ConfigError);
  CHECK_THROWS_AS(bench::latency_bench({linear}, {1, 2}, 30, 2, provider), ConfigError);
}

TEST_CASE("memory report: accounting identities") {
  auto rc = config::preset("desk");
  models::Detector<float> det(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid,
                                   rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));
  models::SequentialBaseline<float> baseline(rc.seq_baseline);
  nn::ParamStore<float> main_store, base_store;
  Rng rng(6);
  det.init_params(main_store, rng);
  aux.init_params(main_store, rng);
  baseline.init_params(base_store, rng);

  const auto r = eval::memory_report(main_store, base_store);
  const auto det_n = r.per_module_params.at("det");
  const auto aux_n = r.per_module_params.at("aux");
  const auto seq_n = r.per_module_params.at("seq");
  CHECK(r.single_shot_params == det_n + aux_n);
  CHECK(r.sequential_params == det_n + seq_n);
  CHECK(r.head_delta_bytes ==
        (static_cast<long long>(seq_n) - static_cast<long long>(aux_n)) * 4);
  CHECK(r.single_shot_params < r.sequential_params);
}
