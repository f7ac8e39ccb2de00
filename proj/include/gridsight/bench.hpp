#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gridsight/scenario.hpp"

// Latency benchmark harness: warmups, >=30 timed repetitions per
// pedestrian-count bucket, medians/p95, and an OLS slope (ms per added
// pedestrian) with a bootstrap confidence interval. Targets are injected
// as callables so tests can drive the harness with a synthetic clock.

namespace gridsight::bench {

struct StageSample {
  double total_ms = 0;
  double detector_ms = 0, decode_ms = 0, aux_ms = 0, associate_ms = 0, baseline_ms = 0;
  int baseline_invocations = 0;
};

struct BenchTarget {
  std::string name;
  std::function<StageSample(const scenario::SceneSequence&)> run;
};

struct BucketStats {
  int pedestrian_count = 0;
  double median_ms = 0;
  double p95_ms = 0;
  StageSample median_stages;  // per-stage medians
  std::vector<double> samples_ms;
  int baseline_invocations = 0;  // from the first timed repetition
};

struct TargetReport {
  std::string name;
  std::vector<BucketStats> buckets;
  double slope_ms_per_ped = 0;
  double slope_ci_lo = 0;
  double slope_ci_hi = 0;
};

struct LatencyReport {
  std::vector<TargetReport> targets;
  std::vector<int> counts;
  int reps = 0;
  int warmups = 0;
  double timer_resolution_ns = 0;
};

// scene_provider(count) must return scenes identical except for the
// pedestrian count. Throws ConfigError when reps < 30 or warmups < 5, or
// when the timer cannot resolve at least 100 ticks per repetition.
LatencyReport latency_bench(const std::vector<BenchTarget>& targets,
                            const std::vector<int>& counts, int reps, int warmups,
                            const std::function<scenario::SceneSequence(int)>& scene_provider);

double median(std::vector<double> v);
double percentile(std::vector<double> v, double p);

// Estimated steady_clock granularity in nanoseconds.
double timer_resolution_ns();

}  // namespace gridsight::bench
