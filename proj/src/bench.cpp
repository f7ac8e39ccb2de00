#include "gridsight/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "gridsight/common.hpp"

namespace gridsight::bench {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const double idx = p / 100.0 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = idx - static_cast<double>(lo);
  return v[lo] * (1 - frac) + v[hi] * frac;
}

double timer_resolution_ns() {
  // smallest positive delta between consecutive reads, sampled a few times
  double best = 1e9;
  for (int trial = 0; trial < 64; ++trial) {
    const auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    best = std::min(best, std::chrono::duration<double, std::nano>(b - a).count());
  }
  return best;
}

namespace {

struct SlopeFit {
  double slope = 0;
  double intercept = 0;
};

SlopeFit ols(const std::vector<std::pair<double, double>>& xy) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(xy.size());
  for (const auto& [x, y] : xy) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  SlopeFit f;
  const double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-12) return f;
  f.slope = (n * sxy - sx * sy) / denom;
  f.intercept = (sy - f.slope * sx) / n;
  return f;
}

}  // namespace

LatencyReport latency_bench(const std::vector<BenchTarget>& targets,
                            const std::vector<int>& counts, int reps, int warmups,
                            const std::function<scenario::SceneSequence(int)>& scene_provider) {
  if (reps < 30) throw ConfigError("latency_bench: need >= 30 timed repetitions per bucket");
  if (warmups < 5) throw ConfigError("latency_bench: need >= 5 warmup runs per bucket");
  if (targets.empty() || counts.empty())
    throw ConfigError("latency_bench: no targets or counts");

  LatencyReport report;
  report.counts = counts;
  report.reps = reps;
  report.warmups = warmups;
  report.timer_resolution_ns = timer_resolution_ns();

  for (const auto& target : targets) {
    TargetReport tr;
    tr.name = target.name;
    for (int count : counts) {
      const auto scene = scene_provider(count);
      for (int w = 0; w < warmups; ++w) target.run(scene);

      BucketStats bucket;
      bucket.pedestrian_count = count;
      std::vector<double> det, dec, aux, asc, base;
      for (int r = 0; r < reps; ++r) {
        const StageSample s = target.run(scene);
        if (s.total_ms * 1e6 < 100.0 * report.timer_resolution_ns) {
          throw ConfigError(
              "latency_bench: timer resolution insufficient (< 100 ticks per repetition); "
              "use a larger preset or scene");
        }
        bucket.samples_ms.push_back(s.total_ms);
        det.push_back(s.detector_ms);
        dec.push_back(s.decode_ms);
        aux.push_back(s.aux_ms);
        asc.push_back(s.associate_ms);
        base.push_back(s.baseline_ms);
        if (r == 0) bucket.baseline_invocations = s.baseline_invocations;
      }
      bucket.median_ms = median(bucket.samples_ms);
      bucket.p95_ms = percentile(bucket.samples_ms, 95.0);
      bucket.median_stages.total_ms = bucket.median_ms;
      bucket.median_stages.detector_ms = median(det);
      bucket.median_stages.decode_ms = median(dec);
      bucket.median_stages.aux_ms = median(aux);
      bucket.median_stages.associate_ms = median(asc);
      bucket.median_stages.baseline_ms = median(base);
      tr.buckets.push_back(std::move(bucket));
    }

    // slope over all (count, sample) pairs
    std::vector<std::pair<double, double>> xy;
    for (const auto& b : tr.buckets)
      for (double s : b.samples_ms) xy.push_back({static_cast<double>(b.pedestrian_count), s});
    tr.slope_ms_per_ped = ols(xy).slope;

    // bootstrap CI: resample within each bucket
    Rng rng(0xB00757ULL);
    std::vector<double> slopes;
    const int boots = 1000;
    slopes.reserve(boots);
    for (int b = 0; b < boots; ++b) {
      std::vector<std::pair<double, double>> resampled;
      for (const auto& bucket : tr.buckets) {
        const auto& s = bucket.samples_ms;
        for (std::size_t i = 0; i < s.size(); ++i)
          resampled.push_back({static_cast<double>(bucket.pedestrian_count),
                               s[rng.uniform_int(s.size())]});
      }
      slopes.push_back(ols(resampled).slope);
    }
    tr.slope_ci_lo = percentile(slopes, 2.5);
    tr.slope_ci_hi = percentile(slopes, 97.5);
    report.targets.push_back(std::move(tr));
  }
  return report;
}

}  // namespace gridsight::bench
