#include "gridsight/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <thread>

#include "gridsight/checkpoint.hpp"
#include "gridsight/config.hpp"
#include "gridsight/dataset.hpp"
#include "gridsight/kernels/kernels.hpp"
#include "gridsight/eval.hpp"
#include "gridsight/models.hpp"

namespace gridsight::training {

namespace fs = std::filesystem;
using models::Mode;
using Clock = std::chrono::steady_clock;

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::detector_only: return "detector_only";
    case Regime::auxiliary_frozen: return "auxiliary_frozen";
    case Regime::multitask: return "multitask";
    case Regime::sequential_baseline: return "sequential_baseline";
  }
  return "?";
}

Regime parse_regime(const std::string& name) {
  for (Regime r : {Regime::detector_only, Regime::auxiliary_frozen, Regime::multitask,
                   Regime::sequential_baseline}) {
    if (name == regime_name(r)) return r;
  }
  throw ConfigError("unknown training regime: " + name);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (learning_rate <= 0) throw ConfigError("train.learning_rate: must be > 0");
  if (lambda_det < 0 || lambda_int < 0)
    throw ConfigError("train.lambda_det/lambda_int: must be >= 0");
  if (regime == Regime::multitask && (lambda_det <= 0 || lambda_int <= 0))
    throw ConfigError("train.regime=multitask requires lambda_det > 0 and lambda_int > 0");
  if (regime == Regime::auxiliary_frozen && detector_checkpoint.empty())
    throw ConfigError("train.regime=auxiliary_frozen requires detector_checkpoint");
  if (lambda_noobj < 0 || lambda_box < 0)
    throw ConfigError("train.lambda_noobj/lambda_box: must be >= 0");
  if (plateau_patience < 1) throw ConfigError("train.plateau_patience: must be >= 1");
}

namespace {

// ---------------------------------------------------------------------------
// Optimizer over a ParamStore (trainable entries only).
// ---------------------------------------------------------------------------
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(nn::ParamStore<float>& params, double grad_clip) {
    if (grad_clip > 0) {
      double sq = 0;
      for (auto& [name, e] : params) {
        if (!e.trainable) continue;
        for (std::size_t i = 0; i < e.grad.size(); ++i)
          sq += static_cast<double>(e.grad[i]) * e.grad[i];
      }
      const double norm = std::sqrt(sq);
      if (norm > grad_clip) {
        const float scale = static_cast<float>(grad_clip / norm);
        for (auto& [name, e] : params) {
          if (!e.trainable) continue;
          for (auto& g : e.grad) g *= scale;
        }
      }
    }

    ++t_;
    const float bc1 = static_cast<float>(1.0 / (1.0 - std::pow(0.9, t_)));
    const float bc2 = static_cast<float>(1.0 / (1.0 - std::pow(0.999, t_)));
    for (auto& [name, e] : params) {
      if (!e.trainable) continue;
      auto& s1 = state1_[name];
      if (s1.size() != e.value.size()) s1.assign(e.value.size(), 0.0f);
      const int n = static_cast<int>(e.value.size());
      if (kind_ == OptimizerKind::adam) {
        auto& s2 = state2_[name];
        if (s2.size() != e.value.size()) s2.assign(e.value.size(), 0.0f);
        kernels::adam_step(n, e.value.data(), e.grad.data(), s1.data(), s2.data(),
                           static_cast<float>(lr_), 0.9f, 0.999f, 1e-8f, bc1, bc2);
      } else {
        kernels::sgd_momentum_step(n, e.value.data(), e.grad.data(), s1.data(),
                                   static_cast<float>(lr_), 0.9f);
      }
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  long t_ = 0;
  std::map<std::string, std::vector<float>> state1_, state2_;
};

// ---------------------------------------------------------------------------
// In-memory training sample.
// ---------------------------------------------------------------------------
struct Sample {
  std::vector<TensorF> frames;
  std::vector<std::vector<scenario::AgentState>> annotations;
  codec::EncodedTargets targets;  // encoded from the final frame
};

Sample make_sample(scenario::SceneSequence&& seq, const codec::GridSpec& grid) {
  Sample s;
  s.targets = codec::encode_targets(scenario::to_gt_boxes(seq.annotations.back()), grid);
  s.frames = std::move(seq.frames);
  s.annotations = std::move(seq.annotations);
  return s;
}

// Pedestrian crop tracks for the sequential baseline (ground-truth IDs).
struct CropTrack {
  std::vector<TensorF> crops;
  float label = 0;  // 1 = cross
};

std::vector<CropTrack> crop_tracks(const Sample& sample,
                                   const models::SequentialBaselineConfig& cfg) {
  std::vector<CropTrack> tracks;
  const auto& final_frame = sample.annotations.back();
  for (const auto& agent : final_frame) {
    if (agent.cls != scenario::AgentClass::pedestrian) continue;
    CropTrack track;
    track.label = agent.intent == scenario::Intent::cross ? 1.0f : 0.0f;
    const scenario::AgentState* last_seen = nullptr;
    for (std::size_t t = 0; t < sample.frames.size(); ++t) {
      const scenario::AgentState* found = nullptr;
      for (const auto& a : sample.annotations[t])
        if (a.track_id == agent.track_id) found = &a;
      if (found) last_seen = found;
      const scenario::AgentState* use = found ? found : last_seen;
      if (!use) use = &agent;  // track enters late: reuse its final box
      track.crops.push_back(img::crop_resize(sample.frames[t], use->cx, use->cy, use->w, use->h,
                                             cfg.crop_h, cfg.crop_w));
    }
    tracks.push_back(std::move(track));
  }
  return tracks;
}

// ---------------------------------------------------------------------------
// Per-sequence gradient computation; grads accumulate into `params`.
// Returns (loss_det, loss_int) contributions of this sequence.
// ---------------------------------------------------------------------------
struct SeqLoss {
  double det = 0;
  double intent = 0;
};

struct Workbench {
  const config::RunConfig& rc;
  const models::Detector<float>& detector;
  const models::AuxiliaryHead<float>& aux;
  const models::SequentialBaseline<float>& baseline;
};

SeqLoss step_detector_only(const Workbench& wb, const Sample& sample,
                           nn::ParamStore<float>& params) {
  models::DetectorCache<float> lower, upper;
  TensorF tap;
  TensorF raw = wb.detector.forward_full(sample.frames.back(), params, Mode::train, &tap, &lower,
                                         &upper);
  TensorF d_raw;
  const auto terms = models::detection_loss<float>(
      raw, sample.targets.detection, wb.rc.grid, static_cast<float>(wb.rc.train.lambda_noobj),
      static_cast<float>(wb.rc.train.lambda_box), &d_raw);
  TensorF d_tap = wb.detector.backward_upper(d_raw, upper, params);
  wb.detector.backward_lower(d_tap, lower, params);
  return {terms.total, 0.0};
}

SeqLoss step_multitask(const Workbench& wb, const Sample& sample, nn::ParamStore<float>& params) {
  const int t_len = static_cast<int>(sample.frames.size());
  std::vector<models::DetectorCache<float>> lower_caches(static_cast<std::size_t>(t_len));
  std::vector<TensorF> taps(static_cast<std::size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    taps[static_cast<std::size_t>(t)] = wb.detector.forward_lower(
        sample.frames[static_cast<std::size_t>(t)], params, Mode::train,
        &lower_caches[static_cast<std::size_t>(t)]);
  }
  models::DetectorCache<float> upper;
  TensorF raw = wb.detector.forward_upper(taps.back(), params, Mode::train, &upper);

  models::AuxCache<float> aux_cache;
  TensorF logits = wb.aux.forward(taps, params, &aux_cache);

  TensorF d_raw;
  const auto det_terms = models::detection_loss<float>(
      raw, sample.targets.detection, wb.rc.grid, static_cast<float>(wb.rc.train.lambda_noobj),
      static_cast<float>(wb.rc.train.lambda_box), &d_raw);
  TensorF d_logits;
  const float l_int = models::intent_loss<float>(logits, sample.targets.intent,
                                                 sample.targets.mask, &d_logits);

  const float ld = static_cast<float>(wb.rc.train.lambda_det);
  const float li = static_cast<float>(wb.rc.train.lambda_int);
  for (auto& v : d_raw) v *= ld;
  for (auto& v : d_logits) v *= li;

  TensorF d_tap_final = wb.detector.backward_upper(d_raw, upper, params);
  std::vector<TensorF> d_taps = wb.aux.backward(d_logits, aux_cache, params, true);
  for (std::size_t i = 0; i < d_tap_final.size(); ++i) d_taps.back()[i] += d_tap_final[i];
  for (int t = 0; t < t_len; ++t) {
    wb.detector.backward_lower(d_taps[static_cast<std::size_t>(t)],
                               lower_caches[static_cast<std::size_t>(t)], params);
  }
  return {det_terms.total, l_int};
}

SeqLoss step_aux_frozen(const Workbench& wb, const Sample& sample,
                        const std::vector<TensorF>& taps, nn::ParamStore<float>& params) {
  models::AuxCache<float> aux_cache;
  TensorF logits = wb.aux.forward(taps, params, &aux_cache);
  TensorF d_logits;
  const float l_int = models::intent_loss<float>(logits, sample.targets.intent,
                                                 sample.targets.mask, &d_logits);
  wb.aux.backward(d_logits, aux_cache, params, false);
  return {0.0, l_int};
}

SeqLoss step_sequential(const Workbench& wb, const Sample& sample, nn::ParamStore<float>& params) {
  const auto tracks = crop_tracks(sample, wb.rc.seq_baseline);
  if (tracks.empty()) return {0.0, 0.0};
  double loss = 0;
  for (const auto& track : tracks) {
    models::SequentialCache<float> cache;
    const float z = wb.baseline.forward(track.crops, params, Mode::train, &cache);
    loss += nn::bce_with_logit(z, track.label);
    const float dz = (nn::sigmoid(z) - track.label) / static_cast<float>(tracks.size());
    wb.baseline.backward(dz, cache, params);
  }
  return {0.0, loss / static_cast<double>(tracks.size())};
}

// ---------------------------------------------------------------------------
// Deterministic batch-parallel gradient computation: each sequence gets its
// own store copy; gradients reduce in sequence order regardless of the
// worker count.
// ---------------------------------------------------------------------------
template <typename StepFn>
std::vector<SeqLoss> batch_gradients(nn::ParamStore<float>& params,
                                     const std::vector<int>& batch_ids, StepFn&& step) {
  const int b = static_cast<int>(batch_ids.size());
  const int workers = std::min(worker_count(), b);
  std::vector<std::unique_ptr<nn::ParamStore<float>>> locals(static_cast<std::size_t>(b));
  std::vector<SeqLoss> losses(static_cast<std::size_t>(b));

  auto run_one = [&](int i) {
    auto local = std::make_unique<nn::ParamStore<float>>(params);
    local->zero_grads();
    losses[static_cast<std::size_t>(i)] = step(batch_ids[static_cast<std::size_t>(i)], *local);
    locals[static_cast<std::size_t>(i)] = std::move(local);
  };

  if (workers <= 1) {
    for (int i = 0; i < b; ++i) run_one(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < b; i = next.fetch_add(1)) run_one(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  // in-order reduction, scaled by 1/batch
  const float inv_b = 1.0f / static_cast<float>(b);
  for (int i = 0; i < b; ++i) {
    auto it_main = params.begin();
    auto it_local = locals[static_cast<std::size_t>(i)]->begin();
    for (; it_main != params.end(); ++it_main, ++it_local) {
      auto& dst = it_main->second.grad;
      const auto& src = it_local->second.grad;
      kernels::axpy(static_cast<int>(dst.size()), inv_b, src.data(), dst.data());
    }
  }
  return losses;
}

void refresh_running_stats(const Workbench& wb, Regime regime, const std::vector<Sample>& samples,
                           nn::ParamStore<float>& params, int max_sequences) {
  // the frozen regime must leave every det.* tensor untouched, and its
  // auxiliary head carries no batchnorm
  if (regime == Regime::auxiliary_frozen) return;
  const int n = std::min<int>(max_sequences, static_cast<int>(samples.size()));
  for (int i = 0; i < n; ++i) {
    const Sample& s = samples[static_cast<std::size_t>(i)];
    if (regime == Regime::sequential_baseline) {
      for (const auto& track : crop_tracks(s, wb.rc.seq_baseline))
        wb.baseline.forward(track.crops, params, Mode::stat_update, nullptr);
      continue;
    }
    TensorF tap;
    for (std::size_t t = 0; t + 1 < s.frames.size(); ++t)
      wb.detector.forward_lower(s.frames[t], params, Mode::stat_update, nullptr);
    tap = wb.detector.forward_lower(s.frames.back(), params, Mode::stat_update, nullptr);
    wb.detector.forward_upper(tap, params, Mode::stat_update, nullptr);
  }
}

}  // namespace

TrainRun train(const config::RunConfig& rc, const dataset::Manifest& manifest,
               const std::string& out_dir) {
  rc.validate();
  const TrainConfig& tc = rc.train;
  fs::create_directories(out_dir);
  config::echo_effective_config(rc, out_dir);

  models::Detector<float> detector(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid, rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));
  models::SequentialBaseline<float> baseline(rc.seq_baseline);
  Workbench wb{rc, detector, aux, baseline};

  // Parameter registration per regime.
  nn::ParamStore<float> params;
  Rng init_rng(mix_seed(tc.seed, 0xA11CE5ULL));
  switch (tc.regime) {
    case Regime::detector_only:
      detector.init_params(params, init_rng);
      break;
    case Regime::auxiliary_frozen: {
      detector.init_params(params, init_rng);
      aux.init_params(params, init_rng);
      // load pre-trained detector weights, then freeze every det.* tensor
      nn::ParamStore<float> det_only;
      Rng dummy(0);
      detector.init_params(det_only, dummy);
      ckpt::load(tc.detector_checkpoint, det_only);
      for (auto& [name, entry] : det_only) {
        auto& dst = params.at(name);
        dst.value = entry.value;
      }
      for (auto& [name, entry] : params) {
        if (name.rfind("det.", 0) == 0) entry.trainable = false;
      }
      break;
    }
    case Regime::multitask:
      detector.init_params(params, init_rng);
      aux.init_params(params, init_rng);
      break;
    case Regime::sequential_baseline:
      baseline.init_params(params, init_rng);
      break;
  }

  // Load the training split (desk datasets fit comfortably in memory).
  std::vector<Sample> samples;
  samples.reserve(manifest.train.size());
  for (const auto& entry : manifest.train)
    samples.push_back(make_sample(dataset::load_sequence(manifest, entry), rc.grid));
  if (samples.empty()) throw ConfigError("train: empty training split");

  // Tap precomputation for the frozen regime: the detector never changes,
  // so taps are constants (computed once, inference mode).
  std::vector<std::vector<TensorF>> frozen_taps;
  if (tc.regime == Regime::auxiliary_frozen) {
    frozen_taps.resize(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (const auto& frame : samples[i].frames)
        frozen_taps[i].push_back(detector.forward_lower(frame, params, Mode::eval, nullptr));
    }
  }

  TrainRun run;
  run.config = tc;
  run.log_path = out_dir + "/train_log.jsonl";
  run.checkpoint_path = out_dir + "/checkpoint.gsck";
  std::ofstream log(run.log_path);
  if (!log) throw IoError("train: cannot write " + run.log_path);

  Optimizer opt(tc.optimizer, tc.learning_rate);
  Rng shuffle_rng(mix_seed(tc.seed, 0x5423ULL));
  const auto t_start = Clock::now();
  double best_loss = std::numeric_limits<double>::infinity();
  int plateau = 0;

  auto save_checkpoint = [&](int epochs_done, bool diverged) {
    nlohmann::json meta{{"config", config::to_json(rc)},
                        {"regime", regime_name(tc.regime)},
                        {"epochs_completed", epochs_done},
                        {"diverged", diverged}};
    ckpt::save(run.checkpoint_path, params, meta);
  };

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto e_start = Clock::now();
    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    // deterministic shuffle (Fisher-Yates on our own rng)
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = shuffle_rng.uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }

    double sum_det = 0, sum_int = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(tc.batch_size)) {
      std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(pos),
                             order.begin() +
                                 static_cast<std::ptrdiff_t>(std::min(
                                     order.size(), pos + static_cast<std::size_t>(tc.batch_size))));
      params.zero_grads();
      auto losses = batch_gradients(params, batch, [&](int id, nn::ParamStore<float>& local) {
        const Sample& s = samples[static_cast<std::size_t>(id)];
        switch (tc.regime) {
          case Regime::detector_only: return step_detector_only(wb, s, local);
          case Regime::multitask: return step_multitask(wb, s, local);
          case Regime::auxiliary_frozen:
            return step_aux_frozen(wb, s, frozen_taps[static_cast<std::size_t>(id)], local);
          case Regime::sequential_baseline: return step_sequential(wb, s, local);
        }
        return SeqLoss{};
      });
      for (const auto& l : losses) {
        sum_det += l.det;
        sum_int += l.intent;
      }
      bool finite = true;
      for (const auto& l : losses)
        if (!std::isfinite(l.det) || !std::isfinite(l.intent)) finite = false;
      if (!finite) {
        run.diverged = true;
        if (epoch > 0) {
          // the last epoch-end checkpoint on disk is the last good state
          run.wall_ms_total =
              std::chrono::duration<double, std::milli>(Clock::now() - t_start).count();
          return run;
        }
        save_checkpoint(0, true);
        run.wall_ms_total =
            std::chrono::duration<double, std::milli>(Clock::now() - t_start).count();
        return run;
      }
      opt.step(params, tc.grad_clip);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_det = sum_det / static_cast<double>(samples.size());
    rec.loss_int = sum_int / static_cast<double>(samples.size());
    rec.loss_total = tc.regime == Regime::multitask
                         ? tc.lambda_det * rec.loss_det + tc.lambda_int * rec.loss_int
                         : rec.loss_det + rec.loss_int;
    rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - e_start).count();
    rec.learning_rate = opt.lr();
    run.epochs.push_back(rec);
    log << nlohmann::json{{"regime", regime_name(tc.regime)}, {"epoch", rec.epoch},
                          {"loss_det", rec.loss_det},         {"loss_int", rec.loss_int},
                          {"loss_total", rec.loss_total},     {"wall_ms", rec.wall_ms},
                          {"learning_rate", rec.learning_rate}}
               .dump()
        << "\n";
    log.flush();

    if (tc.halve_on_plateau) {
      if (rec.loss_total < best_loss * 0.999) {
        best_loss = rec.loss_total;
        plateau = 0;
      } else if (++plateau >= tc.plateau_patience) {
        opt.set_lr(opt.lr() / 2);
        plateau = 0;
      }
    } else {
      best_loss = std::min(best_loss, rec.loss_total);
    }

    refresh_running_stats(wb, tc.regime, samples, params, epoch + 1 == tc.epochs ? 32 : 8);
    save_checkpoint(epoch + 1, false);
  }

  run.wall_ms_total = std::chrono::duration<double, std::milli>(Clock::now() - t_start).count();
  return run;
}

std::vector<AblationRow> ablate_tap_layer(const config::RunConfig& rc,
                                          const dataset::Manifest& manifest,
                                          const std::vector<int>& layers,
                                          const std::string& detector_checkpoint,
                                          const std::string& out_dir) {
  if (layers.size() < 2) throw ConfigError("ablate: need at least 2 tap layers");
  std::vector<int> unique_layers;
  for (int l : layers) {
    if (std::find(unique_layers.begin(), unique_layers.end(), l) != unique_layers.end()) {
      std::fprintf(stderr, "ablate: duplicate tap layer %d dropped\n", l);
      continue;
    }
    unique_layers.push_back(l);
  }
  std::sort(unique_layers.begin(), unique_layers.end());

  std::vector<AblationRow> rows;
  for (int l : unique_layers) {
    config::RunConfig variant = rc;
    variant.detector.tap_layer = l;
    variant.train.regime = Regime::auxiliary_frozen;
    variant.train.detector_checkpoint = detector_checkpoint;
    variant.validate();  // rejects taps spatially smaller than the grid

    const std::string run_dir = out_dir + "/L" + std::to_string(l);
    const TrainRun tr = train(variant, manifest, run_dir);
    if (tr.diverged) throw NumericError("ablate: training diverged at L=" + std::to_string(l));
    const auto metrics = eval::evaluate(variant, manifest, tr.checkpoint_path, "", run_dir);
    AblationRow row;
    row.tap_layer = l;
    row.accuracy = metrics.intent.accuracy;
    row.f1 = metrics.intent.f1;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace gridsight::training
