// gridsight command-line entry point: dataset generation, training,
// evaluation, tap-layer ablation, latency/memory benchmarking and demo
// rendering. Exit codes: 0 ok, 2 config/usage, 3 I/O, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "gridsight/association.hpp"
#include "gridsight/bench.hpp"
#include "gridsight/checkpoint.hpp"
#include "gridsight/common.hpp"
#include "gridsight/config.hpp"
#include "gridsight/dataset.hpp"
#include "gridsight/eval.hpp"
#include "gridsight/plot.hpp"
#include "gridsight/png_io.hpp"
#include "gridsight/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gridsight;

namespace {

struct CommonArgs {
  std::string preset = "desk";
  std::string config_path;
  std::string out;
  long long seed = -1;
};

json overrides_from(const CommonArgs& args) {
  json j = json::object();
  if (args.seed >= 0) {
    j["world"] = {{"seed", static_cast<std::uint64_t>(args.seed)}};
    j["train"] = {{"seed", static_cast<std::uint64_t>(args.seed)}};
  }
  return j;
}

config::RunConfig rc_from_checkpoint(const std::string& checkpoint) {
  const json meta = ckpt::load_metadata(checkpoint);
  return config::from_json(meta.at("config"));
}

void require_same_data_shape(const config::RunConfig& a, const config::RunConfig& b) {
  if (a.world.image_height != b.world.image_height || a.world.image_width != b.world.image_width ||
      a.world.seq_len != b.world.seq_len || a.grid.rows != b.grid.rows ||
      a.grid.cols != b.grid.cols || a.grid.n_anchors() != b.grid.n_anchors()) {
    throw ConfigError("checkpoint and dataset were built for different world/grid shapes");
  }
}

int cmd_gen(const CommonArgs& args, int n_train, int n_test) {
  auto rc = config::load(args.preset, args.config_path, overrides_from(args));
  const auto manifest = dataset::dataset_build(rc, n_train, n_test, args.out);
  config::echo_effective_config(rc, args.out);
  std::printf("dataset written to %s\n", args.out.c_str());
  std::printf("  grid %dx%d, %d anchors, t=%d\n", rc.grid.rows, rc.grid.cols, rc.grid.n_anchors(),
              rc.world.seq_len);
  std::printf("  train: %d sequences, %d pedestrian tracks, crosser ratio %.3f\n",
              manifest.train_stats.sequences, manifest.train_stats.pedestrian_tracks,
              manifest.train_stats.crosser_ratio);
  std::printf("  test:  %d sequences, %d pedestrian tracks, crosser ratio %.3f\n",
              manifest.test_stats.sequences, manifest.test_stats.pedestrian_tracks,
              manifest.test_stats.crosser_ratio);
  return kExitOk;
}

int cmd_train(const CommonArgs& args, const std::string& data, const std::string& regime,
              int epochs, const std::string& detector_checkpoint, double lr, int batch_size) {
  const auto manifest = dataset::load_manifest(data);
  json overrides = overrides_from(args);
  overrides["train"]["regime"] = regime;
  if (epochs > 0) overrides["train"]["epochs"] = epochs;
  if (!detector_checkpoint.empty()) overrides["train"]["detector_checkpoint"] = detector_checkpoint;
  if (lr > 0) overrides["train"]["learning_rate"] = lr;
  if (batch_size > 0) overrides["train"]["batch_size"] = batch_size;

  json merged = config::to_json(manifest.run);
  if (!args.config_path.empty()) {
    std::ifstream f(args.config_path);
    if (!f) throw IoError("cannot open " + args.config_path);
    json file_json;
    f >> file_json;
    merged.merge_patch(file_json);
  }
  merged.merge_patch(overrides);
  auto rc = config::from_json(merged);
  rc.validate();

  const auto run = training::train(rc, manifest, args.out);
  if (run.diverged) {
    std::fprintf(stderr, "training diverged; last good checkpoint kept at %s\n",
                 run.checkpoint_path.c_str());
    return kExitNumeric;
  }
  std::printf("trained %s for %zu epochs in %.1f s\n", regime.c_str(), run.epochs.size(),
              run.wall_ms_total / 1000.0);
  if (!run.epochs.empty()) {
    const auto& last = run.epochs.back();
    std::printf("  final losses: det %.4f, intent %.4f\n", last.loss_det, last.loss_int);
  }
  std::printf("  checkpoint: %s\n", run.checkpoint_path.c_str());
  return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& data, const std::string& checkpoint,
             const std::string& baseline_checkpoint, double height_filter, bool plots) {
  const auto manifest = dataset::load_manifest(data);
  auto rc = rc_from_checkpoint(checkpoint);
  require_same_data_shape(rc, manifest.run);
  if (height_filter >= 0) rc.eval.height_filter_px = static_cast<float>(height_filter);

  const auto bundle = eval::evaluate(rc, manifest, checkpoint, baseline_checkpoint, args.out);
  std::printf("evaluated %d test sequences\n", bundle.sequences);
  std::printf("  detection mAP@%.2f: %.4f\n", rc.eval.map_iou, bundle.detection.map);
  for (const auto& [cls, ap] : bundle.detection.per_class)
    std::printf("    %-14s AP %.4f\n", scenario::class_name(static_cast<scenario::AgentClass>(cls)),
                ap);
  if (bundle.has_intent)
    std::printf("  intent accuracy %.4f, F1 %.4f (scored %d, unmatched %d)\n",
                bundle.intent.accuracy, bundle.intent.f1, bundle.intent.scored,
                bundle.intent.confusion.unmatched_gt);
  if (bundle.has_baseline)
    std::printf("  sequential baseline accuracy %.4f, F1 %.4f\n", bundle.baseline_intent.accuracy,
                bundle.baseline_intent.f1);

  if (plots && !args.out.empty()) {
    fs::create_directories(args.out + "/plots");
    plot::LineChart chart;
    chart.title = "per-class average precision";
    chart.x_label = "class id";
    chart.y_label = "ap";
    plot::Series s;
    s.label = "ap";
    for (const auto& [cls, ap] : bundle.detection.per_class) {
      s.x.push_back(cls);
      s.y.push_back(ap);
    }
    chart.series.push_back(s);
    chart.save_png(args.out + "/plots/per_class_ap.png");
  }
  return kExitOk;
}

int cmd_bench(const CommonArgs& args, const std::string& checkpoint,
              const std::string& baseline_checkpoint, const std::vector<int>& counts, int reps,
              int warmups, bool plots) {
  auto rc = rc_from_checkpoint(checkpoint);
  if (!counts.empty()) rc.bench.counts = counts;
  if (reps > 0) rc.bench.reps = reps;
  if (warmups >= 0) rc.bench.warmups = warmups;
  rc.validate();

  const json meta = ckpt::load_metadata(checkpoint);
  if (meta.at("regime").get<std::string>() == "detector_only")
    throw ConfigError("bench: checkpoint must include the auxiliary head (multitask or "
                      "auxiliary_frozen)");

  models::Detector<float> detector(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid, rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));
  models::SequentialBaseline<float> baseline(rc.seq_baseline);
  nn::ParamStore<float> params;
  nn::ParamStore<float> baseline_params;
  Rng rng(0);
  detector.init_params(params, rng);
  aux.init_params(params, rng);
  ckpt::load(checkpoint, params);
  baseline.init_params(baseline_params, rng);
  if (baseline_checkpoint.empty())
    throw ConfigError("bench: --baseline-checkpoint is required for the sequential pipeline");
  ckpt::load(baseline_checkpoint, baseline_params);

  std::vector<bench::BenchTarget> targets;
  targets.push_back({"single_shot", [&](const scenario::SceneSequence& seq) {
                       const auto out = assoc::pipeline_single_shot(
                           detector, aux, params, seq.frames, rc.eval.conf_threshold,
                           rc.eval.nms_iou);
                       bench::StageSample s;
                       s.total_ms = out.timing.total_ms();
                       s.detector_ms = out.timing.detector_ms;
                       s.decode_ms = out.timing.decode_ms;
                       s.aux_ms = out.timing.aux_ms;
                       s.associate_ms = out.timing.associate_ms;
                       return s;
                     }});
  targets.push_back({"sequential", [&](const scenario::SceneSequence& seq) {
                       const auto out = assoc::pipeline_sequential(
                           detector, baseline, params, baseline_params, seq.frames,
                           seq.annotations, rc.eval.conf_threshold, rc.eval.nms_iou);
                       bench::StageSample s;
                       s.total_ms = out.timing.total_ms();
                       s.detector_ms = out.timing.detector_ms;
                       s.decode_ms = out.timing.decode_ms;
                       s.baseline_ms = out.timing.baseline_ms;
                       s.baseline_invocations = out.timing.baseline_invocations;
                       return s;
                     }});

  const auto report = bench::latency_bench(
      targets, rc.bench.counts, rc.bench.reps, rc.bench.warmups,
      [&](int count) { return scenario::make_bench_sequence(rc.world, count, 777); });

  const auto mem = eval::memory_report(params, baseline_params);

  json jt = json::array();
  for (const auto& t : report.targets) {
    json buckets = json::array();
    for (const auto& b : t.buckets) {
      buckets.push_back(json{{"pedestrians", b.pedestrian_count},
                             {"median_ms", b.median_ms},
                             {"p95_ms", b.p95_ms},
                             {"stages",
                              json{{"detector_ms", b.median_stages.detector_ms},
                                   {"decode_ms", b.median_stages.decode_ms},
                                   {"aux_ms", b.median_stages.aux_ms},
                                   {"associate_ms", b.median_stages.associate_ms},
                                   {"baseline_ms", b.median_stages.baseline_ms}}},
                             {"baseline_invocations", b.baseline_invocations}});
    }
    jt.push_back(json{{"name", t.name},
                      {"buckets", buckets},
                      {"slope_ms_per_ped", t.slope_ms_per_ped},
                      {"slope_ci", {t.slope_ci_lo, t.slope_ci_hi}}});
  }
  json jmem{{"per_module_params", mem.per_module_params},
            {"single_shot_params", mem.single_shot_params},
            {"single_shot_bytes", mem.single_shot_bytes()},
            {"sequential_params", mem.sequential_params},
            {"sequential_bytes", mem.sequential_bytes()},
            {"head_delta_bytes", mem.head_delta_bytes}};
  json report_json{{"schema_version", 1},
                   {"kind", "bench"},
                   {"counts", report.counts},
                   {"reps", report.reps},
                   {"warmups", report.warmups},
                   {"timer_resolution_ns", report.timer_resolution_ns},
                   {"targets", jt},
                   {"memory", jmem},
                   {"config_echo", config::to_json(rc)}};

  fs::create_directories(args.out);
  {
    std::ofstream f(args.out + "/report.json");
    if (!f) throw IoError("bench: cannot write report.json");
    f << report_json.dump(2) << "\n";
  }
  {
    std::ofstream csv(args.out + "/report.csv");
    if (!csv) throw IoError("bench: cannot write report.csv");
    csv << "target,pedestrians,median_ms,p95_ms,baseline_invocations\n";
    for (const auto& t : report.targets)
      for (const auto& b : t.buckets)
        csv << t.name << "," << b.pedestrian_count << "," << b.median_ms << "," << b.p95_ms << ","
            << b.baseline_invocations << "\n";
  }
  config::echo_effective_config(rc, args.out);

  for (const auto& t : report.targets) {
    std::printf("%s: slope %.4f ms/ped (95%% CI [%.4f, %.4f])\n", t.name.c_str(),
                t.slope_ms_per_ped, t.slope_ci_lo, t.slope_ci_hi);
    for (const auto& b : t.buckets)
      std::printf("  %2d peds: median %8.3f ms  p95 %8.3f ms\n", b.pedestrian_count, b.median_ms,
                  b.p95_ms);
  }
  std::printf("memory: single-shot %zu params (%.2f MB), sequential %zu params (%.2f MB)\n",
              mem.single_shot_params, mem.single_shot_bytes() / 1048576.0, mem.sequential_params,
              mem.sequential_bytes() / 1048576.0);

  if (plots) {
    fs::create_directories(args.out + "/plots");
    plot::LineChart chart;
    chart.title = "latency vs pedestrian count";
    chart.x_label = "pedestrians";
    chart.y_label = "median ms";
    const img::Color colors[2] = {{0.85f, 0.35f, 0.1f}, {0.15f, 0.45f, 0.85f}};
    int ci = 0;
    for (const auto& t : report.targets) {
      plot::Series s;
      s.label = t.name;
      s.color = colors[ci++ % 2];
      for (const auto& b : t.buckets) {
        s.x.push_back(b.pedestrian_count);
        s.y.push_back(b.median_ms);
      }
      chart.series.push_back(s);
    }
    chart.save_png(args.out + "/plots/latency_vs_count.png");
  }
  return kExitOk;
}

int cmd_ablate(const CommonArgs& args, const std::string& data, const std::vector<int>& layers,
               const std::string& detector_checkpoint) {
  const auto manifest = dataset::load_manifest(data);
  auto rc = manifest.run;
  if (args.seed >= 0) rc.train.seed = static_cast<std::uint64_t>(args.seed);
  const auto rows =
      training::ablate_tap_layer(rc, manifest, layers, detector_checkpoint, args.out);

  json jrows = json::array();
  std::printf("%5s %10s %10s\n", "L", "accuracy", "f1");
  for (const auto& row : rows) {
    std::printf("%5d %10.4f %10.4f\n", row.tap_layer, row.accuracy, row.f1);
    jrows.push_back(
        json{{"tap_layer", row.tap_layer}, {"accuracy", row.accuracy}, {"f1", row.f1}});
  }
  fs::create_directories(args.out);
  std::ofstream f(args.out + "/ablation.json");
  f << json{{"schema_version", 1}, {"kind", "ablate"}, {"rows", jrows}}.dump(2) << "\n";
  std::ofstream csv(args.out + "/ablation.csv");
  csv << "tap_layer,accuracy,f1\n";
  for (const auto& row : rows)
    csv << row.tap_layer << "," << row.accuracy << "," << row.f1 << "\n";
  return kExitOk;
}

int cmd_demo(const CommonArgs& args, const std::string& data, const std::string& checkpoint,
             const std::string& seq_id) {
  const auto manifest = dataset::load_manifest(data);
  auto rc = rc_from_checkpoint(checkpoint);
  require_same_data_shape(rc, manifest.run);

  const dataset::SequenceEntry* entry = nullptr;
  for (const auto& e : manifest.test)
    if (e.seq_id == seq_id) entry = &e;
  for (const auto& e : manifest.train)
    if (e.seq_id == seq_id) entry = &e;
  if (!entry) throw ConfigError("demo: unknown sequence id " + seq_id);
  const auto seq = dataset::load_sequence(manifest, *entry);

  models::Detector<float> detector(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid, rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));
  nn::ParamStore<float> params;
  Rng rng(0);
  detector.init_params(params, rng);
  aux.init_params(params, rng);
  ckpt::load(checkpoint, params);

  const auto out = assoc::pipeline_single_shot(detector, aux, params, seq.frames,
                                               rc.eval.conf_threshold, rc.eval.nms_iou);

  fs::create_directories(args.out);
  const img::Color white{1, 1, 1};
  const img::Color gt_bg{0.15f, 0.75f, 0.25f};    // ground truth glyph background
  const img::Color pred_bg{0.95f, 0.45f, 0.75f};  // prediction glyph background
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    TensorF frame = seq.frames[t];
    const bool final_frame = t + 1 == seq.frames.size();
    for (const auto& a : seq.annotations[t]) {
      img::draw_rect_outline(frame, a.cx, a.cy, a.w + 2, a.h + 2,
                             scenario::class_color(a.cls, true));
      if (a.cls == scenario::AgentClass::pedestrian) {
        // ground truth intent glyph above the box (green background)
        const float gy = a.cy - a.h / 2 - 6;
        img::fill_rect(frame, a.cx - 5, gy, 7, 7, gt_bg);
        if (a.intent == scenario::Intent::cross) img::fill_rect(frame, a.cx - 5, gy, 3, 3, white);
      }
    }
    if (final_frame) {
      for (const auto& ia : out.intents) {
        const auto& d = ia.detection;
        img::draw_rect_outline(frame, d.cx, d.cy, d.w + 4, d.h + 4, white);
        // predicted intent glyph (pink background), beside the GT glyph
        const float gy = d.cy - d.h / 2 - 6;
        img::fill_rect(frame, d.cx + 5, gy, 7, 7, pred_bg);
        if (ia.intent_prob >= 0.5f) img::fill_rect(frame, d.cx + 5, gy, 3, 3, white);
      }
    }
    char name[64];
    std::snprintf(name, sizeof(name), "%s/frame_%02zu.png", args.out.c_str(), t);
    png::write_rgb8(name, frame.dim(2), frame.dim(1), img::to_rgb8(frame));
  }
  std::printf("wrote %zu annotated frames to %s\n", seq.frames.size(), args.out.c_str());
  std::printf("  detections: %zu, pedestrian intents: %zu\n", out.detections.size(),
              out.intents.size());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridsight: single-shot detection with parallel crossing-intention prediction"};
  app.require_subcommand(1);

  CommonArgs args;
  int n_train = 200, n_test = 50;
  std::string data, regime = "multitask", checkpoint, baseline_checkpoint, seq_id;
  std::string detector_checkpoint;
  int epochs = -1, reps = -1, warmups = -1, batch_size = -1;
  double lr = -1, height_filter = -1;
  std::vector<int> counts, layers;
  bool plots = false;

  auto add_common = [&](CLI::App* cmd, bool need_out) {
    cmd->add_option("--preset", args.preset, "named preset: desk or paper-shape");
    cmd->add_option("--config", args.config_path, "JSON config overlay file");
    cmd->add_option("--seed", args.seed, "override world/train seed");
    auto* out = cmd->add_option("--out", args.out, "output directory");
    if (need_out) out->required();
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, true);
  gen->add_option("--train", n_train, "training sequences")->check(CLI::NonNegativeNumber);
  gen->add_option("--test", n_test, "test sequences")->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("train", "train one regime");
  add_common(train, true);
  train->add_option("--data", data, "dataset root")->required();
  train->add_option("--regime", regime,
                    "detector_only | auxiliary_frozen | multitask | sequential_baseline");
  train->add_option("--epochs", epochs, "override epoch count");
  train->add_option("--batch-size", batch_size, "override batch size");
  train->add_option("--lr", lr, "override learning rate");
  train->add_option("--detector-checkpoint", detector_checkpoint,
                    "frozen detector weights (auxiliary_frozen)");

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(evalc, true);
  evalc->add_option("--data", data, "dataset root")->required();
  evalc->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  evalc->add_option("--baseline-checkpoint", baseline_checkpoint,
                    "sequential baseline checkpoint (adds its metrics)");
  evalc->add_option("--height-filter", height_filter, "score only GT pedestrians taller than this");
  evalc->add_flag("--plots", plots, "write plots/*.png");

  auto* benchc = app.add_subcommand("bench", "latency vs pedestrian count + memory report");
  add_common(benchc, true);
  benchc->add_option("--checkpoint", checkpoint, "single-shot checkpoint")->required();
  benchc->add_option("--baseline-checkpoint", baseline_checkpoint, "sequential baseline checkpoint")
      ->required();
  benchc->add_option("--counts", counts, "pedestrian counts")->delimiter(',');
  benchc->add_option("--reps", reps, "timed repetitions per bucket");
  benchc->add_option("--warmups", warmups, "warmup runs per bucket");
  benchc->add_flag("--plots", plots, "write plots/*.png");

  auto* ablate = app.add_subcommand("ablate", "auxiliary accuracy across tap layers");
  add_common(ablate, true);
  ablate->add_option("--data", data, "dataset root")->required();
  ablate->add_option("--layers", layers, "tap layers to sweep")->delimiter(',')->required();
  ablate->add_option("--detector-checkpoint", detector_checkpoint, "frozen detector weights")
      ->required();

  auto* demo = app.add_subcommand("demo", "render annotated frames for one sequence");
  add_common(demo, true);
  demo->add_option("--data", data, "dataset root")->required();
  demo->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  demo->add_option("--seq", seq_id, "sequence id, e.g. test_0000")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(args, n_train, n_test);
    if (train->parsed())
      return cmd_train(args, data, regime, epochs, detector_checkpoint, lr, batch_size);
    if (evalc->parsed())
      return cmd_eval(args, data, checkpoint, baseline_checkpoint, height_filter, plots);
    if (benchc->parsed())
      return cmd_bench(args, checkpoint, baseline_checkpoint, counts, reps, warmups, plots);
    if (ablate->parsed()) return cmd_ablate(args, data, layers, detector_checkpoint);
    if (demo->parsed()) return cmd_demo(args, data, checkpoint, seq_id);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return kExitConfig;
}
