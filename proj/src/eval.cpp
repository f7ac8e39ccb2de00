#include "gridsight/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "gridsight/checkpoint.hpp"
#include "gridsight/common.hpp"
#include "gridsight/config.hpp"
#include "gridsight/dataset.hpp"

namespace gridsight::eval {

namespace fs = std::filesystem;
using nlohmann::json;

void IntentScorer::add_scene(const std::vector<assoc::IntentAssignment>& assignments,
                             const std::vector<codec::GtBox>& gt) {
  std::vector<const codec::GtBox*> scored_gt;
  for (const auto& b : gt) {
    if (b.class_id != codec::kClassPedestrian) continue;
    if (b.h > height_filter_) scored_gt.push_back(&b);
  }

  // greedy matching by assignment score
  std::vector<const assoc::IntentAssignment*> order;
  for (const auto& a : assignments) order.push_back(&a);
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->detection.score > b->detection.score; });

  std::vector<bool> taken(scored_gt.size(), false);
  for (const auto* a : order) {
    if (std::fabs(a->intent_prob - 0.5f) < 0.15f) ++low_confidence_;
    int best = -1;
    float best_iou = 0;
    for (std::size_t g = 0; g < scored_gt.size(); ++g) {
      if (taken[g]) continue;
      const auto& box = *scored_gt[g];
      const float iou = codec::box_iou(a->detection.cx, a->detection.cy, a->detection.w,
                                       a->detection.h, box.cx, box.cy, box.w, box.h);
      if (iou >= match_iou_ && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best < 0) continue;  // detection without scored GT: mAP's concern, not intention's
    taken[static_cast<std::size_t>(best)] = true;
    ++scored_;
    const bool gt_cross = scored_gt[static_cast<std::size_t>(best)]->intent == codec::kIntentCross;
    const bool pred_cross = a->intent_prob >= 0.5f;
    if (gt_cross && pred_cross) ++counts_.tp;
    if (gt_cross && !pred_cross) ++counts_.fn;
    if (!gt_cross && pred_cross) ++counts_.fp;
    if (!gt_cross && !pred_cross) ++counts_.tn;
  }

  // unmatched scored pedestrians count as intention errors (imputed wrong)
  for (std::size_t g = 0; g < scored_gt.size(); ++g) {
    if (taken[g]) continue;
    ++scored_;
    ++counts_.unmatched_gt;
    if (scored_gt[g]->intent == codec::kIntentCross) {
      ++counts_.fn;
    } else {
      ++counts_.fp;
    }
  }
}

IntentMetrics IntentScorer::finalize() const {
  if (scored_ == 0) throw ConfigError("intent metrics undefined: no scored pedestrians");
  IntentMetrics m;
  m.confusion = counts_;
  m.scored = scored_;
  m.low_confidence = low_confidence_;
  m.accuracy = static_cast<double>(counts_.tp + counts_.tn) / static_cast<double>(scored_);
  const double denom = 2.0 * counts_.tp + counts_.fp + counts_.fn;
  m.f1 = denom > 0 ? 2.0 * counts_.tp / denom : 0.0;
  return m;
}

void MapScorer::add_scene(const std::vector<codec::Detection>& detections,
                          const std::vector<codec::GtBox>& gt) {
  for (const auto& b : gt) {
    auto& per_scene = gts_[b.class_id];
    per_scene.resize(static_cast<std::size_t>(scenes_) + 1);
    per_scene[static_cast<std::size_t>(scenes_)].push_back(b);
  }
  for (const auto& d : detections)
    dets_[d.class_id].push_back({d.score, scenes_, d.cx, d.cy, d.w, d.h});
  ++scenes_;
}

ApResult MapScorer::finalize(float iou_threshold) const {
  ApResult out;
  double ap_sum = 0;
  int classes = 0;
  for (const auto& [cls, per_scene] : gts_) {
    int n_gt = 0;
    for (const auto& boxes : per_scene) n_gt += static_cast<int>(boxes.size());
    out.gt_counts[cls] = n_gt;
    if (n_gt == 0) continue;

    std::vector<Det> dets;
    if (auto it = dets_.find(cls); it != dets_.end()) dets = it->second;
    std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.scene < b.scene;
    });

    std::vector<std::vector<bool>> used(per_scene.size());
    for (std::size_t s = 0; s < per_scene.size(); ++s)
      used[s].assign(per_scene[s].size(), false);

    std::vector<int> tp_flags;
    tp_flags.reserve(dets.size());
    for (const auto& d : dets) {
      int best = -1;
      float best_iou = iou_threshold;
      if (static_cast<std::size_t>(d.scene) < per_scene.size()) {
        const auto& boxes = per_scene[static_cast<std::size_t>(d.scene)];
        for (std::size_t g = 0; g < boxes.size(); ++g) {
          if (used[static_cast<std::size_t>(d.scene)][g]) continue;
          const float iou =
              codec::box_iou(d.cx, d.cy, d.w, d.h, boxes[g].cx, boxes[g].cy, boxes[g].w, boxes[g].h);
          if (iou >= best_iou) {
            best_iou = iou;
            best = static_cast<int>(g);
          }
        }
      }
      if (best >= 0) {
        used[static_cast<std::size_t>(d.scene)][static_cast<std::size_t>(best)] = true;
        tp_flags.push_back(1);
      } else {
        tp_flags.push_back(0);
      }
    }

    // precision-recall staircase, 101-point interpolation
    std::vector<double> precis, recalls;
    int tp = 0, fp = 0;
    for (int flag : tp_flags) {
      flag ? ++tp : ++fp;
      precis.push_back(static_cast<double>(tp) / (tp + fp));
      recalls.push_back(static_cast<double>(tp) / n_gt);
    }
    double ap = 0;
    for (int r = 0; r <= 100; ++r) {
      const double rec = r / 100.0;
      double pmax = 0;
      for (std::size_t q = 0; q < precis.size(); ++q)
        if (recalls[q] >= rec) pmax = std::max(pmax, precis[q]);
      ap += pmax / 101.0;
    }
    out.per_class[cls] = ap;
    ap_sum += ap;
    ++classes;
  }
  out.map = classes > 0 ? ap_sum / classes : 0.0;
  return out;
}

MemoryReport memory_report(const nn::ParamStore<float>& det_aux_params,
                           const nn::ParamStore<float>& baseline_params) {
  MemoryReport r;
  const auto main_count = models::parameter_count(det_aux_params);
  const auto base_count = models::parameter_count(baseline_params);
  for (const auto& [mod, n] : main_count.per_module) r.per_module_params[mod] += n;
  for (const auto& [mod, n] : base_count.per_module) r.per_module_params[mod] += n;

  const std::size_t det = r.per_module_params.count("det") ? r.per_module_params.at("det") : 0;
  const std::size_t aux = r.per_module_params.count("aux") ? r.per_module_params.at("aux") : 0;
  const std::size_t seq = r.per_module_params.count("seq") ? r.per_module_params.at("seq") : 0;
  r.single_shot_params = det + aux;   // tap layers counted once: features are shared
  r.sequential_params = det + seq;    // detector plus its own crop encoder + recurrent head
  r.head_delta_bytes = (static_cast<long long>(seq) - static_cast<long long>(aux)) *
                       static_cast<long long>(r.element_bytes);
  return r;
}

namespace {

json intent_to_json(const IntentMetrics& m) {
  return json{{"accuracy", m.accuracy},
              {"f1", m.f1},
              {"scored", m.scored},
              {"low_confidence", m.low_confidence},
              {"confusion",
               json{{"tp", m.confusion.tp},
                    {"fp", m.confusion.fp},
                    {"tn", m.confusion.tn},
                    {"fn", m.confusion.fn},
                    {"unmatched_gt", m.confusion.unmatched_gt}}}};
}

json ap_to_json(const ApResult& ap) {
  json per_class = json::object();
  for (const auto& [cls, v] : ap.per_class) {
    per_class[scenario::class_name(static_cast<scenario::AgentClass>(cls))] = v;
  }
  return json{{"map", ap.map}, {"per_class", per_class}};
}

void write_report(const std::string& out_dir, const json& report) {
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/report.json");
    if (!f) throw IoError("eval: cannot write report.json in " + out_dir);
    f << report.dump(2) << "\n";
  }
  std::ofstream csv(out_dir + "/report.csv");
  if (!csv) throw IoError("eval: cannot write report.csv in " + out_dir);
  csv << "section,key,value\n";
  std::function<void(const std::string&, const json&)> walk = [&](const std::string& prefix,
                                                                  const json& node) {
    if (node.is_object()) {
      for (const auto& [k, v] : node.items())
        walk(prefix.empty() ? k : prefix + "." + k, v);
    } else if (node.is_array()) {
      for (std::size_t i = 0; i < node.size(); ++i) walk(prefix + "[" + std::to_string(i) + "]", node[i]);
    } else {
      const auto dot = prefix.find_last_of('.');
      csv << (dot == std::string::npos ? "" : prefix.substr(0, dot)) << ","
          << (dot == std::string::npos ? prefix : prefix.substr(dot + 1)) << "," << node.dump()
          << "\n";
    }
  };
  for (const auto& [k, v] : report.items()) {
    if (k == "config_echo") continue;
    walk(k, v);
  }
}

}  // namespace

MetricsBundle evaluate(const config::RunConfig& rc, const dataset::Manifest& manifest,
                       const std::string& checkpoint_path,
                       const std::string& baseline_checkpoint_path, const std::string& out_dir) {
  const json meta = ckpt::load_metadata(checkpoint_path);
  const std::string regime = meta.at("regime").get<std::string>();
  const bool with_aux = regime != "detector_only";
  if (regime == "sequential_baseline")
    throw ConfigError("eval: pass the sequential checkpoint via the baseline slot");

  models::Detector<float> detector(rc.detector, rc.grid);
  models::AuxiliaryHead<float> aux(rc.aux, rc.grid, rc.detector.layer_out_ch(rc.detector.tap_layer),
                                   rc.detector.layer_out_h(rc.detector.tap_layer),
                                   rc.detector.layer_out_w(rc.detector.tap_layer));
  models::SequentialBaseline<float> baseline(rc.seq_baseline);

  nn::ParamStore<float> params;
  Rng rng(0);
  detector.init_params(params, rng);
  if (with_aux) aux.init_params(params, rng);
  ckpt::load(checkpoint_path, params);

  nn::ParamStore<float> baseline_params;
  const bool with_baseline = !baseline_checkpoint_path.empty();
  if (with_baseline) {
    baseline.init_params(baseline_params, rng);
    ckpt::load(baseline_checkpoint_path, baseline_params);
  }

  MetricsBundle bundle;
  bundle.has_intent = with_aux;
  bundle.has_baseline = with_baseline;
  IntentScorer intent_scorer(rc.eval.height_filter_px);
  IntentScorer baseline_scorer(rc.eval.height_filter_px);
  MapScorer map_scorer;

  for (const auto& entry : manifest.test) {
    const auto seq = dataset::load_sequence(manifest, entry);
    const auto gt = scenario::to_gt_boxes(seq.annotations.back());

    if (with_aux) {
      const auto out = assoc::pipeline_single_shot(detector, aux, params, seq.frames,
                                                   rc.eval.conf_threshold, rc.eval.nms_iou);
      map_scorer.add_scene(out.detections, gt);
      intent_scorer.add_scene(out.intents, gt);
    } else {
      TensorF raw = detector.forward_full(seq.frames.back(), params, models::Mode::eval, nullptr,
                                          nullptr, nullptr);
      map_scorer.add_scene(
          codec::decode_predictions(raw, rc.grid, rc.eval.conf_threshold, rc.eval.nms_iou), gt);
    }

    if (with_baseline) {
      const auto out =
          assoc::pipeline_sequential(detector, baseline, params, baseline_params, seq.frames,
                                     seq.annotations, rc.eval.conf_threshold, rc.eval.nms_iou);
      baseline_scorer.add_scene(out.intents, gt);
    }
    ++bundle.sequences;
  }
  if (bundle.sequences == 0) throw ConfigError("eval: empty test split");

  bundle.detection = map_scorer.finalize(rc.eval.map_iou);
  if (with_aux) bundle.intent = intent_scorer.finalize();
  if (with_baseline) bundle.baseline_intent = baseline_scorer.finalize();

  if (!out_dir.empty()) {
    json report{{"schema_version", 1},
                {"kind", "eval"},
                {"sequences", bundle.sequences},
                {"checkpoint", checkpoint_path},
                {"regime", regime},
                {"detection", ap_to_json(bundle.detection)},
                {"config_echo", config::to_json(rc)}};
    if (with_aux) report["intent"] = intent_to_json(bundle.intent);
    if (with_baseline) report["baseline_intent"] = intent_to_json(bundle.baseline_intent);
    write_report(out_dir, report);
    config::echo_effective_config(rc, out_dir);
  }
  return bundle;
}

}  // namespace gridsight::eval
