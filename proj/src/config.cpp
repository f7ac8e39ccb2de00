#include "gridsight/config.hpp"

#include <filesystem>
#include <fstream>

#include "gridsight/common.hpp"

namespace gridsight::config {

using nlohmann::json;

namespace {

json world_to_json(const scenario::WorldConfig& w) {
  return json{{"image_height", w.image_height},
              {"image_width", w.image_width},
              {"road_band_top", w.road_band_top},
              {"road_band_bottom", w.road_band_bottom},
              {"n_pedestrians", w.n_pedestrians},
              {"n_vehicles", w.n_vehicles},
              {"n_crosswalks", w.n_crosswalks},
              {"has_traffic_light", w.has_traffic_light},
              {"crosser_fraction", w.crosser_fraction},
              {"n_crossers", w.n_crossers},
              {"seq_len", w.seq_len},
              {"seed", w.seed}};
}

scenario::WorldConfig world_from_json(const json& j) {
  scenario::WorldConfig w;
  w.image_height = j.at("image_height").get<int>();
  w.image_width = j.at("image_width").get<int>();
  w.road_band_top = j.at("road_band_top").get<int>();
  w.road_band_bottom = j.at("road_band_bottom").get<int>();
  w.n_pedestrians = j.at("n_pedestrians").get<int>();
  w.n_vehicles = j.at("n_vehicles").get<int>();
  w.n_crosswalks = j.at("n_crosswalks").get<int>();
  w.has_traffic_light = j.at("has_traffic_light").get<bool>();
  w.crosser_fraction = j.at("crosser_fraction").get<double>();
  w.n_crossers = j.at("n_crossers").get<int>();
  w.seq_len = j.at("seq_len").get<int>();
  w.seed = j.at("seed").get<std::uint64_t>();
  return w;
}

json grid_to_json(const codec::GridSpec& g) {
  json anchors = json::array();
  for (const auto& a : g.anchors) anchors.push_back({a[0], a[1]});
  return json{{"rows", g.rows},       {"cols", g.cols},           {"stride", g.stride},
              {"anchors", anchors},   {"n_classes", g.n_classes}, {"n_intents", g.n_intents}};
}

codec::GridSpec grid_from_json(const json& j) {
  codec::GridSpec g;
  g.rows = j.at("rows").get<int>();
  g.cols = j.at("cols").get<int>();
  g.stride = j.at("stride").get<int>();
  g.anchors.clear();
  for (const auto& a : j.at("anchors"))
    g.anchors.push_back({a.at(0).get<float>(), a.at(1).get<float>()});
  g.n_classes = j.at("n_classes").get<int>();
  g.n_intents = j.at("n_intents").get<int>();
  return g;
}

json blocks_to_json(const std::vector<models::ConvBlockSpec>& blocks) {
  json out = json::array();
  for (const auto& b : blocks) {
    out.push_back(json{{"out_ch", b.out_ch},
                       {"kernel", b.kernel},
                       {"stride", b.stride},
                       {"batchnorm", b.batchnorm},
                       {"activation", b.activation}});
  }
  return out;
}

std::vector<models::ConvBlockSpec> blocks_from_json(const json& j) {
  std::vector<models::ConvBlockSpec> out;
  for (const auto& b : j) {
    models::ConvBlockSpec s;
    s.out_ch = b.at("out_ch").get<int>();
    s.kernel = b.at("kernel").get<int>();
    s.stride = b.at("stride").get<int>();
    s.batchnorm = b.at("batchnorm").get<bool>();
    s.activation = b.at("activation").get<bool>();
    out.push_back(s);
  }
  return out;
}

json detector_to_json(const models::DetectorConfig& d) {
  return json{{"in_ch", d.in_ch},
              {"image_h", d.image_h},
              {"image_w", d.image_w},
              {"blocks", blocks_to_json(d.blocks)},
              {"tap_layer", d.tap_layer}};
}

models::DetectorConfig detector_from_json(const json& j) {
  models::DetectorConfig d;
  d.in_ch = j.at("in_ch").get<int>();
  d.image_h = j.at("image_h").get<int>();
  d.image_w = j.at("image_w").get<int>();
  d.blocks = blocks_from_json(j.at("blocks"));
  d.tap_layer = j.at("tap_layer").get<int>();
  return d;
}

json aux_to_json(const models::AuxiliaryConfig& a) {
  return json{{"n_layers", a.n_layers},
              {"adapter_ch", a.adapter_ch},
              {"hidden_ch", a.hidden_ch},
              {"kernel", a.kernel},
              {"seq_len", a.seq_len}};
}

models::AuxiliaryConfig aux_from_json(const json& j) {
  models::AuxiliaryConfig a;
  a.n_layers = j.at("n_layers").get<int>();
  a.adapter_ch = j.at("adapter_ch").get<int>();
  a.hidden_ch = j.at("hidden_ch").get<int>();
  a.kernel = j.at("kernel").get<int>();
  a.seq_len = j.at("seq_len").get<int>();
  return a;
}

json seqb_to_json(const models::SequentialBaselineConfig& s) {
  return json{{"crop_h", s.crop_h},
              {"crop_w", s.crop_w},
              {"in_ch", s.in_ch},
              {"encoder", blocks_to_json(s.encoder)},
              {"lstm_hidden", s.lstm_hidden},
              {"seq_len", s.seq_len}};
}

models::SequentialBaselineConfig seqb_from_json(const json& j) {
  models::SequentialBaselineConfig s;
  s.crop_h = j.at("crop_h").get<int>();
  s.crop_w = j.at("crop_w").get<int>();
  s.in_ch = j.at("in_ch").get<int>();
  s.encoder = blocks_from_json(j.at("encoder"));
  s.lstm_hidden = j.at("lstm_hidden").get<int>();
  s.seq_len = j.at("seq_len").get<int>();
  return s;
}

json train_to_json(const training::TrainConfig& t) {
  return json{{"regime", training::regime_name(t.regime)},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"optimizer", t.optimizer == training::OptimizerKind::adam ? "adam" : "sgd_momentum"},
              {"lambda_det", t.lambda_det},
              {"lambda_int", t.lambda_int},
              {"lambda_noobj", t.lambda_noobj},
              {"lambda_box", t.lambda_box},
              {"grad_clip", t.grad_clip},
              {"seed", t.seed},
              {"halve_on_plateau", t.halve_on_plateau},
              {"plateau_patience", t.plateau_patience},
              {"detector_checkpoint", t.detector_checkpoint}};
}

training::TrainConfig train_from_json(const json& j) {
  training::TrainConfig t;
  t.regime = training::parse_regime(j.at("regime").get<std::string>());
  t.epochs = j.at("epochs").get<int>();
  t.batch_size = j.at("batch_size").get<int>();
  t.learning_rate = j.at("learning_rate").get<double>();
  const auto opt = j.at("optimizer").get<std::string>();
  if (opt == "adam") {
    t.optimizer = training::OptimizerKind::adam;
  } else if (opt == "sgd_momentum") {
    t.optimizer = training::OptimizerKind::sgd_momentum;
  } else {
    throw ConfigError("train.optimizer: unknown value '" + opt + "'");
  }
  t.lambda_det = j.at("lambda_det").get<double>();
  t.lambda_int = j.at("lambda_int").get<double>();
  t.lambda_noobj = j.at("lambda_noobj").get<double>();
  t.lambda_box = j.at("lambda_box").get<double>();
  t.grad_clip = j.at("grad_clip").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.halve_on_plateau = j.at("halve_on_plateau").get<bool>();
  t.plateau_patience = j.at("plateau_patience").get<int>();
  t.detector_checkpoint = j.at("detector_checkpoint").get<std::string>();
  return t;
}

json eval_to_json(const EvalConfig& e) {
  return json{{"conf_threshold", e.conf_threshold},
              {"nms_iou", e.nms_iou},
              {"height_filter_px", e.height_filter_px},
              {"map_iou", e.map_iou}};
}

EvalConfig eval_from_json(const json& j) {
  EvalConfig e;
  e.conf_threshold = j.at("conf_threshold").get<float>();
  e.nms_iou = j.at("nms_iou").get<float>();
  e.height_filter_px = j.at("height_filter_px").get<float>();
  e.map_iou = j.at("map_iou").get<float>();
  return e;
}

json bench_to_json(const BenchConfig& b) {
  return json{{"counts", b.counts}, {"reps", b.reps}, {"warmups", b.warmups}};
}

BenchConfig bench_from_json(const json& j) {
  BenchConfig b;
  b.counts = j.at("counts").get<std::vector<int>>();
  b.reps = j.at("reps").get<int>();
  b.warmups = j.at("warmups").get<int>();
  return b;
}

}  // namespace

void RunConfig::validate() const {
  world.validate();
  grid.validate();
  detector.validate(grid);
  aux.validate();
  if (world.image_height != detector.image_h || world.image_width != detector.image_w)
    throw ConfigError("config: world image dims differ from detector dims");
  if (aux.seq_len != world.seq_len)
    throw ConfigError("config: aux.seq_len must equal world.seq_len");
  if (seq_baseline.seq_len != world.seq_len)
    throw ConfigError("config: seq_baseline.seq_len must equal world.seq_len");
  if (eval.conf_threshold < 0 || eval.conf_threshold > 1)
    throw ConfigError("config: eval.conf_threshold must be in [0,1]");
  if (eval.nms_iou <= 0 || eval.nms_iou > 1)
    throw ConfigError("config: eval.nms_iou must be in (0,1]");
  if (bench.counts.empty()) throw ConfigError("config: bench.counts must not be empty");
  for (int c : bench.counts)
    if (c < 0 || c > 16) throw ConfigError("config: bench counts must be in [0,16]");
  if (bench.reps < 1 || bench.warmups < 0)
    throw ConfigError("config: bench.reps must be >= 1 and warmups >= 0");
  train.validate();
}

RunConfig preset(const std::string& name) {
  RunConfig rc;
  rc.preset = name;
  if (name == "desk") {
    rc.world = scenario::WorldConfig{};
    rc.grid.rows = 6;
    rc.grid.cols = 10;
    rc.grid.stride = 32;
    rc.grid.anchors = {{15, 30}, {36, 16}, {40, 64}};
    rc.detector.image_h = 192;
    rc.detector.image_w = 320;
    rc.detector.blocks = {{16, 3, 2, true, true}, {24, 3, 2, true, true}, {32, 3, 2, true, true},
                          {40, 3, 1, true, true}, {56, 3, 2, true, true}, {80, 3, 2, true, true},
                          {112, 3, 1, true, true}, {128, 3, 1, true, true}};
    rc.detector.tap_layer = 5;
    rc.aux.seq_len = 8;
    rc.seq_baseline.encoder = {{16, 3, 2, true, true},
                               {32, 3, 2, true, true},
                               {64, 3, 2, true, true},
                               {96, 3, 1, true, true}};
    rc.seq_baseline.lstm_hidden = 48;
    rc.seq_baseline.seq_len = 8;
  } else if (name == "paper-shape") {
    rc.world = scenario::WorldConfig{};
    rc.world.image_height = 352;
    rc.world.image_width = 640;
    rc.world.road_band_top = 117;
    rc.world.road_band_bottom = 235;
    rc.world.seq_len = 15;
    rc.grid.rows = 11;
    rc.grid.cols = 20;
    rc.grid.stride = 32;
    rc.grid.anchors = {{15, 30}, {36, 16}, {40, 64}, {20, 40}, {80, 40}};
    rc.detector.image_h = 352;
    rc.detector.image_w = 640;
    rc.detector.blocks.clear();
    const int widen[5] = {8, 12, 16, 20, 24};
    for (int b = 0; b < 5; ++b)
      rc.detector.blocks.push_back({widen[b], 3, 2, true, true});
    for (int b = 5; b < 19; ++b) rc.detector.blocks.push_back({32, 3, 1, true, true});
    rc.detector.blocks.push_back({48, 3, 1, true, true});
    rc.detector.tap_layer = 18;
    rc.aux.seq_len = 15;
    rc.seq_baseline.encoder = {{16, 3, 2, true, true},
                               {32, 3, 2, true, true},
                               {64, 3, 2, true, true},
                               {96, 3, 1, true, true}};
    rc.seq_baseline.lstm_hidden = 48;
    rc.seq_baseline.seq_len = 15;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper-shape)");
  }
  return rc;
}

std::vector<std::string> preset_names() { return {"desk", "paper-shape"}; }

json to_json(const RunConfig& rc) {
  return json{{"preset", rc.preset},
              {"world", world_to_json(rc.world)},
              {"grid", grid_to_json(rc.grid)},
              {"detector", detector_to_json(rc.detector)},
              {"aux", aux_to_json(rc.aux)},
              {"seq_baseline", seqb_to_json(rc.seq_baseline)},
              {"train", train_to_json(rc.train)},
              {"eval", eval_to_json(rc.eval)},
              {"bench", bench_to_json(rc.bench)}};
}

RunConfig from_json(const json& j) {
  RunConfig rc;
  rc.preset = j.at("preset").get<std::string>();
  rc.world = world_from_json(j.at("world"));
  rc.grid = grid_from_json(j.at("grid"));
  rc.detector = detector_from_json(j.at("detector"));
  rc.aux = aux_from_json(j.at("aux"));
  rc.seq_baseline = seqb_from_json(j.at("seq_baseline"));
  rc.train = train_from_json(j.at("train"));
  rc.eval = eval_from_json(j.at("eval"));
  rc.bench = bench_from_json(j.at("bench"));
  return rc;
}

RunConfig load(const std::string& preset_name, const std::string& config_path,
               const json& overrides) {
  json merged = to_json(preset(preset_name));
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw IoError("config: cannot open " + config_path);
    json file_json;
    try {
      f >> file_json;
    } catch (const json::exception& e) {
      throw ConfigError("config: parse error in " + config_path + ": " + e.what());
    }
    if (file_json.contains("preset") && file_json.at("preset") != preset_name) {
      merged = to_json(preset(file_json.at("preset").get<std::string>()));
    }
    merged.merge_patch(file_json);
  }
  merged.merge_patch(overrides);
  RunConfig rc;
  try {
    rc = from_json(merged);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid or missing field: ") + e.what());
  }
  rc.validate();
  return rc;
}

void echo_effective_config(const RunConfig& rc, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string path = out_dir + "/effective_config.json";
  std::ofstream f(path);
  if (!f) throw IoError("config: cannot write " + path);
  f << to_json(rc).dump(2) << "\n";
}

}  // namespace gridsight::config
