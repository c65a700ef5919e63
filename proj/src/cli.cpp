#include "crossia/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "crossia/digest.hpp"
#include "crossia/errors.hpp"
#include "crossia/evaluation.hpp"

namespace crossia::cli {
namespace fs = std::filesystem;
namespace {

using nlohmann::json;

// Reads one JSON object, recording type errors and unknown keys.
class Section {
 public:
  Section(const json& node, std::string path, std::vector<std::string>& errors)
      : node_(node), path_(std::move(path)), errors_(errors) {
    if (!node_.is_object()) {
      errors_.push_back(where("") + ": expected an object");
      valid_ = false;
    }
  }
  ~Section() {
    if (!valid_) return;
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.contains(key)) errors_.push_back("unknown key '" + key + "' at " + where(key));
    }
  }

  void number(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (v->is_number()) out = v->get<double>();
      else mismatch(key, "a number");
    }
  }
  void integer(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (v->is_number_integer()) out = v->get<int>();
      else mismatch(key, "an integer");
    }
  }
  void unsigned_integer(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (v->is_number_unsigned()) out = v->get<std::uint64_t>();
      else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) out = static_cast<std::uint64_t>(v->get<std::int64_t>());
      else mismatch(key, "a non-negative integer");
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (v->is_boolean()) out = v->get<bool>();
      else mismatch(key, "a boolean");
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (v->is_string()) out = v->get<std::string>();
      else mismatch(key, "a string");
    }
  }
  void strings(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      if (v->is_array() && std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_string(); }))
        out = v->get<std::vector<std::string>>();
      else mismatch(key, "an array of strings");
    }
  }
  void integers(const std::string& key, std::vector<int>& out) {
    if (const json* v = take(key)) {
      if (v->is_array() && std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number_integer(); }))
        out = v->get<std::vector<int>>();
      else mismatch(key, "an array of integers");
    }
  }
  const json* child(const std::string& key) { return take(key); }
  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json* take(const std::string& key) {
    seen_.insert(key);
    if (!valid_ || !node_.contains(key)) return nullptr;
    return &node_.at(key);
  }
  void mismatch(const std::string& key, const char* expected) {
    errors_.push_back("type mismatch at " + where(key) + ": expected " + expected);
  }

  const json& node_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
  bool valid_ = true;
};

void read_world(const json& node, pipeline::WorldConfig& w, std::vector<std::string>& errors) {
  Section s(node, "world", errors);
  s.integer("instances", w.instances);
  s.integer("frames", w.frames);
  s.integer("user_images", w.user_images);
  s.integer("queries_per_instance", w.queries_per_instance);
  s.number("crop_margin", w.crop_margin);
  if (const json* d = s.child("degradation")) {
    Section ds(*d, "world.degradation", errors);
    ds.number("blur_sigma", w.degradation.blur_sigma);
    ds.integer("blur_kernel", w.degradation.blur_kernel);
    ds.integer("downsample_factor", w.degradation.downsample_factor);
    ds.number("noise_sigma", w.degradation.noise_sigma);
  }
  if (const json* k = s.child("intrinsics")) {
    Section ks(*k, "world.intrinsics", errors);
    ks.number("fx", w.intrinsics.fx);
    ks.number("fy", w.intrinsics.fy);
    ks.number("cx", w.intrinsics.cx);
    ks.number("cy", w.intrinsics.cy);
    ks.integer("width", w.intrinsics.width);
    ks.integer("height", w.intrinsics.height);
  }
}

void read_mapping(const json& node, mapping::MappingConfig& m, std::vector<std::string>& errors) {
  Section s(node, "mapping", errors);
  s.number("voxel_size", m.voxel_size);
  s.number("min_depth", m.min_depth);
  s.number("max_depth", m.max_depth);
  s.number("iou_threshold", m.iou_threshold);
  s.integer("min_bbox_size", m.min_bbox_size);
  s.number("max_ray_range", m.max_ray_range);
  s.number("floor_z", m.floor_z);
  s.number("obstacle_min_height", m.obstacle_min_height);
  s.number("obstacle_max_height", m.obstacle_max_height);
  s.number("goal_radius", m.goal_radius);
}

void read_adapters(const json& node, AdapterConfig& a, std::vector<std::string>& errors) {
  Section s(node, "adapters", errors);
  s.string("segmenter", a.segmenter);
  s.strings("segmenter_command", a.segmenter_command);
  s.string("deblur", a.deblur);
  s.strings("deblur_command", a.deblur_command);
  s.integer("timeout_ms", a.timeout_ms);
  s.integer("retries", a.retries);
  if (const json* u = s.child("unsharp")) {
    Section us(*u, "adapters.unsharp", errors);
    us.number("sigma", a.unsharp.sigma);
    us.integer("kernel", a.unsharp.kernel);
    us.number("amount", a.unsharp.amount);
  }
}

void read_training(const json& node, train::TrainingConfig& t, std::vector<std::string>& errors) {
  Section s(node, "training", errors);
  s.number("learning_rate", t.learning_rate);
  s.integer("batch_pairs", t.batch_pairs);
  s.integer("epochs", t.epochs);
  s.integer("steps_per_epoch", t.steps_per_epoch);
  s.number("momentum", t.momentum);
  s.number("weight_decay", t.weight_decay);
  s.number("grad_clip_norm", t.grad_clip_norm);
  s.boolean("cosine_schedule", t.cosine_schedule);
  s.boolean("center_init", t.center_init);
  s.integer("shots", t.shots);
  s.boolean("adversarial", t.adversarial);
  s.number("adversarial_lambda", t.adversarial_lambda);
  std::string reduction = t.reduction == loss::Reduction::kSum ? "sum" : "mean";
  s.string("reduction", reduction);
  if (reduction == "sum") t.reduction = loss::Reduction::kSum;
  else if (reduction == "mean") t.reduction = loss::Reduction::kMean;
  else errors.push_back("training.reduction must be 'sum' or 'mean', got '" + reduction + "'");
  if (const json* a = s.child("augment")) {
    Section as(*a, "training.augment", errors);
    auto& g = t.augment;
    as.integer("output_size", g.output_size);
    as.number("crop_scale_min", g.crop_scale_min);
    as.number("crop_scale_max", g.crop_scale_max);
    as.number("crop_ratio_min", g.crop_ratio_min);
    as.number("crop_ratio_max", g.crop_ratio_max);
    as.number("jitter_prob", g.jitter_prob);
    as.number("brightness", g.brightness);
    as.number("contrast", g.contrast);
    as.number("saturation", g.saturation);
    as.number("grayscale_prob", g.grayscale_prob);
    as.number("flip_prob", g.flip_prob);
  }
  if (const json* a = s.child("architecture")) {
    Section as(*a, "training.architecture", errors);
    auto& r = t.arch;
    as.integer("conv1_channels", r.conv1_channels);
    as.integer("conv2_channels", r.conv2_channels);
    as.integer("feature_dim", r.feature_dim);
    as.integer("projector_hidden", r.projector_hidden);
    as.integer("projection_dim", r.projection_dim);
    as.integer("predictor_hidden", r.predictor_hidden);
    std::string activation = r.backbone_activation == model::Activation::kRelu ? "relu" : "tanh";
    as.string("backbone_activation", activation);
    if (activation == "relu") r.backbone_activation = model::Activation::kRelu;
    else if (activation == "tanh") r.backbone_activation = model::Activation::kTanh;
    else errors.push_back("training.architecture.backbone_activation must be 'relu' or 'tanh'");
  }
}

template <typename Fn>
void collect_validation(std::vector<std::string>& errors, const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    errors.push_back(section + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

void require_artifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    fail(ErrorCode::kDependency, "missing " + path.string() + "; run '" + producer + "' first");
  }
}

// Checkpoint, cache and training log are keyed by the training fingerprint
// so variants (shots, adversarial, epochs) share one collected database.
struct RunPaths {
  fs::path root, world, db, map, queries, checkpoint, cache, training_log, reports, latent;
  explicit RunPaths(const RunConfig& config)
      : root(config.run_dir()),
        world(root / "world"),
        db(root / "db"),
        map(root / "db" / "map.json"),
        queries(root / "db" / "queries.json"),
        checkpoint(root / "checkpoints" / (config.training.fingerprint() + ".ckpt")),
        cache(root / "checkpoints" / (config.training.fingerprint() + ".embeddings.json")),
        training_log(root / "reports" / ("training_log_" + config.training.fingerprint() + ".csv")),
        reports(root / "reports"),
        latent(root / "latent") {}
};

void stamp_run_dir(const RunConfig& config, const RunPaths& paths) {
  fs::create_directories(paths.root);
  write_json_file(paths.root / "config.json", config.to_json());
}

std::vector<eval::Query> load_queries(const RunPaths& paths) {
  require_artifact(paths.queries, "collect");
  std::ifstream in(paths.queries);
  const json doc = json::parse(in);
  std::vector<eval::Query> queries;
  for (const auto& q : doc.at("queries")) {
    queries.push_back({q.at("name").get<std::string>(), read_png_rgb(paths.world / q.at("path").get<std::string>()),
                       q.at("ground_truth").get<InstanceId>()});
  }
  return queries;
}

db::ObjectImageDatabase load_db(const RunPaths& paths) {
  require_artifact(paths.db / "manifest.json", "collect");
  return db::load_database(paths.db);
}

model::Checkpoint load_trained(const RunPaths& paths, const db::ObjectImageDatabase& training_view) {
  require_artifact(paths.checkpoint, "finetune");
  model::Checkpoint ckpt = model::load_checkpoint(paths.checkpoint);
  if (ckpt.db_digest != training_view.digest()) {
    fail(ErrorCode::kDependency, "checkpoint was trained on a different database; rerun 'finetune'");
  }
  return ckpt;
}

void print_progress(std::ostream& err, const train::EpochLog& e, int epochs) {
  if (e.epoch == 1 || e.epoch == epochs || e.epoch % 10 == 0) {
    err << "  epoch " << e.epoch << "/" << epochs << " loss " << e.loss.total << '\n';
  }
}

int cmd_gen_world(const RunConfig& config, const RunPaths& paths, std::ostream& out) {
  stamp_run_dir(config, paths);
  const pipeline::SyntheticWorld w = pipeline::generate_world(config.world);
  pipeline::save_world(w, paths.world);
  out << "world: " << w.scene.objects.size() << " instances, " << w.frames.size() << " frames, "
      << w.queries.size() << " queries -> " << paths.world.string() << '\n';
  return 0;
}

int cmd_collect(const RunConfig& config, const RunPaths& paths, std::ostream& out) {
  require_artifact(paths.world / "world.json", "gen-world");
  stamp_run_dir(config, paths);
  const pipeline::SyntheticWorld w = pipeline::load_world(paths.world);
  db::CollectionConfig cc{config.mapping, config.max_shots};
  const pipeline::Collection c =
      pipeline::collect(w, cc, make_segmenter(config.adapters), make_deblurrer(config.adapters));
  db::save_database(c.db, paths.db);
  c.map.save(paths.map);
  json queries = json::array();
  for (std::size_t i = 0; i < c.queries.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "queries/query_%04zu.png", i);
    queries.push_back({{"name", c.queries[i].name}, {"path", name}, {"ground_truth", c.queries[i].ground_truth}});
  }
  json correspondence = json::object();
  for (const auto& [scene_id, map_id] : c.scene_to_map) correspondence[std::to_string(scene_id)] = map_id;
  write_json_file(paths.queries, {{"queries", queries}, {"scene_to_map", correspondence}});
  out << "collect: " << c.db.instances.size() << " instances, " << c.db.count(db::Domain::kLow)
      << " low-quality crops, " << c.db.count(db::Domain::kHigh) << " user images -> " << paths.db.string() << '\n';
  return 0;
}

int cmd_finetune(const RunConfig& config, const RunPaths& paths, std::ostream& out, std::ostream& err) {
  const db::ObjectImageDatabase full = load_db(paths);
  stamp_run_dir(config, paths);
  const db::ObjectImageDatabase view = db::with_shots(full, config.training.shots);
  const train::TrainResult result =
      train::train(view, config.training, [&](const train::EpochLog& e) { print_progress(err, e, config.training.epochs); });
  fs::create_directories(paths.checkpoint.parent_path());
  fs::create_directories(paths.reports);
  model::save_checkpoint(paths.checkpoint,
                         {result.bundle, config.training.fingerprint(), view.digest(), config.training.to_json()});
  train::write_training_log(paths.training_log, result.log);
  out << "finetune: " << result.log.size() << " epochs, final loss " << result.log.back().loss.total << " -> "
      << paths.checkpoint.string() << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& config, const RunPaths& paths, std::ostream& out) {
  const db::ObjectImageDatabase full = load_db(paths);
  const db::ObjectImageDatabase view = db::with_shots(full, config.training.shots);
  const auto queries = load_queries(paths);
  const model::Checkpoint ckpt = load_trained(paths, view);
  std::vector<eval::Condition> conditions;
  conditions.push_back({"Random", [&] { return train::initial_bundle(view, config.training); }});
  conditions.push_back({"CrossIA", [&] { return ckpt.bundle; }});
  if (config.evaluation.deblur_condition) {
    conditions.push_back({"CrossIA+Deblur", [&] { return ckpt.bundle; }, true,
                          perception::DeblurrerHandle::unsharp(config.adapters.unsharp)});
  }
  const auto reports = eval::run_benchmark(conditions, queries, view, config.aggregation);
  fs::create_directories(paths.reports);
  eval::write_reports_csv(paths.reports / "benchmark.csv", reports);
  eval::write_reports_json(paths.reports / "benchmark.json", reports);
  for (const auto& r : reports) out << eval::format_report_row(r) << '\n';
  if (!reports.empty() && !reports.front().skipped.empty()) {
    out << "skipped queries (ground truth not in database): " << reports.front().skipped.size() << '\n';
  }
  return 0;
}

int cmd_ablate(const RunConfig& config, const RunPaths& paths, std::ostream& out, std::ostream& err) {
  const db::ObjectImageDatabase full = load_db(paths);
  const auto queries = load_queries(paths);
  stamp_run_dir(config, paths);
  const auto reports = eval::few_shot_ablation(full, config.evaluation.shots_list, config.training, queries,
                                               [&](int shots, const train::TrainResult& r) {
                                                 err << "  trained " << eval::shot_label(shots) << ", final loss "
                                                     << r.log.back().loss.total << '\n';
                                               });
  fs::create_directories(paths.reports);
  eval::write_reports_csv(paths.reports / "ablation.csv", reports);
  eval::write_reports_json(paths.reports / "ablation.json", reports);
  for (const auto& r : reports) out << eval::format_ablation_row(r) << '\n';
  return 0;
}

int cmd_locate(const RunConfig& config, const RunPaths& paths, std::ostream& out, const DispatchOptions& options) {
  const db::ObjectImageDatabase full = load_db(paths);
  const db::ObjectImageDatabase view = db::with_shots(full, config.training.shots);
  const model::Checkpoint ckpt = load_trained(paths, view);
  require_artifact(paths.map, "collect");
  const mapping::VoxelSemanticMap map = mapping::VoxelSemanticMap::load(paths.map);
  RgbImage query;
  std::string name;
  if (options.query) {
    if (!fs::exists(*options.query)) fail(ErrorCode::kNotFound, "query image " + options.query->string());
    query = read_png_rgb(*options.query);
    name = options.query->string();
  } else {
    const auto queries = load_queries(paths);
    require(!queries.empty(), "no queries recorded for this run");
    query = queries.front().image;
    name = queries.front().name;
  }
  retrieval::EmbeddingCache cache;
  if (fs::exists(paths.cache)) cache = retrieval::EmbeddingCache::load(paths.cache);
  if (!cache.matches(ckpt.bundle, view)) {
    cache = retrieval::EmbeddingCache::build(ckpt.bundle, view);
    cache.save(paths.cache);
  }
  const auto result = retrieval::locate(query, ckpt.bundle, cache, map, config.mapping, config.aggregation);
  json ranking = json::array();
  for (const auto& s : result.ranking.ranking) ranking.push_back({{"instance_id", s.instance_id}, {"score", s.score}});
  const json record = {{"query", name},
                       {"instance_id", result.goal.instance_id},
                       {"goal", {result.goal.target.x(), result.goal.target.y(), result.goal.target.z()}},
                       {"distance_to_centroid", result.goal.distance_to_centroid},
                       {"ranking", ranking}};
  fs::create_directories(paths.reports);
  write_json_file(paths.reports / "locate.json", record);
  out << record.dump(2) << '\n';
  return 0;
}

int cmd_export_latent(const RunConfig& config, const RunPaths& paths, std::ostream& out) {
  const db::ObjectImageDatabase full = load_db(paths);
  const db::ObjectImageDatabase view = db::with_shots(full, config.training.shots);
  const model::Checkpoint ckpt = load_trained(paths, view);
  fs::create_directories(paths.latent);
  const std::pair<std::string, model::EncoderBundle> bundles[] = {
      {"initial", train::initial_bundle(view, config.training)}, {"finetuned", ckpt.bundle}};
  for (const auto& [label, bundle] : bundles) {
    const auto points = eval::export_latent_projection(eval::labeled_embeddings(bundle, view));
    eval::write_latent_csv(paths.latent / (label + ".csv"), points);
    eval::write_latent_svg(paths.latent / (label + ".svg"), points, label + " encoder");
    out << "latent: " << points.size() << " points -> " << (paths.latent / (label + ".csv")).string() << '\n';
  }
  return 0;
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  json t = training.to_json();
  t.erase("preset");
  t.erase("seed");
  if (t.contains("architecture")) t["architecture"].erase("input_size");
  return {{"preset", preset},
          {"seed", seed},
          {"run_root", run_root},
          {"world", [&] {
             json w = world.to_json();
             w.erase("seed");
             return w;
           }()},
          {"mapping",
           {{"voxel_size", mapping.voxel_size},
            {"min_depth", mapping.min_depth},
            {"max_depth", mapping.max_depth},
            {"iou_threshold", mapping.iou_threshold},
            {"min_bbox_size", mapping.min_bbox_size},
            {"max_ray_range", mapping.max_ray_range},
            {"floor_z", mapping.floor_z},
            {"obstacle_min_height", mapping.obstacle_min_height},
            {"obstacle_max_height", mapping.obstacle_max_height},
            {"goal_radius", mapping.goal_radius}}},
          {"adapters",
           {{"segmenter", adapters.segmenter},
            {"segmenter_command", adapters.segmenter_command},
            {"deblur", adapters.deblur},
            {"deblur_command", adapters.deblur_command},
            {"unsharp", {{"sigma", adapters.unsharp.sigma}, {"kernel", adapters.unsharp.kernel}, {"amount", adapters.unsharp.amount}}},
            {"timeout_ms", adapters.timeout_ms},
            {"retries", adapters.retries}}},
          {"database", {{"max_shots", max_shots}}},
          {"training", t},
          {"retrieval", {{"aggregation", retrieval::to_string(aggregation)}}},
          {"evaluation", {{"shots_list", evaluation.shots_list}, {"deblur_condition", evaluation.deblur_condition}}}};
}

std::string RunConfig::fingerprint() const {
  const json j = to_json();
  const json stage = {{"seed", j["seed"]},
                      {"world", j["world"]},
                      {"mapping", j["mapping"]},
                      {"adapters", j["adapters"]},
                      {"database", j["database"]}};
  return sha256_hex(stage.dump()).substr(0, 16);
}

fs::path RunConfig::run_dir() const { return fs::path(run_root) / fingerprint(); }

RunConfig preset_config(const std::string& preset) {
  RunConfig c;
  if (preset == "desk") {
    c.training = train::TrainingConfig::desk();
  } else if (preset == "paper") {
    c.training = train::TrainingConfig::paper();
  } else {
    fail(ErrorCode::kConfig, "unknown preset '" + preset + "' (expected desk or paper)");
  }
  c.preset = preset;
  return c;
}

RunConfig resolve_config(const nlohmann::json& document, const Overrides& overrides) {
  std::vector<std::string> errors;
  std::string preset = "desk";
  if (document.is_object() && document.contains("preset")) {
    if (document.at("preset").is_string()) preset = document.at("preset").get<std::string>();
  }
  if (overrides.preset) preset = *overrides.preset;
  if (preset != "desk" && preset != "paper") {
    fail(ErrorCode::kConfig, "unknown preset '" + preset + "' (expected desk or paper)");
  }
  RunConfig c = preset_config(preset);
  {
    Section root(document, "", errors);
    std::string ignored_preset;
    root.string("preset", ignored_preset);
    root.unsigned_integer("seed", c.seed);
    root.string("run_root", c.run_root);
    if (const json* n = root.child("world")) read_world(*n, c.world, errors);
    if (const json* n = root.child("mapping")) read_mapping(*n, c.mapping, errors);
    if (const json* n = root.child("adapters")) read_adapters(*n, c.adapters, errors);
    if (const json* n = root.child("database")) {
      Section s(*n, "database", errors);
      s.integer("max_shots", c.max_shots);
    }
    if (const json* n = root.child("training")) read_training(*n, c.training, errors);
    if (const json* n = root.child("retrieval")) {
      Section s(*n, "retrieval", errors);
      std::string aggregation = retrieval::to_string(c.aggregation);
      s.string("aggregation", aggregation);
      collect_validation(errors, "retrieval", [&] { c.aggregation = retrieval::parse_aggregation(aggregation); });
    }
    if (const json* n = root.child("evaluation")) {
      Section s(*n, "evaluation", errors);
      s.integers("shots_list", c.evaluation.shots_list);
      s.boolean("deblur_condition", c.evaluation.deblur_condition);
    }
  }

  if (overrides.seed) c.seed = *overrides.seed;
  if (overrides.shots) c.training.shots = *overrides.shots;
  if (overrides.adversarial) c.training.adversarial = *overrides.adversarial;
  if (overrides.deblur) c.adapters.deblur = *overrides.deblur;
  if (overrides.run_root) c.run_root = *overrides.run_root;
  c.world.seed = c.seed;
  c.training.seed = c.seed;
  c.training.preset = c.preset;

  collect_validation(errors, "world", [&] { c.world.validate(); });
  collect_validation(errors, "mapping", [&] { c.mapping.validate(); });
  collect_validation(errors, "training", [&] { c.training.validate(); });
  if (c.training.shots < 1 || c.training.shots > c.max_shots) {
    errors.push_back("training.shots must be in [1, database.max_shots]");
  }
  if (c.max_shots > c.world.user_images) errors.push_back("database.max_shots exceeds world.user_images");
  for (int s : c.evaluation.shots_list) {
    if (s < 1 || s > c.max_shots) errors.push_back("evaluation.shots_list entries must be in [1, database.max_shots]");
  }
  if (c.adapters.segmenter != "oracle" && c.adapters.segmenter != "external") {
    errors.push_back("adapters.segmenter must be 'oracle' or 'external'");
  }
  if (c.adapters.deblur != "identity" && c.adapters.deblur != "unsharp" && c.adapters.deblur != "external") {
    errors.push_back("adapters.deblur must be identity, unsharp or external");
  }
  auto check_command = [&](const std::string& kind, const std::vector<std::string>& command, const std::string& key) {
    if (kind != "external") return;
    if (command.empty()) {
      errors.push_back("adapters." + key + " is required for an external adapter");
    } else if (command.front().find('/') != std::string::npos && !fs::exists(command.front())) {
      errors.push_back("adapters." + key + ": " + command.front() + " does not exist");
    }
  };
  check_command(c.adapters.segmenter, c.adapters.segmenter_command, "segmenter_command");
  check_command(c.adapters.deblur, c.adapters.deblur_command, "deblur_command");
  if (c.adapters.timeout_ms <= 0 || c.adapters.retries < 0) errors.push_back("adapters: timeout_ms > 0 and retries >= 0 required");

  if (!errors.empty()) {
    std::string message = std::to_string(errors.size()) + " problem(s) in configuration";
    for (const auto& e : errors) message += "\n  - " + e;
    fail(ErrorCode::kConfig, message);
  }
  return c;
}

RunConfig parse_config(const fs::path& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfig, "config file not found: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  json document = json::object();
  if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
    try {
      document = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kConfig, "cannot parse " + path.string() + ": " + e.what());
    }
  }
  return resolve_config(document, overrides);
}

perception::SegmenterHandle make_segmenter(const AdapterConfig& a) {
  if (a.segmenter == "external") {
    return perception::SegmenterHandle::external(
        {a.segmenter_command, json::object(), std::chrono::milliseconds(a.timeout_ms), a.retries});
  }
  return perception::SegmenterHandle::oracle();
}

perception::DeblurrerHandle make_deblurrer(const AdapterConfig& a) {
  switch (perception::parse_deblur_kind(a.deblur)) {
    case perception::DeblurrerHandle::Kind::kUnsharp: return perception::DeblurrerHandle::unsharp(a.unsharp);
    case perception::DeblurrerHandle::Kind::kExternal:
      return perception::DeblurrerHandle::external(
          {a.deblur_command, json::object(), std::chrono::milliseconds(a.timeout_ms), a.retries});
    case perception::DeblurrerHandle::Kind::kIdentity: break;
  }
  return perception::DeblurrerHandle::identity();
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return 4;
    case ErrorCode::kDependency: return 3;
    default: return 5;
  }
}

int dispatch(const std::string& command, const RunConfig& config, std::ostream& out, std::ostream& err,
             const DispatchOptions& options) {
  const RunPaths paths(config);
  try {
    if (command == "gen-world") return cmd_gen_world(config, paths, out);
    if (command == "collect") return cmd_collect(config, paths, out);
    if (command == "finetune") return cmd_finetune(config, paths, out, err);
    if (command == "evaluate") return cmd_evaluate(config, paths, out);
    if (command == "ablate") return cmd_ablate(config, paths, out, err);
    if (command == "locate") return cmd_locate(config, paths, out, options);
    if (command == "export-latent") return cmd_export_latent(config, paths, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 5;
  }
  err << "unknown command '" << command << "'\n";
  return 2;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-quality instance-aware adaptation pipeline", "crossia"};
  app.require_subcommand(1, 1);
  std::string config_path;
  Overrides overrides;
  std::string preset, adversarial, deblur, run_root, query;
  std::uint64_t seed = 0;
  int shots = 0;
  DispatchOptions options;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--preset", preset, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--shots", shots, "high-quality images per instance")->check(CLI::IsMember({1, 3, 5}));
    sub->add_option("--adversarial", adversarial, "on | off")->check(CLI::IsMember({"on", "off"}));
    sub->add_option("--deblur", deblur, "identity | unsharp | external")
        ->check(CLI::IsMember({"identity", "unsharp", "external"}));
    sub->add_option("--run-root", run_root, "directory holding run directories");
  };
  const std::map<std::string, std::string> descriptions = {
      {"gen-world", "render the synthetic world, user photos and queries"},
      {"collect", "build the semantic map and the object image database"},
      {"finetune", "fine-tune the encoder and write a checkpoint"},
      {"evaluate", "SR/MRR/MR for the random, fine-tuned and deblur conditions"},
      {"ablate", "train and evaluate each few-shot setting"},
      {"locate", "retrieve the instance in a query image and resolve a navigation goal"},
      {"export-latent", "2D PCA projection of embeddings before and after fine-tuning"}};
  for (const auto& name : commands()) {
    CLI::App* sub = app.add_subcommand(name, descriptions.at(name));
    add_common(sub);
    if (name == "locate") sub->add_option("--query", query, "query image (PNG)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  CLI::App* chosen = app.get_subcommands().front();
  if (chosen->count("--seed")) overrides.seed = seed;
  if (!preset.empty()) overrides.preset = preset;
  if (chosen->count("--shots")) overrides.shots = shots;
  if (!adversarial.empty()) overrides.adversarial = adversarial == "on";
  if (!deblur.empty()) overrides.deblur = deblur;
  if (!run_root.empty()) overrides.run_root = run_root;
  if (!query.empty()) options.query = query;

  RunConfig config;
  try {
    config = config_path.empty() ? resolve_config(json::object(), overrides) : parse_config(config_path, overrides);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.code());
  }
  return dispatch(chosen->get_name(), config, out, err, options);
}

}  // namespace crossia::cli
