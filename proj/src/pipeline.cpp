#include "crossia/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "crossia/errors.hpp"
#include "crossia/training.hpp"

namespace crossia::pipeline {
namespace fs = std::filesystem;
namespace {

constexpr std::uint64_t kUserStream = 0x05E7;
constexpr std::uint64_t kQueryStream = 0x0F1E;

std::string numbered(const std::string& stem, std::size_t index, const std::string& ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu%s", stem.c_str(), index, ext.c_str());
  return buf;
}

void write_floats(const fs::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
}

std::vector<float> read_floats(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIntegrity, "missing file " + path.string());
  std::vector<float> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float))) {
    fail(ErrorCode::kIntegrity, "truncated depth file " + path.string());
  }
  return values;
}

void write_mask(const fs::path& path, const SegmentMask& mask) {
  std::vector<std::uint16_t> values(mask.ids.begin(), mask.ids.end());
  write_png16(path, mask.width, mask.height, values);
}

SegmentMask read_mask(const fs::path& path) {
  int w = 0, h = 0;
  const auto values = read_png16(path, w, h);
  SegmentMask mask(w, h);
  std::copy(values.begin(), values.end(), mask.ids.begin());
  return mask;
}

// Close-up poses from which `id` is at least 90% unoccluded.
std::vector<CameraPose> clear_close_ups(const world::SceneDescription& scene, InstanceId id, int count,
                                        std::uint64_t seed, const CameraIntrinsics& intrinsics) {
  world::SceneDescription alone = scene;
  std::erase_if(alone.objects, [&](const world::SceneObject& o) { return o.instance_id != id; });
  const auto candidates = world::close_up_poses(scene, id, count * 20, seed);
  std::vector<CameraPose> poses;
  for (const auto& pose : candidates) {
    if (static_cast<int>(poses.size()) == count) break;
    const auto full = world::render_frame(scene, pose, intrinsics);
    const auto solo = world::render_frame(alone, pose, intrinsics);
    const auto visible = std::count(full.ground_truth.ids.begin(), full.ground_truth.ids.end(), id);
    const auto possible = std::count(solo.ground_truth.ids.begin(), solo.ground_truth.ids.end(), id);
    if (possible >= 100 && visible >= 0.9 * static_cast<double>(possible)) poses.push_back(pose);
  }
  if (static_cast<int>(poses.size()) < count) {
    fail(ErrorCode::kInvalidArgument, "object " + std::to_string(id) + " has too few unoccluded close-up views");
  }
  return poses;
}

}  // namespace

void WorldConfig::validate() const {
  require(instances >= 1, "world: instances must be >= 1");
  require(frames >= 1, "world: frames must be >= 1");
  require(user_images >= 1, "world: user_images must be >= 1");
  require(queries_per_instance >= 1, "world: queries_per_instance must be >= 1");
  require(crop_margin >= 0.0, "world: crop_margin must be >= 0");
  degradation.validate();
  intrinsics.validate();
}

nlohmann::json WorldConfig::to_json() const {
  return {{"instances", instances},
          {"frames", frames},
          {"user_images", user_images},
          {"queries_per_instance", queries_per_instance},
          {"crop_margin", crop_margin},
          {"degradation",
           {{"blur_sigma", degradation.blur_sigma},
            {"blur_kernel", degradation.blur_kernel},
            {"downsample_factor", degradation.downsample_factor},
            {"noise_sigma", degradation.noise_sigma}}},
          {"intrinsics",
           {{"fx", intrinsics.fx},
            {"fy", intrinsics.fy},
            {"cx", intrinsics.cx},
            {"cy", intrinsics.cy},
            {"width", intrinsics.width},
            {"height", intrinsics.height}}},
          {"seed", seed}};
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j, const WorldConfig& defaults) {
  WorldConfig c = defaults;
  c.instances = j.value("instances", c.instances);
  c.frames = j.value("frames", c.frames);
  c.user_images = j.value("user_images", c.user_images);
  c.queries_per_instance = j.value("queries_per_instance", c.queries_per_instance);
  c.crop_margin = j.value("crop_margin", c.crop_margin);
  c.seed = j.value("seed", c.seed);
  if (j.contains("degradation")) {
    const auto& d = j.at("degradation");
    c.degradation.blur_sigma = d.value("blur_sigma", c.degradation.blur_sigma);
    c.degradation.blur_kernel = d.value("blur_kernel", c.degradation.blur_kernel);
    c.degradation.downsample_factor = d.value("downsample_factor", c.degradation.downsample_factor);
    c.degradation.noise_sigma = d.value("noise_sigma", c.degradation.noise_sigma);
  }
  if (j.contains("intrinsics")) {
    const auto& k = j.at("intrinsics");
    c.intrinsics.fx = k.value("fx", c.intrinsics.fx);
    c.intrinsics.fy = k.value("fy", c.intrinsics.fy);
    c.intrinsics.cx = k.value("cx", c.intrinsics.cx);
    c.intrinsics.cy = k.value("cy", c.intrinsics.cy);
    c.intrinsics.width = k.value("width", c.intrinsics.width);
    c.intrinsics.height = k.value("height", c.intrinsics.height);
  }
  c.validate();
  return c;
}

RgbImage object_photo(const world::SceneDescription& scene, InstanceId id, const CameraPose& pose,
                      const CameraIntrinsics& intrinsics, double margin) {
  const world::RenderedFrame r = world::render_frame(scene, pose, intrinsics);
  int x0 = r.ground_truth.width, y0 = r.ground_truth.height, x1 = -1, y1 = -1;
  for (int y = 0; y < r.ground_truth.height; ++y) {
    for (int x = 0; x < r.ground_truth.width; ++x) {
      if (r.ground_truth.at(x, y) != id) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) fail(ErrorCode::kNotFound, "object " + std::to_string(id) + " not visible in close-up view");
  const int mx = static_cast<int>(std::lround(margin * (x1 - x0 + 1)));
  const int my = static_cast<int>(std::lround(margin * (y1 - y0 + 1)));
  x0 = std::max(0, x0 - mx);
  y0 = std::max(0, y0 - my);
  x1 = std::min(r.ground_truth.width - 1, x1 + mx);
  y1 = std::min(r.ground_truth.height - 1, y1 + my);
  return crop(r.frame.rgb, x0, y0, x1, y1);
}

SyntheticWorld generate_world(const WorldConfig& config) {
  config.validate();
  SyntheticWorld w;
  w.config = config;
  w.scene = world::generate_scene(config.seed, config.instances);
  world::OrbitSpec orbit;
  orbit.frames = config.frames;
  orbit.seed = train::mix_seed(config.seed, 0x0B17);
  w.trajectory = world::orbit_trajectory(orbit);
  auto rendered = world::render_sequence(w.scene, w.trajectory, config.intrinsics);
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    world::DegradationSpec spec = config.degradation;
    spec.seed = train::mix_seed(config.seed, 0xDE6, i);
    rendered[i].frame.rgb = world::degrade(rendered[i].frame.rgb, spec);
    w.frames.push_back(std::move(rendered[i].frame));
    w.ground_truth.push_back(std::move(rendered[i].ground_truth));
  }
  // User photos and queries come from disjoint pose streams.
  for (const auto& object : w.scene.objects) {
    const InstanceId id = object.instance_id;
    for (const auto& pose :
         clear_close_ups(w.scene, id, config.user_images, train::mix_seed(config.seed, kUserStream), config.intrinsics)) {
      w.user_images[id].push_back(object_photo(w.scene, id, pose, config.intrinsics, config.crop_margin));
    }
    const auto query_poses =
        clear_close_ups(w.scene, id, config.queries_per_instance, train::mix_seed(config.seed, kQueryStream),
                        config.intrinsics);
    for (std::size_t q = 0; q < query_poses.size(); ++q) {
      w.queries.push_back({"query/" + std::to_string(id) + "/" + std::to_string(q), 
                           object_photo(w.scene, id, query_poses[q], config.intrinsics, config.crop_margin), id});
    }
  }
  return w;
}

void save_world(const SyntheticWorld& w, const fs::path& root) {
  fs::create_directories(root / "frames");
  fs::create_directories(root / "user");
  fs::create_directories(root / "queries");
  world::save_scene(root / "scene.json", w.scene);
  write_tum_trajectory(root / "trajectory.txt", w.trajectory);
  for (std::size_t i = 0; i < w.frames.size(); ++i) {
    write_png(root / "frames" / numbered("rgb", i, ".png"), w.frames[i].rgb);
    write_floats(root / "frames" / numbered("depth", i, ".f32"), w.frames[i].depth);
    write_mask(root / "frames" / numbered("mask", i, ".png"), w.ground_truth[i]);
  }
  nlohmann::json user = nlohmann::json::object();
  for (const auto& [id, images] : w.user_images) {
    nlohmann::json paths = nlohmann::json::array();
    for (std::size_t s = 0; s < images.size(); ++s) {
      const std::string rel = "user/" + std::to_string(id) + "_" + std::to_string(s) + ".png";
      write_png(root / rel, images[s]);
      paths.push_back(rel);
    }
    user[std::to_string(id)] = paths;
  }
  nlohmann::json queries = nlohmann::json::array();
  for (std::size_t q = 0; q < w.queries.size(); ++q) {
    const std::string rel = "queries/" + numbered("query", q, ".png");
    write_png(root / rel, w.queries[q].image);
    queries.push_back({{"name", w.queries[q].name}, {"path", rel}, {"ground_truth", w.queries[q].ground_truth}});
  }
  nlohmann::json manifest = {{"format", "crossia-world"},      {"version", 1},
                             {"config", w.config.to_json()},  {"frames", w.frames.size()},
                             {"user_images", user},           {"queries", queries}};
  std::ofstream out(root / "world.json");
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write world manifest under " + root.string());
  out << manifest.dump(2) << '\n';
}

SyntheticWorld load_world(const fs::path& root) {
  std::ifstream in(root / "world.json");
  if (!in) fail(ErrorCode::kNotFound, "no world manifest at " + (root / "world.json").string());
  SyntheticWorld w;
  try {
    const nlohmann::json manifest = nlohmann::json::parse(in);
    if (manifest.at("format") != "crossia-world") fail(ErrorCode::kFormat, "not a world manifest");
    if (manifest.at("version").get<int>() > 1) fail(ErrorCode::kFormat, "world manifest version is newer than supported");
    w.config = WorldConfig::from_json(manifest.at("config"), {});
    w.scene = world::load_scene(root / "scene.json");
    w.trajectory = read_tum_trajectory(root / "trajectory.txt");
    const std::size_t frames = manifest.at("frames").get<std::size_t>();
    if (w.trajectory.size() != frames) fail(ErrorCode::kIntegrity, "trajectory length does not match frame count");
    const CameraIntrinsics& k = w.config.intrinsics;
    for (std::size_t i = 0; i < frames; ++i) {
      world::RgbdFrame frame;
      frame.rgb = read_png_rgb(root / "frames" / numbered("rgb", i, ".png"));
      frame.depth = read_floats(root / "frames" / numbered("depth", i, ".f32"),
                                static_cast<std::size_t>(k.width) * k.height);
      frame.pose = w.trajectory[i].pose;
      frame.timestamp = w.trajectory[i].timestamp;
      frame.intrinsics = k;
      frame.validate();
      w.frames.push_back(std::move(frame));
      w.ground_truth.push_back(read_mask(root / "frames" / numbered("mask", i, ".png")));
    }
    for (const auto& [key, paths] : manifest.at("user_images").items()) {
      const InstanceId id = static_cast<InstanceId>(std::stoul(key));
      for (const auto& p : paths) w.user_images[id].push_back(read_png_rgb(root / p.get<std::string>()));
    }
    for (const auto& q : manifest.at("queries")) {
      w.queries.push_back({q.at("name").get<std::string>(), read_png_rgb(root / q.at("path").get<std::string>()),
                           q.at("ground_truth").get<InstanceId>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, "malformed world manifest: " + std::string(e.what()));
  }
  return w;
}

std::map<InstanceId, InstanceId> match_instances(const mapping::VoxelSemanticMap& map,
                                                 const std::vector<world::RgbdFrame>& frames,
                                                 const std::vector<SegmentMask>& ground_truth, double max_range) {
  require(frames.size() == ground_truth.size(), "match_instances: frame/mask count mismatch");
  const mapping::RaycastIndex index(map);
  std::map<InstanceId, std::map<InstanceId, std::size_t>> counts;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const SegmentMask traced = index.trace(frames[f].pose, frames[f].intrinsics, max_range);
    const SegmentMask& gt = ground_truth[f];
    for (std::size_t p = 0; p < gt.ids.size(); ++p) {
      if (gt.ids[p] != kBackground && traced.ids[p] != kBackground) ++counts[gt.ids[p]][traced.ids[p]];
    }
  }
  std::map<InstanceId, InstanceId> out;
  for (const auto& [scene_id, tally] : counts) {
    const auto best = std::max_element(tally.begin(), tally.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    out[scene_id] = best->first;
  }
  return out;
}

Collection collect(const SyntheticWorld& w, const db::CollectionConfig& config,
                   const perception::SegmenterHandle& segmenter, const perception::DeblurrerHandle& deblurrer) {
  Collection c;
  c.map = db::build_map(w.frames, w.ground_truth, segmenter, deblurrer, config.mapping);
  c.db = db::collect_database(w.frames, c.map, deblurrer, config);
  c.scene_to_map = match_instances(c.map, w.frames, w.ground_truth, config.mapping.max_ray_range);
  for (const auto& [scene_id, images] : w.user_images) {
    const auto it = c.scene_to_map.find(scene_id);
    if (it == c.scene_to_map.end() || !c.db.instances.contains(it->second)) continue;
    if (c.db.instance(it->second).count(db::Domain::kHigh) > 0) continue;  // two scene objects merged
    const int shots = std::min(config.max_shots, static_cast<int>(images.size()));
    db::add_user_images(c.db, it->second, images, shots);
  }
  for (const auto& q : w.queries) {
    const auto it = c.scene_to_map.find(q.ground_truth);
    // Unmatched objects keep an id the database cannot contain, so the
    // evaluation reports them as skipped.
    const InstanceId gt = it == c.scene_to_map.end() ? 0 : it->second;
    c.queries.push_back({q.name, q.image, gt});
  }
  c.db.creation_config["world_seed"] = w.config.seed;
  c.db.validate();
  return c;
}

}  // namespace crossia::pipeline
