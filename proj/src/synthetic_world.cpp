#include "crossia/synthetic_world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <set>

#include <json.hpp>

#include "crossia/errors.hpp"

namespace crossia::world {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Hit {
  double t = kInf;
  Vec3 normal = Vec3::Zero();
  Vec3 albedo = Vec3::Zero();
  InstanceId id = kBackground;
};

// Slab test for a ray starting outside the box.
std::optional<std::pair<double, Vec3>> intersect_box(const Vec3& origin, const Vec3& dir, const Aabb& box) {
  double t_near = -kInf;
  double t_far = kInf;
  int near_axis = -1;
  double near_sign = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < box.min[a] || origin[a] > box.max[a]) return std::nullopt;
      continue;
    }
    double t0 = (box.min[a] - origin[a]) / dir[a];
    double t1 = (box.max[a] - origin[a]) / dir[a];
    double sign = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > t_near) {
      t_near = t0;
      near_axis = a;
      near_sign = sign;
    }
    t_far = std::min(t_far, t1);
  }
  if (near_axis < 0 || t_near > t_far || t_near <= 0.0) return std::nullopt;
  Vec3 normal = Vec3::Zero();
  normal[near_axis] = near_sign;
  return std::make_pair(t_near, normal);
}

std::optional<std::pair<double, Vec3>> intersect_sphere(const Vec3& origin, const Vec3& dir, const Vec3& center,
                                                        double radius) {
  const Vec3 oc = origin - center;
  const double a = dir.squaredNorm();
  const double b = oc.dot(dir);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - a * c;
  if (disc < 0.0) return std::nullopt;
  const double t = (-b - std::sqrt(disc)) / a;
  if (t <= 0.0) return std::nullopt;
  return std::make_pair(t, ((origin + t * dir) - center) / radius);
}

Vec3 wall_albedo(const Vec3& point, int axis, bool at_max) {
  if (axis == 2) {
    if (at_max) return {0.9, 0.9, 0.88};
    const int tile = static_cast<int>(std::floor(point.x() / 0.5)) + static_cast<int>(std::floor(point.y() / 0.5));
    return (tile & 1) ? Vec3(0.55, 0.55, 0.52) : Vec3(0.47, 0.46, 0.45);
  }
  if (axis == 0) return at_max ? Vec3(0.7, 0.75, 0.8) : Vec3(0.8, 0.78, 0.7);
  return at_max ? Vec3(0.82, 0.74, 0.74) : Vec3(0.75, 0.8, 0.72);
}

Hit trace(const SceneDescription& scene, const Vec3& origin, const Vec3& dir) {
  Hit best;
  // Room interior: exit distance of a ray starting inside the box.
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) continue;
    const bool to_max = dir[a] > 0.0;
    const double plane = to_max ? scene.room_bounds.max[a] : scene.room_bounds.min[a];
    const double t = (plane - origin[a]) / dir[a];
    if (t > 0.0 && t < best.t) {
      best.t = t;
      best.normal = Vec3::Zero();
      best.normal[a] = to_max ? -1.0 : 1.0;
      best.albedo = wall_albedo(origin + t * dir, a, to_max);
      best.id = kBackground;
    }
  }
  for (const auto& surface : scene.surfaces) {
    if (auto hit = intersect_box(origin, dir, surface.box); hit && hit->first < best.t) {
      best = {hit->first, hit->second, surface.albedo, kBackground};
    }
  }
  for (const auto& object : scene.objects) {
    std::optional<std::pair<double, Vec3>> hit;
    if (object.shape == Shape::kBox) {
      hit = intersect_box(origin, dir, object.bounds());
    } else {
      hit = intersect_sphere(origin, dir, object.center, object.size / 2.0);
    }
    if (hit && hit->first < best.t) best = {hit->first, hit->second, object.albedo, object.instance_id};
  }
  return best;
}

Vec3 hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Vec3 rgb;
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  return rgb.array() + (v - c);
}

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 json_vec(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

Aabb SceneObject::bounds() const {
  const Vec3 half = Vec3::Constant(size / 2.0);
  return {center - half, center + half};
}

void SceneDescription::validate() const {
  std::set<InstanceId> ids;
  for (const auto& object : objects) {
    require(object.instance_id > 0, "scene: instance ids must be positive");
    require(ids.insert(object.instance_id).second, "scene: duplicate instance id");
    const Aabb b = object.bounds();
    require(room_bounds.contains(b.min) && room_bounds.contains(b.max), "scene: object outside room");
  }
  for (std::size_t i = 0; i < objects.size(); ++i)
    for (std::size_t j = i + 1; j < objects.size(); ++j)
      require(!objects[i].bounds().intersects(objects[j].bounds()), "scene: objects intersect");
}

const SceneObject& SceneDescription::object(InstanceId id) const {
  for (const auto& o : objects)
    if (o.instance_id == id) return o;
  fail(ErrorCode::kNotFound, "scene object " + std::to_string(id));
}

void RgbdFrame::validate() const {
  intrinsics.validate();
  pose.validate();
  require(rgb.width == intrinsics.width && rgb.height == intrinsics.height, "frame: rgb size != intrinsics");
  require(depth.size() == static_cast<std::size_t>(rgb.width) * rgb.height, "frame: depth size mismatch");
  for (float d : depth) require(std::isfinite(d) && d >= 0.0F, "frame: depth must be finite and >= 0");
}

void DegradationSpec::validate() const {
  require(blur_sigma >= 0.0, "degradation: blur sigma must be >= 0");
  require(blur_kernel >= 1 && blur_kernel % 2 == 1, "degradation: blur kernel must be odd");
  require(downsample_factor >= 1, "degradation: factor must be >= 1");
  require(noise_sigma >= 0.0, "degradation: noise sigma must be >= 0");
}

SceneDescription generate_scene(std::uint64_t seed, int n_instances) {
  require(n_instances >= 1, "generate_scene: n_instances must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SceneDescription scene;
  scene.seed = seed;
  scene.room_bounds = {{-3.0, -3.0, 0.0}, {3.0, 3.0, 2.5}};

  const double scale = std::max(1.0, std::sqrt(n_instances / 12.0));
  const double half_w = std::min(1.4 * scale, 2.4);
  const double half_d = std::min(0.9 * scale, 2.4);
  const double top = 0.499;  // just under a 5 cm voxel boundary
  scene.surfaces.push_back({{{-half_w, -half_d, 0.0}, {half_w, half_d, top}}, {0.55, 0.4, 0.25}});

  constexpr double kGap = 0.15;
  for (int i = 0; i < n_instances; ++i) {
    SceneObject object;
    object.instance_id = static_cast<InstanceId>(i + 1);
    object.shape = unit(rng) < 0.5 ? Shape::kBox : Shape::kSphere;
    object.size = 0.18 + 0.12 * unit(rng);
    object.albedo = hsv_to_rgb(unit(rng), 0.35 + 0.55 * unit(rng), 0.5 + 0.45 * unit(rng));
    bool placed = false;
    for (int attempt = 0; attempt < 20000 && !placed; ++attempt) {
      const double margin = object.size / 2.0 + 0.03;
      object.center = {-half_w + margin + (2 * (half_w - margin)) * unit(rng),
                       -half_d + margin + (2 * (half_d - margin)) * unit(rng), top + object.size / 2.0};
      Aabb mine = object.bounds();
      mine.min.array() -= kGap;
      mine.max.array() += kGap;
      placed = std::none_of(scene.objects.begin(), scene.objects.end(),
                            [&](const SceneObject& other) { return mine.intersects(other.bounds()); });
    }
    if (!placed) fail(ErrorCode::kInvalidArgument, "generate_scene: table too crowded for requested instances");
    scene.objects.push_back(object);
  }
  scene.validate();
  return scene;
}

std::vector<TimedPose> orbit_trajectory(const OrbitSpec& spec) {
  require(spec.frames >= 1, "orbit: frames must be >= 1");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::vector<TimedPose> poses;
  poses.reserve(spec.frames);
  for (int i = 0; i < spec.frames; ++i) {
    const double angle = 2.0 * std::numbers::pi * i / spec.frames;
    Vec3 eye{spec.center.x() + spec.radius * std::cos(angle), spec.center.y() + spec.radius * std::sin(angle),
             spec.height};
    eye += spec.position_jitter * Vec3(jitter(rng), jitter(rng), jitter(rng));
    Vec3 target = spec.center + spec.target_jitter * Vec3(jitter(rng), jitter(rng), 0.5 * jitter(rng));
    poses.push_back({spec.duration_s * i / spec.frames, look_at(eye, target)});
  }
  return poses;
}

std::vector<CameraPose> close_up_poses(const SceneDescription& scene, InstanceId id, int count, std::uint64_t seed) {
  const SceneObject& object = scene.object(id);
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * id));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<CameraPose> poses;
  for (int attempt = 0; static_cast<int>(poses.size()) < count; ++attempt) {
    if (attempt > 100000) fail(ErrorCode::kInvalidArgument, "close_up_poses: no free viewpoint");
    const double azimuth = 2.0 * std::numbers::pi * unit(rng);
    const double distance = object.size + 0.5 + 0.3 * unit(rng);
    const double rise = 0.15 + 0.35 * unit(rng);
    const Vec3 eye = object.center + Vec3(distance * std::cos(azimuth), distance * std::sin(azimuth), rise);
    auto blocked = [&](const Aabb& box) {
      Aabb grown = box;
      grown.min.array() -= 0.05;
      grown.max.array() += 0.05;
      return grown.contains(eye);
    };
    if (std::any_of(scene.objects.begin(), scene.objects.end(), [&](const auto& o) { return blocked(o.bounds()); }))
      continue;
    if (std::any_of(scene.surfaces.begin(), scene.surfaces.end(), [&](const auto& s) { return blocked(s.box); }))
      continue;
    const Vec3 target = object.center + 0.02 * Vec3(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
    poses.push_back(look_at(eye, target));
  }
  return poses;
}

CameraIntrinsics default_intrinsics() { return {150.0, 150.0, 80.0, 60.0, 160, 120}; }

RenderedFrame render_frame(const SceneDescription& scene, const CameraPose& pose, const CameraIntrinsics& intrinsics,
                           double timestamp) {
  intrinsics.validate();
  pose.validate();
  const Vec3 light = Vec3(0.4, 0.3, 0.85).normalized();
  RenderedFrame out;
  RgbdFrame& frame = out.frame;
  frame.rgb = RgbImage(intrinsics.width, intrinsics.height);
  frame.depth.assign(static_cast<std::size_t>(intrinsics.width) * intrinsics.height, 0.0F);
  frame.pose = pose;
  frame.intrinsics = intrinsics;
  frame.timestamp = timestamp;
  out.ground_truth = SegmentMask(intrinsics.width, intrinsics.height);

  for (int v = 0; v < intrinsics.height; ++v) {
    for (int u = 0; u < intrinsics.width; ++u) {
      // Camera-frame z of the direction is 1, so the hit parameter is the depth.
      const Vec3 dir = pose.direction_to_world(intrinsics.pixel_ray(u, v));
      const Hit hit = trace(scene, pose.position, dir);
      if (!std::isfinite(hit.t)) continue;
      frame.depth[static_cast<std::size_t>(v) * intrinsics.width + u] = static_cast<float>(hit.t);
      out.ground_truth.at(u, v) = hit.id;
      const double shade = 0.35 + 0.65 * std::max(0.0, hit.normal.dot(light));
      for (int c = 0; c < 3; ++c) {
        frame.rgb.at(u, v, c) = static_cast<std::uint8_t>(std::clamp(std::round(255.0 * hit.albedo[c] * shade), 0.0, 255.0));
      }
    }
  }
  return out;
}

std::vector<RenderedFrame> render_sequence(const SceneDescription& scene, const std::vector<TimedPose>& trajectory,
                                           const CameraIntrinsics& intrinsics) {
  require(!trajectory.empty(), "render_sequence: empty trajectory");
  std::vector<RenderedFrame> frames;
  frames.reserve(trajectory.size());
  for (const auto& [t, pose] : trajectory) frames.push_back(render_frame(scene, pose, intrinsics, t));
  return frames;
}

RgbImage degrade(const RgbImage& image, const DegradationSpec& spec) {
  require(!image.empty(), "degrade: empty image");
  spec.validate();
  FloatImage work = to_float(image);
  work = gaussian_blur(work, spec.blur_sigma, spec.blur_kernel);
  if (spec.downsample_factor > 1) {
    work = resize_bilinear(downsample_area(work, spec.downsample_factor), image.width, image.height);
  }
  if (spec.noise_sigma > 0.0) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (double& v : work.data) v += noise(rng);
  }
  return to_bytes(work);
}

void save_scene(const std::filesystem::path& path, const SceneDescription& scene) {
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = scene.seed;
  j["room_bounds"] = {{"min", vec_json(scene.room_bounds.min)}, {"max", vec_json(scene.room_bounds.max)}};
  for (const auto& s : scene.surfaces)
    j["surfaces"].push_back({{"min", vec_json(s.box.min)}, {"max", vec_json(s.box.max)}, {"albedo", vec_json(s.albedo)}});
  j["objects"] = nlohmann::json::array();
  for (const auto& o : scene.objects) {
    j["objects"].push_back({{"instance_id", o.instance_id},
                            {"shape", o.shape == Shape::kBox ? "box" : "sphere"},
                            {"center", vec_json(o.center)},
                            {"size", o.size},
                            {"albedo", vec_json(o.albedo)}});
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write scene " + path.string());
  out << j.dump(2) << '\n';
}

SceneDescription load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "scene file " + path.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("version").get<int>() != 1) fail(ErrorCode::kFormat, "unsupported scene version");
    SceneDescription scene;
    scene.seed = j.at("seed").get<std::uint64_t>();
    scene.room_bounds = {json_vec(j.at("room_bounds").at("min")), json_vec(j.at("room_bounds").at("max"))};
    if (j.contains("surfaces"))
      for (const auto& s : j.at("surfaces"))
        scene.surfaces.push_back({{json_vec(s.at("min")), json_vec(s.at("max"))}, json_vec(s.at("albedo"))});
    for (const auto& o : j.at("objects")) {
      SceneObject object;
      object.instance_id = o.at("instance_id").get<InstanceId>();
      const auto shape = o.at("shape").get<std::string>();
      if (shape != "box" && shape != "sphere") fail(ErrorCode::kFormat, "unknown shape " + shape);
      object.shape = shape == "box" ? Shape::kBox : Shape::kSphere;
      object.center = json_vec(o.at("center"));
      object.size = o.at("size").get<double>();
      object.albedo = json_vec(o.at("albedo"));
      scene.objects.push_back(object);
    }
    scene.validate();
    return scene;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
}

}  // namespace crossia::world
