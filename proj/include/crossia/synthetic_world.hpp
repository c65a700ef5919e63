#pragma once
// Deterministic table-top scenes, an analytic ray-cast renderer that doubles
// as ground truth for the voxel map, and the degradation model that turns
// clean renders into low-quality robot observations.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "crossia/geometry.hpp"
#include "crossia/image.hpp"
#include "crossia/mask.hpp"

namespace crossia::world {

enum class Shape { kBox, kSphere };

struct SceneObject {
  InstanceId instance_id = 0;
  Shape shape = Shape::kBox;
  Vec3 center = Vec3::Zero();
  double size = 0.0;  // box edge or sphere diameter
  Vec3 albedo = Vec3::Ones();

  Aabb bounds() const;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Surface {
  Aabb box;
  Vec3 albedo = Vec3::Ones();
  friend bool operator==(const Surface&, const Surface&) = default;
};

struct SceneDescription {
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;
  Aabb room_bounds;
  std::vector<Surface> surfaces;  // tables; rendered as background

  void validate() const;
  const SceneObject& object(InstanceId id) const;
  friend bool operator==(const SceneDescription& a, const SceneDescription& b) {
    return a.seed == b.seed && a.objects == b.objects && a.room_bounds.min == b.room_bounds.min &&
           a.room_bounds.max == b.room_bounds.max && a.surfaces == b.surfaces;
  }
};

struct RgbdFrame {
  RgbImage rgb;
  std::vector<float> depth;  // metres along the optical axis, 0 = invalid
  CameraPose pose;
  CameraIntrinsics intrinsics;
  double timestamp = 0.0;

  float depth_at(int x, int y) const { return depth[static_cast<std::size_t>(y) * rgb.width + x]; }
  void validate() const;
};

struct RenderedFrame {
  RgbdFrame frame;
  SegmentMask ground_truth;
};

struct DegradationSpec {
  double blur_sigma = 2.0;
  int blur_kernel = 9;
  int downsample_factor = 4;
  double noise_sigma = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
  static DegradationSpec identity() { return {0.0, 1, 1, 0.0, 0}; }
};

struct OrbitSpec {
  Vec3 center = {0.0, 0.0, 0.55};
  double radius = 2.3;
  double height = 1.7;
  int frames = 100;
  double position_jitter = 0.05;
  double target_jitter = 0.08;
  double duration_s = 120.0;
  std::uint64_t seed = 0;
};

SceneDescription generate_scene(std::uint64_t seed, int n_instances);

std::vector<TimedPose> orbit_trajectory(const OrbitSpec& spec);

// Close-range views of one object, as a user would photograph it.
std::vector<CameraPose> close_up_poses(const SceneDescription& scene, InstanceId id, int count,
                                       std::uint64_t seed);

CameraIntrinsics default_intrinsics();

RenderedFrame render_frame(const SceneDescription& scene, const CameraPose& pose,
                           const CameraIntrinsics& intrinsics, double timestamp = 0.0);
std::vector<RenderedFrame> render_sequence(const SceneDescription& scene, const std::vector<TimedPose>& trajectory,
                                           const CameraIntrinsics& intrinsics);

// blur -> area downsample -> bilinear upsample -> clamped Gaussian noise
RgbImage degrade(const RgbImage& image, const DegradationSpec& spec);

void save_scene(const std::filesystem::path& path, const SceneDescription& scene);
SceneDescription load_scene(const std::filesystem::path& path);

}  // namespace crossia::world
