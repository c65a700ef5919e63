#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <filesystem>
#include <vector>

namespace crossia {

using Vec3 = Eigen::Vector3d;

// Pinhole model, OpenCV convention: x right, y down, z forward.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;
  // Camera-frame direction with z = 1 through the pixel centre (u, v).
  Vec3 pixel_ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }
};

// world-from-camera
struct CameraPose {
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  void validate() const;
  Vec3 to_world(const Vec3& camera_point) const { return orientation * camera_point + position; }
  Vec3 to_camera(const Vec3& world_point) const {
    return orientation.conjugate() * (world_point - position);
  }
  Vec3 direction_to_world(const Vec3& camera_dir) const { return orientation * camera_dir; }
};

// Pose at `eye` looking at `target` with world +z up.
CameraPose look_at(const Vec3& eye, const Vec3& target);

struct TimedPose {
  double timestamp = 0.0;
  CameraPose pose;
};

// TUM convention: `timestamp tx ty tz qx qy qz qw` per line, '#' comments.
void write_tum_trajectory(const std::filesystem::path& path, const std::vector<TimedPose>& poses);
std::vector<TimedPose> read_tum_trajectory(const std::filesystem::path& path);

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  bool intersects(const Aabb& other) const {
    return (min.array() < other.max.array()).all() && (other.min.array() < max.array()).all();
  }
  friend bool operator==(const Aabb& a, const Aabb& b) { return a.min == b.min && a.max == b.max; }
};

}  // namespace crossia
