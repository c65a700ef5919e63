#include "crossia/geometry.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "crossia/errors.hpp"

namespace crossia {

void CameraIntrinsics::validate() const {
  require(fx > 0.0 && fy > 0.0, "intrinsics: focal lengths must be positive");
  require(width > 0 && height > 0, "intrinsics: image size must be positive");
  require(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height,
          "intrinsics: principal point outside image");
}

void CameraPose::validate() const {
  require(position.allFinite(), "pose: non-finite position");
  require(std::abs(orientation.norm() - 1.0) <= 1e-9, "pose: quaternion not unit norm");
}

CameraPose look_at(const Vec3& eye, const Vec3& target) {
  Vec3 forward = target - eye;
  require(forward.norm() > 1e-12, "look_at: eye and target coincide");
  forward.normalize();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(forward.dot(up)) > 0.999) up = Vec3::UnitY();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Eigen::Matrix3d rotation;
  rotation.col(0) = right;
  rotation.col(1) = down;
  rotation.col(2) = forward;
  CameraPose pose;
  pose.position = eye;
  pose.orientation = Eigen::Quaterniond(rotation).normalized();
  return pose;
}

void write_tum_trajectory(const std::filesystem::path& path, const std::vector<TimedPose>& poses) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write trajectory " + path.string());
  out << "# timestamp tx ty tz qx qy qz qw\n" << std::setprecision(17);
  for (const auto& [t, pose] : poses) {
    const auto& q = pose.orientation;
    out << t << ' ' << pose.position.x() << ' ' << pose.position.y() << ' ' << pose.position.z() << ' '
        << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
}

std::vector<TimedPose> read_tum_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "trajectory file " + path.string());
  std::vector<TimedPose> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    TimedPose tp;
    double qx, qy, qz, qw;
    if (!(fields >> tp.timestamp >> tp.pose.position.x() >> tp.pose.position.y() >> tp.pose.position.z() >>
          qx >> qy >> qz >> qw)) {
      fail(ErrorCode::kFormat, path.string() + ":" + std::to_string(line_no) + ": expected 8 fields");
    }
    tp.pose.orientation = Eigen::Quaterniond(qw, qx, qy, qz);
    // Text round-trip loses the last ulp; renormalise before validating.
    if (std::abs(tp.pose.orientation.norm() - 1.0) < 1e-6) tp.pose.orientation.normalize();
    tp.pose.validate();
    poses.push_back(tp);
  }
  return poses;
}

}  // namespace crossia
