#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "crossia/errors.hpp"
#include "crossia/synthetic_world.hpp"
#include "oracles.hpp"

using namespace crossia;
using namespace crossia::world;

namespace {

CameraIntrinsics small_camera() { return {100.0, 100.0, 32.0, 32.0, 64, 64}; }

SceneDescription empty_room() {
  SceneDescription s;
  s.room_bounds = {{-2.0, -2.0, -2.0}, {2.0, 2.0, 2.0}};
  return s;
}

}  // namespace

TEST_CASE("generate_scene contract") {
  const auto a = generate_scene(7, 12);
  REQUIRE(a.objects.size() == 12);
  std::set<InstanceId> ids;
  for (const auto& o : a.objects) ids.insert(o.instance_id);
  CHECK(ids == std::set<InstanceId>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  CHECK(a == generate_scene(7, 12));
  CHECK_NOTHROW(a.validate());

  const auto b = generate_scene(8, 12);
  bool differ = false;
  for (std::size_t i = 0; i < 12; ++i) differ |= !a.objects[i].center.isApprox(b.objects[i].center);
  CHECK(differ);

  CHECK_THROWS_AS(generate_scene(1, 0), Error);
  CHECK_THROWS_AS(a.object(99), Error);
}

TEST_CASE("generated scenes satisfy the scene invariants for many seeds") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto s = generate_scene(seed, 1 + static_cast<int>(seed % 16));
    for (const auto& o : s.objects) {
      CHECK(o.instance_id > 0);
      CHECK(s.room_bounds.contains(o.bounds().min));
      CHECK(s.room_bounds.contains(o.bounds().max));
    }
    for (std::size_t i = 0; i < s.objects.size(); ++i)
      for (std::size_t j = i + 1; j < s.objects.size(); ++j)
        CHECK_FALSE(s.objects[i].bounds().intersects(s.objects[j].bounds()));
  }
}

TEST_CASE("box in front of the camera projects to the pinhole width") {
  auto scene = empty_room();
  scene.objects.push_back({1, Shape::kBox, {0.0, 0.0, 1.0}, 0.2, {0.8, 0.2, 0.2}});
  const auto cam = small_camera();
  const auto r = render_frame(scene, CameraPose{}, cam);
  // Front face at z = 0.9, half width 0.1.
  const double half_px = cam.fx * 0.1 / 0.9;
  int count = 0, first = -1, last = -1;
  for (int u = 0; u < cam.width; ++u) {
    if (r.ground_truth.at(u, 32) == 1) {
      ++count;
      if (first < 0) first = u;
      last = u;
    }
  }
  CHECK(std::abs(count - 2.0 * half_px) <= 1.0);
  CHECK(std::abs(0.5 * (first + last + 1) - cam.cx) <= 1.0);
  CHECK(r.frame.depth_at(32, 32) == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("room-only scene renders background and a wall at its analytic depth") {
  const auto r = render_frame(empty_room(), CameraPose{}, small_camera());
  for (InstanceId id : r.ground_truth.ids) CHECK(id == 0);
  CHECK(std::abs(r.frame.depth_at(32, 32) - 2.0) <= 1e-6);
}

TEST_CASE("render_sequence rejects an empty trajectory and matches per-frame rendering") {
  const auto scene = generate_scene(3, 4);
  CHECK_THROWS_AS(render_sequence(scene, {}, default_intrinsics()), Error);
  OrbitSpec orbit;
  orbit.frames = 3;
  const auto traj = orbit_trajectory(orbit);
  const auto frames = render_sequence(scene, traj, default_intrinsics());
  REQUIRE(frames.size() == 3);
  CHECK(frames[1].ground_truth == render_frame(scene, traj[1].pose, default_intrinsics()).ground_truth);
}

TEST_CASE("renderer and ground-truth mask agree on every object pixel") {
  const auto scene = generate_scene(5, 8);
  OrbitSpec orbit;
  orbit.frames = 4;
  for (const auto& [t, pose] : orbit_trajectory(orbit)) {
    const auto r = render_frame(scene, pose, default_intrinsics());
    for (int v = 0; v < r.frame.rgb.height; ++v)
      for (int u = 0; u < r.frame.rgb.width; ++u) {
        const InstanceId id = r.ground_truth.at(u, v);
        if (id == 0) continue;
        CHECK(r.frame.depth_at(u, v) > 0.0F);
        // The back-projected point must lie on the labelled object's bounds.
        const Vec3 p = pose.to_world(default_intrinsics().pixel_ray(u, v) * r.frame.depth_at(u, v));
        Aabb box = scene.object(id).bounds();
        box.min.array() -= 1e-3;
        box.max.array() += 1e-3;
        CHECK(box.contains(p));
      }
  }
}

TEST_CASE("degrade") {
  oracle::Rng rng(4);
  const auto img = oracle::random_image(rng, 40, 30);
  CHECK(degrade(img, DegradationSpec::identity()) == img);

  DegradationSpec spec;
  spec.seed = 9;
  const auto out = degrade(img, spec);
  CHECK(out.width == img.width);
  CHECK(out.height == img.height);
  CHECK(out == degrade(img, spec));
  CHECK(std::isinf(psnr(img, degrade(img, DegradationSpec::identity()))));
  CHECK(psnr(img, out) < 1e9);

  spec.blur_kernel = 4;
  CHECK_THROWS_AS(degrade(img, spec), Error);
  CHECK_THROWS_AS(degrade(RgbImage{}, DegradationSpec::identity()), Error);
}

TEST_CASE("degrade keeps dimensions for random sizes and specs") {
  oracle::Rng rng(5);
  for (int n = 0; n < 20; ++n) {
    const auto img = oracle::random_image(rng, rng.integer(1, 37), rng.integer(1, 29));
    DegradationSpec spec{rng.uniform(0, 3), 2 * rng.integer(0, 4) + 1, rng.integer(1, 5), rng.uniform(0, 8),
                         static_cast<std::uint64_t>(n)};
    const auto out = degrade(img, spec);
    CHECK(out.width == img.width);
    CHECK(out.height == img.height);
  }
}

TEST_CASE("scene and trajectory files round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "crossia_world_rt";
  std::filesystem::create_directories(dir);
  const auto scene = generate_scene(2, 5);
  save_scene(dir / "scene.json", scene);
  CHECK(load_scene(dir / "scene.json") == scene);

  OrbitSpec orbit;
  orbit.frames = 5;
  const auto traj = orbit_trajectory(orbit);
  write_tum_trajectory(dir / "traj.txt", traj);
  const auto back = read_tum_trajectory(dir / "traj.txt");
  REQUIRE(back.size() == traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    CHECK(back[i].timestamp == doctest::Approx(traj[i].timestamp));
    CHECK(back[i].pose.position.isApprox(traj[i].pose.position, 1e-9));
    CHECK(std::abs(back[i].pose.orientation.norm() - 1.0) < 1e-9);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("close-up poses keep their distance from every obstacle") {
  const auto scene = generate_scene(6, 12);
  const auto poses = close_up_poses(scene, 3, 10, 1);
  CHECK(poses.size() == 10);
  const auto again = close_up_poses(scene, 3, 10, 1);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK(poses[i].position == again[i].position);
    CHECK(poses[i].orientation.coeffs() == again[i].orientation.coeffs());
  }
  for (const auto& p : poses)
    for (const auto& o : scene.objects) CHECK_FALSE(o.bounds().contains(p.position));
}
