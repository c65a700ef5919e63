#include <doctest.h>

#include <cmath>
#include <fstream>
#include <filesystem>
#include <limits>

#include "crossia/errors.hpp"
#include "crossia/semantic_map.hpp"
#include "oracles.hpp"

using namespace crossia;
using namespace crossia::mapping;

namespace {

world::RgbdFrame single_pixel_frame(double depth) {
  world::RgbdFrame f;
  f.intrinsics = {100.0, 100.0, 32.0, 32.0, 64, 64};
  f.rgb = RgbImage(64, 64);
  f.depth.assign(64 * 64, 0.0F);
  f.depth[32 * 64 + 32] = static_cast<float>(depth);
  return f;
}

// First voxel entered along the ray, by slab intersection against every
// occupied cell. Returns nullopt when two cells are entered at nearly the
// same t (the answer then depends on boundary conventions).
std::optional<InstanceId> slab_first_hit(const VoxelSemanticMap& map, const Vec3& o, const Vec3& d, double max_t) {
  double best = std::numeric_limits<double>::infinity(), second = best;
  InstanceId id = 0;
  for (const auto& [idx, cell] : map.cells()) {
    const Vec3 lo = map.origin() + map.voxel_size() * Vec3(idx.i, idx.j, idx.k);
    const Vec3 hi = lo + Vec3::Constant(map.voxel_size());
    double t0 = 0.0, t1 = max_t;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (d[a] == 0.0) {
        miss = o[a] < lo[a] || o[a] > hi[a];
        continue;
      }
      double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    if (miss || t0 > t1) continue;
    if (t0 < best) {
      second = best;
      best = t0;
      id = oracle::effective_id(cell);
    } else if (t0 < second) {
      second = t0;
    }
  }
  if (!std::isfinite(best)) return InstanceId{0};
  if (second - best < 1e-9) return std::nullopt;
  return id;
}

}  // namespace

TEST_CASE("integrate_frame back-projects through the pinhole") {
  VoxelSemanticMap map(0.05);
  auto frame = single_pixel_frame(1.0);
  SegmentMask mask(64, 64);
  mask.at(32, 32) = 3;
  integrate_frame(map, frame, mask);
  REQUIRE(map.size() == 1);
  const VoxelCell* cell = map.find(map.index_of({0.0, 0.0, 1.0}));
  REQUIRE(cell);
  CHECK(cell->votes == std::vector<std::pair<InstanceId, std::uint32_t>>{{3, 1}});

  VoxelSemanticMap empty(0.05);
  integrate_frame(empty, single_pixel_frame(0.0), mask);
  CHECK(empty.empty());

  SegmentMask wrong(10, 10);
  CHECK_THROWS_AS(integrate_frame(map, frame, wrong), Error);
}

TEST_CASE("vote monotonicity under repeated integration") {
  oracle::Rng rng(21);
  VoxelSemanticMap map(0.05);
  auto frame = single_pixel_frame(1.0);
  for (int v = 0; v < 64; ++v)
    for (int u = 0; u < 64; ++u) frame.depth[v * 64 + u] = static_cast<float>(rng.uniform(0.0, 3.0));
  for (int round = 0; round < 5; ++round) {
    const auto before = map.cells();
    SegmentMask mask(64, 64);
    for (auto& id : mask.ids) id = static_cast<InstanceId>(rng.integer(0, 4));
    integrate_frame(map, frame, mask);
    for (const auto& [idx, cell] : before) {
      const VoxelCell* now = map.find(idx);
      REQUIRE(now);
      for (const auto& [id, count] : cell.votes) CHECK(now->count(id) >= count);
    }
    for (const auto& [idx, cell] : map.cells())
      for (const auto& [id, count] : cell.votes) CHECK(count >= 1);
  }
}

TEST_CASE("effective id is the argmax with earliest-assigned ties") {
  VoxelCell c;
  c.votes = {{3, 2}, {5, 1}};
  CHECK(c.effective_id() == 3);
  c.votes = {{5, 2}, {3, 2}};
  CHECK(c.effective_id() == 5);
  c.votes = {{0, 1}, {4, 3}};
  CHECK(c.effective_id() == 4);
  oracle::Rng rng(22);
  for (int n = 0; n < 200; ++n) {
    VoxelCell r;
    for (int k = rng.integer(1, 5); k > 0; --k) r.votes.emplace_back(rng.integer(0, 9), rng.integer(1, 4));
    CHECK(r.effective_id() == oracle::effective_id(r));
  }
}

TEST_CASE("associate_labels rules") {
  VoxelSemanticMap map(0.05);
  map.set_next_id(10);
  SegmentMask fresh(10, 10), traced(10, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) {
      if (x < 5) fresh.at(x, y) = 1;             // 50 px
      if (x < 4) traced.at(x, y) = 3;            // IoU 40/50 = 0.8
      if (x >= 8 && y < 1) fresh.at(x, y) = 2;   // 2 px
      if (x >= 6 && y >= 1) traced.at(x, y) = 4;
    }
  // Segment 2 overlaps nothing traced; give it an overlap below threshold.
  traced.at(8, 0) = 4;  // IoU 1 / (2 + 37 - 1) < 0.25
  const auto out = associate_labels(map, fresh, traced);
  CHECK(out.at(0, 0) == 3);
  CHECK(out.at(9, 0) == 10);
  CHECK(map.next_id() == 11);

  VoxelSemanticMap cold(0.05);
  const auto fresh_only = associate_labels(cold, fresh, SegmentMask(10, 10));
  CHECK(fresh_only.at(0, 0) == 1);
  CHECK(fresh_only.at(9, 0) == 2);
  CHECK_THROWS_AS(associate_labels(cold, fresh, SegmentMask(3, 3)), Error);
}

TEST_CASE("raytrace of a single voxel projects to a pinhole block") {
  VoxelSemanticMap map(0.1, Vec3(-0.05, -0.05, -0.05));
  map.add_vote({0, 0, 10}, 5);
  CHECK(map.center_of({0, 0, 10}).isApprox(Vec3(0, 0, 1.0), 1e-12));
  const CameraIntrinsics cam{100.0, 100.0, 32.0, 32.0, 64, 64};
  const auto mask = raytrace_mask(map, CameraPose{}, cam);
  int min_u = 64, max_u = -1, min_v = 64, max_v = -1;
  for (int v = 0; v < 64; ++v)
    for (int u = 0; u < 64; ++u)
      if (mask.at(u, v) == 5) {
        min_u = std::min(min_u, u);
        max_u = std::max(max_u, u);
        min_v = std::min(min_v, v);
        max_v = std::max(max_v, v);
      }
  // Front face at z = 0.95 spans fx * 0.1 / 0.95 px around the principal point.
  const double expected = 100.0 * 0.1 / 0.95;
  CHECK(std::abs((max_u - min_u + 1) - expected) <= 1.0);
  CHECK(std::abs((max_v - min_v + 1) - expected) <= 1.0);
  CHECK(std::abs(0.5 * (min_u + max_u) - 32.0) <= 1.0);

  for (InstanceId id : raytrace_mask(VoxelSemanticMap(0.05), CameraPose{}, cam).ids) CHECK(id == 0);
}

TEST_CASE("ray traversal matches a slab-intersection oracle and re-casting") {
  oracle::Rng rng(23);
  const CameraIntrinsics cam{40.0, 40.0, 16.0, 12.0, 32, 24};
  int compared = 0;
  for (int n = 0; n < 30; ++n) {
    VoxelSemanticMap map(rng.coin() ? 0.05 : 0.1, Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.0));
    for (int v = rng.integer(1, 40); v > 0; --v)
      map.add_vote({rng.integer(-6, 6), rng.integer(-6, 6), rng.integer(5, 20)},
                   static_cast<InstanceId>(rng.integer(0, 5)));
    const CameraPose pose = look_at(Vec3(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.0),
                                    Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 1.2));
    const auto mask = raytrace_mask(map, pose, cam, 5.0);
    for (int v = 0; v < cam.height; ++v)
      for (int u = 0; u < cam.width; ++u) {
        const Vec3 dir = pose.direction_to_world(cam.pixel_ray(u, v));
        if (mask.at(u, v) != 0) {
          const auto hit = map.first_hit(pose.position, dir, 5.0);
          REQUIRE(hit);
          CHECK(hit->id == mask.at(u, v));
          CHECK(map.find(hit->index)->effective_id() == mask.at(u, v));
        }
        const auto expected = slab_first_hit(map, pose.position, dir, 5.0);
        if (!expected) continue;
        ++compared;
        const auto hit = map.first_hit(pose.position, dir, 5.0);
        CHECK((hit ? hit->id : 0) == *expected);
        CHECK(mask.at(u, v) == *expected);
      }
  }
  CHECK(compared > 10000);
}

TEST_CASE("mask_to_bboxes") {
  SegmentMask m(60, 60);
  for (int y = 2; y <= 4; ++y)
    for (int x = 3; x <= 7; ++x) m.at(x, y) = 5;
  CHECK(mask_to_bboxes(m, 1) == std::vector<BBox>{{3, 2, 7, 4, 5}});
  CHECK(mask_to_bboxes(SegmentMask(8, 8), 1).empty());
  SegmentMask u(60, 60);
  u.at(0, 0) = 5;
  u.at(50, 50) = 5;
  CHECK(mask_to_bboxes(u, 10) == std::vector<BBox>{{0, 0, 50, 50, 5}});
  SegmentMask small(20, 20);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) small.at(x, y) = 2;
  CHECK(mask_to_bboxes(small, 10).empty());

  oracle::Rng rng(24);
  for (int n = 0; n < 50; ++n) {
    SegmentMask r(rng.integer(1, 30), rng.integer(1, 30));
    for (auto& id : r.ids) id = rng.coin(0.2) ? static_cast<InstanceId>(rng.integer(1, 4)) : 0;
    for (const auto& b : mask_to_bboxes(r, 1)) {
      CHECK(b.x_min <= b.x_max);
      CHECK(b.y_min <= b.y_max);
      CHECK(b.x_min >= 0);
      CHECK(b.y_max < r.height);
      CHECK(b.x_max < r.width);
    }
  }
}

TEST_CASE("instance_centroid") {
  VoxelSemanticMap map(0.1);
  map.add_vote({0, 0, 0}, 4);
  map.add_vote({2, 0, 0}, 4);
  const Vec3 c = instance_centroid(map, 4);
  CHECK(c.x() == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(c.y() == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(c.z() == doctest::Approx(0.05).epsilon(1e-12));
  VoxelSemanticMap one(0.1);
  one.add_vote({3, -2, 7}, 2);
  CHECK(instance_centroid(one, 2) == one.center_of({3, -2, 7}));
  CHECK_THROWS_AS(instance_centroid(one, 9), Error);

  oracle::Rng rng(25);
  for (int n = 0; n < 50; ++n) {
    const auto m = oracle::random_map(rng);
    CHECK((instance_centroid(m, 7) - oracle::centroid(m, 7)).norm() <= 1e-9);
  }
}

TEST_CASE("resolve_nav_goal spec cases") {
  MappingConfig cfg;
  VoxelSemanticMap map(0.1);
  map.add_vote({0, 0, 5}, 4);  // centroid (0.05, 0.05, 0.55): its column is blocked by itself
  SUBCASE("blocked centroid column, nearest free cell") {
    const auto goal = resolve_nav_goal(map, 4, cfg);
    const auto expect = oracle::nearest_free_cell(map, 4, cfg);
    REQUIRE(expect.reachable);
    CHECK(goal.distance_to_centroid == doctest::Approx(0.1));
    CHECK(goal.target.x() == doctest::Approx(0.05 + 0.1 * (expect.i)));
    CHECK(goal.target.y() == doctest::Approx(0.05 + 0.1 * (expect.j)));
  }
  SUBCASE("free centroid column") {
    VoxelSemanticMap low(0.1);
    low.add_vote({0, 0, 0}, 4);  // 0.05 m above floor, below the obstacle band
    const auto goal = resolve_nav_goal(low, 4, cfg);
    CHECK(goal.distance_to_centroid == doctest::Approx(0.0));
  }
  SUBCASE("nearest free cell 0.3 m away") {
    VoxelSemanticMap ring(0.1);
    for (int i = -2; i <= 2; ++i)
      for (int j = -2; j <= 2; ++j) ring.add_vote({i, j, 5}, i == 0 && j == 0 ? 4 : 0);
    const auto goal = resolve_nav_goal(ring, 4, cfg);
    CHECK(goal.distance_to_centroid == doctest::Approx(0.3));
    CHECK(goal.target.x() == doctest::Approx(-0.25));  // lexicographically first of the four
    CHECK(goal.target.y() == doctest::Approx(0.05));
  }
  SUBCASE("unreachable") {
    VoxelSemanticMap full(0.1);
    for (int i = -12; i <= 12; ++i)
      for (int j = -12; j <= 12; ++j) full.add_vote({i, j, 5}, i == 0 && j == 0 ? 4 : 0);
    try {
      resolve_nav_goal(full, 4, cfg);
      FAIL("expected goal-unreachable");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kGoalUnreachable);
    }
  }
}

TEST_CASE("resolve_nav_goal matches the brute-force scan on random maps") {
  oracle::Rng rng(26);
  MappingConfig cfg;
  int reachable = 0, unreachable = 0;
  for (int n = 0; n < 100; ++n) {
    const auto map = oracle::random_map(rng);
    const auto expect = oracle::nearest_free_cell(map, 7, cfg);
    if (!expect.reachable) {
      ++unreachable;
      CHECK_THROWS_AS(resolve_nav_goal(map, 7, cfg), Error);
      continue;
    }
    ++reachable;
    const auto goal = resolve_nav_goal(map, 7, cfg);
    CHECK(map.index_of(goal.target).i == expect.i);
    CHECK(map.index_of(goal.target).j == expect.j);
    CHECK(goal.distance_to_centroid <= 1.0);
    CHECK(goal.distance_to_centroid == doctest::Approx(expect.distance).epsilon(1e-9));
  }
  CHECK(reachable > 0);
}

TEST_CASE("map save/load round-trip and version check") {
  oracle::Rng rng(27);
  const auto map = oracle::random_map(rng);
  const auto dir = std::filesystem::temp_directory_path() / "crossia_map_rt";
  std::filesystem::create_directories(dir);
  map.save(dir / "map.json");
  CHECK(VoxelSemanticMap::load(dir / "map.json") == map);
  {
    std::ofstream(dir / "future.json") << R"({"format":"crossia-voxel-map","version":99,"voxel_size":0.05,
      "origin":[0,0,0],"next_id":1,"cells":[]})";
  }
  try {
    VoxelSemanticMap::load(dir / "future.json");
    FAIL("expected format-error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFormat);
  }
  std::filesystem::remove_all(dir);
}
