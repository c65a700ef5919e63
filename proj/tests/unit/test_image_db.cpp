#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "crossia/errors.hpp"
#include "crossia/image_db.hpp"
#include "crossia/pipeline.hpp"
#include "oracles.hpp"

using namespace crossia;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  pipeline::SyntheticWorld world;
  pipeline::Collection collection;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    pipeline::WorldConfig wc;
    wc.instances = 5;
    wc.frames = 30;
    wc.queries_per_instance = 1;
    wc.seed = 4;
    Fixture out{pipeline::generate_world(wc), {}};
    out.collection = pipeline::collect(out.world, {}, perception::SegmenterHandle::oracle(),
                                       perception::DeblurrerHandle::identity());
    return out;
  }();
  return f;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("collected database invariants") {
  const auto& db = fixture().collection.db;
  const auto& map = fixture().collection.map;
  REQUIRE_FALSE(db.instances.empty());
  CHECK_NOTHROW(db.validate());
  const auto map_ids = map.instance_ids();
  for (const auto& [id, inst] : db.instances) {
    CHECK(std::find(map_ids.begin(), map_ids.end(), id) != map_ids.end());
    CHECK(inst.count(db::Domain::kLow) >= 1);
    CHECK(inst.count(db::Domain::kHigh) <= 5);
    CHECK(inst.centroid.isApprox(mapping::instance_centroid(map, id), 1e-12));
    for (const auto& c : inst.crops) {
      CHECK(c.instance_id == id);
      if (c.domain == db::Domain::kLow) {
        REQUIRE(c.bbox);
        CHECK(c.bbox->x_min >= 0);
        CHECK(c.bbox->y_min >= 0);
        CHECK(c.bbox->x_max < fixture().world.config.intrinsics.width);
        CHECK(c.bbox->y_max < fixture().world.config.intrinsics.height);
        CHECK(c.bbox->width() >= 10);
        CHECK(c.bbox->height() >= 10);
      } else {
        CHECK_FALSE(c.source_frame);
        CHECK_FALSE(c.bbox);
      }
    }
  }
}

TEST_CASE("pseudo-labels agree with the renderer's instance ids") {
  const auto& w = fixture().world;
  const auto& c = fixture().collection;
  const mapping::RaycastIndex index(c.map);
  std::size_t agree = 0, total = 0;
  std::map<int, SegmentMask> traced;
  for (const auto& [id, inst] : c.db.instances) {
    for (const auto& crop : inst.crops) {
      if (crop.domain != db::Domain::kLow) continue;
      const int f = *crop.source_frame;
      if (!traced.contains(f)) traced[f] = index.trace(w.frames[f].pose, w.frames[f].intrinsics, 5.0);
      std::map<InstanceId, std::size_t> votes;
      const auto& t = traced[f];
      for (std::size_t p = 0; p < t.ids.size(); ++p)
        if (t.ids[p] == id && w.ground_truth[f].ids[p] != 0) ++votes[w.ground_truth[f].ids[p]];
      InstanceId gt = 0;
      std::size_t best = 0;
      for (const auto& [g, n] : votes)
        if (n > best) {
          best = n;
          gt = g;
        }
      ++total;
      if (gt != 0 && c.scene_to_map.contains(gt) && c.scene_to_map.at(gt) == id) ++agree;
    }
  }
  REQUIRE(total > 0);
  CHECK(static_cast<double>(agree) / total >= 0.95);
}

TEST_CASE("collection is deterministic") {
  const auto again = pipeline::collect(fixture().world, {}, perception::SegmenterHandle::oracle(),
                                       perception::DeblurrerHandle::identity());
  CHECK(again.db == fixture().collection.db);
  CHECK(again.db.digest() == fixture().collection.db.digest());
}

TEST_CASE("empty traced frame contributes no crops") {
  const auto& w = fixture().world;
  const mapping::VoxelSemanticMap empty(0.05);
  const auto db = db::collect_database(std::span(w.frames).first(3), empty, perception::DeblurrerHandle::identity());
  CHECK(db.instances.empty());
  CHECK_THROWS_AS(db::collect_database({}, empty, perception::DeblurrerHandle::identity()), Error);
}

TEST_CASE("add_user_images and with_shots") {
  auto db = fixture().collection.db;
  const InstanceId id = db.instances.begin()->first;
  oracle::Rng rng(41);
  std::vector<RgbImage> photos;
  for (int i = 0; i < 5; ++i) photos.push_back(oracle::random_image(rng, 20, 20));

  db::add_user_images(db, id, photos, 5);
  CHECK(db.instance(id).count(db::Domain::kHigh) == 5);
  db::add_user_images(db, id, photos, 1);
  CHECK(db.instance(id).count(db::Domain::kHigh) == 1);
  int shot = 0;
  db::add_user_images(db, id, photos, 3);
  for (const auto& c : db.instance(id).crops)
    if (c.domain == db::Domain::kHigh) CHECK(*c.shot_index == shot++);
  CHECK(code_of([&] { db::add_user_images(db, id, photos, 0); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { db::add_user_images(db, id, photos, 6); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { db::add_user_images(db, 999, photos, 1); }) == ErrorCode::kNotFound);

  const auto full = fixture().collection.db;
  for (int shots : {1, 3, 5}) {
    const auto view = db::with_shots(full, shots);
    for (const auto& [iid, inst] : view.instances) CHECK(inst.count(db::Domain::kHigh) == static_cast<std::size_t>(shots));
  }
  CHECK(code_of([&] { db::with_shots(db, 5); }) == ErrorCode::kInvalidArgument);  // `id` holds only 3
  const auto simview = db::without_high_quality(full);
  CHECK(simview.count(db::Domain::kHigh) == 0);
  CHECK(simview.count(db::Domain::kLow) == full.count(db::Domain::kLow));
}

TEST_CASE("database save/load round-trip and failure modes") {
  const auto& db = fixture().collection.db;
  const auto root = scratch("crossia_db_rt");
  db::save_database(db, root);
  const auto back = db::load_database(root);
  CHECK(back == db);
  CHECK(back.digest() == db.digest());

  SUBCASE("deleted crop") {
    const auto& crop = db.instances.begin()->second.crops.front();
    fs::remove(root / crop.path);
    CHECK(code_of([&] { db::load_database(root); }) == ErrorCode::kIntegrity);
  }
  SUBCASE("tampered crop") {
    const auto& crop = db.instances.begin()->second.crops.front();
    write_png(root / crop.path, RgbImage(3, 3, 9));
    CHECK(code_of([&] { db::load_database(root); }) == ErrorCode::kIntegrity);
  }
  SUBCASE("future manifest version") {
    nlohmann::json manifest;
    std::ifstream(root / "manifest.json") >> manifest;
    manifest["schema_version"] = db::kManifestVersion + 1;
    std::ofstream(root / "manifest.json") << manifest.dump();
    CHECK(code_of([&] { db::load_database(root); }) == ErrorCode::kFormat);
  }
  fs::remove_all(root);
}
