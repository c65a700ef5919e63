#include "crossia/image_db.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "crossia/digest.hpp"
#include "crossia/errors.hpp"

namespace crossia::db {
namespace fs = std::filesystem;

std::string to_string(Domain domain) { return domain == Domain::kLow ? "low" : "high"; }

std::size_t InstanceRecord::count(Domain domain) const {
  return static_cast<std::size_t>(
      std::count_if(crops.begin(), crops.end(), [&](const CropRecord& c) { return c.domain == domain; }));
}

const InstanceRecord& ObjectImageDatabase::instance(InstanceId id) const {
  const auto it = instances.find(id);
  if (it == instances.end()) fail(ErrorCode::kNotFound, "instance " + std::to_string(id) + " not in database");
  return it->second;
}

std::size_t ObjectImageDatabase::count(Domain domain) const {
  std::size_t n = 0;
  for (const auto& [id, inst] : instances) n += inst.count(domain);
  return n;
}

std::string ObjectImageDatabase::digest() const {
  std::string text;
  for (const auto& [id, inst] : instances) {
    text += std::to_string(id) + ";";
    for (const auto& c : inst.crops) text += c.path + "=" + c.digest + ";";
  }
  return sha256_hex(text);
}

void ObjectImageDatabase::validate() const {
  for (const auto& [id, inst] : instances) {
    for (const auto& c : inst.crops) {
      require(c.instance_id == id, "database: crop filed under the wrong instance");
      if (c.domain == Domain::kHigh) {
        require(!c.source_frame && !c.bbox && c.shot_index, "database: high-quality record has frame data");
      } else {
        require(c.source_frame && c.bbox && !c.shot_index, "database: low-quality record lacks frame data");
      }
    }
  }
}

mapping::VoxelSemanticMap build_map(std::span<const world::RgbdFrame> frames, std::span<const SegmentMask> ground_truth,
                                    const perception::SegmenterHandle& segmenter,
                                    const perception::DeblurrerHandle& deblurrer,
                                    const mapping::MappingConfig& config) {
  require(!frames.empty(), "build_map: empty frame list");
  require(ground_truth.empty() || ground_truth.size() == frames.size(), "build_map: ground-truth count mismatch");
  config.validate();
  mapping::VoxelSemanticMap map(config.voxel_size);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& frame = frames[i];
    const RgbImage rgb = deblurrer.deblur(frame.rgb);
    const SegmentMask traced = mapping::RaycastIndex(map).trace(frame.pose, frame.intrinsics, config.max_ray_range);
    const SegmentMask fresh = segmenter.segment(rgb, ground_truth.empty() ? nullptr : &ground_truth[i]);
    const SegmentMask global = mapping::associate_labels(map, fresh, traced, config);
    mapping::integrate_frame(map, frame, global, config);
  }
  return map;
}

ObjectImageDatabase collect_database(std::span<const world::RgbdFrame> frames, const mapping::VoxelSemanticMap& map,
                                     const perception::DeblurrerHandle& deblurrer, const CollectionConfig& config) {
  require(!frames.empty(), "collect_database: empty frame list");
  config.mapping.validate();
  const mapping::RaycastIndex index(map);
  ObjectImageDatabase db;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& frame = frames[f];
    const RgbImage rgb = deblurrer.deblur(frame.rgb);
    const SegmentMask traced = index.trace(frame.pose, frame.intrinsics, config.mapping.max_ray_range);
    std::map<InstanceId, int> per_instance;
    for (const BBox& box : mapping::mask_to_bboxes(traced, config.mapping.min_bbox_size)) {
      const int k = per_instance[box.instance_id]++;
      CropRecord record;
      record.instance_id = box.instance_id;
      record.domain = Domain::kLow;
      record.source_frame = static_cast<int>(f);
      record.bbox = box;
      record.image = crop(rgb, box.x_min, box.y_min, box.x_max, box.y_max);
      record.digest = image_digest(record.image);
      record.path = "crops/" + std::to_string(box.instance_id) + "/" + std::to_string(f) + "_" + std::to_string(k) + ".png";
      db.instances[box.instance_id].crops.push_back(std::move(record));
    }
  }
  for (auto& [id, inst] : db.instances) inst.centroid = mapping::instance_centroid(map, id);
  db.creation_config = {{"voxel_size", config.mapping.voxel_size},
                        {"min_bbox_size", config.mapping.min_bbox_size},
                        {"deblur", perception::to_string(deblurrer.kind())},
                        {"frames", frames.size()}};
  return db;
}

void add_user_images(ObjectImageDatabase& db, InstanceId id, std::span<const RgbImage> images, int shots) {
  const auto it = db.instances.find(id);
  if (it == db.instances.end()) fail(ErrorCode::kNotFound, "instance " + std::to_string(id) + " not in database");
  require(shots >= 1 && static_cast<std::size_t>(shots) <= images.size(),
          "add_user_images: shots must be in [1, " + std::to_string(images.size()) + "]");
  auto& crops = it->second.crops;
  std::erase_if(crops, [](const CropRecord& c) { return c.domain == Domain::kHigh; });
  for (int s = 0; s < shots; ++s) {
    require(!images[s].empty(), "add_user_images: empty image");
    CropRecord record;
    record.instance_id = id;
    record.domain = Domain::kHigh;
    record.shot_index = s;
    record.image = images[s];
    record.digest = image_digest(record.image);
    record.path = "user/" + std::to_string(id) + "/" + std::to_string(s) + ".png";
    crops.push_back(std::move(record));
  }
}

ObjectImageDatabase with_shots(const ObjectImageDatabase& db, int shots) {
  require(shots >= 1, "with_shots: shots must be >= 1");
  ObjectImageDatabase out = db;
  for (auto& [id, inst] : out.instances) {
    const std::size_t have = inst.count(Domain::kHigh);
    if (have == 0) continue;
    if (have < static_cast<std::size_t>(shots)) {
      fail(ErrorCode::kInvalidArgument, "instance " + std::to_string(id) + " holds " + std::to_string(have) +
                                            " high-quality images, " + std::to_string(shots) + " requested");
    }
    std::erase_if(inst.crops, [&](const CropRecord& c) { return c.domain == Domain::kHigh && *c.shot_index >= shots; });
  }
  return out;
}

ObjectImageDatabase without_high_quality(const ObjectImageDatabase& db) {
  ObjectImageDatabase out = db;
  for (auto& [id, inst] : out.instances)
    std::erase_if(inst.crops, [](const CropRecord& c) { return c.domain == Domain::kHigh; });
  return out;
}

void save_database(const ObjectImageDatabase& db, const fs::path& root) {
  db.validate();
  fs::create_directories(root);
  nlohmann::json manifest;
  manifest["schema_version"] = kManifestVersion;
  manifest["map_reference"] = db.map_reference;
  manifest["creation_config"] = db.creation_config;
  manifest["instances"] = nlohmann::json::array();
  for (const auto& [id, inst] : db.instances) {
    nlohmann::json entry{{"id", id}, {"centroid", {inst.centroid.x(), inst.centroid.y(), inst.centroid.z()}}};
    entry["crops"] = nlohmann::json::array();
    for (const auto& c : inst.crops) {
      const fs::path file = root / c.path;
      fs::create_directories(file.parent_path());
      write_png(file, c.image);
      nlohmann::json crop{{"path", c.path}, {"domain", to_string(c.domain)}, {"digest", c.digest}};
      if (c.source_frame) crop["source_frame"] = *c.source_frame;
      if (c.bbox) crop["bbox"] = {c.bbox->x_min, c.bbox->y_min, c.bbox->x_max, c.bbox->y_max};
      if (c.shot_index) crop["shot_index"] = *c.shot_index;
      entry["crops"].push_back(std::move(crop));
    }
    manifest["instances"].push_back(std::move(entry));
  }
  std::ofstream out(root / "manifest.json");
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write manifest under " + root.string());
  out << manifest.dump(2) << '\n';
}

ObjectImageDatabase load_database(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorCode::kNotFound, "manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, manifest_path.string() + ": " + e.what());
  }
  const int version = manifest.value("schema_version", -1);
  if (version != kManifestVersion) {
    fail(ErrorCode::kFormat, manifest_path.string() + ": unsupported schema_version " + std::to_string(version));
  }
  ObjectImageDatabase db;
  try {
    db.map_reference = manifest.at("map_reference").get<std::string>();
    db.creation_config = manifest.at("creation_config");
    for (const auto& entry : manifest.at("instances")) {
      const auto id = entry.at("id").get<InstanceId>();
      InstanceRecord& inst = db.instances[id];
      const auto& c = entry.at("centroid");
      inst.centroid = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
      for (const auto& crop : entry.at("crops")) {
        CropRecord record;
        record.instance_id = id;
        record.path = crop.at("path").get<std::string>();
        const auto domain = crop.at("domain").get<std::string>();
        if (domain != "low" && domain != "high") fail(ErrorCode::kFormat, "unknown domain '" + domain + "'");
        record.domain = domain == "low" ? Domain::kLow : Domain::kHigh;
        record.digest = crop.at("digest").get<std::string>();
        if (crop.contains("source_frame")) record.source_frame = crop.at("source_frame").get<int>();
        if (crop.contains("bbox")) {
          const auto& b = crop.at("bbox");
          record.bbox = BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>(), id};
        }
        if (crop.contains("shot_index")) record.shot_index = crop.at("shot_index").get<int>();
        const fs::path file = root / record.path;
        if (!fs::exists(file)) fail(ErrorCode::kIntegrity, "missing crop file " + file.string());
        record.image = read_png_rgb(file);
        if (image_digest(record.image) != record.digest)
          fail(ErrorCode::kIntegrity, "digest mismatch for " + file.string());
        inst.crops.push_back(std::move(record));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, manifest_path.string() + ": " + e.what());
  }
  db.validate();
  return db;
}

}  // namespace crossia::db
