#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossia/perception.hpp"
#include "crossia/semantic_map.hpp"
#include "crossia/synthetic_world.hpp"

namespace crossia::db {

enum class Domain { kLow, kHigh };

std::string to_string(Domain domain);

struct CropRecord {
  InstanceId instance_id = 0;  // pseudo-label
  std::string path;            // relative to the database root
  Domain domain = Domain::kLow;
  std::optional<int> source_frame;  // low-quality only
  std::optional<BBox> bbox;         // low-quality only
  std::optional<int> shot_index;    // high-quality only
  std::string digest;
  RgbImage image;

  friend bool operator==(const CropRecord&, const CropRecord&) = default;
};

struct InstanceRecord {
  Vec3 centroid = Vec3::Zero();
  std::vector<CropRecord> crops;

  std::size_t count(Domain domain) const;
  friend bool operator==(const InstanceRecord&, const InstanceRecord&) = default;
};

struct ObjectImageDatabase {
  std::map<InstanceId, InstanceRecord> instances;
  std::string map_reference;
  nlohmann::json creation_config = nlohmann::json::object();

  const InstanceRecord& instance(InstanceId id) const;
  std::size_t count(Domain domain) const;
  // Stable content digest over ids, centroids and crop digests.
  std::string digest() const;
  void validate() const;
  friend bool operator==(const ObjectImageDatabase&, const ObjectImageDatabase&) = default;
};

struct CollectionConfig {
  mapping::MappingConfig mapping;
  int max_shots = 5;
};

// Runs deblur -> segment -> associate -> integrate over the sequence.
// `ground_truth` is consulted only by the oracle segmenter and may be empty
// otherwise.
mapping::VoxelSemanticMap build_map(std::span<const world::RgbdFrame> frames,
                                    std::span<const SegmentMask> ground_truth,
                                    const perception::SegmenterHandle& segmenter,
                                    const perception::DeblurrerHandle& deblurrer,
                                    const mapping::MappingConfig& config = {});

// Per frame: deblur -> raytrace_mask -> mask_to_bboxes -> crop.
ObjectImageDatabase collect_database(std::span<const world::RgbdFrame> frames, const mapping::VoxelSemanticMap& map,
                                     const perception::DeblurrerHandle& deblurrer,
                                     const CollectionConfig& config = {});

// Replaces the instance's high-quality records with the first `shots` images.
void add_user_images(ObjectImageDatabase& db, InstanceId id, std::span<const RgbImage> images, int shots);

// Copy keeping only the first `shots` high-quality images per instance.
// Instances holding some but fewer than `shots` images are rejected.
ObjectImageDatabase with_shots(const ObjectImageDatabase& db, int shots);
ObjectImageDatabase without_high_quality(const ObjectImageDatabase& db);

inline constexpr int kManifestVersion = 1;

// Layout: <root>/manifest.json, crops/<id>/<frame>_<k>.png, user/<id>/<shot>.png
void save_database(const ObjectImageDatabase& db, const std::filesystem::path& root);
ObjectImageDatabase load_database(const std::filesystem::path& root);

}  // namespace crossia::db
