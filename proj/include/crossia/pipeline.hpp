#pragma once
// Synthetic experiment plumbing: a rendered world with robot frames, user
// photos and held-out queries, and the collection stage that turns it into a
// semantic map plus an object image database.

#include <filesystem>
#include <map>
#include <vector>

#include <json.hpp>

#include "crossia/evaluation.hpp"
#include "crossia/image_db.hpp"
#include "crossia/semantic_map.hpp"
#include "crossia/synthetic_world.hpp"

namespace crossia::pipeline {

struct WorldConfig {
  int instances = 12;
  int frames = 100;
  int user_images = 5;
  int queries_per_instance = 8;
  double crop_margin = 0.1;  // fraction of the box added around user/query crops
  world::DegradationSpec degradation;
  CameraIntrinsics intrinsics = world::default_intrinsics();
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static WorldConfig from_json(const nlohmann::json& j, const WorldConfig& defaults);
};

struct SyntheticWorld {
  WorldConfig config;
  world::SceneDescription scene;
  std::vector<TimedPose> trajectory;
  std::vector<world::RgbdFrame> frames;    // degraded RGB, clean depth
  std::vector<SegmentMask> ground_truth;   // per frame, scene instance ids
  std::map<InstanceId, std::vector<RgbImage>> user_images;  // by scene id
  std::vector<eval::Query> queries;        // ground truth = scene id
};

SyntheticWorld generate_world(const WorldConfig& config);

// Tight crop of `id` in a clean close-up render, grown by `margin`.
RgbImage object_photo(const world::SceneDescription& scene, InstanceId id, const CameraPose& pose,
                      const CameraIntrinsics& intrinsics, double margin);

void save_world(const SyntheticWorld& world, const std::filesystem::path& root);
SyntheticWorld load_world(const std::filesystem::path& root);

struct Collection {
  mapping::VoxelSemanticMap map{0.05};
  db::ObjectImageDatabase db;
  std::map<InstanceId, InstanceId> scene_to_map;  // majority traced id per scene object
  std::vector<eval::Query> queries;               // ground truth remapped to map ids
};

// Pixel co-occurrence between traced masks and ground truth: each scene id
// maps to the map id it overlaps most.
std::map<InstanceId, InstanceId> match_instances(const mapping::VoxelSemanticMap& map,
                                                 const std::vector<world::RgbdFrame>& frames,
                                                 const std::vector<SegmentMask>& ground_truth,
                                                 double max_range);

Collection collect(const SyntheticWorld& world, const db::CollectionConfig& config,
                   const perception::SegmenterHandle& segmenter, const perception::DeblurrerHandle& deblurrer);

}  // namespace crossia::pipeline
