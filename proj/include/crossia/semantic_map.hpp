#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crossia/geometry.hpp"
#include "crossia/mask.hpp"
#include "crossia/synthetic_world.hpp"

namespace crossia::mapping {

struct VoxelIndex {
  int i = 0;
  int j = 0;
  int k = 0;
  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
  friend auto operator<=>(const VoxelIndex&, const VoxelIndex&) = default;
};

struct VoxelIndexHash {
  std::size_t operator()(const VoxelIndex& v) const noexcept {
    return (static_cast<std::size_t>(static_cast<std::uint32_t>(v.i)) * 73856093U) ^
           (static_cast<std::size_t>(static_cast<std::uint32_t>(v.j)) * 19349663U) ^
           (static_cast<std::size_t>(static_cast<std::uint32_t>(v.k)) * 83492791U);
  }
};

// Vote tallies in first-assignment order. Background surfaces vote for id 0,
// so every observed surface cell is occupied.
struct VoxelCell {
  std::vector<std::pair<InstanceId, std::uint32_t>> votes;

  bool occupied() const { return !votes.empty(); }
  // argmax over votes; ties keep the earliest-assigned id.
  InstanceId effective_id() const;
  std::uint32_t count(InstanceId id) const;
  friend bool operator==(const VoxelCell&, const VoxelCell&) = default;
};

struct MappingConfig {
  double voxel_size = 0.05;
  double min_depth = 0.3;
  double max_depth = 5.0;
  double iou_threshold = 0.25;
  int min_bbox_size = 10;
  double max_ray_range = 5.0;
  double floor_z = 0.0;
  // Occupied voxels whose centre height above the floor falls in
  // (obstacle_min_height, obstacle_max_height] block the floor cell below.
  double obstacle_min_height = 0.1;
  double obstacle_max_height = 2.0;
  double goal_radius = 1.0;

  void validate() const;
};

class VoxelSemanticMap {
 public:
  using CellMap = std::unordered_map<VoxelIndex, VoxelCell, VoxelIndexHash>;

  explicit VoxelSemanticMap(double voxel_size = 0.05, const Vec3& origin = Vec3::Zero());

  double voxel_size() const { return voxel_size_; }
  const Vec3& origin() const { return origin_; }
  const CellMap& cells() const { return cells_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }

  VoxelIndex index_of(const Vec3& point) const;
  Vec3 center_of(const VoxelIndex& index) const;
  const VoxelCell* find(const VoxelIndex& index) const;
  void add_vote(const VoxelIndex& index, InstanceId id, std::uint32_t count = 1);

  // Map-global label allocation used by label association.
  InstanceId allocate_id() { return next_id_++; }
  InstanceId next_id() const { return next_id_; }
  void set_next_id(InstanceId next) { next_id_ = next; }

  // Sorted ids > 0 that are the effective id of at least one cell.
  std::vector<InstanceId> instance_ids() const;

  // Single-ray traversal against the sparse cells (no acceleration grid).
  // `direction` is scaled so that t is the returned distance parameter.
  struct RayHit {
    VoxelIndex index;
    InstanceId id = kBackground;
    double t = 0.0;
  };
  std::optional<RayHit> first_hit(const Vec3& origin, const Vec3& direction, double max_t) const;

  void save(const std::filesystem::path& path) const;
  static VoxelSemanticMap load(const std::filesystem::path& path);

  friend bool operator==(const VoxelSemanticMap&, const VoxelSemanticMap&) = default;

 private:
  double voxel_size_;
  Vec3 origin_;
  InstanceId next_id_ = 1;
  CellMap cells_;
};

// Dense snapshot of effective ids over the occupied bounding box, for
// tracing many rays against a finished map. Read-only after construction.
class RaycastIndex {
 public:
  explicit RaycastIndex(const VoxelSemanticMap& map);

  std::optional<VoxelSemanticMap::RayHit> cast(const Vec3& origin, const Vec3& direction, double max_t) const;
  SegmentMask trace(const CameraPose& pose, const CameraIntrinsics& intrinsics, double max_range) const;

 private:
  std::int32_t lookup(int i, int j, int k) const;

  double voxel_size_;
  Vec3 origin_;
  VoxelIndex lo_{};
  VoxelIndex dims_{};
  std::vector<std::int32_t> ids_;  // -1 = free/unknown
};

struct NavGoal {
  Vec3 target = Vec3::Zero();
  InstanceId instance_id = 0;
  double distance_to_centroid = 0.0;
};

void integrate_frame(VoxelSemanticMap& map, const world::RgbdFrame& frame, const SegmentMask& mask,
                     const MappingConfig& config = {});

// Relabels segmenter-local ids of `fresh` to map-global ids by IoU against
// the ray-traced mask; unmatched segments get newly allocated ids.
SegmentMask associate_labels(VoxelSemanticMap& map, const SegmentMask& fresh, const SegmentMask& traced,
                             const MappingConfig& config = {});

SegmentMask raytrace_mask(const VoxelSemanticMap& map, const CameraPose& pose, const CameraIntrinsics& intrinsics,
                          double max_range = 5.0);

std::vector<BBox> mask_to_bboxes(const SegmentMask& mask, int min_size = 10);

Vec3 instance_centroid(const VoxelSemanticMap& map, InstanceId id);

// Floor columns (i, j) blocked by an occupied voxel inside the obstacle band.
std::vector<std::pair<int, int>> occupied_floor_cells(const VoxelSemanticMap& map, const MappingConfig& config);

NavGoal resolve_nav_goal(const VoxelSemanticMap& map, InstanceId id, const MappingConfig& config = {});

}  // namespace crossia::mapping
