#include "crossia/semantic_map.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

#include "crossia/errors.hpp"

namespace crossia::mapping {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMapFormatVersion = 1;

// Amanatides & Woo voxel walk from t_start to t_end; `lookup` returns the
// effective id of an occupied cell or -1.
template <typename Lookup>
std::optional<VoxelSemanticMap::RayHit> walk(double voxel_size, const Vec3& grid_origin, const Vec3& origin,
                                             const Vec3& dir, double t_start, double t_end, Lookup&& lookup) {
  if (t_start > t_end) return std::nullopt;
  const Vec3 start = origin + t_start * dir;
  std::array<int, 3> cell{};
  std::array<int, 3> step{};
  std::array<double, 3> t_max{};
  std::array<double, 3> t_delta{};
  for (int a = 0; a < 3; ++a) {
    cell[a] = static_cast<int>(std::floor((start[a] - grid_origin[a]) / voxel_size));
    if (dir[a] > 0.0) {
      step[a] = 1;
      t_max[a] = t_start + ((cell[a] + 1) * voxel_size + grid_origin[a] - start[a]) / dir[a];
      t_delta[a] = voxel_size / dir[a];
    } else if (dir[a] < 0.0) {
      step[a] = -1;
      t_max[a] = t_start + (cell[a] * voxel_size + grid_origin[a] - start[a]) / dir[a];
      t_delta[a] = -voxel_size / dir[a];
    } else {
      step[a] = 0;
      t_max[a] = kInf;
      t_delta[a] = kInf;
    }
  }
  double t = t_start;
  while (t <= t_end) {
    const std::int32_t id = lookup(cell[0], cell[1], cell[2]);
    if (id >= 0) return VoxelSemanticMap::RayHit{{cell[0], cell[1], cell[2]}, static_cast<InstanceId>(id), t};
    const int axis = t_max[0] < t_max[1] ? (t_max[0] < t_max[2] ? 0 : 2) : (t_max[1] < t_max[2] ? 1 : 2);
    t = t_max[axis];
    cell[axis] += step[axis];
    t_max[axis] += t_delta[axis];
  }
  return std::nullopt;
}

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

InstanceId VoxelCell::effective_id() const {
  InstanceId best = kBackground;
  std::uint32_t best_count = 0;
  for (const auto& [id, count] : votes) {
    if (count > best_count) {
      best = id;
      best_count = count;
    }
  }
  return best;
}

std::uint32_t VoxelCell::count(InstanceId id) const {
  for (const auto& [vid, c] : votes)
    if (vid == id) return c;
  return 0;
}

void MappingConfig::validate() const {
  require(voxel_size > 0.0, "mapping: voxel_size must be > 0");
  require(min_depth >= 0.0 && max_depth > min_depth, "mapping: invalid depth range");
  require(iou_threshold > 0.0 && iou_threshold <= 1.0, "mapping: iou_threshold must be in (0, 1]");
  require(min_bbox_size >= 1, "mapping: min_bbox_size must be >= 1");
  require(max_ray_range > 0.0, "mapping: max_ray_range must be > 0");
  require(obstacle_max_height > obstacle_min_height, "mapping: empty obstacle band");
  require(goal_radius > 0.0, "mapping: goal_radius must be > 0");
}

VoxelSemanticMap::VoxelSemanticMap(double voxel_size, const Vec3& origin) : voxel_size_(voxel_size), origin_(origin) {
  require(voxel_size > 0.0, "voxel_size must be > 0");
  require(origin.allFinite(), "map origin must be finite");
}

VoxelIndex VoxelSemanticMap::index_of(const Vec3& point) const {
  const Vec3 g = (point - origin_) / voxel_size_;
  return {static_cast<int>(std::floor(g.x())), static_cast<int>(std::floor(g.y())),
          static_cast<int>(std::floor(g.z()))};
}

Vec3 VoxelSemanticMap::center_of(const VoxelIndex& index) const {
  return origin_ + voxel_size_ * Vec3(index.i + 0.5, index.j + 0.5, index.k + 0.5);
}

const VoxelCell* VoxelSemanticMap::find(const VoxelIndex& index) const {
  const auto it = cells_.find(index);
  return it == cells_.end() ? nullptr : &it->second;
}

void VoxelSemanticMap::add_vote(const VoxelIndex& index, InstanceId id, std::uint32_t count) {
  require(count >= 1, "add_vote: count must be >= 1");
  auto& votes = cells_[index].votes;
  for (auto& [vid, c] : votes) {
    if (vid == id) {
      c += count;
      return;
    }
  }
  votes.emplace_back(id, count);
  if (id >= next_id_) next_id_ = id + 1;
}

std::vector<InstanceId> VoxelSemanticMap::instance_ids() const {
  std::set<InstanceId> ids;
  for (const auto& [index, cell] : cells_) {
    const InstanceId id = cell.effective_id();
    if (id != kBackground) ids.insert(id);
  }
  return {ids.begin(), ids.end()};
}

std::optional<VoxelSemanticMap::RayHit> VoxelSemanticMap::first_hit(const Vec3& origin, const Vec3& direction,
                                                                    double max_t) const {
  return walk(voxel_size_, origin_, origin, direction, 0.0, max_t, [this](int i, int j, int k) -> std::int32_t {
    const VoxelCell* cell = find({i, j, k});
    return cell && cell->occupied() ? static_cast<std::int32_t>(cell->effective_id()) : -1;
  });
}

void VoxelSemanticMap::save(const std::filesystem::path& path) const {
  std::vector<std::pair<VoxelIndex, const VoxelCell*>> sorted;
  sorted.reserve(cells_.size());
  for (const auto& [index, cell] : cells_) sorted.emplace_back(index, &cell);
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  nlohmann::json j;
  j["format"] = "crossia-voxel-map";
  j["version"] = kMapFormatVersion;
  j["voxel_size"] = voxel_size_;
  j["origin"] = vec_json(origin_);
  j["next_id"] = next_id_;
  auto& cells = j["cells"] = nlohmann::json::array();
  for (const auto& [index, cell] : sorted) {
    nlohmann::json votes = nlohmann::json::array();
    for (const auto& [id, count] : cell->votes) votes.push_back({id, count});
    cells.push_back({index.i, index.j, index.k, votes});
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write map " + path.string());
  out << j.dump() << '\n';
}

VoxelSemanticMap VoxelSemanticMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "map file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != "crossia-voxel-map")
      fail(ErrorCode::kFormat, path.string() + ": not a voxel map");
    if (j.at("version").get<int>() != kMapFormatVersion)
      fail(ErrorCode::kFormat, path.string() + ": unsupported map version " + j.at("version").dump());
    const auto& o = j.at("origin");
    VoxelSemanticMap map(j.at("voxel_size").get<double>(),
                         {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()});
    for (const auto& c : j.at("cells")) {
      const VoxelIndex index{c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>()};
      for (const auto& v : c.at(3)) map.add_vote(index, v.at(0).get<InstanceId>(), v.at(1).get<std::uint32_t>());
    }
    map.next_id_ = j.at("next_id").get<InstanceId>();
    return map;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
}

RaycastIndex::RaycastIndex(const VoxelSemanticMap& map) : voxel_size_(map.voxel_size()), origin_(map.origin()) {
  if (map.empty()) return;
  VoxelIndex lo{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
  VoxelIndex hi{std::numeric_limits<int>::min(), std::numeric_limits<int>::min(), std::numeric_limits<int>::min()};
  for (const auto& [index, cell] : map.cells()) {
    lo = {std::min(lo.i, index.i), std::min(lo.j, index.j), std::min(lo.k, index.k)};
    hi = {std::max(hi.i, index.i), std::max(hi.j, index.j), std::max(hi.k, index.k)};
  }
  lo_ = lo;
  dims_ = {hi.i - lo.i + 1, hi.j - lo.j + 1, hi.k - lo.k + 1};
  ids_.assign(static_cast<std::size_t>(dims_.i) * dims_.j * dims_.k, -1);
  for (const auto& [index, cell] : map.cells()) {
    if (!cell.occupied()) continue;
    const std::size_t flat =
        (static_cast<std::size_t>(index.k - lo.k) * dims_.j + (index.j - lo.j)) * dims_.i + (index.i - lo.i);
    ids_[flat] = static_cast<std::int32_t>(cell.effective_id());
  }
}

std::int32_t RaycastIndex::lookup(int i, int j, int k) const {
  const int li = i - lo_.i;
  const int lj = j - lo_.j;
  const int lk = k - lo_.k;
  if (li < 0 || lj < 0 || lk < 0 || li >= dims_.i || lj >= dims_.j || lk >= dims_.k) return -1;
  return ids_[(static_cast<std::size_t>(lk) * dims_.j + lj) * dims_.i + li];
}

std::optional<VoxelSemanticMap::RayHit> RaycastIndex::cast(const Vec3& origin, const Vec3& direction,
                                                           double max_t) const {
  if (ids_.empty()) return std::nullopt;
  // Clip to the occupied bounding box so rays terminate once they leave it.
  const Vec3 box_min = origin_ + voxel_size_ * Vec3(lo_.i, lo_.j, lo_.k);
  const Vec3 box_max = box_min + voxel_size_ * Vec3(dims_.i, dims_.j, dims_.k);
  double t0 = 0.0;
  double t1 = max_t;
  for (int a = 0; a < 3; ++a) {
    if (direction[a] == 0.0) {
      if (origin[a] < box_min[a] || origin[a] > box_max[a]) return std::nullopt;
      continue;
    }
    double ta = (box_min[a] - origin[a]) / direction[a];
    double tb = (box_max[a] - origin[a]) / direction[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;
  return walk(voxel_size_, origin_, origin, direction, t0, t1,
              [this](int i, int j, int k) { return lookup(i, j, k); });
}

SegmentMask RaycastIndex::trace(const CameraPose& pose, const CameraIntrinsics& intrinsics, double max_range) const {
  intrinsics.validate();
  SegmentMask mask(intrinsics.width, intrinsics.height);
  if (ids_.empty()) return mask;
  for (int v = 0; v < intrinsics.height; ++v)
    for (int u = 0; u < intrinsics.width; ++u) {
      // Direction has unit optical-axis component, so t is depth.
      const Vec3 dir = pose.direction_to_world(intrinsics.pixel_ray(u, v));
      if (const auto hit = cast(pose.position, dir, max_range)) mask.at(u, v) = hit->id;
    }
  return mask;
}

void integrate_frame(VoxelSemanticMap& map, const world::RgbdFrame& frame, const SegmentMask& mask,
                     const MappingConfig& config) {
  require(mask.width == frame.rgb.width && mask.height == frame.rgb.height &&
              frame.depth.size() == mask.ids.size(),
          "integrate_frame: mask dimensions do not match frame");
  for (int v = 0; v < mask.height; ++v)
    for (int u = 0; u < mask.width; ++u) {
      const double depth = frame.depth_at(u, v);
      if (!(depth >= config.min_depth && depth <= config.max_depth)) continue;
      const Vec3 world_point = frame.pose.to_world(depth * frame.intrinsics.pixel_ray(u, v));
      map.add_vote(map.index_of(world_point), mask.at(u, v));
    }
}

SegmentMask associate_labels(VoxelSemanticMap& map, const SegmentMask& fresh, const SegmentMask& traced,
                             const MappingConfig& config) {
  require(fresh.width == traced.width && fresh.height == traced.height, "associate_labels: mask size mismatch");
  // Region sizes and pairwise overlaps, ordered for deterministic allocation.
  std::map<InstanceId, std::size_t> fresh_area;
  std::map<InstanceId, std::size_t> traced_area;
  std::map<std::pair<InstanceId, InstanceId>, std::size_t> overlap;
  for (std::size_t p = 0; p < fresh.ids.size(); ++p) {
    const InstanceId f = fresh.ids[p];
    const InstanceId t = traced.ids[p];
    if (f != kBackground) ++fresh_area[f];
    if (t != kBackground) ++traced_area[t];
    if (f != kBackground && t != kBackground) ++overlap[{f, t}];
  }
  std::map<InstanceId, InstanceId> relabel;
  for (const auto& [f, f_size] : fresh_area) {
    InstanceId best = kBackground;
    double best_iou = -1.0;
    for (auto it = overlap.lower_bound({f, 0}); it != overlap.end() && it->first.first == f; ++it) {
      const std::size_t inter = it->second;
      const double iou = static_cast<double>(inter) / static_cast<double>(f_size + traced_area[it->first.second] - inter);
      if (iou > best_iou) {
        best_iou = iou;
        best = it->first.second;
      }
    }
    relabel[f] = (best != kBackground && best_iou >= config.iou_threshold) ? best : map.allocate_id();
  }
  SegmentMask out(fresh.width, fresh.height);
  for (std::size_t p = 0; p < fresh.ids.size(); ++p)
    if (fresh.ids[p] != kBackground) out.ids[p] = relabel[fresh.ids[p]];
  return out;
}

SegmentMask raytrace_mask(const VoxelSemanticMap& map, const CameraPose& pose, const CameraIntrinsics& intrinsics,
                          double max_range) {
  return RaycastIndex(map).trace(pose, intrinsics, max_range);
}

std::vector<BBox> mask_to_bboxes(const SegmentMask& mask, int min_size) {
  std::map<InstanceId, BBox> boxes;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const InstanceId id = mask.at(x, y);
      if (id == kBackground) continue;
      auto [it, inserted] = boxes.try_emplace(id, BBox{x, y, x, y, id});
      if (!inserted) {
        BBox& b = it->second;
        b.x_min = std::min(b.x_min, x);
        b.y_min = std::min(b.y_min, y);
        b.x_max = std::max(b.x_max, x);
        b.y_max = std::max(b.y_max, y);
      }
    }
  std::vector<BBox> out;
  for (const auto& [id, box] : boxes)
    if (box.width() >= min_size && box.height() >= min_size) out.push_back(box);
  return out;
}

namespace {

struct IndexSum {
  long long i = 0, j = 0, k = 0;
  long long count = 0;
};

// Integer index sums keep the centroid independent of cell iteration order.
IndexSum instance_index_sum(const VoxelSemanticMap& map, InstanceId id) {
  IndexSum s;
  for (const auto& [index, cell] : map.cells()) {
    if (cell.occupied() && cell.effective_id() == id) {
      s.i += index.i;
      s.j += index.j;
      s.k += index.k;
      ++s.count;
    }
  }
  if (id == kBackground || s.count == 0) fail(ErrorCode::kNotFound, "instance " + std::to_string(id) + " not in map");
  return s;
}

long long floor_div(long long a, long long b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }

}  // namespace

Vec3 instance_centroid(const VoxelSemanticMap& map, InstanceId id) {
  const IndexSum s = instance_index_sum(map, id);
  const double n = static_cast<double>(s.count);
  const double vs = map.voxel_size();
  return map.origin() + Vec3(static_cast<double>(s.i) / n + 0.5, static_cast<double>(s.j) / n + 0.5,
                             static_cast<double>(s.k) / n + 0.5) * vs;
}

std::vector<std::pair<int, int>> occupied_floor_cells(const VoxelSemanticMap& map, const MappingConfig& config) {
  std::set<std::pair<int, int>> columns;
  for (const auto& [index, cell] : map.cells()) {
    if (!cell.occupied()) continue;
    const double height = map.center_of(index).z() - config.floor_z;
    if (height > config.obstacle_min_height && height <= config.obstacle_max_height)
      columns.emplace(index.i, index.j);
  }
  return {columns.begin(), columns.end()};
}

NavGoal resolve_nav_goal(const VoxelSemanticMap& map, InstanceId id, const MappingConfig& config) {
  config.validate();
  const Vec3 centroid = instance_centroid(map, id);
  const auto blocked_list = occupied_floor_cells(map, config);
  const std::set<std::pair<int, int>> blocked(blocked_list.begin(), blocked_list.end());
  const double vs = map.voxel_size();
  const Vec3& o = map.origin();
  auto cell_center = [&](int i, int j) { return Eigen::Vector2d(o.x() + (i + 0.5) * vs, o.y() + (j + 0.5) * vs); };
  const Eigen::Vector2d c2(centroid.x(), centroid.y());
  auto make_goal = [&](int i, int j) {
    const Eigen::Vector2d xy = cell_center(i, j);
    return NavGoal{{xy.x(), xy.y(), config.floor_z}, id, (xy - c2).norm()};
  };

  // Cell under the centroid, floor(mean index + 1/2) in exact integer
  // arithmetic; a centroid on a cell boundary belongs to the upper cell.
  const IndexSum sum = instance_index_sum(map, id);
  const VoxelIndex under{static_cast<int>(floor_div(2 * sum.i + sum.count, 2 * sum.count)),
                         static_cast<int>(floor_div(2 * sum.j + sum.count, 2 * sum.count)), 0};
  if (!blocked.contains({under.i, under.j})) return make_goal(under.i, under.j);

  const int reach = static_cast<int>(std::ceil(config.goal_radius / vs)) + 1;
  bool found = false;
  double best_d2 = kInf;
  std::pair<int, int> best{};
  for (int i = under.i - reach; i <= under.i + reach; ++i)
    for (int j = under.j - reach; j <= under.j + reach; ++j) {
      const double d2 = (cell_center(i, j) - c2).squaredNorm();
      if (d2 > config.goal_radius * config.goal_radius || blocked.contains({i, j})) continue;
      // Scan order is lexicographic, so near-equal distances keep the first cell.
      if (!found || d2 < best_d2 - 1e-12) {
        found = true;
        best_d2 = d2;
        best = {i, j};
      }
    }
  if (!found) {
    fail(ErrorCode::kGoalUnreachable, "no free floor cell within " + std::to_string(config.goal_radius) +
                                          " m of instance " + std::to_string(id));
  }
  return make_goal(best.first, best.second);
}

}  // namespace crossia::mapping
