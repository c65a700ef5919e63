#pragma once

#include <cstdint>
#include <vector>

namespace crossia {

using InstanceId = std::uint32_t;
inline constexpr InstanceId kBackground = 0;

// Per-pixel instance ids, row-major; 0 is background.
struct SegmentMask {
  int width = 0;
  int height = 0;
  std::vector<InstanceId> ids;

  SegmentMask() = default;
  SegmentMask(int w, int h) : width(w), height(h), ids(static_cast<std::size_t>(w) * h, kBackground) {}

  InstanceId& at(int x, int y) { return ids[static_cast<std::size_t>(y) * width + x]; }
  InstanceId at(int x, int y) const { return ids[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const SegmentMask&, const SegmentMask&) = default;
};

// Inclusive pixel bounds.
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;
  InstanceId instance_id = 0;

  int width() const { return x_max - x_min + 1; }
  int height() const { return y_max - y_min + 1; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

}  // namespace crossia
