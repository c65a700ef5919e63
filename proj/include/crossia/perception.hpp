#pragma once
// Segmenter and deblurrer adapters. Built-in kinds run in-process and are
// deterministic; `external` kinds shell out to a model runner:
//
//   <command...> --input IN.png --output OUT.png --params PARAMS.json
//
// The runner must write OUT.png with the input's dimensions (8-bit RGB for
// deblurring, 16-bit gray instance ids for segmentation) and exit 0.

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossia/image.hpp"
#include "crossia/mask.hpp"

namespace crossia::perception {

struct ExternalBackend {
  std::vector<std::string> command;
  nlohmann::json params = nlohmann::json::object();
  std::chrono::milliseconds timeout{30000};
  int retries = 1;
};

// Runs the backend once per attempt; returns the output path contents via
// `read_output`. Throws backend-error after the last failed attempt.
class ExternalClient {
 public:
  explicit ExternalClient(ExternalBackend backend);
  RgbImage run_rgb(const RgbImage& input) const;
  SegmentMask run_mask(const RgbImage& input) const;

 private:
  std::filesystem::path invoke(const RgbImage& input, const std::filesystem::path& workdir) const;

  ExternalBackend backend_;
  std::shared_ptr<std::mutex> mutex_;
};

class SegmenterHandle {
 public:
  enum class Kind { kOracle, kExternal };

  static SegmenterHandle oracle();
  static SegmenterHandle external(ExternalBackend backend);

  Kind kind() const { return kind_; }
  // Oracle returns `ground_truth` verbatim and requires it.
  SegmentMask segment(const RgbImage& rgb, const SegmentMask* ground_truth = nullptr) const;

 private:
  Kind kind_ = Kind::kOracle;
  std::optional<ExternalClient> client_;
};

struct UnsharpParams {
  double sigma = 1.5;
  int kernel = 7;
  double amount = 1.0;
};

class DeblurrerHandle {
 public:
  enum class Kind { kIdentity, kUnsharp, kExternal };

  static DeblurrerHandle identity();
  static DeblurrerHandle unsharp(UnsharpParams params = {});
  static DeblurrerHandle external(ExternalBackend backend);

  Kind kind() const { return kind_; }
  RgbImage deblur(const RgbImage& rgb) const;

 private:
  Kind kind_ = Kind::kIdentity;
  UnsharpParams unsharp_;
  std::optional<ExternalClient> client_;
};

std::string to_string(DeblurrerHandle::Kind kind);
DeblurrerHandle::Kind parse_deblur_kind(const std::string& name);

}  // namespace crossia::perception
