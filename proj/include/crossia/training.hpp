#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crossia/encoder.hpp"
#include "crossia/image_db.hpp"
#include "crossia/losses.hpp"

namespace crossia::train {

struct AugmentParams {
  int output_size = 32;
  double crop_scale_min = 0.5;  // area fraction kept by crop-and-resize
  double crop_scale_max = 1.0;
  double crop_ratio_min = 0.75;  // aspect ratio relative to the source
  double crop_ratio_max = 4.0 / 3.0;
  double jitter_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.2;
  double grayscale_prob = 0.2;
  double flip_prob = 0.5;

  void validate() const;
  nlohmann::json to_json() const;
  static AugmentParams from_json(const nlohmann::json& j, const AugmentParams& defaults);
};

// Two independent draws of crop/resize, colour jitter, grayscale and flip.
std::pair<RgbImage, RgbImage> augment_views(const RgbImage& image, const AugmentParams& params, std::uint64_t seed);
RgbImage augment_view(const RgbImage& image, const AugmentParams& params, std::uint64_t seed);

struct CropRef {
  InstanceId instance_id = 0;
  std::size_t crop_index = 0;  // into InstanceRecord::crops
};

struct ContrastivePair {
  CropRef view_a;
  CropRef view_b;
  InstanceId label = 0;
  loss::PairKind kind = loss::PairKind::kRobot;
  db::Domain domain_a = db::Domain::kLow;
  db::Domain domain_b = db::Domain::kLow;
};

struct PairBatch {
  std::vector<ContrastivePair> robot_pairs;  // M
  std::vector<ContrastivePair> cross_pairs;  // N
  std::size_t size() const { return robot_pairs.size() + cross_pairs.size(); }
};

// Robot pairs draw two distinct low-quality crops of one instance; cross
// pairs one low crop and one high image. With both kinds eligible the batch
// splits M = floor(B/2), N = B - M; otherwise it is all of the eligible kind.
PairBatch build_pairs(const db::ObjectImageDatabase& db, int batch_pairs, std::uint64_t seed);

struct TrainingConfig {
  std::string preset = "desk";
  double learning_rate = 0.05;
  int batch_pairs = 64;
  int epochs = 50;
  int steps_per_epoch = 0;  // 0: ceil(low-quality crops / batch_pairs)
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip_norm = 10.0;  // global L2 norm cap per step; 0 disables
  bool cosine_schedule = true;  // decay the learning rate to 0 over all steps
  bool center_init = true;       // fc bias set so initial features are zero-mean over the low-quality crops
  loss::Reduction reduction = loss::Reduction::kMean;
  int shots = 5;
  bool adversarial = false;
  double adversarial_lambda = 1.0;
  AugmentParams augment;
  model::ArchitectureConfig arch;
  std::uint64_t seed = 0;

  static TrainingConfig desk();
  static TrainingConfig paper();
  void validate() const;
  nlohmann::json to_json() const;
  std::string fingerprint() const;
};

struct EpochLog {
  int epoch = 0;
  loss::LossBreakdown loss;  // mean over the epoch's steps
};

struct TrainResult {
  model::EncoderBundle bundle;
  std::vector<EpochLog> log;
};

// Untrained starting point (stands in for a pretrained encoder).
model::EncoderBundle initial_bundle(const db::ObjectImageDatabase& db, const TrainingConfig& config);

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(const db::ObjectImageDatabase& db, const TrainingConfig& config, const EpochCallback& on_epoch = {});

// One optimisation step's loss and gradient for an already-built batch;
// shared by the training loop and the gradient checks.
struct StepResult {
  loss::LossBreakdown loss;
  std::vector<double> grad;
};
StepResult batch_gradient(const model::EncoderBundle& bundle, const Matrix& input,
                          std::span<const loss::PairSlot> pairs, std::span<const int> domain_labels,
                          const TrainingConfig& config);

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace crossia::train
