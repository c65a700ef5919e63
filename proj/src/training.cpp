#include "crossia/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>

#include "crossia/digest.hpp"
#include "crossia/errors.hpp"
#include "crossia/kernels.hpp"

namespace crossia::train {
namespace {

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

struct EligibleSets {
  std::vector<InstanceId> robot;  // >= 2 low-quality crops
  std::vector<InstanceId> cross;  // >= 1 low and >= 1 high
  std::map<InstanceId, std::vector<std::size_t>> low;
  std::map<InstanceId, std::vector<std::size_t>> high;
};

EligibleSets eligible(const db::ObjectImageDatabase& db) {
  EligibleSets sets;
  for (const auto& [id, inst] : db.instances) {
    auto& low = sets.low[id];
    auto& high = sets.high[id];
    for (std::size_t i = 0; i < inst.crops.size(); ++i)
      (inst.crops[i].domain == db::Domain::kLow ? low : high).push_back(i);
    if (low.size() >= 2) sets.robot.push_back(id);
    if (!low.empty() && !high.empty()) sets.cross.push_back(id);
  }
  return sets;
}

template <typename T>
const T& pick(const std::vector<T>& items, std::mt19937_64& rng) {
  return items[std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng)];
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over the combined words.
  std::uint64_t x = seed ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xC2B2AE3D27D4EB4FULL);
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void AugmentParams::validate() const {
  require(output_size >= 4, "augment: output_size must be >= 4");
  require(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0,
          "augment: crop scale must satisfy 0 < min <= max <= 1");
  require(crop_ratio_min > 0.0 && crop_ratio_min <= crop_ratio_max, "augment: invalid crop ratio range");
  for (double p : {jitter_prob, grayscale_prob, flip_prob})
    require(p >= 0.0 && p <= 1.0, "augment: probabilities must be in [0, 1]");
  require(brightness >= 0.0 && contrast >= 0.0 && saturation >= 0.0, "augment: jitter strengths must be >= 0");
}

nlohmann::json AugmentParams::to_json() const {
  return {{"output_size", output_size},       {"crop_scale_min", crop_scale_min}, {"crop_scale_max", crop_scale_max},
          {"crop_ratio_min", crop_ratio_min}, {"crop_ratio_max", crop_ratio_max}, {"jitter_prob", jitter_prob},
          {"brightness", brightness},         {"contrast", contrast},             {"saturation", saturation},
          {"grayscale_prob", grayscale_prob}, {"flip_prob", flip_prob}};
}

AugmentParams AugmentParams::from_json(const nlohmann::json& j, const AugmentParams& defaults) {
  AugmentParams a = defaults;
  a.output_size = j.value("output_size", a.output_size);
  a.crop_scale_min = j.value("crop_scale_min", a.crop_scale_min);
  a.crop_scale_max = j.value("crop_scale_max", a.crop_scale_max);
  a.crop_ratio_min = j.value("crop_ratio_min", a.crop_ratio_min);
  a.crop_ratio_max = j.value("crop_ratio_max", a.crop_ratio_max);
  a.jitter_prob = j.value("jitter_prob", a.jitter_prob);
  a.brightness = j.value("brightness", a.brightness);
  a.contrast = j.value("contrast", a.contrast);
  a.saturation = j.value("saturation", a.saturation);
  a.grayscale_prob = j.value("grayscale_prob", a.grayscale_prob);
  a.flip_prob = j.value("flip_prob", a.flip_prob);
  a.validate();
  return a;
}

RgbImage augment_view(const RgbImage& image, const AugmentParams& params, std::uint64_t seed) {
  require(!image.empty(), "augment: empty image");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  // Crop and resize.
  const double area = static_cast<double>(image.width) * image.height;
  const double source_aspect = static_cast<double>(image.width) / image.height;
  int x0 = 0, y0 = 0, w = image.width, h = image.height;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double scale = uniform(params.crop_scale_min, params.crop_scale_max);
    const double aspect =
        source_aspect * std::exp(uniform(std::log(params.crop_ratio_min), std::log(params.crop_ratio_max)));
    const int cw = static_cast<int>(std::lround(std::sqrt(scale * area * aspect)));
    const int ch = static_cast<int>(std::lround(std::sqrt(scale * area / aspect)));
    if (cw >= 1 && ch >= 1 && cw <= image.width && ch <= image.height) {
      w = cw;
      h = ch;
      x0 = std::uniform_int_distribution<int>(0, image.width - w)(rng);
      y0 = std::uniform_int_distribution<int>(0, image.height - h)(rng);
      break;
    }
  }
  FloatImage view = resize_bilinear(to_float(crop(image, x0, y0, x0 + w - 1, y0 + h - 1)), params.output_size,
                                    params.output_size);
  const std::size_t plane = static_cast<std::size_t>(view.width) * view.height;
  double* r = view.data.data();
  double* g = r + plane;
  double* b = g + plane;

  // Colour jitter: brightness, contrast, saturation.
  const bool jitter = unit(rng) < params.jitter_prob;
  const double brightness = uniform(1.0 - params.brightness, 1.0 + params.brightness);
  const double contrast = uniform(std::max(0.0, 1.0 - params.contrast), 1.0 + params.contrast);
  const double saturation = uniform(std::max(0.0, 1.0 - params.saturation), 1.0 + params.saturation);
  if (jitter) {
    for (double& v : view.data) v *= brightness;
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += luma(r[i], g[i], b[i]);
    mean /= static_cast<double>(plane);
    for (double& v : view.data) v = (v - mean) * contrast + mean;
    for (std::size_t i = 0; i < plane; ++i) {
      const double y = luma(r[i], g[i], b[i]);
      r[i] = y + (r[i] - y) * saturation;
      g[i] = y + (g[i] - y) * saturation;
      b[i] = y + (b[i] - y) * saturation;
    }
    for (double& v : view.data) v = std::clamp(v, 0.0, 255.0);
  }
  if (unit(rng) < params.grayscale_prob) {
    for (std::size_t i = 0; i < plane; ++i) r[i] = g[i] = b[i] = luma(r[i], g[i], b[i]);
  }
  RgbImage out = to_bytes(view);
  if (unit(rng) < params.flip_prob) out = flip_horizontal(out);
  return out;
}

std::pair<RgbImage, RgbImage> augment_views(const RgbImage& image, const AugmentParams& params, std::uint64_t seed) {
  return {augment_view(image, params, mix_seed(seed, 1)), augment_view(image, params, mix_seed(seed, 2))};
}

PairBatch build_pairs(const db::ObjectImageDatabase& db, int batch_pairs, std::uint64_t seed) {
  require(batch_pairs >= 1, "build_pairs: batch_pairs must be >= 1");
  const EligibleSets sets = eligible(db);
  if (sets.robot.empty() && sets.cross.empty()) {
    fail(ErrorCode::kCannotSample, "no instance has two low-quality crops or a low/high pair");
  }
  std::size_t m = 0;
  std::size_t n = 0;
  if (!sets.robot.empty() && !sets.cross.empty()) {
    m = static_cast<std::size_t>(batch_pairs) / 2;
    n = static_cast<std::size_t>(batch_pairs) - m;
  } else if (!sets.robot.empty()) {
    m = static_cast<std::size_t>(batch_pairs);
  } else {
    n = static_cast<std::size_t>(batch_pairs);
  }

  std::mt19937_64 rng(seed);
  PairBatch batch;
  for (std::size_t i = 0; i < m; ++i) {
    const InstanceId id = pick(sets.robot, rng);
    const auto& low = sets.low.at(id);
    const std::size_t a = std::uniform_int_distribution<std::size_t>(0, low.size() - 1)(rng);
    std::size_t b = std::uniform_int_distribution<std::size_t>(0, low.size() - 2)(rng);
    if (b >= a) ++b;
    batch.robot_pairs.push_back(
        {{id, low[a]}, {id, low[b]}, id, loss::PairKind::kRobot, db::Domain::kLow, db::Domain::kLow});
  }
  for (std::size_t i = 0; i < n; ++i) {
    const InstanceId id = pick(sets.cross, rng);
    const std::size_t low = pick(sets.low.at(id), rng);
    const std::size_t high = pick(sets.high.at(id), rng);
    batch.cross_pairs.push_back(
        {{id, low}, {id, high}, id, loss::PairKind::kCross, db::Domain::kLow, db::Domain::kHigh});
  }
  return batch;
}

TrainingConfig TrainingConfig::desk() { return {}; }

TrainingConfig TrainingConfig::paper() {
  TrainingConfig c;
  c.preset = "paper";
  c.learning_rate = 0.07;
  c.batch_pairs = 256;
  c.epochs = 1000;
  c.reduction = loss::Reduction::kSum;
  c.cosine_schedule = false;
  c.grad_clip_norm = 0.0;
  return c;
}

void TrainingConfig::validate() const {
  require(learning_rate > 0.0, "training: learning_rate must be > 0");
  require(epochs >= 1, "training: epochs must be >= 1");
  require(batch_pairs >= 1, "training: batch_pairs must be >= 1");
  require(steps_per_epoch >= 0, "training: steps_per_epoch must be >= 0");
  require(shots >= 1, "training: shots must be >= 1");
  require(momentum >= 0.0 && momentum < 1.0, "training: momentum must be in [0, 1)");
  require(weight_decay >= 0.0, "training: weight_decay must be >= 0");
  require(grad_clip_norm >= 0.0, "training: grad_clip_norm must be >= 0");
  require(adversarial_lambda >= 0.0, "training: adversarial lambda must be >= 0");
  augment.validate();
}

nlohmann::json TrainingConfig::to_json() const {
  nlohmann::json arch_json = arch.to_json();
  arch_json.erase("num_classes");
  arch_json.erase("domain_head");
  return {{"preset", preset},
          {"learning_rate", learning_rate},
          {"batch_pairs", batch_pairs},
          {"epochs", epochs},
          {"steps_per_epoch", steps_per_epoch},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"grad_clip_norm", grad_clip_norm},
          {"cosine_schedule", cosine_schedule},
          {"center_init", center_init},
          {"reduction", reduction == loss::Reduction::kSum ? "sum" : "mean"},
          {"shots", shots},
          {"adversarial", adversarial},
          {"adversarial_lambda", adversarial_lambda},
          {"augment", augment.to_json()},
          {"architecture", arch_json},
          {"seed", seed}};
}

std::string TrainingConfig::fingerprint() const { return sha256_hex(to_json().dump()).substr(0, 16); }

model::EncoderBundle initial_bundle(const db::ObjectImageDatabase& db, const TrainingConfig& config) {
  std::vector<InstanceId> ids;
  for (const auto& [id, inst] : db.instances) ids.push_back(id);
  require(!ids.empty(), "initial_bundle: database has no instances");
  model::ArchitectureConfig arch = config.arch;
  arch.input_size = config.augment.output_size;
  arch.domain_head = config.adversarial;
  model::EncoderBundle bundle(arch, std::move(ids), mix_seed(config.seed, 0xB0D1E));
  if (config.center_init) {
    std::vector<const RgbImage*> images;
    for (const auto& [id, inst] : db.instances)
      for (const auto& crop : inst.crops)
        if (crop.domain == db::Domain::kLow) images.push_back(&crop.image);
    require(!images.empty(), "initial_bundle: no low-quality crops to centre on");
    std::vector<double> mean(static_cast<std::size_t>(arch.feature_dim), 0.0);
    constexpr std::size_t kChunk = 128;
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
      const std::vector<const RgbImage*> chunk(images.begin() + start,
                                               images.begin() + std::min(images.size(), start + kChunk));
      const Matrix features = bundle.forward(chunk).features;
      for (std::size_t r = 0; r < features.rows; ++r) kernels::axpy(1.0, features.row(r), mean);
    }
    const std::size_t bias = bundle.layout().fc.bias;
    for (std::size_t j = 0; j < mean.size(); ++j) bundle.params()[bias + j] -= mean[j] / static_cast<double>(images.size());
  }
  return bundle;
}

StepResult batch_gradient(const model::EncoderBundle& bundle, const Matrix& input,
                          std::span<const loss::PairSlot> pairs, std::span<const int> domain_labels,
                          const TrainingConfig& config) {
  model::ForwardTape tape;
  const model::ForwardOutputs out = bundle.forward(input, &tape);
  model::OutputGrads grads;
  StepResult step;
  step.loss = loss::loss_total(out, pairs, config.reduction, &grads);
  double lambda = 0.0;
  if (config.adversarial) {
    require(bundle.arch().domain_head, "adversarial training needs a domain head");
    const loss::AdversarialTerm adv = loss::adversarial_term(out.domain_logits, domain_labels, config.adversarial_lambda);
    step.loss.adversarial = adv.value;
    step.loss.total += adv.value;
    grads.domain_logits = adv.grad_logits;
    lambda = adv.lambda;
  }
  step.grad.assign(bundle.params().size(), 0.0);
  bundle.backward(tape, grads, lambda, step.grad);
  return step;
}

TrainResult train(const db::ObjectImageDatabase& db, const TrainingConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result{initial_bundle(db, config), {}};
  model::EncoderBundle& bundle = result.bundle;
  const std::size_t low_crops = db.count(db::Domain::kLow);
  const int steps = config.steps_per_epoch > 0
                        ? config.steps_per_epoch
                        : std::max(1, static_cast<int>((low_crops + config.batch_pairs - 1) / config.batch_pairs));
  std::vector<double> velocity(bundle.params().size(), 0.0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch + 1;
    for (int s = 0; s < steps; ++s) {
      const std::uint64_t step_seed = mix_seed(config.seed, static_cast<std::uint64_t>(epoch) + 1, s);
      const PairBatch batch = build_pairs(db, config.batch_pairs, step_seed);
      std::vector<RgbImage> views;
      std::vector<loss::PairSlot> slots;
      std::vector<int> domains;
      views.reserve(batch.size() * 2);
      auto add_pair = [&](const ContrastivePair& pair) {
        const auto& crops_a = db.instances.at(pair.view_a.instance_id).crops;
        const auto& crops_b = db.instances.at(pair.view_b.instance_id).crops;
        const std::size_t index = views.size();
        views.push_back(augment_view(crops_a[pair.view_a.crop_index].image, config.augment, mix_seed(step_seed, index, 7)));
        views.push_back(augment_view(crops_b[pair.view_b.crop_index].image, config.augment, mix_seed(step_seed, index + 1, 7)));
        slots.push_back({index, index + 1, bundle.class_index(pair.label), pair.kind, pair.domain_a, pair.domain_b});
        domains.push_back(pair.domain_a == db::Domain::kHigh ? 1 : 0);
        domains.push_back(pair.domain_b == db::Domain::kHigh ? 1 : 0);
      };
      for (const auto& pair : batch.robot_pairs) add_pair(pair);
      for (const auto& pair : batch.cross_pairs) add_pair(pair);

      std::vector<const RgbImage*> pointers;
      for (const auto& v : views) pointers.push_back(&v);
      StepResult step = batch_gradient(bundle, bundle.to_input(pointers), slots, domains, config);
      if (!std::isfinite(step.loss.total)) {
        fail(ErrorCode::kNumeric, "non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(s + 1));
      }
      double lr = config.learning_rate;
      if (config.cosine_schedule) {
        const double progress = static_cast<double>(epoch * steps + s) / (static_cast<double>(config.epochs) * steps);
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      }
      if (config.grad_clip_norm > 0.0) {
        const double norm = std::sqrt(kernels::sum_squares(step.grad));
        if (norm > config.grad_clip_norm) kernels::scale(config.grad_clip_norm / norm, step.grad);
      }
      auto& params = bundle.params();
      for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = config.momentum * velocity[i] + step.grad[i] + config.weight_decay * params[i];
        params[i] -= lr * velocity[i];
      }
      const double w = 1.0 / steps;
      log.loss.robot_cosine += w * step.loss.robot_cosine;
      log.loss.robot_ce += w * step.loss.robot_ce;
      log.loss.cross_cosine += w * step.loss.cross_cosine;
      log.loss.cross_ce += w * step.loss.cross_ce;
      log.loss.adversarial += w * step.loss.adversarial;
      log.loss.total += w * step.loss.total;
      log.loss.robot_pairs += step.loss.robot_pairs;
      log.loss.cross_pairs += step.loss.cross_pairs;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write training log " + path.string());
  out << "epoch,robot_cosine,robot_ce,cross_cosine,cross_ce,adversarial,total\n" << std::setprecision(10);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.loss.robot_cosine << ',' << e.loss.robot_ce << ',' << e.loss.cross_cosine << ','
        << e.loss.cross_ce << ',' << e.loss.adversarial << ',' << e.loss.total << '\n';
  }
}

}  // namespace crossia::train
