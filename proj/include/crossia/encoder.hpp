#pragma once
// SimSiam-style encoder bundle: conv backbone f, projector, predictor h,
// linear instance classifier on f, and an optional domain head on f.
// All parameters live in one flat vector; layers address it by offset.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossia/image.hpp"
#include "crossia/mask.hpp"
#include "crossia/tensor.hpp"

namespace crossia::model {

enum class Activation { kRelu, kTanh };

struct ArchitectureConfig {
  int input_size = 32;
  Activation backbone_activation = Activation::kRelu;  // conv layers only
  int conv1_channels = 16;
  int conv2_channels = 32;
  int feature_dim = 128;      // D_f
  int projector_hidden = 128;
  int projection_dim = 64;    // D_z
  int predictor_hidden = 32;
  int num_classes = 1;        // C
  bool domain_head = false;

  void validate() const;
  nlohmann::json to_json() const;
  static ArchitectureConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

// Offsets into the flat parameter vector.
struct LinearSlot {
  std::size_t weight = 0;  // [out][in]
  std::size_t bias = 0;
  int in = 0;
  int out = 0;
  friend bool operator==(const LinearSlot&, const LinearSlot&) = default;
};

struct ConvSlot {
  std::size_t weight = 0;  // [out_channels][in_channels * 9]
  std::size_t bias = 0;
  int in_channels = 0;
  int out_channels = 0;
  int in_size = 0;
  int out_size = 0;  // 3x3, stride 2, padding 1
  friend bool operator==(const ConvSlot&, const ConvSlot&) = default;
};

struct Layout {
  ConvSlot conv1, conv2;
  LinearSlot fc, proj1, proj2, pred1, pred2, classifier, domain;
  std::size_t backbone_end = 0;  // params [0, backbone_end) belong to f
  std::size_t total = 0;
  friend bool operator==(const Layout&, const Layout&) = default;
};

Layout make_layout(const ArchitectureConfig& arch);

struct ForwardTape;

struct ForwardOutputs {
  Matrix features;        // f(x), [B][D_f]
  Matrix z;               // projector, [B][D_z]
  Matrix p;               // predictor, [B][D_z]
  Matrix logits;          // classifier, [B][C]
  Matrix domain_logits;   // [B][2] when the domain head exists
};

// Gradients w.r.t. the heads' outputs. z has no slot: every use of z in the
// loss is stop-gradient.
struct OutputGrads {
  Matrix p;
  Matrix logits;
  Matrix domain_logits;  // empty when unused
  Matrix features;       // optional extra gradient on f, empty when unused
};

class EncoderBundle {
 public:
  EncoderBundle() = default;
  EncoderBundle(ArchitectureConfig arch, std::vector<InstanceId> class_ids, std::uint64_t seed);

  const ArchitectureConfig& arch() const { return arch_; }
  const Layout& layout() const { return layout_; }
  const std::vector<InstanceId>& class_ids() const { return class_ids_; }
  int class_index(InstanceId id) const;  // not-found for unknown ids

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Images are resized to the input size and normalised.
  Matrix to_input(const std::vector<const RgbImage*>& images) const;

  // `tape` may be null for inference.
  ForwardOutputs forward(const Matrix& input, ForwardTape* tape = nullptr) const;
  ForwardOutputs forward(const std::vector<const RgbImage*>& images) const { return forward(to_input(images)); }

  // Accumulates parameter gradients into `grad` (size params().size()).
  // Gradient entering f from the domain head is multiplied by
  // -reversal_lambda (gradient reversal); the head itself sees it unscaled.
  void backward(const ForwardTape& tape, const OutputGrads& grads, double reversal_lambda,
                std::vector<double>& grad) const;

  std::string fingerprint() const;
  friend bool operator==(const EncoderBundle&, const EncoderBundle&) = default;

 private:
  ArchitectureConfig arch_;
  Layout layout_;
  std::vector<InstanceId> class_ids_;
  std::vector<double> params_;
};

struct ForwardTape {
  std::size_t batch = 0;
  std::vector<double> input;   // [B][3*S*S]
  std::vector<double> cols1;   // [B][27][P1]
  std::vector<double> act1;    // [B][c1][P1] post-ReLU
  std::vector<double> cols2;   // [B][c1*9][P2]
  Matrix act2;                 // [B][c2*P2] post-ReLU
  Matrix features;
  Matrix proj_hidden;          // post-ReLU
  Matrix z;
  Matrix pred_hidden;          // post-ReLU
};

struct Checkpoint {
  EncoderBundle bundle;
  std::string training_fingerprint;
  std::string db_digest;
  nlohmann::json training_config = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace crossia::model
