#include "crossia/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "crossia/digest.hpp"
#include "crossia/errors.hpp"
#include "crossia/kernels.hpp"

namespace crossia::model {
namespace {

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel;
constexpr char kCheckpointMagic[8] = {'C', 'R', 'S', 'I', 'A', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

int conv_out(int in) { return (in + 2 - kKernel) / 2 + 1; }

// 3x3 / stride 2 / pad 1 patch matrix: rows = channel*9 + tap, cols = output pixel.
void im2col(const double* in, int channels, int size, double* cols) {
  const int out = conv_out(size);
  const int pixels = out * out;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kKernel; ++ky)
      for (int kx = 0; kx < kKernel; ++kx) {
        double* row = cols + static_cast<std::size_t>(c * kTaps + ky * kKernel + kx) * pixels;
        for (int oy = 0; oy < out; ++oy) {
          const int iy = oy * 2 - 1 + ky;
          for (int ox = 0; ox < out; ++ox) {
            const int ix = ox * 2 - 1 + kx;
            row[oy * out + ox] =
                (iy >= 0 && iy < size && ix >= 0 && ix < size) ? in[(static_cast<std::size_t>(c) * size + iy) * size + ix] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, int channels, int size, double* in_grad) {
  const int out = conv_out(size);
  const int pixels = out * out;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kKernel; ++ky)
      for (int kx = 0; kx < kKernel; ++kx) {
        const double* row = cols + static_cast<std::size_t>(c * kTaps + ky * kKernel + kx) * pixels;
        for (int oy = 0; oy < out; ++oy) {
          const int iy = oy * 2 - 1 + ky;
          if (iy < 0 || iy >= size) continue;
          for (int ox = 0; ox < out; ++ox) {
            const int ix = ox * 2 - 1 + kx;
            if (ix >= 0 && ix < size) in_grad[(static_cast<std::size_t>(c) * size + iy) * size + ix] += row[oy * out + ox];
          }
        }
      }
}

void relu(std::span<double> x) {
  for (double& v : x) v = v > 0.0 ? v : 0.0;
}

// Zeroes gradient where the post-activation is not positive.
void relu_mask(std::span<const double> activation, std::span<double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (activation[i] <= 0.0) grad[i] = 0.0;
}

void activate(Activation kind, std::span<double> x) {
  if (kind == Activation::kRelu) {
    relu(x);
  } else {
    for (double& v : x) v = std::tanh(v);
  }
}

void activation_grad(Activation kind, std::span<const double> activation, std::span<double> grad) {
  if (kind == Activation::kRelu) {
    relu_mask(activation, grad);
  } else {
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= 1.0 - activation[i] * activation[i];
  }
}

void check_finite(const std::vector<double>& values, const char* layer) {
  for (double v : values)
    if (!std::isfinite(v)) fail(ErrorCode::kNumeric, std::string("non-finite activation in layer ") + layer);
}

Matrix linear_forward(const Matrix& x, const LinearSlot& slot, const std::vector<double>& params) {
  Matrix y(x.rows, slot.out);
  for (std::size_t r = 0; r < x.rows; ++r) std::copy_n(params.data() + slot.bias, slot.out, y.row(r).data());
  kernels::gemm_nt(x.rows, slot.out, slot.in, x.data.data(), params.data() + slot.weight, y.data.data());
  return y;
}

// dW += dY^T X, db += sum dY, dX (if requested) += dY W
void linear_backward(const Matrix& x, const Matrix& dy, const LinearSlot& slot, const std::vector<double>& params,
                     std::vector<double>& grad, Matrix* dx) {
  kernels::gemm_tn(slot.out, slot.in, x.rows, dy.data.data(), x.data.data(), grad.data() + slot.weight);
  for (std::size_t r = 0; r < dy.rows; ++r)
    kernels::axpy(1.0, dy.row(r), std::span<double>(grad.data() + slot.bias, slot.out));
  if (dx) kernels::gemm_nn(dy.rows, slot.in, slot.out, dy.data.data(), params.data() + slot.weight, dx->data.data());
}

LinearSlot linear_slot(std::size_t& cursor, int in, int out) {
  LinearSlot s{cursor, cursor + static_cast<std::size_t>(in) * out, in, out};
  cursor = s.bias + out;
  return s;
}

ConvSlot conv_slot(std::size_t& cursor, int in_channels, int out_channels, int in_size) {
  ConvSlot s;
  s.weight = cursor;
  s.bias = cursor + static_cast<std::size_t>(out_channels) * in_channels * kTaps;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.in_size = in_size;
  s.out_size = conv_out(in_size);
  cursor = s.bias + out_channels;
  return s;
}

void init_uniform(std::vector<double>& params, std::size_t begin, std::size_t count, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < count; ++i) params[begin + i] = dist(rng);
}

}  // namespace

void ArchitectureConfig::validate() const {
  require(input_size >= 4, "architecture: input_size must be >= 4");
  require(conv1_channels >= 1 && conv2_channels >= 1, "architecture: channel counts must be >= 1");
  require(feature_dim >= 1 && projector_hidden >= 1 && projection_dim >= 1 && predictor_hidden >= 1,
          "architecture: layer widths must be >= 1");
  require(num_classes >= 1, "architecture: num_classes must be >= 1");
}

nlohmann::json ArchitectureConfig::to_json() const {
  return {{"input_size", input_size},         {"conv1_channels", conv1_channels},
          {"conv2_channels", conv2_channels}, {"feature_dim", feature_dim},
          {"projector_hidden", projector_hidden}, {"projection_dim", projection_dim},
          {"predictor_hidden", predictor_hidden}, {"num_classes", num_classes},
          {"domain_head", domain_head},
          {"backbone_activation", backbone_activation == Activation::kRelu ? "relu" : "tanh"}};
}

ArchitectureConfig ArchitectureConfig::from_json(const nlohmann::json& j) {
  ArchitectureConfig a;
  a.input_size = j.at("input_size").get<int>();
  a.conv1_channels = j.at("conv1_channels").get<int>();
  a.conv2_channels = j.at("conv2_channels").get<int>();
  a.feature_dim = j.at("feature_dim").get<int>();
  a.projector_hidden = j.at("projector_hidden").get<int>();
  a.projection_dim = j.at("projection_dim").get<int>();
  a.predictor_hidden = j.at("predictor_hidden").get<int>();
  a.num_classes = j.at("num_classes").get<int>();
  a.domain_head = j.at("domain_head").get<bool>();
  const std::string activation = j.value("backbone_activation", std::string("relu"));
  if (activation != "relu" && activation != "tanh") fail(ErrorCode::kFormat, "unknown activation '" + activation + "'");
  a.backbone_activation = activation == "relu" ? Activation::kRelu : Activation::kTanh;
  a.validate();
  return a;
}

Layout make_layout(const ArchitectureConfig& arch) {
  arch.validate();
  Layout l;
  std::size_t cursor = 0;
  l.conv1 = conv_slot(cursor, 3, arch.conv1_channels, arch.input_size);
  l.conv2 = conv_slot(cursor, arch.conv1_channels, arch.conv2_channels, l.conv1.out_size);
  l.fc = linear_slot(cursor, arch.conv2_channels * l.conv2.out_size * l.conv2.out_size, arch.feature_dim);
  l.backbone_end = cursor;
  l.proj1 = linear_slot(cursor, arch.feature_dim, arch.projector_hidden);
  l.proj2 = linear_slot(cursor, arch.projector_hidden, arch.projection_dim);
  l.pred1 = linear_slot(cursor, arch.projection_dim, arch.predictor_hidden);
  l.pred2 = linear_slot(cursor, arch.predictor_hidden, arch.projection_dim);
  l.classifier = linear_slot(cursor, arch.feature_dim, arch.num_classes);
  if (arch.domain_head) l.domain = linear_slot(cursor, arch.feature_dim, 2);
  l.total = cursor;
  return l;
}

EncoderBundle::EncoderBundle(ArchitectureConfig arch, std::vector<InstanceId> class_ids, std::uint64_t seed)
    : arch_(arch), class_ids_(std::move(class_ids)) {
  require(!class_ids_.empty(), "encoder: at least one class id required");
  require(std::is_sorted(class_ids_.begin(), class_ids_.end()) &&
              std::adjacent_find(class_ids_.begin(), class_ids_.end()) == class_ids_.end(),
          "encoder: class ids must be sorted and unique");
  arch_.num_classes = static_cast<int>(class_ids_.size());
  layout_ = make_layout(arch_);
  params_.assign(layout_.total, 0.0);
  std::mt19937_64 rng(seed);
  // He-uniform for ReLU-fed weights, 1/sqrt(fan_in) for output layers; other biases start at zero.
  auto he = [](int fan_in) { return std::sqrt(6.0 / fan_in); };
  auto plain = [](int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  for (const ConvSlot* c : {&layout_.conv1, &layout_.conv2}) {
    const int fan_in = c->in_channels * kTaps;
    init_uniform(params_, c->weight, static_cast<std::size_t>(c->out_channels) * fan_in, he(fan_in), rng);
  }
  for (const LinearSlot* s : {&layout_.fc, &layout_.proj1, &layout_.pred1})
    init_uniform(params_, s->weight, static_cast<std::size_t>(s->in) * s->out, he(s->in), rng);
  for (const LinearSlot* s : {&layout_.proj2, &layout_.pred2, &layout_.classifier})
    init_uniform(params_, s->weight, static_cast<std::size_t>(s->in) * s->out, plain(s->in), rng);
  if (arch_.domain_head)
    init_uniform(params_, layout_.domain.weight, static_cast<std::size_t>(layout_.domain.in) * 2, plain(layout_.domain.in), rng);
  // Projector and predictor output biases are drawn too, so a head whose
  // hidden ReLUs are all inactive still emits a nonzero z or p.
  for (const LinearSlot* s : {&layout_.proj2, &layout_.pred2})
    init_uniform(params_, s->bias, static_cast<std::size_t>(s->out), plain(s->in), rng);
}

int EncoderBundle::class_index(InstanceId id) const {
  const auto it = std::lower_bound(class_ids_.begin(), class_ids_.end(), id);
  if (it == class_ids_.end() || *it != id) fail(ErrorCode::kNotFound, "instance " + std::to_string(id) + " has no class");
  return static_cast<int>(it - class_ids_.begin());
}

Matrix EncoderBundle::to_input(const std::vector<const RgbImage*>& images) const {
  const int s = arch_.input_size;
  Matrix input(images.size(), static_cast<std::size_t>(3) * s * s);
  for (std::size_t b = 0; b < images.size(); ++b) {
    require(images[b] && !images[b]->empty(), "encoder: empty input image");
    const FloatImage resized = resize_bilinear(to_float(*images[b]), s, s);
    auto row = input.row(b);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = (resized.data[i] / 255.0 - 0.5) / 0.25;
  }
  return input;
}

ForwardOutputs EncoderBundle::forward(const Matrix& input, ForwardTape* tape) const {
  const int s = arch_.input_size;
  require(input.cols == static_cast<std::size_t>(3) * s * s, "forward: input width does not match architecture");
  const std::size_t batch = input.rows;
  const ConvSlot& c1 = layout_.conv1;
  const ConvSlot& c2 = layout_.conv2;
  const std::size_t p1 = static_cast<std::size_t>(c1.out_size) * c1.out_size;
  const std::size_t p2 = static_cast<std::size_t>(c2.out_size) * c2.out_size;
  const std::size_t k1 = static_cast<std::size_t>(3) * kTaps;
  const std::size_t k2 = static_cast<std::size_t>(c1.out_channels) * kTaps;

  ForwardTape local;
  ForwardTape& t = tape ? *tape : local;
  t.batch = batch;
  t.input = input.data;
  t.cols1.assign(batch * k1 * p1, 0.0);
  t.act1.assign(batch * c1.out_channels * p1, 0.0);
  t.cols2.assign(batch * k2 * p2, 0.0);
  t.act2 = Matrix(batch, static_cast<std::size_t>(c2.out_channels) * p2);

  for (std::size_t b = 0; b < batch; ++b) {
    double* cols1 = t.cols1.data() + b * k1 * p1;
    double* act1 = t.act1.data() + b * c1.out_channels * p1;
    im2col(input.row(b).data(), 3, s, cols1);
    for (int o = 0; o < c1.out_channels; ++o) std::fill_n(act1 + o * p1, p1, params_[c1.bias + o]);
    kernels::gemm_nn(c1.out_channels, p1, k1, params_.data() + c1.weight, cols1, act1);
    activate(arch_.backbone_activation, {act1, c1.out_channels * p1});

    double* cols2 = t.cols2.data() + b * k2 * p2;
    double* act2 = t.act2.row(b).data();
    im2col(act1, c1.out_channels, c1.out_size, cols2);
    for (int o = 0; o < c2.out_channels; ++o) std::fill_n(act2 + o * p2, p2, params_[c2.bias + o]);
    kernels::gemm_nn(c2.out_channels, p2, k2, params_.data() + c2.weight, cols2, act2);
    activate(arch_.backbone_activation, t.act2.row(b));
  }
  check_finite(t.act2.data, "backbone.conv");

  ForwardOutputs out;
  out.features = linear_forward(t.act2, layout_.fc, params_);
  check_finite(out.features.data, "backbone.fc");
  t.features = out.features;

  t.proj_hidden = linear_forward(out.features, layout_.proj1, params_);
  relu(t.proj_hidden.data);
  out.z = linear_forward(t.proj_hidden, layout_.proj2, params_);
  check_finite(out.z.data, "projector");
  t.z = out.z;

  t.pred_hidden = linear_forward(out.z, layout_.pred1, params_);
  relu(t.pred_hidden.data);
  out.p = linear_forward(t.pred_hidden, layout_.pred2, params_);
  check_finite(out.p.data, "predictor");

  out.logits = linear_forward(out.features, layout_.classifier, params_);
  check_finite(out.logits.data, "classifier");
  if (arch_.domain_head) {
    out.domain_logits = linear_forward(out.features, layout_.domain, params_);
    check_finite(out.domain_logits.data, "domain_head");
  }
  return out;
}

void EncoderBundle::backward(const ForwardTape& t, const OutputGrads& grads, double reversal_lambda,
                             std::vector<double>& grad) const {
  require(grad.size() == params_.size(), "backward: gradient buffer size mismatch");
  const std::size_t batch = t.batch;
  require(grads.p.rows == batch && grads.logits.rows == batch, "backward: gradient batch mismatch");

  // Predictor.
  Matrix d_pred_hidden(batch, layout_.pred2.in);
  linear_backward(t.pred_hidden, grads.p, layout_.pred2, params_, grad, &d_pred_hidden);
  relu_mask(t.pred_hidden.data, d_pred_hidden.data);
  Matrix dz(batch, layout_.pred1.in);
  linear_backward(t.z, d_pred_hidden, layout_.pred1, params_, grad, &dz);

  // Projector.
  Matrix d_proj_hidden(batch, layout_.proj2.in);
  linear_backward(t.proj_hidden, dz, layout_.proj2, params_, grad, &d_proj_hidden);
  relu_mask(t.proj_hidden.data, d_proj_hidden.data);
  Matrix dfeat(batch, layout_.proj1.in);
  linear_backward(t.features, d_proj_hidden, layout_.proj1, params_, grad, &dfeat);

  linear_backward(t.features, grads.logits, layout_.classifier, params_, grad, &dfeat);
  if (!grads.features.data.empty()) kernels::axpy(1.0, grads.features.data, dfeat.data);

  if (arch_.domain_head && !grads.domain_logits.data.empty()) {
    Matrix d_domain_feat(batch, layout_.domain.in);
    linear_backward(t.features, grads.domain_logits, layout_.domain, params_, grad, &d_domain_feat);
    kernels::axpy(-reversal_lambda, d_domain_feat.data, dfeat.data);
  }

  // Backbone.
  Matrix dact2(batch, layout_.fc.in);
  linear_backward(t.act2, dfeat, layout_.fc, params_, grad, &dact2);
  activation_grad(arch_.backbone_activation, t.act2.data, dact2.data);

  const ConvSlot& c1 = layout_.conv1;
  const ConvSlot& c2 = layout_.conv2;
  const std::size_t p1 = static_cast<std::size_t>(c1.out_size) * c1.out_size;
  const std::size_t p2 = static_cast<std::size_t>(c2.out_size) * c2.out_size;
  const std::size_t k1 = static_cast<std::size_t>(3) * kTaps;
  const std::size_t k2 = static_cast<std::size_t>(c1.out_channels) * kTaps;
  std::vector<double> dcols2(k2 * p2);
  std::vector<double> dact1(c1.out_channels * p1);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* d2 = dact2.row(b).data();
    const double* cols2 = t.cols2.data() + b * k2 * p2;
    kernels::gemm_nt(c2.out_channels, k2, p2, d2, cols2, grad.data() + c2.weight);
    for (int o = 0; o < c2.out_channels; ++o)
      for (std::size_t q = 0; q < p2; ++q) grad[c2.bias + o] += d2[o * p2 + q];
    std::fill(dcols2.begin(), dcols2.end(), 0.0);
    kernels::gemm_tn(k2, p2, c2.out_channels, params_.data() + c2.weight, d2, dcols2.data());
    std::fill(dact1.begin(), dact1.end(), 0.0);
    col2im(dcols2.data(), c1.out_channels, c1.out_size, dact1.data());
    activation_grad(arch_.backbone_activation, {t.act1.data() + b * c1.out_channels * p1, dact1.size()}, dact1);

    const double* cols1 = t.cols1.data() + b * k1 * p1;
    kernels::gemm_nt(c1.out_channels, k1, p1, dact1.data(), cols1, grad.data() + c1.weight);
    for (int o = 0; o < c1.out_channels; ++o)
      for (std::size_t q = 0; q < p1; ++q) grad[c1.bias + o] += dact1[o * p1 + q];
  }
}

std::string EncoderBundle::fingerprint() const {
  std::string text = arch_.to_json().dump();
  for (InstanceId id : class_ids_) text += "," + std::to_string(id);
  const std::string head = sha256_hex(text);
  std::vector<std::uint8_t> bytes(params_.size() * sizeof(double));
  std::memcpy(bytes.data(), params_.data(), bytes.size());
  return sha256_hex(head + sha256_hex(bytes)).substr(0, 16);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const EncoderBundle& bundle = checkpoint.bundle;
  nlohmann::json meta{{"architecture", bundle.arch().to_json()},
                      {"class_ids", bundle.class_ids()},
                      {"training_fingerprint", checkpoint.training_fingerprint},
                      {"db_digest", checkpoint.db_digest},
                      {"training_config", checkpoint.training_config},
                      {"bundle_fingerprint", bundle.fingerprint()}};
  const std::string text = meta.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write checkpoint " + path.string());
  const std::uint64_t text_size = text.size();
  const std::uint64_t count = bundle.params().size();
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
  out.write(reinterpret_cast<const char*>(&text_size), sizeof text_size);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(bundle.params().data()), static_cast<std::streamsize>(count * sizeof(double)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t text_size = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || !std::equal(magic, magic + 8, kCheckpointMagic)) fail(ErrorCode::kFormat, path.string() + ": not a checkpoint");
  if (version != kCheckpointVersion) fail(ErrorCode::kFormat, path.string() + ": unsupported checkpoint version");
  in.read(reinterpret_cast<char*>(&text_size), sizeof text_size);
  if (!in || text_size > (1U << 26)) fail(ErrorCode::kFormat, path.string() + ": corrupt header");
  std::string text(text_size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(text_size));
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in) fail(ErrorCode::kFormat, path.string() + ": truncated");
  Checkpoint checkpoint;
  try {
    const auto meta = nlohmann::json::parse(text);
    const auto arch = ArchitectureConfig::from_json(meta.at("architecture"));
    checkpoint.bundle = EncoderBundle(arch, meta.at("class_ids").get<std::vector<InstanceId>>(), 0);
    checkpoint.training_fingerprint = meta.at("training_fingerprint").get<std::string>();
    checkpoint.db_digest = meta.at("db_digest").get<std::string>();
    checkpoint.training_config = meta.at("training_config");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
  auto& params = checkpoint.bundle.params();
  if (count != params.size()) fail(ErrorCode::kFormat, path.string() + ": parameter count does not match architecture");
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) fail(ErrorCode::kFormat, path.string() + ": truncated parameters");
  for (double v : params)
    if (!std::isfinite(v)) fail(ErrorCode::kNumeric, path.string() + ": non-finite parameter");
  return checkpoint;
}

}  // namespace crossia::model
