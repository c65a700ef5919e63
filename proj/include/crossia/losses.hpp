#pragma once
// Fine-tuning objective. Each pair contributes
//   -1/2 [cos(p_a, sg(z_b)) + cos(p_b, sg(z_a))] + 1/2 [CE(y_a, y*) + CE(y_b, y*)]
// where sg is stop-gradient; robot pairs are low/low views of one instance,
// cross pairs one low and one high view. The batch total sums all pairs.

#include <cstddef>
#include <span>
#include <vector>

#include "crossia/encoder.hpp"
#include "crossia/image_db.hpp"
#include "crossia/tensor.hpp"

namespace crossia::loss {

inline constexpr double kCosineEpsilon = 1e-12;

enum class PairKind { kRobot, kCross };
enum class Reduction { kSum, kMean };

// Cosine similarity; numeric-error if either norm is below kCosineEpsilon.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
// Adds d cos(a, b) / d a, scaled by `scale`, into `grad_a`.
void cosine_grad_wrt_first(std::span<const double> a, std::span<const double> b, double scale, std::span<double> grad_a);

// Softmax cross-entropy of `logits` against class `target`; optional gradient (scaled) is added.
double cross_entropy(std::span<const double> logits, int target, double scale = 0.0, std::span<double> grad = {});

struct PairView {
  std::span<const double> p_a, z_a, logits_a;
  std::span<const double> p_b, z_b, logits_b;
  int target = 0;
};

struct PairTerms {
  double cosine = 0.0;  // -1/2 [cos + cos]
  double ce = 0.0;      // 1/2 [CE + CE]
  double total() const { return cosine + ce; }
};

PairTerms pair_terms(const PairView& pair);
double loss_robot(const PairView& pair);
double loss_cross(const PairView& pair);

// Rows of a ForwardOutputs batch that make up one pair.
struct PairSlot {
  std::size_t view_a = 0;
  std::size_t view_b = 0;
  int target = 0;
  PairKind kind = PairKind::kRobot;
  db::Domain domain_a = db::Domain::kLow;
  db::Domain domain_b = db::Domain::kLow;
};

struct LossBreakdown {
  double total = 0.0;
  double robot_cosine = 0.0;
  double robot_ce = 0.0;
  double cross_cosine = 0.0;
  double cross_ce = 0.0;
  double adversarial = 0.0;
  std::size_t robot_pairs = 0;
  std::size_t cross_pairs = 0;
};

// Fills grads->p and grads->logits when `grads` is non-null.
LossBreakdown loss_total(const model::ForwardOutputs& outputs, std::span<const PairSlot> pairs,
                         Reduction reduction = Reduction::kSum, model::OutputGrads* grads = nullptr);

struct AdversarialTerm {
  double value = 0.0;   // mean domain cross-entropy over views
  Matrix grad_logits;   // d value / d domain_logits (unreversed)
  double lambda = 0.0;  // reversal factor to hand to EncoderBundle::backward
};

// labels: 0 = low-quality view, 1 = high-quality view.
AdversarialTerm adversarial_term(const Matrix& domain_logits, std::span<const int> domain_labels, double lambda);

// In-place gradient reversal: g <- -lambda * g.
void reverse_gradient(std::span<double> grad, double lambda);

}  // namespace crossia::loss
