#include "crossia/losses.hpp"

#include <algorithm>
#include <cmath>

#include "crossia/errors.hpp"
#include "crossia/kernels.hpp"

namespace crossia::loss {
namespace {

double checked_norm(std::span<const double> v) {
  const double n = std::sqrt(kernels::sum_squares(v));
  if (!(n >= kCosineEpsilon)) fail(ErrorCode::kNumeric, "cosine similarity of a (near) zero-norm vector");
  return n;
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine_similarity: length mismatch");
  return kernels::dot(a, b) / (checked_norm(a) * checked_norm(b));
}

void cosine_grad_wrt_first(std::span<const double> a, std::span<const double> b, double scale, std::span<double> grad_a) {
  const double na = checked_norm(a);
  const double nb = checked_norm(b);
  const double cos = kernels::dot(a, b) / (na * nb);
  // d cos / d a = b / (|a||b|) - cos * a / |a|^2
  kernels::axpy(scale / (na * nb), b, grad_a);
  kernels::axpy(-scale * cos / (na * na), a, grad_a);
}

double cross_entropy(std::span<const double> logits, int target, double scale, std::span<double> grad) {
  require(target >= 0 && static_cast<std::size_t>(target) < logits.size(), "cross_entropy: target out of range");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - peak);
  const double log_sum = peak + std::log(sum);
  if (!grad.empty() && scale != 0.0) {
    for (std::size_t c = 0; c < logits.size(); ++c) grad[c] += scale * std::exp(logits[c] - log_sum);
    grad[target] -= scale;
  }
  return log_sum - logits[target];
}

PairTerms pair_terms(const PairView& pair) {
  PairTerms t;
  t.cosine = -0.5 * (cosine_similarity(pair.p_a, pair.z_b) + cosine_similarity(pair.p_b, pair.z_a));
  t.ce = 0.5 * (cross_entropy(pair.logits_a, pair.target) + cross_entropy(pair.logits_b, pair.target));
  return t;
}

double loss_robot(const PairView& pair) { return pair_terms(pair).total(); }
double loss_cross(const PairView& pair) { return pair_terms(pair).total(); }

LossBreakdown loss_total(const model::ForwardOutputs& outputs, std::span<const PairSlot> pairs, Reduction reduction,
                         model::OutputGrads* grads) {
  require(!pairs.empty(), "loss_total: empty batch (M + N must be >= 1)");
  const std::size_t views = outputs.p.rows;
  if (grads) {
    grads->p = Matrix(views, outputs.p.cols);
    grads->logits = Matrix(views, outputs.logits.cols);
  }
  const double weight = reduction == Reduction::kMean ? 1.0 / static_cast<double>(pairs.size()) : 1.0;
  LossBreakdown out;
  for (const PairSlot& slot : pairs) {
    require(slot.view_a < views && slot.view_b < views && slot.view_a != slot.view_b, "loss_total: bad view index");
    if (slot.kind == PairKind::kRobot) {
      require(slot.domain_a == db::Domain::kLow && slot.domain_b == db::Domain::kLow,
              "loss_total: robot pair must be low/low");
    } else {
      require(slot.domain_a != slot.domain_b, "loss_total: cross pair needs exactly one high-quality view");
    }
    const PairView view{outputs.p.row(slot.view_a), outputs.z.row(slot.view_a), outputs.logits.row(slot.view_a),
                        outputs.p.row(slot.view_b), outputs.z.row(slot.view_b), outputs.logits.row(slot.view_b),
                        slot.target};
    const PairTerms terms = pair_terms(view);
    if (slot.kind == PairKind::kRobot) {
      out.robot_cosine += weight * terms.cosine;
      out.robot_ce += weight * terms.ce;
      ++out.robot_pairs;
    } else {
      out.cross_cosine += weight * terms.cosine;
      out.cross_ce += weight * terms.ce;
      ++out.cross_pairs;
    }
    if (grads) {
      // z enters only as a constant target.
      cosine_grad_wrt_first(view.p_a, view.z_b, -0.5 * weight, grads->p.row(slot.view_a));
      cosine_grad_wrt_first(view.p_b, view.z_a, -0.5 * weight, grads->p.row(slot.view_b));
      cross_entropy(view.logits_a, slot.target, 0.5 * weight, grads->logits.row(slot.view_a));
      cross_entropy(view.logits_b, slot.target, 0.5 * weight, grads->logits.row(slot.view_b));
    }
  }
  out.total = out.robot_cosine + out.robot_ce + out.cross_cosine + out.cross_ce;
  return out;
}

AdversarialTerm adversarial_term(const Matrix& domain_logits, std::span<const int> domain_labels, double lambda) {
  require(lambda >= 0.0, "adversarial_term: lambda must be >= 0");
  require(domain_logits.cols == 2 && domain_logits.rows == domain_labels.size() && domain_logits.rows > 0,
          "adversarial_term: need one binary label per view");
  AdversarialTerm term;
  term.lambda = lambda;
  term.grad_logits = Matrix(domain_logits.rows, 2);
  const double weight = 1.0 / static_cast<double>(domain_logits.rows);
  for (std::size_t v = 0; v < domain_logits.rows; ++v) {
    require(domain_labels[v] == 0 || domain_labels[v] == 1, "adversarial_term: labels must be 0 or 1");
    term.value += weight * cross_entropy(domain_logits.row(v), domain_labels[v], weight, term.grad_logits.row(v));
  }
  return term;
}

void reverse_gradient(std::span<double> grad, double lambda) {
  for (double& g : grad) g *= -lambda;
}

}  // namespace crossia::loss
