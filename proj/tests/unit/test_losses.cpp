#include <doctest.h>

#include <cmath>
#include <numeric>

#include "crossia/errors.hpp"
#include "crossia/losses.hpp"
#include "oracles.hpp"

using namespace crossia;
using namespace crossia::loss;

namespace {

std::vector<double> unit(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

PairView view(const std::vector<double>& p_a, const std::vector<double>& z_a, const std::vector<double>& y_a,
              const std::vector<double>& p_b, const std::vector<double>& z_b, const std::vector<double>& y_b,
              int target) {
  return {p_a, z_a, y_a, p_b, z_b, y_b, target};
}

model::ForwardOutputs random_outputs(oracle::Rng& rng, std::size_t views, std::size_t dz, std::size_t classes) {
  model::ForwardOutputs out;
  out.p = Matrix(views, dz);
  out.z = Matrix(views, dz);
  out.logits = Matrix(views, classes);
  for (double& x : out.p.data) x = rng.normal();
  for (double& x : out.z.data) x = rng.normal();
  for (double& x : out.logits.data) x = rng.normal(2.0);
  return out;
}

}  // namespace

TEST_CASE("robot loss fixtures") {
  const auto a = unit({1, 2, 3}), b = unit({-2, 0.5, 1});
  const std::vector<double> uniform4(4, 0.3);
  // p = z~, p~ = z: both cosines 1; uniform logits: CE = ln 4.
  CHECK(loss_robot(view(b, a, uniform4, a, b, uniform4, 2)) == doctest::Approx(-1.0 + std::log(4.0)).epsilon(1e-12));
  CHECK(std::abs(loss_robot(view(b, a, uniform4, a, b, uniform4, 2)) - 0.3863) < 1e-4);

  const std::vector<double> e1{1, 0, 0}, e2{0, 1, 0};
  const std::vector<double> confident{1000, 0, 0, 0};
  CHECK(loss_robot(view(e1, e1, confident, e2, e2, confident, 0)) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross loss fixtures") {
  const auto zl = unit({0.3, -1, 2}), zh = unit({1, 1, -0.2});
  const std::vector<double> confident{0, 800, 0};
  CHECK(loss_cross(view(zh, zl, confident, zl, zh, confident, 1)) == doctest::Approx(-1.0).epsilon(1e-12));

  const std::vector<double> anti_zh{-zh[0], -zh[1], -zh[2]}, anti_zl{-zl[0], -zl[1], -zl[2]};
  const std::vector<double> uniform2{0.7, 0.7};
  const double v = loss_cross(view(anti_zh, zl, uniform2, anti_zl, zh, uniform2, 0));
  CHECK(v == doctest::Approx(1.0 + std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(v - 1.6931) < 1e-4);
}

TEST_CASE("pair losses match the scalar transcription on random inputs") {
  oracle::Rng rng(51);
  for (int n = 0; n < 200; ++n) {
    const std::size_t d = rng.integer(2, 20), c = rng.integer(2, 9);
    const auto p_a = rng.gaussian_vector(d), z_a = rng.gaussian_vector(d), p_b = rng.gaussian_vector(d),
               z_b = rng.gaussian_vector(d), y_a = rng.gaussian_vector(c, 3.0), y_b = rng.gaussian_vector(c, 3.0);
    const int t = rng.integer(0, static_cast<int>(c) - 1);
    const double expected = oracle::pair_loss(p_a, z_a, y_a, p_b, z_b, y_b, t);
    CHECK(loss_robot(view(p_a, z_a, y_a, p_b, z_b, y_b, t)) == doctest::Approx(expected).epsilon(1e-6));
    CHECK(loss_cross(view(p_a, z_a, y_a, p_b, z_b, y_b, t)) == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("loss_total sums pairs") {
  oracle::Rng rng(52);
  auto out = random_outputs(rng, 10, 6, 4);
  std::vector<PairSlot> one{{0, 1, 2, PairKind::kRobot}};
  const auto single = loss_total(out, one);
  CHECK(single.total ==
        doctest::Approx(loss_robot({out.p.row(0), out.z.row(0), out.logits.row(0), out.p.row(1), out.z.row(1),
                                    out.logits.row(1), 2}))
            .epsilon(1e-12));

  std::vector<PairSlot> five{{0, 1, 0, PairKind::kRobot},
                             {2, 3, 1, PairKind::kRobot},
                             {4, 5, 3, PairKind::kCross, db::Domain::kLow, db::Domain::kHigh},
                             {6, 7, 2, PairKind::kCross, db::Domain::kHigh, db::Domain::kLow},
                             {8, 9, 0, PairKind::kCross, db::Domain::kLow, db::Domain::kHigh}};
  const auto b = loss_total(out, five);
  CHECK(b.total == doctest::Approx(oracle::loss_total(out, five)).epsilon(1e-5));
  CHECK(b.robot_pairs == 2);
  CHECK(b.cross_pairs == 3);
  const auto mean = loss_total(out, five, Reduction::kMean);
  CHECK(mean.total == doctest::Approx(b.total / 5.0).epsilon(1e-12));

  CHECK_THROWS_AS(loss_total(out, std::vector<PairSlot>{}), Error);
  std::vector<PairSlot> bad_cross{{0, 1, 0, PairKind::kCross}};
  CHECK_THROWS_AS(loss_total(out, bad_cross), Error);
}

TEST_CASE("breakdown identities and bounds hold on random batches") {
  oracle::Rng rng(53);
  for (int n = 0; n < 100; ++n) {
    const int m = rng.integer(0, 5), k = rng.integer(m == 0 ? 1 : 0, 5);
    const std::size_t classes = rng.integer(2, 8);
    auto out = random_outputs(rng, 2 * (m + k), 8, classes);
    std::vector<PairSlot> slots;
    for (int i = 0; i < m + k; ++i) {
      PairSlot s{static_cast<std::size_t>(2 * i), static_cast<std::size_t>(2 * i + 1),
                 rng.integer(0, static_cast<int>(classes) - 1), i < m ? PairKind::kRobot : PairKind::kCross};
      if (i >= m) s.domain_b = db::Domain::kHigh;
      slots.push_back(s);
    }
    const auto b = loss_total(out, slots);
    CHECK(b.total == doctest::Approx(b.robot_cosine + b.robot_ce + b.cross_cosine + b.cross_ce).epsilon(1e-6));
    CHECK(b.robot_ce >= 0.0);
    CHECK(b.cross_ce >= 0.0);
    CHECK(std::abs(b.robot_cosine) <= m + 1e-12);
    CHECK(std::abs(b.cross_cosine) <= k + 1e-12);
    CHECK(b.robot_pairs == static_cast<std::size_t>(m));
  }
}

TEST_CASE("cosine and cross-entropy primitives") {
  const std::vector<double> zero(3, 0.0), v{1, 2, 3};
  CHECK_THROWS_AS(cosine_similarity(zero, v), Error);
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));

  oracle::Rng rng(54);
  for (int n = 0; n < 50; ++n) {
    const auto a = rng.gaussian_vector(7), b = rng.gaussian_vector(7);
    CHECK(cosine_similarity(a, b) == doctest::Approx(oracle::cos_sim(a, b)).epsilon(1e-12));
    std::vector<double> g(7, 0.0);
    cosine_grad_wrt_first(a, b, 1.0, g);
    for (std::size_t i = 0; i < 7; ++i) {
      auto f = [&](const std::vector<double>& x) { return oracle::cos_sim(x, b); };
      CHECK(g[i] == doctest::Approx(oracle::central_difference(f, a, i, 1e-6)).epsilon(1e-6));
    }
    const auto logits = rng.gaussian_vector(5, 4.0);
    const int t = rng.integer(0, 4);
    std::vector<double> gl(5, 0.0);
    CHECK(cross_entropy(logits, t, 1.0, gl) == doctest::Approx(oracle::ce(logits, t)).epsilon(1e-12));
    for (std::size_t i = 0; i < 5; ++i) {
      auto f = [&](const std::vector<double>& x) { return oracle::ce(x, t); };
      CHECK(gl[i] == doctest::Approx(oracle::central_difference(f, logits, i, 1e-6)).epsilon(1e-6));
    }
  }
  const std::vector<double> huge{1e4, -1e4, 0};
  CHECK(std::isfinite(cross_entropy(huge, 1)));
}

TEST_CASE("adversarial term") {
  Matrix uniform(4, 2);
  const std::vector<int> balanced{0, 1, 0, 1};
  CHECK(adversarial_term(uniform, balanced, 1.0).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(adversarial_term(uniform, balanced, 1.0).value - 0.6931) < 1e-4);
  CHECK_THROWS_AS(adversarial_term(uniform, balanced, -1.0), Error);
  CHECK_THROWS_AS(adversarial_term(uniform, std::vector<int>{0, 1}, 1.0), Error);

  oracle::Rng rng(55);
  Matrix logits(6, 2);
  for (double& x : logits.data) x = rng.normal();
  const std::vector<int> labels{0, 0, 1, 1, 0, 1};
  const auto term = adversarial_term(logits, labels, 0.7);
  CHECK(term.value == doctest::Approx(oracle::adversarial(logits, labels)).epsilon(1e-12));
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    auto f = [&](const std::vector<double>& x) {
      Matrix m = logits;
      m.data = x;
      return oracle::adversarial(m, labels);
    };
    CHECK(term.grad_logits.data[i] == doctest::Approx(oracle::central_difference(f, logits.data, i, 1e-6)).epsilon(1e-6));
  }

  std::vector<double> g{1.0, -2.0, 0.5};
  reverse_gradient(g, 0.5);
  CHECK(g == std::vector<double>{-0.5, 1.0, -0.25});
}

TEST_CASE("gradient reversal on a 2-parameter toy head") {
  // Domain logits (w * x, -w * x + b) for a fixed feature x; the 'backbone'
  // parameter is x itself. The reversed analytic gradient for x is
  // -lambda times the plain finite-difference gradient.
  const std::vector<int> labels{1};
  for (double lambda : {0.0, 0.5, 1.0}) {
    const double w = 0.8, b = -0.3, x = 1.7;
    auto value = [&](double xv) {
      Matrix m(1, 2);
      m(0, 0) = w * xv;
      m(0, 1) = -w * xv + b;
      return oracle::adversarial(m, labels);
    };
    Matrix m(1, 2);
    m(0, 0) = w * x;
    m(0, 1) = -w * x + b;
    const auto term = adversarial_term(m, labels, lambda);
    std::vector<double> gx{term.grad_logits(0, 0) * w - term.grad_logits(0, 1) * w};
    reverse_gradient(gx, term.lambda);
    const double fd = (value(x + 1e-6) - value(x - 1e-6)) / 2e-6;
    CHECK(gx[0] == doctest::Approx(-lambda * fd).epsilon(1e-4));
    if (lambda == 0.0) CHECK(gx[0] == 0.0);
  }
}
