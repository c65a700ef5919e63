#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "crossia/errors.hpp"
#include "crossia/evaluation.hpp"
#include "oracles.hpp"

using namespace crossia;
using namespace crossia::eval;

namespace {

std::vector<TrialResult> trials_of(const std::vector<int>& ks) {
  std::vector<TrialResult> out;
  for (std::size_t i = 0; i < ks.size(); ++i) out.push_back(make_trial("q" + std::to_string(i), 1, ks[i]));
  return out;
}

db::ObjectImageDatabase two_instance_db(int high) {
  oracle::Rng rng(101);
  db::ObjectImageDatabase out;
  for (InstanceId id : {InstanceId{3}, InstanceId{8}}) {
    for (int k = 0; k < 3; ++k) {
      db::CropRecord c;
      c.instance_id = id;
      c.domain = db::Domain::kLow;
      c.source_frame = k;
      c.bbox = BBox{0, 0, 9, 9, id};
      c.image = oracle::random_image(rng, 10, 10);
      c.path = "low_" + std::to_string(id) + "_" + std::to_string(k) + ".png";
      out.instances[id].crops.push_back(c);
    }
    for (int s = 0; s < high; ++s) {
      db::CropRecord c;
      c.instance_id = id;
      c.domain = db::Domain::kHigh;
      c.shot_index = s;
      c.image = oracle::random_image(rng, 12, 12);
      c.path = "high_" + std::to_string(id) + "_" + std::to_string(s) + ".png";
      out.instances[id].crops.push_back(c);
    }
  }
  return out;
}

std::vector<Query> queries_for(const db::ObjectImageDatabase& db) {
  std::vector<Query> out;
  for (const auto& [id, inst] : db.instances)
    out.push_back({"query_" + std::to_string(id), inst.crops.front().image, id});
  out.push_back({"stranger", RgbImage(6, 6, 50), 99});
  return out;
}

}  // namespace

TEST_CASE("metric fixtures") {
  auto r = compute_metrics(trials_of({1, 1, 1}));
  CHECK(r.sr == 1.0);
  CHECK(r.mrr == 1.0);
  CHECK(r.mr == 1.0);

  r = compute_metrics(trials_of({1, 2, 4}), "mixed");
  CHECK(r.sr == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.mrr == doctest::Approx(1.75 / 3.0).epsilon(1e-12));
  CHECK(r.mr == doctest::Approx(3.0 / 1.75).epsilon(1e-12));
  CHECK(std::abs(r.mr - 1.714) < 1e-3);
  CHECK(r.mean_rank == doctest::Approx(7.0 / 3.0));
  CHECK(r.n == 3);
  CHECK(r.label == "mixed");

  r = compute_metrics(trials_of({2, 2}));
  CHECK(r.sr == 0.0);
  CHECK(r.mrr == 0.5);
  CHECK(r.mr == 2.0);

  CHECK_THROWS_AS(compute_metrics(std::vector<TrialResult>{}), Error);
  CHECK_THROWS_AS(make_trial("q", 1, 0), Error);
  TrialResult bad{"q", 1, 0, false};
  CHECK_THROWS_AS(compute_metrics(std::span<const TrialResult>(&bad, 1)), Error);
}

TEST_CASE("metrics agree with the oracle and respect their bounds") {
  oracle::Rng rng(102);
  for (int n = 0; n < 1000; ++n) {
    std::vector<int> ks(rng.integer(1, 30));
    for (int& k : ks) k = rng.integer(1, 12);
    const auto r = compute_metrics(trials_of(ks));
    const auto o = oracle::metrics(ks);
    CHECK(r.sr == doctest::Approx(o.sr).epsilon(1e-12));
    CHECK(r.mrr == doctest::Approx(o.mrr).epsilon(1e-12));
    CHECK(r.mr == doctest::Approx(o.mr).epsilon(1e-12));
    CHECK(r.sr >= 0.0);
    CHECK(r.sr <= r.mrr);
    CHECK(r.mrr <= 1.0);
    CHECK(r.mr >= 1.0);
  }
}

TEST_CASE("report rows") {
  EvalReport r;
  r.label = "CrossIA";
  r.sr = 0.751;
  r.mrr = 0.812;
  r.mr = 1.0 / 0.812;
  CHECK(format_report_row(r) == "CrossIA | SR 0.751 | MRR 0.812 | MR 1.23");
  r.mr = 1.24;
  CHECK(format_report_row(r) == "CrossIA | SR 0.751 | MRR 0.812 | MR 1.24");
  r.label = shot_label(5);
  CHECK(format_ablation_row(r) == "Five-shot | 0.751 | 0.812 | 1.24");
  CHECK(shot_label(1) == "One-shot");
  CHECK(shot_label(3) == "Three-shot");
  CHECK(shot_label(2) == "2-shot");
  r.failed = true;
  r.failure = "boom";
  CHECK(format_report_row(r) == "Five-shot | FAILED | boom");
}

TEST_CASE("benchmark conditions are isolated") {
  const auto db = two_instance_db(2);
  const auto queries = queries_for(db);
  const auto loader = [] { return model::EncoderBundle(oracle::tiny_arch(false), {3, 8}, 11); };
  std::vector<Condition> conditions;
  conditions.push_back({"A", loader});
  conditions.push_back({"broken", [] () -> model::EncoderBundle { fail(ErrorCode::kNotFound, "no checkpoint"); }});
  conditions.push_back({"B", loader});
  conditions.push_back({"A+deblur", loader, true});
  const auto reports = run_benchmark(conditions, queries, db);
  REQUIRE(reports.size() == 4);
  CHECK_FALSE(reports[0].failed);
  CHECK(reports[1].failed);
  CHECK(reports[1].failure.find("no checkpoint") != std::string::npos);
  CHECK_FALSE(reports[2].failed);
  CHECK_FALSE(reports[3].failed);
  CHECK(reports[0].sr == reports[2].sr);
  CHECK(reports[0].mrr == reports[2].mrr);
  CHECK(reports[0].n == 2);
  CHECK(reports[0].skipped == std::vector<std::string>{"stranger"});
  for (std::size_t i = 0; i < reports[0].trials.size(); ++i) CHECK(reports[0].trials[i].k == reports[2].trials[i].k);

  const auto dir = std::filesystem::temp_directory_path() / "crossia_reports";
  std::filesystem::create_directories(dir);
  write_reports_csv(dir / "r.csv", reports);
  write_reports_json(dir / "r.json", reports);
  std::ifstream in(dir / "r.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "condition,n,sr,mrr,mr,mean_rank,status,skipped");
  std::filesystem::remove_all(dir);
}

TEST_CASE("few-shot ablation requires enough user images") {
  const auto db = two_instance_db(3);
  train::TrainingConfig cfg;
  cfg.augment.output_size = 8;
  cfg.arch = oracle::tiny_arch(false);
  cfg.epochs = 1;
  cfg.batch_pairs = 4;
  const std::vector<int> too_many{1, 5};
  try {
    few_shot_ablation(db, too_many, cfg, queries_for(db));
    FAIL("expected invalid-argument");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("instance 3") != std::string::npos);
  }
  const std::vector<int> shots{1, 3};
  std::vector<int> seen;
  const auto reports =
      few_shot_ablation(db, shots, cfg, queries_for(db), [&](int s, const train::TrainResult&) { seen.push_back(s); });
  CHECK(seen == shots);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].label == "One-shot");
  CHECK(reports[1].label == "Three-shot");
}

TEST_CASE("latent projection") {
  oracle::Rng rng(103);
  // Points on a random 2D plane in R^6: the projection preserves distances.
  const auto u = rng.gaussian_vector(6), v0 = rng.gaussian_vector(6);
  const double uu = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
  std::vector<double> e1(6), e2(6);
  for (int i = 0; i < 6; ++i) e1[i] = u[i] / uu;
  const double d = std::inner_product(v0.begin(), v0.end(), e1.begin(), 0.0);
  for (int i = 0; i < 6; ++i) e2[i] = v0[i] - d * e1[i];
  const double n2 = std::sqrt(std::inner_product(e2.begin(), e2.end(), e2.begin(), 0.0));
  for (double& x : e2) x /= n2;

  std::vector<LabeledEmbedding> points;
  for (int n = 0; n < 25; ++n) {
    const double a = rng.normal(2.0), b = rng.normal(1.0);
    LabeledEmbedding e;
    e.values.resize(6);
    for (int i = 0; i < 6; ++i) e.values[i] = a * e1[i] + b * e2[i] + 0.5;
    e.instance_id = static_cast<InstanceId>(n % 3 + 1);
    e.domain = n % 4 == 0 ? db::Domain::kHigh : db::Domain::kLow;
    points.push_back(e);
  }
  points.push_back(points[4]);
  const auto projected = export_latent_projection(points);
  REQUIRE(projected.size() == points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    CHECK(projected[i].instance_id == points[i].instance_id);
    CHECK(projected[i].domain == points[i].domain);
    for (std::size_t j = 0; j < i; ++j) {
      double orig = 0;
      for (int k = 0; k < 6; ++k) orig += std::pow(points[i].values[k] - points[j].values[k], 2);
      const double proj = std::pow(projected[i].x - projected[j].x, 2) + std::pow(projected[i].y - projected[j].y, 2);
      CHECK(std::sqrt(proj) == doctest::Approx(std::sqrt(orig)).epsilon(1e-8));
    }
  }
  CHECK(projected.back().x == doctest::Approx(projected[4].x));
  CHECK(projected.back().y == doctest::Approx(projected[4].y));

  CHECK_THROWS_AS(export_latent_projection(std::span(points).first(1)), Error);
  CHECK_THROWS_AS(export_latent_projection(std::vector<LabeledEmbedding>{}), Error);

  const auto dir = std::filesystem::temp_directory_path() / "crossia_latent";
  std::filesystem::create_directories(dir);
  write_latent_csv(dir / "p.csv", projected);
  write_latent_svg(dir / "p.svg", projected, "latent");
  CHECK(std::filesystem::file_size(dir / "p.svg") > 100);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cross-domain alignment") {
  const model::EncoderBundle bundle(oracle::tiny_arch(false), {3, 8}, 12);
  const auto db = two_instance_db(2);
  const double a = cross_domain_alignment(bundle, db);
  CHECK(a >= -1.0);
  CHECK(a <= 1.0);
  // Oracle: mean over high images of mean cosine to the same instance's lows.
  const auto emb = labeled_embeddings(bundle, db);
  double total = 0;
  int count = 0;
  for (const auto& h : emb) {
    if (h.domain != db::Domain::kHigh) continue;
    double s = 0;
    int m = 0;
    for (const auto& l : emb)
      if (l.domain == db::Domain::kLow && l.instance_id == h.instance_id) {
        s += oracle::cos_sim(h.values, l.values);
        ++m;
      }
    total += s / m;
    ++count;
  }
  CHECK(a == doctest::Approx(total / count).epsilon(1e-12));
  CHECK_THROWS_AS(cross_domain_alignment(bundle, db::without_high_quality(db)), Error);
}
