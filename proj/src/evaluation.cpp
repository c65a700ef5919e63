#include "crossia/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "crossia/errors.hpp"

namespace crossia::eval {
namespace {

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string sig3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write " + path.string());
  return out;
}

}  // namespace

TrialResult make_trial(std::string query, InstanceId ground_truth, int k) {
  require(k >= 1, "trial rank must be >= 1");
  return {std::move(query), ground_truth, k, k == 1};
}

EvalReport compute_metrics(std::span<const TrialResult> trials, std::string label) {
  require(!trials.empty(), "compute_metrics: no trials");
  EvalReport report;
  report.label = std::move(label);
  report.n = trials.size();
  double successes = 0.0;
  double reciprocal = 0.0;
  double ranks = 0.0;
  for (const auto& t : trials) {
    require(t.k >= 1, "compute_metrics: rank must be >= 1 (query '" + t.query + "')");
    successes += t.k == 1 ? 1.0 : 0.0;
    reciprocal += 1.0 / t.k;
    ranks += t.k;
  }
  const double n = static_cast<double>(trials.size());
  report.sr = successes / n;
  report.mrr = reciprocal / n;
  report.mr = 1.0 / report.mrr;
  report.mean_rank = ranks / n;
  report.trials.assign(trials.begin(), trials.end());
  return report;
}

EvalReport evaluate_bundle(const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db,
                           std::span<const Query> queries, std::string label, retrieval::Aggregation aggregation,
                           const perception::DeblurrerHandle* deblurrer) {
  const retrieval::EmbeddingCache cache = retrieval::EmbeddingCache::build(bundle, db, deblurrer);
  std::vector<TrialResult> trials;
  std::vector<std::string> skipped;
  std::vector<RgbImage> images;
  std::vector<std::string> names;
  std::vector<InstanceId> truth;
  for (const auto& q : queries) {
    if (!cache.embeddings().contains(q.ground_truth)) {
      skipped.push_back(q.name);
      continue;
    }
    images.push_back(q.image);
    names.push_back(q.name);
    truth.push_back(q.ground_truth);
  }
  const auto vectors = retrieval::embed(bundle, images, names);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto ranking = retrieval::rank_instances(vectors[i], cache.embeddings(), aggregation, truth[i]);
    trials.push_back(make_trial(names[i], truth[i], *ranking.k));
  }
  if (trials.empty()) fail(ErrorCode::kInvalidArgument, "evaluation: no query matches a database instance");
  EvalReport report = compute_metrics(trials, std::move(label));
  report.skipped = std::move(skipped);
  return report;
}

std::vector<EvalReport> run_benchmark(std::span<const Condition> conditions, std::span<const Query> queries,
                                      const db::ObjectImageDatabase& db, retrieval::Aggregation aggregation) {
  std::vector<EvalReport> reports;
  for (const auto& condition : conditions) {
    try {
      require(static_cast<bool>(condition.load_bundle), "condition '" + condition.label + "' has no bundle loader");
      const model::EncoderBundle bundle = condition.load_bundle();
      reports.push_back(evaluate_bundle(bundle, db, queries, condition.label, aggregation,
                                        condition.deblur ? &condition.deblurrer : nullptr));
    } catch (const std::exception& e) {
      EvalReport failed;
      failed.label = condition.label;
      failed.failed = true;
      failed.failure = e.what();
      reports.push_back(std::move(failed));
    }
  }
  return reports;
}

std::string shot_label(int shots) {
  switch (shots) {
    case 1: return "One-shot";
    case 3: return "Three-shot";
    case 5: return "Five-shot";
    default: return std::to_string(shots) + "-shot";
  }
}

std::vector<EvalReport> few_shot_ablation(const db::ObjectImageDatabase& db, std::span<const int> shots_list,
                                          const train::TrainingConfig& config, std::span<const Query> queries,
                                          const TrainedCallback& on_trained) {
  require(!shots_list.empty(), "few_shot_ablation: empty shots list");
  const int max_shots = *std::max_element(shots_list.begin(), shots_list.end());
  for (const auto& [id, inst] : db.instances) {
    if (inst.count(db::Domain::kHigh) < static_cast<std::size_t>(max_shots)) {
      fail(ErrorCode::kInvalidArgument, "instance " + std::to_string(id) + " has " +
                                            std::to_string(inst.count(db::Domain::kHigh)) +
                                            " high-quality images, " + std::to_string(max_shots) + " required");
    }
  }
  std::vector<EvalReport> reports;
  for (int shots : shots_list) {
    train::TrainingConfig run = config;
    run.shots = shots;
    const db::ObjectImageDatabase view = db::with_shots(db, shots);
    const train::TrainResult trained = train::train(view, run);
    if (on_trained) on_trained(shots, trained);
    reports.push_back(evaluate_bundle(trained.bundle, view, queries, shot_label(shots)));
  }
  return reports;
}

std::string format_report_row(const EvalReport& report) {
  if (report.failed) return report.label + " | FAILED | " + report.failure;
  return report.label + " | SR " + fixed3(report.sr) + " | MRR " + fixed3(report.mrr) + " | MR " + sig3(report.mr);
}

std::string format_ablation_row(const EvalReport& report) {
  if (report.failed) return report.label + " | FAILED | " + report.failure;
  return report.label + " | " + fixed3(report.sr) + " | " + fixed3(report.mrr) + " | " + sig3(report.mr);
}

void write_reports_csv(const std::filesystem::path& path, std::span<const EvalReport> reports) {
  std::ofstream out = open_output(path);
  out << "condition,n,sr,mrr,mr,mean_rank,status,skipped\n" << std::setprecision(10);
  for (const auto& r : reports) {
    out << r.label << ',' << r.n << ',' << r.sr << ',' << r.mrr << ',' << r.mr << ',' << r.mean_rank << ','
        << (r.failed ? "failed" : "ok") << ',' << r.skipped.size() << '\n';
  }
}

void write_reports_json(const std::filesystem::path& path, std::span<const EvalReport> reports) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : r.trials) {
      trials.push_back({{"query", t.query}, {"ground_truth", t.ground_truth}, {"k", t.k}, {"success", t.success}});
    }
    nlohmann::json row = {{"condition", r.label}, {"n", r.n},           {"sr", r.sr},
                          {"mrr", r.mrr},         {"mr", r.mr},         {"mean_rank", r.mean_rank},
                          {"failed", r.failed},   {"trials", trials},   {"skipped", r.skipped}};
    if (r.failed) row["failure"] = r.failure;
    doc.push_back(std::move(row));
  }
  open_output(path) << doc.dump(2) << '\n';
}

std::vector<LabeledEmbedding> labeled_embeddings(const model::EncoderBundle& bundle,
                                                 const db::ObjectImageDatabase& db) {
  std::vector<RgbImage> images;
  std::vector<std::string> sources;
  std::vector<LabeledEmbedding> out;
  for (const auto& [id, inst] : db.instances) {
    for (const auto& crop : inst.crops) {
      images.push_back(crop.image);
      sources.push_back(crop.path);
      out.push_back({{}, id, crop.domain});
    }
  }
  auto vectors = retrieval::embed(bundle, images, sources);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].values = std::move(vectors[i].values);
  return out;
}

double cross_domain_alignment(const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db) {
  const auto embeddings = labeled_embeddings(bundle, db);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& high : embeddings) {
    if (high.domain != db::Domain::kHigh) continue;
    double sum = 0.0;
    std::size_t lows = 0;
    for (const auto& low : embeddings) {
      if (low.domain != db::Domain::kLow || low.instance_id != high.instance_id) continue;
      sum += retrieval::cosine_score(high.values, low.values);
      ++lows;
    }
    if (lows == 0) continue;
    total += sum / static_cast<double>(lows);
    ++count;
  }
  if (count == 0) fail(ErrorCode::kInvalidArgument, "alignment: no instance has both domains");
  return total / static_cast<double>(count);
}

std::vector<LatentPoint> export_latent_projection(std::span<const LabeledEmbedding> embeddings) {
  require(embeddings.size() >= 2, "latent projection needs at least 2 embeddings");
  const std::size_t dim = embeddings.front().values.size();
  require(dim >= 1, "latent projection: empty embeddings");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(embeddings.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    require(embeddings[i].values.size() == dim, "latent projection: inconsistent dimensions");
    for (std::size_t j = 0; j < dim; ++j) x(i, j) = embeddings[i].values[j];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // Eigenvalues ascend; take the last two columns, with a sign convention
  // that makes the largest-magnitude component positive.
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), 2);
  for (int c = 0; c < 2 && c < static_cast<int>(dim); ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(dim) - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(c) = v;
  }
  const Eigen::MatrixXd projected = centered * basis;
  std::vector<LatentPoint> points;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    points.push_back({projected(i, 0), projected(i, 1), embeddings[i].instance_id, embeddings[i].domain});
  }
  return points;
}

void write_latent_csv(const std::filesystem::path& path, std::span<const LatentPoint> points) {
  std::ofstream out = open_output(path);
  out << "x,y,instance_id,domain\n" << std::setprecision(10);
  for (const auto& p : points) out << p.x << ',' << p.y << ',' << p.instance_id << ',' << db::to_string(p.domain) << '\n';
}

void write_latent_svg(const std::filesystem::path& path, std::span<const LatentPoint> points, const std::string& title) {
  require(!points.empty(), "latent plot: no points");
  double x0 = points[0].x, x1 = x0, y0 = points[0].y, y1 = y0;
  std::set<InstanceId> ids;
  for (const auto& p : points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
    ids.insert(p.instance_id);
  }
  const double size = 480.0, margin = 30.0;
  const double sx = (size - 2 * margin) / std::max(x1 - x0, 1e-12);
  const double sy = (size - 2 * margin) / std::max(y1 - y0, 1e-12);
  std::ofstream out = open_output(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size + 20 << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
  const std::vector<InstanceId> order(ids.begin(), ids.end());
  for (const auto& p : points) {
    const auto index = std::distance(order.begin(), std::find(order.begin(), order.end(), p.instance_id));
    const double hue = 360.0 * static_cast<double>(index) / static_cast<double>(order.size());
    const double cx = margin + (p.x - x0) * sx;
    const double cy = 20 + size - margin - (p.y - y0) * sy;
    out << std::fixed << std::setprecision(2);
    if (p.domain == db::Domain::kHigh) {
      out << "<rect x=\"" << cx - 4 << "\" y=\"" << cy - 4 << "\" width=\"8\" height=\"8\" fill=\"hsl(" << hue
          << ",70%,45%)\" stroke=\"black\"/>\n";
    } else {
      out << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"2.5\" fill=\"hsl(" << hue << ",70%,55%)\"/>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace crossia::eval
