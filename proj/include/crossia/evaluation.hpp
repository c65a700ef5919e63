#pragma once
// Success rate, mean reciprocal rank and mean rank over retrieval trials,
// multi-condition benchmarks, the few-shot ablation and 2D latent export.

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "crossia/encoder.hpp"
#include "crossia/image_db.hpp"
#include "crossia/retrieval.hpp"
#include "crossia/training.hpp"

namespace crossia::eval {

struct TrialResult {
  std::string query;
  InstanceId ground_truth = 0;
  int k = 1;
  bool success = true;  // k == 1
};

TrialResult make_trial(std::string query, InstanceId ground_truth, int k);

struct EvalReport {
  std::string label;
  std::size_t n = 0;
  double sr = 0.0;
  double mrr = 0.0;
  double mr = 0.0;         // 1 / MRR
  double mean_rank = 0.0;  // empirical mean of k, informational
  std::vector<TrialResult> trials;
  bool failed = false;
  std::string failure;
  std::vector<std::string> skipped;  // queries whose ground truth is not in the database
};

EvalReport compute_metrics(std::span<const TrialResult> trials, std::string label = "");

struct Query {
  std::string name;
  RgbImage image;
  InstanceId ground_truth = 0;
};

// Ranks every query against the database's low-quality crops.
EvalReport evaluate_bundle(const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db,
                           std::span<const Query> queries, std::string label,
                           retrieval::Aggregation aggregation = retrieval::Aggregation::kMax,
                           const perception::DeblurrerHandle* deblurrer = nullptr);

struct Condition {
  std::string label;
  std::function<model::EncoderBundle()> load_bundle;
  bool deblur = false;  // run database crops through `deblurrer` before embedding
  perception::DeblurrerHandle deblurrer = perception::DeblurrerHandle::unsharp();
};

// One report per condition. A condition that throws is marked failed and
// does not affect the others.
std::vector<EvalReport> run_benchmark(std::span<const Condition> conditions, std::span<const Query> queries,
                                      const db::ObjectImageDatabase& db,
                                      retrieval::Aggregation aggregation = retrieval::Aggregation::kMax);

std::string shot_label(int shots);  // One-shot, Three-shot, Five-shot, otherwise "<n>-shot"

using TrainedCallback = std::function<void(int shots, const train::TrainResult&)>;

std::vector<EvalReport> few_shot_ablation(const db::ObjectImageDatabase& db, std::span<const int> shots_list,
                                          const train::TrainingConfig& config, std::span<const Query> queries,
                                          const TrainedCallback& on_trained = {});

// "CrossIA | SR 0.751 | MRR 0.812 | MR 1.24"
std::string format_report_row(const EvalReport& report);
// "Five-shot | 0.751 | 0.812 | 1.24"
std::string format_ablation_row(const EvalReport& report);

void write_reports_csv(const std::filesystem::path& path, std::span<const EvalReport> reports);
void write_reports_json(const std::filesystem::path& path, std::span<const EvalReport> reports);

// Mean over high-quality images of the mean cosine to the same instance's
// low-quality crops.
double cross_domain_alignment(const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db);

struct LabeledEmbedding {
  std::vector<double> values;
  InstanceId instance_id = 0;
  db::Domain domain = db::Domain::kLow;
};

struct LatentPoint {
  double x = 0.0;
  double y = 0.0;
  InstanceId instance_id = 0;
  db::Domain domain = db::Domain::kLow;
};

std::vector<LabeledEmbedding> labeled_embeddings(const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db);

// Projection onto the two leading principal components.
std::vector<LatentPoint> export_latent_projection(std::span<const LabeledEmbedding> embeddings);
void write_latent_csv(const std::filesystem::path& path, std::span<const LatentPoint> points);
void write_latent_svg(const std::filesystem::path& path, std::span<const LatentPoint> points, const std::string& title);

}  // namespace crossia::eval
