#pragma once
// Instance retrieval by cosine similarity of backbone features, and the
// hand-off from the matched instance to a navigation goal.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossia/encoder.hpp"
#include "crossia/image_db.hpp"
#include "crossia/semantic_map.hpp"

namespace crossia::retrieval {

struct EmbeddingVector {
  std::vector<double> values;
  std::string source;
};

// numeric-error naming `source` if values are non-finite or zero-norm.
EmbeddingVector make_embedding(std::vector<double> values, std::string source);

std::vector<EmbeddingVector> embed(const model::EncoderBundle& bundle, std::span<const RgbImage> images,
                                   std::span<const std::string> sources = {});
EmbeddingVector embed_one(const model::EncoderBundle& bundle, const RgbImage& image, const std::string& source = "");

double cosine_score(std::span<const double> a, std::span<const double> b);

enum class Aggregation { kMax, kMean };
Aggregation parse_aggregation(const std::string& name);
std::string to_string(Aggregation aggregation);

using InstanceEmbeddings = std::map<InstanceId, std::vector<EmbeddingVector>>;

struct ScoredInstance {
  InstanceId instance_id = 0;
  double score = 0.0;
  friend bool operator==(const ScoredInstance&, const ScoredInstance&) = default;
};

struct RankingResult {
  std::string query;
  std::vector<ScoredInstance> ranking;  // descending score, ties by ascending id
  std::optional<InstanceId> ground_truth;
  std::optional<int> k;  // 1-based rank of the ground truth when known and present

  InstanceId top() const;
};

RankingResult rank_instances(const EmbeddingVector& query, const InstanceEmbeddings& db,
                             Aggregation aggregation = Aggregation::kMax,
                             std::optional<InstanceId> ground_truth = std::nullopt);

// Database-side embeddings of the low-quality crops, keyed by
// (bundle fingerprint, database digest).
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  static EmbeddingCache build(const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db,
                              const perception::DeblurrerHandle* deblurrer = nullptr);

  bool matches(const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db) const;
  const InstanceEmbeddings& embeddings() const { return embeddings_; }
  const std::string& bundle_fingerprint() const { return bundle_fingerprint_; }
  const std::string& db_digest() const { return db_digest_; }

  void save(const std::filesystem::path& path) const;
  static EmbeddingCache load(const std::filesystem::path& path);

 private:
  std::string bundle_fingerprint_;
  std::string db_digest_;
  InstanceEmbeddings embeddings_;
};

struct LocateResult {
  RankingResult ranking;
  mapping::NavGoal goal;
};

LocateResult locate(const RgbImage& query, const model::EncoderBundle& bundle, const EmbeddingCache& cache,
                    const mapping::VoxelSemanticMap& map, const mapping::MappingConfig& config = {},
                    Aggregation aggregation = Aggregation::kMax);
LocateResult locate(const RgbImage& query, const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db,
                    const mapping::VoxelSemanticMap& map, const mapping::MappingConfig& config = {},
                    Aggregation aggregation = Aggregation::kMax);

}  // namespace crossia::retrieval
