#include "crossia/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "crossia/errors.hpp"
#include "crossia/kernels.hpp"

namespace crossia::retrieval {
namespace {

constexpr std::size_t kEmbedBatch = 128;

}  // namespace

EmbeddingVector make_embedding(std::vector<double> values, std::string source) {
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorCode::kNumeric, "non-finite embedding for image '" + source + "'");
  }
  if (values.empty() || kernels::sum_squares(values) <= 0.0) {
    fail(ErrorCode::kNumeric, "zero-norm embedding for image '" + source + "'");
  }
  return {std::move(values), std::move(source)};
}

std::vector<EmbeddingVector> embed(const model::EncoderBundle& bundle, std::span<const RgbImage> images,
                                   std::span<const std::string> sources) {
  require(sources.empty() || sources.size() == images.size(), "embed: sources must match images");
  std::vector<EmbeddingVector> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kEmbedBatch) {
    const std::size_t end = std::min(images.size(), start + kEmbedBatch);
    std::vector<const RgbImage*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&images[i]);
    const model::ForwardOutputs outputs = bundle.forward(batch);
    for (std::size_t i = start; i < end; ++i) {
      const auto row = outputs.features.row(i - start);
      std::string source = sources.empty() ? "image " + std::to_string(i) : sources[i];
      out.push_back(make_embedding({row.begin(), row.end()}, std::move(source)));
    }
  }
  return out;
}

EmbeddingVector embed_one(const model::EncoderBundle& bundle, const RgbImage& image, const std::string& source) {
  const std::string name = source.empty() ? "query" : source;
  return embed(bundle, std::span<const RgbImage>(&image, 1), std::span<const std::string>(&name, 1)).front();
}

double cosine_score(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine_score: dimension mismatch");
  const double na = std::sqrt(kernels::sum_squares(a));
  const double nb = std::sqrt(kernels::sum_squares(b));
  if (na <= 0.0 || nb <= 0.0) fail(ErrorCode::kNumeric, "cosine_score: zero-norm vector");
  return std::clamp(kernels::dot(a, b) / (na * nb), -1.0, 1.0);
}

Aggregation parse_aggregation(const std::string& name) {
  if (name == "max") return Aggregation::kMax;
  if (name == "mean") return Aggregation::kMean;
  fail(ErrorCode::kConfig, "unknown aggregation '" + name + "' (expected max or mean)");
}

std::string to_string(Aggregation aggregation) { return aggregation == Aggregation::kMax ? "max" : "mean"; }

InstanceId RankingResult::top() const {
  require(!ranking.empty(), "empty ranking");
  return ranking.front().instance_id;
}

RankingResult rank_instances(const EmbeddingVector& query, const InstanceEmbeddings& db, Aggregation aggregation,
                             std::optional<InstanceId> ground_truth) {
  RankingResult result;
  result.query = query.source;
  result.ground_truth = ground_truth;
  for (const auto& [id, crops] : db) {
    if (crops.empty()) continue;
    double score = aggregation == Aggregation::kMax ? -2.0 : 0.0;
    for (const auto& crop : crops) {
      const double s = cosine_score(query.values, crop.values);
      score = aggregation == Aggregation::kMax ? std::max(score, s) : score + s;
    }
    if (aggregation == Aggregation::kMean) score /= static_cast<double>(crops.size());
    result.ranking.push_back({id, score});
  }
  if (result.ranking.empty()) fail(ErrorCode::kInvalidArgument, "rank_instances: database has no embeddings");
  std::stable_sort(result.ranking.begin(), result.ranking.end(), [](const ScoredInstance& a, const ScoredInstance& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.instance_id < b.instance_id;
  });
  if (ground_truth) {
    for (std::size_t i = 0; i < result.ranking.size(); ++i) {
      if (result.ranking[i].instance_id == *ground_truth) result.k = static_cast<int>(i + 1);
    }
  }
  return result;
}

EmbeddingCache EmbeddingCache::build(const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db,
                                     const perception::DeblurrerHandle* deblurrer) {
  EmbeddingCache cache;
  cache.bundle_fingerprint_ = bundle.fingerprint();
  cache.db_digest_ = db.digest();
  std::vector<RgbImage> images;
  std::vector<std::string> sources;
  std::vector<InstanceId> owners;
  for (const auto& [id, inst] : db.instances) {
    for (const auto& crop : inst.crops) {
      if (crop.domain != db::Domain::kLow) continue;
      images.push_back(deblurrer ? deblurrer->deblur(crop.image) : crop.image);
      sources.push_back(crop.path);
      owners.push_back(id);
    }
  }
  if (images.empty()) fail(ErrorCode::kInvalidArgument, "embedding cache: database has no low-quality crops");
  auto vectors = embed(bundle, images, sources);
  for (std::size_t i = 0; i < vectors.size(); ++i) cache.embeddings_[owners[i]].push_back(std::move(vectors[i]));
  return cache;
}

bool EmbeddingCache::matches(const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db) const {
  return bundle_fingerprint_ == bundle.fingerprint() && db_digest_ == db.digest();
}

void EmbeddingCache::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "crossia-embedding-cache";
  j["version"] = 1;
  j["bundle_fingerprint"] = bundle_fingerprint_;
  j["db_digest"] = db_digest_;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [id, vectors] : embeddings_) {
    for (const auto& v : vectors) entries.push_back({{"instance_id", id}, {"source", v.source}, {"values", v.values}});
  }
  j["entries"] = std::move(entries);
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot write embedding cache " + path.string());
  out << j.dump();
}

EmbeddingCache EmbeddingCache::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "embedding cache not found: " + path.string());
  EmbeddingCache cache;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("format") != "crossia-embedding-cache" || j.at("version") != 1) {
      fail(ErrorCode::kFormat, "unsupported embedding cache " + path.string());
    }
    cache.bundle_fingerprint_ = j.at("bundle_fingerprint").get<std::string>();
    cache.db_digest_ = j.at("db_digest").get<std::string>();
    for (const auto& e : j.at("entries")) {
      cache.embeddings_[e.at("instance_id").get<InstanceId>()].push_back(
          make_embedding(e.at("values").get<std::vector<double>>(), e.at("source").get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, "malformed embedding cache " + path.string() + ": " + e.what());
  }
  return cache;
}

LocateResult locate(const RgbImage& query, const model::EncoderBundle& bundle, const EmbeddingCache& cache,
                    const mapping::VoxelSemanticMap& map, const mapping::MappingConfig& config,
                    Aggregation aggregation) {
  const EmbeddingVector q = embed_one(bundle, query);
  RankingResult ranking = rank_instances(q, cache.embeddings(), aggregation);
  mapping::NavGoal goal = mapping::resolve_nav_goal(map, ranking.top(), config);
  return {std::move(ranking), goal};
}

LocateResult locate(const RgbImage& query, const model::EncoderBundle& bundle, const db::ObjectImageDatabase& db,
                    const mapping::VoxelSemanticMap& map, const mapping::MappingConfig& config,
                    Aggregation aggregation) {
  if (db.instances.empty()) fail(ErrorCode::kInvalidArgument, "locate: empty database");
  return locate(query, bundle, EmbeddingCache::build(bundle, db), map, config, aggregation);
}

}  // namespace crossia::retrieval
