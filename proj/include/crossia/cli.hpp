#pragma once
// Run configuration and the command dispatcher behind the crossia binary.
// Artifacts live under <run_root>/<fingerprint>/ where the fingerprint covers
// the data stage (seed, world, mapping, adapters, database):
//   config.json, world/, db/, checkpoints/<training fp>.ckpt, reports/, latent/

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossia/errors.hpp"
#include "crossia/pipeline.hpp"
#include "crossia/retrieval.hpp"
#include "crossia/training.hpp"

namespace crossia::cli {

struct AdapterConfig {
  std::string segmenter = "oracle";  // oracle | external
  std::vector<std::string> segmenter_command;
  std::string deblur = "identity";  // identity | unsharp | external
  std::vector<std::string> deblur_command;
  perception::UnsharpParams unsharp;
  int timeout_ms = 30000;
  int retries = 1;
};

struct EvaluationConfig {
  std::vector<int> shots_list = {1, 3, 5};
  bool deblur_condition = true;  // adds a row with unsharp-masked database crops
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  std::string run_root = "runs";
  pipeline::WorldConfig world;
  mapping::MappingConfig mapping;
  AdapterConfig adapters;
  int max_shots = 5;
  train::TrainingConfig training;
  retrieval::Aggregation aggregation = retrieval::Aggregation::kMax;
  EvaluationConfig evaluation;

  nlohmann::json to_json() const;
  std::string fingerprint() const;  // data-stage settings only
  std::filesystem::path run_dir() const;
};

struct Overrides {
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
  std::optional<int> shots;
  std::optional<bool> adversarial;
  std::optional<std::string> deblur;
  std::optional<std::string> run_root;
};

RunConfig preset_config(const std::string& preset);

// Strict: unknown keys and type mismatches are collected and reported
// together as one config-error.
RunConfig resolve_config(const nlohmann::json& document, const Overrides& overrides = {});
RunConfig parse_config(const std::filesystem::path& path, const Overrides& overrides = {});

perception::SegmenterHandle make_segmenter(const AdapterConfig& adapters);
perception::DeblurrerHandle make_deblurrer(const AdapterConfig& adapters);

int exit_code(ErrorCode code);

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"gen-world", "collect",      "finetune",     "evaluate",
                                                 "ablate",    "locate",       "export-latent"};
  return names;
}

struct DispatchOptions {
  std::optional<std::filesystem::path> query;  // locate: image path; default first world query
};

int dispatch(const std::string& command, const RunConfig& config, std::ostream& out, std::ostream& err,
             const DispatchOptions& options = {});

// Full command line: `crossia <command> [flags]`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace crossia::cli
