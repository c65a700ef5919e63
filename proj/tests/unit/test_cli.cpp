#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "crossia/cli.hpp"

using namespace crossia;
using namespace crossia::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_file(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorCode config_error(const nlohmann::json& doc, std::string& message) {
  try {
    resolve_config(doc);
  } catch (const Error& e) {
    message = e.what();
    return e.code();
  }
  FAIL("expected a config error");
  return ErrorCode::kInvalidArgument;
}

int invoke(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "crossia");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

const char* kTinyConfig = R"({
  "seed": 5,
  "world": {"instances": 4, "frames": 30, "queries_per_instance": 1},
  "database": {"max_shots": 3},
  "training": {
    "epochs": 1, "batch_pairs": 8, "steps_per_epoch": 1,
    "augment": {"output_size": 12},
    "architecture": {"conv1_channels": 4, "conv2_channels": 4, "feature_dim": 8,
                     "projector_hidden": 8, "projection_dim": 8, "predictor_hidden": 4},
    "shots": 1
  },
  "evaluation": {"shots_list": [1], "deblur_condition": false}
})";

}  // namespace

TEST_CASE("config resolution") {
  const auto dir = scratch("crossia_cli_cfg");
  const auto empty = parse_config(write_file(dir / "empty.json", "  \n"));
  CHECK(empty.preset == "desk");
  CHECK(empty.training.to_json() == preset_config("desk").training.to_json());
  CHECK(empty.world.instances == 12);

  const auto paper = resolve_config(nlohmann::json{{"preset", "paper"}});
  CHECK(paper.training.learning_rate == 0.07);
  CHECK(paper.training.batch_pairs == 256);
  CHECK(paper.training.epochs == 1000);

  Overrides o;
  o.seed = 17;
  o.shots = 3;
  o.adversarial = true;
  o.deblur = "unsharp";
  const auto c = resolve_config(nlohmann::json{{"seed", 2}, {"training", {{"epochs", 7}}}}, o);
  CHECK(c.seed == 17);
  CHECK(c.world.seed == 17);
  CHECK(c.training.seed == 17);
  CHECK(c.training.shots == 3);
  CHECK(c.training.adversarial);
  CHECK(c.training.epochs == 7);
  CHECK(c.adapters.deblur == "unsharp");

  std::string message;
  CHECK(config_error({{"training", {{"learnig_rate", 0.1}}}}, message) == ErrorCode::kConfig);
  CHECK(message.find("learnig_rate") != std::string::npos);
  CHECK(config_error({{"training", {{"epochs", "ten"}}}, {"wrld", {}}}, message) == ErrorCode::kConfig);
  CHECK(message.find("2 problem(s)") != std::string::npos);
  CHECK(message.find("training.epochs") != std::string::npos);
  CHECK(message.find("wrld") != std::string::npos);
  CHECK(config_error({{"training", {{"shots", 9}}}}, message) == ErrorCode::kConfig);
  CHECK(config_error({{"preset", "laptop"}}, message) == ErrorCode::kConfig);
  CHECK(config_error({{"adapters", {{"deblur", "external"}}}}, message) == ErrorCode::kConfig);
  CHECK(message.find("deblur_command") != std::string::npos);

  // Training settings do not move the data-stage fingerprint.
  auto a = resolve_config(nlohmann::json::object());
  auto b = a;
  b.training.epochs = 3;
  CHECK(a.fingerprint() == b.fingerprint());
  b.world.frames = 50;
  CHECK(a.fingerprint() != b.fingerprint());
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  const auto dir = scratch("crossia_cli_exit");
  std::string err;
  CHECK(invoke({}, nullptr, &err) == 2);
  CHECK(invoke({"fly"}) == 2);
  CHECK(invoke({"finetune", "--shots", "4"}) == 2);
  write_file(dir / "bad.json", R"({"training": {"epochs": -1}})");
  CHECK(invoke({"finetune", "--config", (dir / "bad.json").string()}, nullptr, &err) == 4);
  CHECK(err.find("training") != std::string::npos);
  write_file(dir / "tiny.json", kTinyConfig);
  const auto root = (dir / "runs").string();
  CHECK(invoke({"collect", "--config", (dir / "tiny.json").string(), "--run-root", root}) == 3);
  CHECK(invoke({"gen-world", "--config", (dir / "tiny.json").string(), "--run-root", root}) == 0);
  CHECK(invoke({"collect", "--config", (dir / "tiny.json").string(), "--run-root", root}) == 0);
  CHECK(invoke({"locate", "--config", (dir / "tiny.json").string(), "--run-root", root}, nullptr, &err) == 3);
  CHECK(invoke({"evaluate", "--config", (dir / "tiny.json").string(), "--run-root", root}) == 3);
  fs::remove_all(dir);
}

TEST_CASE("end-to-end run is reproducible across run roots") {
  const auto dir = scratch("crossia_cli_e2e");
  const auto config = write_file(dir / "tiny.json", kTinyConfig).string();
  std::vector<fs::path> run_dirs;
  for (const std::string name : {"a", "b"}) {
    const auto root = (dir / name).string();
    for (const std::string command : {"gen-world", "collect", "finetune", "evaluate", "locate", "export-latent"}) {
      std::string out, err;
      const int code = invoke({command, "--config", config, "--run-root", root}, &out, &err);
      INFO(command << ": " << err);
      REQUIRE(code == 0);
      if (command == "evaluate") CHECK(out.find("CrossIA | SR ") != std::string::npos);
      if (command == "locate") CHECK(nlohmann::json::parse(out).contains("goal"));
    }
    const auto c = parse_config(config, Overrides{.run_root = root});
    run_dirs.push_back(c.run_dir());
  }
  for (const auto& rel : {"reports/benchmark.csv", "reports/benchmark.json", "reports/locate.json",
                          "latent/finetuned.csv", "db/manifest.json", "db/map.json"}) {
    INFO(rel);
    REQUIRE(fs::exists(run_dirs[0] / rel));
    CHECK(slurp(run_dirs[0] / rel) == slurp(run_dirs[1] / rel));
  }
  fs::remove_all(dir);
}
