#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <string>

#include <json.hpp>

#include "helpers.hpp"
#include "rvec/container.hpp"
#include "rvec/pipeline.hpp"

using namespace rvec;
using nlohmann::json;
using rvec::testing::kind_of;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out, err;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + RVEC_CLI_PATH + "\" " + args + " >\"" +
                          out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(out);
  r.err = read_text_file(err);
  return r;
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("config merging rejects unknown keys and type changes") {
  const json base = default_config();
  CHECK_NOTHROW(validate_config(base));
  CHECK(merge_config(base, json{{"refine", {{"lambda_com", 1}}}})["refine"]["lambda_com"] == 1.0);
  CHECK(kind_of([&] { merge_config(base, json{{"refine", {{"lambda_cmo", 1.0}}}}); }) ==
        ErrorKind::ConfigError);
  CHECK(kind_of([&] { merge_config(base, json{{"probe", {{"epochs", 2.5}}}}); }) ==
        ErrorKind::ConfigError);
  CHECK(kind_of([&] { merge_config(base, json{{"probe", {{"epochs", "many"}}}}); }) ==
        ErrorKind::ConfigError);
  CHECK(kind_of([&] { merge_config(base, json{{"steering", 3}}); }) == ErrorKind::ConfigError);
  try {
    merge_config(base, json{{"analysis", {{"kk", 1}}}});
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("analysis.kk") != std::string::npos);
  }
}

TEST_CASE("command-line style overrides") {
  json cfg = default_config();
  apply_override(cfg, "refine.lambda_sub=0.5");
  apply_override(cfg, "steering.strengths=[0, 3]");
  apply_override(cfg, "subspace.threshold_mode=absolute");
  apply_override(cfg, "output_dir=/tmp/x");
  CHECK(cfg["refine"]["lambda_sub"] == 0.5);
  CHECK(cfg["steering"]["strengths"] == json::array({0, 3}));
  CHECK(cfg["subspace"]["threshold_mode"] == "absolute");
  CHECK(cfg["output_dir"] == "/tmp/x");
  CHECK(kind_of([&] { apply_override(cfg, "refine.lambda_sub"); }) == ErrorKind::ConfigError);
  CHECK(kind_of([&] { apply_override(cfg, "nope.x=1"); }) == ErrorKind::ConfigError);
}

TEST_CASE("config validation of enums and ranges") {
  json cfg = default_config();
  cfg["refine"]["init"] = "zeros";
  CHECK(kind_of([&] { validate_config(cfg); }) == ErrorKind::ConfigError);
  cfg = default_config();
  cfg["subspace"]["quantile_alpha"] = 1.5;
  CHECK(kind_of([&] { validate_config(cfg); }) == ErrorKind::ConfigError);
  cfg["subspace"]["threshold_mode"] = "absolute";
  CHECK_NOTHROW(validate_config(cfg));
  cfg = default_config();
  cfg["subspace"]["epsilon"] = 0.0;
  CHECK(kind_of([&] { validate_config(cfg); }) == ErrorKind::ConfigError);
}

TEST_CASE("subcommand list") {
  CHECK(subcommand_names().size() == 14);
  CHECK(is_subcommand("sensitivity-sweep"));
  CHECK_FALSE(is_subcommand("print-config"));
  CHECK(kind_of([] { run_stage("frobnicate", default_config()); }) == ErrorKind::ConfigError);
}

TEST_CASE("planted pipeline stages, manifests and the sensitivity grid") {
  const fs::path dir = testing::scratch_dir("pipeline_planted");
  json cfg = default_config();
  cfg["output_dir"] = dir.string();
  cfg["paths"]["dataset"] = (dir / "planted").string();
  cfg["sae_train"]["steps"] = 200;
  cfg["probe"]["epochs"] = 20;
  cfg["refine"]["epochs"] = 5;
  cfg["sensitivity"]["metric"] = "probe_accuracy";
  for (const char* stage : {"gen-synthetic", "train-sae", "train-probes", "build-subspaces",
                            "refine", "sensitivity-sweep"}) {
    const StageResult r = run_stage(stage, cfg);
    CHECK(!r.artifacts.empty());
    for (const fs::path& p : r.artifacts) CHECK(fs::exists(dir / p));
    const json manifest =
        json::parse(read_text_file(dir / "manifests" / (std::string(stage) + ".json")));
    CHECK(manifest["stage"] == stage);
    CHECK(manifest["config"] == cfg);
    CHECK(manifest["artifacts"].size() == r.artifacts.size());
    CHECK(manifest["seeds"].contains("refine.seed"));
  }
  for (const char* type : {"deductive", "inductive", "abductive"}) {
    const std::string csv = read_text_file(dir / (std::string("sensitivity_") + type + ".csv"));
    CHECK(csv.substr(0, csv.find('\n')) == "row,lambda_com,lambda_sub,metric,std");
    CHECK(line_count(csv) == 1 + 9 + 1);
  }
  CHECK(fs::exists(dir / "vector_refined_inductive.rvve"));
  CHECK(fs::exists(dir / "cosine_naive.csv"));
}

TEST_CASE("missing inputs are module errors") {
  const fs::path dir = testing::scratch_dir("pipeline_missing");
  json cfg = default_config();
  cfg["output_dir"] = dir.string();
  CHECK_THROWS_AS(run_stage("refine", cfg), Error);
}

TEST_CASE("CLI exit codes and error JSON") {
  const fs::path dir = testing::scratch_dir("cli");
  SUBCASE("unknown subcommand is a usage error") {
    CHECK(run_cli("frobnicate", dir).code == 2);
  }
  SUBCASE("no subcommand is a usage error") { CHECK(run_cli("", dir).code == 2); }
  SUBCASE("unknown option is a usage error") {
    CHECK(run_cli("refine --lambda 3", dir).code == 2);
  }
  SUBCASE("print-config applies overrides") {
    const CliResult r = run_cli("print-config --set refine.lambda_com=0.5", dir);
    CHECK(r.code == 0);
    CHECK(json::parse(r.out)["refine"]["lambda_com"] == 0.5);
  }
  SUBCASE("bad override is a module error with JSON on stderr") {
    const CliResult r = run_cli("print-config --set refine.lambda_cmo=0.5", dir);
    CHECK(r.code == 1);
    const json err = json::parse(r.err);
    CHECK(err["error"] == "ConfigError");
    CHECK(err["message"].get<std::string>().find("refine.lambda_cmo") != std::string::npos);
  }
  SUBCASE("missing artifacts are module errors") {
    const CliResult r = run_cli("refine --output-dir \"" + (dir / "empty").string() + "\"", dir);
    CHECK(r.code == 1);
    CHECK(json::parse(r.err).contains("error"));
  }
  SUBCASE("config files and manifests reproduce a run") {
    write_text_file(dir / "cfg.json", R"({"planted": {"n_instances": 20}})");
    const std::string out = (dir / "run").string();
    CHECK(run_cli("gen-synthetic --config \"" + (dir / "cfg.json").string() + "\" --output-dir \"" +
                      out + "\"",
                  dir)
              .code == 0);
    const std::string first = read_text_file(dir / "run" / "planted" / "contrast_deductive.rvcd");
    const std::string again = (dir / "again").string();
    CHECK(run_cli("gen-synthetic --manifest \"" + out + "/manifests/gen-synthetic.json\" --output-dir \"" +
                      again + "\"",
                  dir)
              .code == 0);
    CHECK(read_text_file(dir / "again" / "planted" / "contrast_deductive.rvcd") == first);
  }
}
