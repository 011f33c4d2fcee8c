// rvec: command-line entry point for the pipeline stages.
//
//   rvec <stage> [--config FILE] [--manifest FILE] [--set key.path=value]... [--output-dir DIR]
//   rvec print-config [...]
//
// Exit codes: 0 success, 1 module error (error JSON on stderr), 2 usage error.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rvec/container.hpp"
#include "rvec/error.hpp"
#include "rvec/pipeline.hpp"

namespace {

using nlohmann::json;

constexpr int kModuleError = 1;
constexpr int kUsageError = 2;

void print_error(const char* kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

struct Options {
  std::string config_file;
  std::string manifest_file;
  std::vector<std::string> overrides;
  std::string output_dir;
};

json effective_config(const Options& o) {
  json cfg = rvec::default_config();
  if (!o.manifest_file.empty()) {
    json manifest;
    try {
      manifest = json::parse(rvec::read_text_file(o.manifest_file));
    } catch (const json::exception& e) {
      rvec::fail(rvec::ErrorKind::ConfigError, std::string("bad manifest: ") + e.what());
    }
    if (!manifest.contains("config"))
      rvec::fail(rvec::ErrorKind::ConfigError, "manifest has no config section");
    cfg = rvec::merge_config(cfg, manifest.at("config"));
  }
  if (!o.config_file.empty()) {
    json file;
    try {
      file = json::parse(rvec::read_text_file(o.config_file));
    } catch (const json::exception& e) {
      rvec::fail(rvec::ErrorKind::ConfigError, std::string("bad config file: ") + e.what());
    }
    cfg = rvec::merge_config(cfg, file);
  }
  for (const auto& s : o.overrides) rvec::apply_override(cfg, s);
  if (!o.output_dir.empty()) cfg["output_dir"] = o.output_dir;
  rvec::validate_config(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reasoning-vector extraction, refinement and steering analysis"};
  app.require_subcommand(1, 1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_file, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--manifest", opt.manifest_file, "re-run with the config of a run manifest")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", opt.overrides, "override one key, e.g. refine.lambda_com=0.5");
    sub->add_option("--output-dir", opt.output_dir, "output directory");
  };
  const std::map<std::string, std::string> about = {
      {"gen-synthetic", "write the planted contrastive dataset"},
      {"train-toy", "train the toy transformer on the three reasoning tasks"},
      {"train-sae", "train the sparse autoencoder on recorded activations"},
      {"extract-pairs", "generate traces and build contrastive pairs"},
      {"train-probes", "train one logistic probe per reasoning type"},
      {"build-subspaces", "select SAE features and build reasoning subspaces"},
      {"refine", "jointly refine the probe vectors"},
      {"steer-eval", "evaluate unsteered, mono and refined steering"},
      {"sweep", "steering metric across the strength grid"},
      {"analyze-delta", "rank features by mean code shift"},
      {"coactivation", "feature co-activation matrix across settings"},
      {"spans", "highest-scoring log-prob shift spans"},
      {"patch", "attention-head patching heatmap"},
      {"sensitivity-sweep", "refinement over the lambda grid"}};
  for (const auto& name : rvec::subcommand_names())
    add_common(app.add_subcommand(name, about.count(name) ? about.at(name) : ""));
  add_common(app.add_subcommand("print-config", "print the effective configuration"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const json cfg = effective_config(opt);
    if (name == "print-config") {
      std::cout << cfg.dump(2) << "\n";
      return 0;
    }
    const rvec::StageResult r = rvec::run_stage(name, cfg);
    for (const auto& line : r.log) std::cout << name << ": " << line << "\n";
    std::cout << name << ": wrote " << r.artifacts.size() << " artifacts to "
              << cfg.at("output_dir").get<std::string>() << "\n";
  } catch (const rvec::Error& e) {
    print_error(rvec::to_string(e.kind()), e.what());
    return kModuleError;
  } catch (const std::exception& e) {
    print_error("InternalError", e.what());
    return kModuleError;
  }
  return 0;
}
