#include "rvec/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>

#include "rvec/analysis.hpp"
#include "rvec/container.hpp"
#include "rvec/csv.hpp"
#include "rvec/error.hpp"
#include "rvec/kernels.hpp"
#include "rvec/planted.hpp"
#include "rvec/probes.hpp"
#include "rvec/refine.hpp"
#include "rvec/sae.hpp"
#include "rvec/steering.hpp"
#include "rvec/toy_model.hpp"
#include "rvec/toy_tasks.hpp"
#include "rvec/toy_train.hpp"
#include "rvec/trace_store.hpp"

namespace rvec {

namespace fs = std::filesystem;
using nlohmann::json;

// --- configuration ---------------------------------------------------------

json default_config() {
  return json::parse(R"({
    "output_dir": "rvec_out",
    "paths": {"dataset": "", "model": "", "sae": "", "sidecar": ""},
    "toy_model": {"d_model": 32, "n_layers": 4, "n_heads": 4, "vocab": 64, "max_seq": 32, "seed": 1},
    "toy_train": {"steps": 1500, "batch_size": 32, "learning_rate": 0.003, "seed": 2},
    "tasks": {"seed": 3, "n_train": 192},
    "planted": {"d": 32, "noise_sigma": 0.05, "n_instances": 200, "seed": 4, "direction_seed": 5},
    "sae_train": {"m": 64, "l1_coeff": 0.01, "steps": 2000, "learning_rate": 0.001,
                  "batch_size": 32, "seed": 6, "input": "contrast_means"},
    "subspace": {"epsilon": 1e-6, "quantile_alpha": 0.9, "K": 3000, "threshold_mode": "quantile",
                 "aggregation": "per_instance_mean"},
    "probe": {"learning_rate": 0.001, "epochs": 200, "batch_size": 16, "seed": 7, "l2": 0.0,
              "standardize": false},
    "refine": {"lambda_com": 0.1, "lambda_sub": 0.01, "learning_rate": 0.001, "epochs": 200,
               "batch_size": 16, "seed": 8, "init": "from_naive"},
    "steering": {"layer": 1, "strength": 4.0, "strengths": [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
                 "max_len": 16, "split": "held_out", "sampling_n": 5, "temperature": 1.0,
                 "sampling_seed": 9},
    "analysis": {"k": 100, "coactivation_mask": true, "span_max_len": 5,
                 "aggregation": "per_instance_mean", "top_n": 5, "patch_instance": 0},
    "sensitivity": {"lambda_com": [0.01, 0.1, 1.0], "lambda_sub": [0.1, 0.01, 0.001],
                    "metric": "steering_accuracy"}
  })");
}

namespace {

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

bool same_kind(const json& def, const json& v) {
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) {
    if (!v.is_array()) return false;
    for (const auto& e : v)
      if (!e.is_number()) return false;
    return true;
  }
  if (def.is_object()) return v.is_object();
  return false;
}

void merge_into(json& base, const json& overrides, const std::string& prefix) {
  if (!overrides.is_object())
    fail(ErrorKind::ConfigError, "config section '" + prefix + "' must be an object");
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    const std::string path = join_path(prefix, it.key());
    if (!base.contains(it.key())) fail(ErrorKind::ConfigError, "unknown config key '" + path + "'");
    json& slot = base[it.key()];
    if (!same_kind(slot, it.value()))
      fail(ErrorKind::ConfigError, "config key '" + path + "' expects " + slot.type_name() +
                                       ", got " + it.value().type_name());
    if (slot.is_object()) {
      merge_into(slot, it.value(), path);
    } else if (slot.is_number_float()) {
      slot = it.value().get<double>();
    } else {
      slot = it.value();
    }
  }
}

void collect_seeds(const json& j, const std::string& prefix, json& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string path = join_path(prefix, it.key());
    if (it.value().is_object()) {
      collect_seeds(it.value(), path, out);
    } else if (it.key() == "seed" || it.key().ends_with("_seed")) {
      out[path] = it.value();
    }
  }
}

void require_one_of(const json& cfg, const char* section, const char* key,
                    std::initializer_list<const char*> allowed) {
  const std::string v = cfg.at(section).at(key).get<std::string>();
  for (const char* a : allowed)
    if (v == a) return;
  fail(ErrorKind::ConfigError,
       std::string("config key '") + section + "." + key + "' has unknown value '" + v + "'");
}

}  // namespace

json merge_config(const json& base, const json& overrides) {
  json out = base;
  merge_into(out, overrides, "");
  return out;
}

void apply_override(json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    fail(ErrorKind::ConfigError, "override must look like key.path=value: " + std::string(assignment));
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  config = merge_config(config, patch);
}

void validate_config(const json& cfg) {
  require_one_of(cfg, "sae_train", "input", {"contrast_means", "trace_tokens"});
  require_one_of(cfg, "subspace", "threshold_mode", {"quantile", "absolute"});
  require_one_of(cfg, "subspace", "aggregation", {"per_instance_mean", "per_token"});
  require_one_of(cfg, "refine", "init", {"from_naive", "random"});
  require_one_of(cfg, "steering", "split", {"held_out", "train"});
  require_one_of(cfg, "analysis", "aggregation", {"per_instance_mean", "per_token"});
  require_one_of(cfg, "sensitivity", "metric", {"steering_accuracy", "probe_accuracy"});
  require(!cfg.at("output_dir").get<std::string>().empty(), ErrorKind::ConfigError,
          "output_dir must not be empty");
  const double alpha = cfg.at("subspace").at("quantile_alpha").get<double>();
  require(cfg.at("subspace").at("threshold_mode") == "absolute" || (alpha > 0.0 && alpha < 1.0),
          ErrorKind::ConfigError, "subspace.quantile_alpha must be in (0, 1)");
  require(cfg.at("subspace").at("epsilon").get<double>() > 0.0, ErrorKind::ConfigError,
          "subspace.epsilon must be > 0");
  require(cfg.at("subspace").at("K").get<long long>() >= 1, ErrorKind::ConfigError,
          "subspace.K must be >= 1");
  require(cfg.at("steering").at("max_len").get<long long>() >= 1, ErrorKind::ConfigError,
          "steering.max_len must be >= 1");
  require(cfg.at("steering").at("sampling_n").get<long long>() >= 0, ErrorKind::ConfigError,
          "steering.sampling_n must be >= 0");
  require(cfg.at("analysis").at("k").get<long long>() >= 1, ErrorKind::ConfigError,
          "analysis.k must be >= 1");
  require(cfg.at("analysis").at("span_max_len").get<long long>() >= 1, ErrorKind::ConfigError,
          "analysis.span_max_len must be >= 1");
  for (const char* key : {"d_model", "n_layers", "n_heads", "vocab", "max_seq"})
    require(cfg.at("toy_model").at(key).get<long long>() >= 1, ErrorKind::ConfigError,
            std::string("toy_model.") + key + " must be >= 1");
  for (const char* section : {"toy_train", "sae_train", "probe", "refine"}) {
    const json& s = cfg.at(section);
    if (s.contains("batch_size"))
      require(s.at("batch_size").get<long long>() >= 0, ErrorKind::ConfigError,
              std::string(section) + ".batch_size must be >= 0");
    for (const char* key : {"steps", "epochs"})
      if (s.contains(key))
        require(s.at(key).get<long long>() >= 0, ErrorKind::ConfigError,
                std::string(section) + "." + key + " must be >= 0");
  }
  for (const char* section : {"toy_model", "toy_train", "tasks", "planted", "sae_train", "probe",
                              "refine"})
    require(cfg.at(section).at("seed").get<long long>() >= 0, ErrorKind::ConfigError,
            std::string(section) + ".seed must be >= 0");
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names = {
      "gen-synthetic", "train-toy", "train-sae",     "extract-pairs", "train-probes",
      "build-subspaces", "refine",  "steer-eval",    "sweep",         "analyze-delta",
      "coactivation",  "spans",     "patch",         "sensitivity-sweep"};
  return names;
}

bool is_subcommand(std::string_view name) {
  const auto& n = subcommand_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

// --- stage context ---------------------------------------------------------

namespace {

std::string type_name(ReasoningType t) { return std::string(to_string(t)); }

std::uint64_t as_u64(const json& j) { return j.get<std::uint64_t>(); }
std::size_t as_size(const json& j) { return static_cast<std::size_t>(j.get<std::uint64_t>()); }

/// Shared state for one stage invocation: typed config plus artifact tracking.
class Stage {
 public:
  explicit Stage(const json& cfg) : cfg_(cfg), out_(cfg.at("output_dir").get<std::string>()) {
    fs::create_directories(out_);
  }

  const json& cfg() const { return cfg_; }
  const json& at(const char* section) const { return cfg_.at(section); }
  const fs::path& out() const { return out_; }
  StageResult& result() { return result_; }

  fs::path configured(const char* key, const fs::path& fallback) const {
    const std::string p = cfg_.at("paths").at(key).get<std::string>();
    return p.empty() ? fallback : fs::path(p);
  }
  fs::path dataset_dir() const { return configured("dataset", out_); }
  fs::path model_path() const { return configured("model", out_ / "toy_model.rvwt"); }
  fs::path sae_path() const { return configured("sae", out_ / "sae.rvsa"); }

  void record(const fs::path& rel) { result_.artifacts.push_back(rel); }
  void text(const fs::path& rel, std::string_view content) {
    fs::create_directories((out_ / rel).parent_path());
    write_text_file(out_ / rel, content);
    record(rel);
  }
  void json_file(const fs::path& rel, const json& j) { text(rel, j.dump(2) + "\n"); }
  /// Records every regular file under a freshly written directory, sorted.
  void directory(const fs::path& rel) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(out_ / rel))
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), out_));
    std::sort(files.begin(), files.end());
    for (auto& f : files) record(f);
  }
  void fresh_dir(const fs::path& rel) {
    fs::remove_all(out_ / rel);
    fs::create_directories(out_ / rel);
  }
  void log(std::string line) { result_.log.push_back(std::move(line)); }

  // Typed configuration.
  ToyModelConfig toy_model_config() const {
    const json& j = at("toy_model");
    ToyModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.max_seq = j.at("max_seq").get<int>();
    c.seed = as_u64(j.at("seed"));
    return c;
  }
  TaskSuiteConfig task_config() const {
    return {as_u64(at("tasks").at("seed")), as_size(at("tasks").at("n_train"))};
  }
  ToyTrainConfig toy_train_config() const {
    const json& j = at("toy_train");
    ToyTrainConfig c;
    c.steps = j.at("steps").get<int>();
    c.batch_size = as_size(j.at("batch_size"));
    c.learning_rate = j.at("learning_rate").get<double>();
    c.seed = as_u64(j.at("seed"));
    return c;
  }
  PlantedConfig planted_config() const {
    const json& j = at("planted");
    return PlantedConfig::standard(as_size(j.at("d")), j.at("noise_sigma").get<double>(),
                                   as_size(j.at("n_instances")), as_u64(j.at("seed")),
                                   as_u64(j.at("direction_seed")));
  }
  SaeTrainConfig sae_config() const {
    const json& j = at("sae_train");
    SaeTrainConfig c;
    c.m = as_size(j.at("m"));
    c.l1_coeff = j.at("l1_coeff").get<double>();
    c.steps = j.at("steps").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = as_size(j.at("batch_size"));
    c.seed = as_u64(j.at("seed"));
    return c;
  }
  SubspaceConfig subspace_config() const {
    const json& j = at("subspace");
    SubspaceConfig c;
    c.epsilon = j.at("epsilon").get<double>();
    c.quantile_alpha = j.at("quantile_alpha").get<double>();
    c.K = as_size(j.at("K"));
    c.threshold_mode =
        j.at("threshold_mode") == "absolute" ? ThresholdMode::absolute : ThresholdMode::quantile;
    return c;
  }
  ProbeTrainConfig probe_config() const {
    const json& j = at("probe");
    ProbeTrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = as_size(j.at("batch_size"));
    c.seed = as_u64(j.at("seed"));
    c.l2 = j.at("l2").get<double>();
    c.standardize = j.at("standardize").get<bool>();
    return c;
  }
  RefineConfig refine_config() const {
    const json& j = at("refine");
    RefineConfig c;
    c.lambda_com = j.at("lambda_com").get<double>();
    c.lambda_sub = j.at("lambda_sub").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = as_size(j.at("batch_size"));
    c.seed = as_u64(j.at("seed"));
    c.init = j.at("init") == "random" ? RefineInit::random : RefineInit::from_naive;
    return c;
  }
  int steer_layer() const { return at("steering").at("layer").get<int>(); }
  double steer_strength() const { return at("steering").at("strength").get<double>(); }
  EvalOptions eval_options() const {
    EvalOptions o;
    o.max_len = as_size(at("steering").at("max_len"));
    return o;
  }
  Aggregation analysis_aggregation() const {
    return at("analysis").at("aggregation") == "per_token" ? Aggregation::per_token
                                                           : Aggregation::per_instance_mean;
  }

  // Artifact loading.
  TaskSuite tasks() const { return make_tasks(task_config()); }
  std::span<const TaskInstance> split(const ToyTask& task) const {
    return at("steering").at("split") == "train" ? std::span(task.train) : std::span(task.held_out);
  }
  ToyModel model() const { return read_model(model_path()); }
  SaeModel sae() const { return read_sae(sae_path()); }
  PerType<ContrastDataset> datasets() const {
    PerType<ContrastDataset> out;
    for (ReasoningType t : kReasoningTypes)
      out[index_of(t)] = read_contrast_dataset(dataset_dir() / ("contrast_" + type_name(t) + ".rvcd"));
    return out;
  }
  PerType<ReasoningVector> vectors(const char* kind) const {
    PerType<ReasoningVector> out;
    for (ReasoningType t : kReasoningTypes)
      out[index_of(t)] =
          read_vector(out_ / ("vector_" + std::string(kind) + "_" + type_name(t) + ".rvve"));
    return out;
  }
  PerType<ReasoningSubspace> subspaces() const {
    PerType<ReasoningSubspace> out;
    for (ReasoningType t : kReasoningTypes)
      out[index_of(t)] = read_subspace(out_ / ("subspace_" + type_name(t) + ".rvsb"));
    return out;
  }
  std::vector<ActivationTrace> steered_traces(const char* variant) const {
    return read_trace_dataset(out_ / "steered" / variant);
  }

 private:
  json cfg_;
  fs::path out_;
  StageResult result_;
};

std::vector<ActivationTrace> of_type(const std::vector<ActivationTrace>& traces, ReasoningType t) {
  std::vector<ActivationTrace> out;
  for (const auto& tr : traces)
    if (tr.reasoning_type == t) out.push_back(tr);
  return out;
}

std::string cosine_csv(const PerType<ReasoningVector>& v) {
  const Matrix c = cosine_matrix(v);
  CsvWriter csv("type,deductive,inductive,abductive");
  for (ReasoningType t : kReasoningTypes) {
    const std::size_t r = index_of(t);
    csv.row(to_string(t), c(r, 0), c(r, 1), c(r, 2));
  }
  return csv.str();
}

// --- stages ----------------------------------------------------------------

void gen_synthetic(Stage& s) {
  s.json_file("tasks.json", tasks_to_json(s.tasks()));
  const PlantedConfig pc = s.planted_config();
  const auto data = planted_generate(pc);
  s.json_file("planted/planted.json", planted_to_json(pc));
  for (ReasoningType t : kReasoningTypes) {
    const fs::path rel = fs::path("planted") / ("contrast_" + type_name(t) + ".rvcd");
    write_contrast_dataset(data[index_of(t)], s.out() / rel);
    s.record(rel);
  }
  s.log("planted datasets: 3 × " + std::to_string(pc.n_instances) + " pairs, d = " +
        std::to_string(pc.d));
}

void train_toy(Stage& s) {
  const TaskSuite tasks = s.tasks();
  s.json_file("tasks.json", tasks_to_json(tasks));
  const ToyTrainResult r = train_toy_model(s.toy_model_config(), tasks, s.toy_train_config());
  write_model(r.model, s.out() / "toy_model.rvwt");
  s.record("toy_model.rvwt");
  CsvWriter loss("step,loss");
  for (std::size_t i = 0; i < r.loss_history.size(); ++i) loss.row(i, r.loss_history[i]);
  s.text("toy_train_loss.csv", loss.str());
  json acc;
  for (ReasoningType t : kReasoningTypes) {
    acc[type_name(t)] = r.held_out_accuracy[index_of(t)];
    s.log("held-out accuracy " + type_name(t) + ": " + format_double(r.held_out_accuracy[index_of(t)]));
  }
  s.json_file("toy_train.json", {{"held_out_accuracy", acc},
                                 {"final_loss", r.loss_history.empty() ? 0.0 : r.loss_history.back()},
                                 {"parameters", r.model.parameter_count()}});
}

void extract_pairs(Stage& s) {
  const ToyModel model = s.model();
  const TaskSuite tasks = s.tasks();
  const int record = s.steer_layer() + 1;
  GenerateOptions g;
  g.max_len = s.eval_options().max_len;
  g.stop_token = vocab::EOS;
  g.record_layer = record;

  std::vector<ActivationTrace> all;
  json summary;
  for (const ToyTask& task : tasks) {
    const auto& inst = task.train;
    std::vector<ActivationTrace> strong(inst.size()), weak(inst.size());
    kernels::for_each_index(inst.size() * 2, [&](std::size_t k) {
      const TaskInstance& in = inst[k / 2];
      const bool is_strong = k % 2 == 0;
      Generation gen = generate(model, is_strong ? in.prompt : in.weak_prompt, g);
      ActivationTrace& t = gen.trace;
      t.instance_id = in.instance_id;
      t.reasoning_type = task.reasoning_type;
      t.variant = is_strong ? Variant::strong_prompt : Variant::weak_prompt;
      const auto answer = task.find_answer(gen.tokens);
      t.correct = answer && *answer == in.answer;
      (is_strong ? strong : weak)[k / 2] = std::move(t);
    });
    const ContrastDataset ds = build_contrast_pairs(strong, weak);
    const std::string name = "contrast_" + type_name(task.reasoning_type) + ".rvcd";
    write_contrast_dataset(ds, s.out() / name);
    s.record(name);
    std::size_t strong_ok = 0, weak_ok = 0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
      strong_ok += strong[i].correct;
      weak_ok += weak[i].correct;
      all.push_back(std::move(strong[i]));
      all.push_back(std::move(weak[i]));
    }
    summary[type_name(task.reasoning_type)] = {{"instances", inst.size()},
                                               {"strong_correct", strong_ok},
                                               {"weak_correct", weak_ok},
                                               {"pairs", ds.pairs.size()},
                                               {"unmatched", ds.unmatched}};
    s.log(type_name(task.reasoning_type) + ": " + std::to_string(ds.pairs.size()) + " pairs from " +
          std::to_string(inst.size()) + " instances");
  }
  s.fresh_dir("traces");
  write_trace_dataset(s.out() / "traces", all);
  s.directory("traces");
  s.json_file("pairs.json", {{"record_layer", record}, {"types", summary}});
}

Matrix sae_training_rows(const Stage& s) {
  std::vector<Vector> rows;
  if (s.at("sae_train").at("input") == "trace_tokens") {
    for (const auto& t : read_trace_dataset(s.dataset_dir() / "traces"))
      for (std::size_t i = 0; i < t.n_tokens(); ++i)
        rows.emplace_back(t.activations.row(i).begin(), t.activations.row(i).end());
  } else {
    for (const auto& ds : s.datasets())
      for (const auto& p : ds.pairs) {
        rows.push_back(p.pos_mean);
        rows.push_back(p.neg_mean);
      }
  }
  require(!rows.empty(), ErrorKind::EmptyInput, "no SAE training rows");
  return Matrix::from_rows(rows);
}

void train_sae_stage(Stage& s) {
  const Matrix rows = sae_training_rows(s);
  const SaeModel sae = train_sae(rows, s.sae_config());
  write_sae(sae, s.out() / "sae.rvsa");
  s.record("sae.rvsa");
  const SaeFitReport fit = evaluate_sae(sae, rows);
  s.json_file("sae_fit.json", {{"rows", rows.rows()},
                               {"mean_reconstruction_error", fit.mean_reconstruction_error},
                               {"mean_input_norm", fit.mean_input_norm},
                               {"mean_active_features", fit.mean_active_features}});
  s.log("SAE m = " + std::to_string(sae.m()) + ", relative reconstruction error " +
        format_double(fit.mean_reconstruction_error / fit.mean_input_norm));
}

void train_probes(Stage& s) {
  const auto data = s.datasets();
  const ProbeTrainConfig pc = s.probe_config();
  PerType<ReasoningVector> vectors;
  json report;
  for (ReasoningType t : kReasoningTypes) {
    const TrainedProbe p = train_probe(data[index_of(t)], pc);
    vectors[index_of(t)] = p.vector;
    const std::string name = "vector_naive_" + type_name(t) + ".rvve";
    write_vector(p.vector, s.out() / name);
    s.record(name);
    report[type_name(t)] = {{"train_accuracy", p.train_accuracy}, {"final_loss", p.final_loss}};
    s.log(type_name(t) + " probe accuracy " + format_double(p.train_accuracy));
  }
  s.json_file("probes.json", report);
  s.text("cosine_naive.csv", cosine_csv(vectors));
}

void build_subspaces(Stage& s) {
  const SaeModel sae = s.sae();
  const auto data = s.datasets();
  const SubspaceConfig sc = s.subspace_config();
  const bool per_token = s.at("subspace").at("aggregation") == "per_token";
  std::vector<ActivationTrace> traces;
  if (per_token) traces = read_trace_dataset(s.dataset_dir() / "traces");

  json report;
  for (ReasoningType t : kReasoningTypes) {
    const ContrastDataset& ds = data[index_of(t)];
    FeatureStats stats;
    if (per_token) {
      std::map<std::string, int> kept;
      for (const auto& p : ds.pairs) kept[p.instance_id] = 1;
      std::vector<Vector> pos, neg;
      for (const auto& tr : traces) {
        if (tr.reasoning_type != t || !kept.count(tr.instance_id)) continue;
        auto& dst = tr.variant == Variant::strong_prompt ? pos : neg;
        for (std::size_t i = 0; i < tr.n_tokens(); ++i)
          dst.emplace_back(tr.activations.row(i).begin(), tr.activations.row(i).end());
      }
      require(!pos.empty() && !neg.empty(), ErrorKind::EmptyInput,
              "per-token statistics found no traces for " + type_name(t));
      stats = feature_stats(sae, t, Matrix::from_rows(pos), Matrix::from_rows(neg), sc);
    } else {
      stats = feature_stats(sae, ds, sc);
    }
    const auto ids = select_features(stats, sc, sae.d());
    const ReasoningSubspace sub = build_subspace(sae, ids, t);
    const std::string name = "subspace_" + type_name(t) + ".rvsb";
    write_subspace(sub, s.out() / name);
    s.record(name);

    CsvWriter csv("feature_id,mu_pos,mu_neg,rho,mean_strength,selected");
    for (std::size_t j = 0; j < sae.m(); ++j)
      csv.row(j, stats.mu_pos[j], stats.mu_neg[j], stats.rho[j], stats.mean_strength[j],
              std::find(ids.begin(), ids.end(), j) != ids.end() ? 1 : 0);
    s.text("feature_stats_" + type_name(t) + ".csv", csv.str());
    report[type_name(t)] = {{"feature_ids", ids}, {"rank", sub.rank()}};
    s.log(type_name(t) + ": " + std::to_string(ids.size()) + " features, rank " +
          std::to_string(sub.rank()));
  }
  s.json_file("subspaces.json", report);
}

RefineResult run_refine(const Stage& s, const RefineConfig& rc) {
  return refine_vectors(s.vectors("naive"), s.datasets(), s.subspaces(), rc);
}

void refine_stage(Stage& s) {
  const RefineResult r = run_refine(s, s.refine_config());
  for (ReasoningType t : kReasoningTypes) {
    const std::string name = "vector_refined_" + type_name(t) + ".rvve";
    write_vector(r.vectors[index_of(t)], s.out() / name);
    s.record(name);
  }
  write_loss_history_csv(r.loss_history, s.out() / "loss_history.csv");
  s.record("loss_history.csv");
  s.text("cosine_refined.csv", cosine_csv(r.vectors));
  const LossBreakdown& last = r.loss_history.back().loss;
  s.json_file("refine.json", {{"final_total", last.total},
                              {"final_com", last.com},
                              {"final_probe", last.probe},
                              {"final_sub", last.sub}});
  s.log("refined total loss " + format_double(last.total));
}

struct VariantSpec {
  EvalVariant variant;
  const char* dir;
  Variant trace_variant;
  const PerType<ReasoningVector>* vectors;
};

void steer_eval(Stage& s) {
  const ToyModel model = s.model();
  const TaskSuite tasks = s.tasks();
  const auto naive = s.vectors("naive");
  const auto refined = s.vectors("refined");
  const int layer = s.steer_layer();
  const double strength = s.steer_strength();
  const EvalOptions eo = s.eval_options();
  const VariantSpec variants[] = {
      {EvalVariant::unsteered, "unsteered", Variant::unsteered, nullptr},
      {EvalVariant::mono, "mono", Variant::mono, &naive},
      {EvalVariant::complementary, "complementary", Variant::refined, &refined}};

  std::vector<DecodeMode> decodes = {DecodeMode::greedy()};
  const std::size_t n_sampling = as_size(s.at("steering").at("sampling_n"));
  if (n_sampling > 0)
    decodes.push_back(DecodeMode::sampling(n_sampling, s.at("steering").at("temperature").get<double>(),
                                           as_u64(s.at("steering").at("sampling_seed"))));

  std::vector<EvalReport> reports;
  for (const DecodeMode& dm : decodes)
    for (const ToyTask& task : tasks)
      for (const VariantSpec& v : variants) {
        std::optional<SteeringSpec> spec;
        if (v.vectors) spec = SteeringSpec{(*v.vectors)[index_of(task.reasoning_type)], layer, strength};
        reports.push_back(evaluate(model, task, s.split(task), spec, dm, v.variant, eo));
        const EvalReport& r = reports.back();
        s.log(dm.label() + " " + type_name(task.reasoning_type) + " " +
              std::string(to_string(v.variant)) + ": " + format_double(r.metric));
      }
  s.text("eval.csv", eval_reports_csv(reports));

  // Greedy traces at layer + 1 for the feature analyses.
  for (const VariantSpec& v : variants) {
    std::vector<ActivationTrace> traces;
    for (const ToyTask& task : tasks) {
      const auto inst = s.split(task);
      std::vector<ActivationTrace> part(inst.size());
      kernels::for_each_index(inst.size(), [&](std::size_t i) {
        GenerateOptions g;
        g.max_len = eo.max_len;
        g.stop_token = eo.stop_token;
        g.record_layer = layer + 1;
        if (v.vectors) {
          const SteeringSpec spec{(*v.vectors)[index_of(task.reasoning_type)], layer, strength};
          spec.validate(model.config);
          g.steering = Steering{layer, spec.steering_vector()};
        }
        Generation gen = generate(model, inst[i].prompt, g);
        const auto answer = task.find_answer(gen.tokens);
        gen.trace.instance_id = inst[i].instance_id;
        gen.trace.reasoning_type = task.reasoning_type;
        gen.trace.variant = v.trace_variant;
        gen.trace.correct = answer && *answer == inst[i].answer;
        part[i] = std::move(gen.trace);
      });
      for (auto& t : part) traces.push_back(std::move(t));
    }
    const fs::path rel = fs::path("steered") / v.dir;
    s.fresh_dir(rel);
    write_trace_dataset(s.out() / rel, traces);
    s.directory(rel);
  }
}

void sweep_stage(Stage& s) {
  const ToyModel model = s.model();
  const TaskSuite tasks = s.tasks();
  const auto strengths = s.at("steering").at("strengths").get<std::vector<double>>();
  const EvalOptions eo = s.eval_options();
  for (const char* kind : {"naive", "refined"}) {
    const auto vectors = s.vectors(kind);
    const EvalVariant variant =
        std::string(kind) == "naive" ? EvalVariant::mono : EvalVariant::complementary;
    for (const ToyTask& task : tasks) {
      // Points where every generation loses its answer are kept as rows with
      // an empty metric rather than aborting the sweep.
      CsvWriter csv("strength,metric,n,excluded");
      const auto inst = s.split(task);
      for (double strength : strengths) {
        const SteeringSpec spec{vectors[index_of(task.reasoning_type)], s.steer_layer(), strength};
        try {
          const EvalReport r =
              evaluate(model, task, inst, spec, DecodeMode::greedy(), variant, eo);
          csv.row(strength, r.metric, r.n_instances, r.n_excluded);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::AllExcluded) throw;
          csv.row(strength, "", inst.size(), inst.size());
        }
      }
      s.text("sweep_" + type_name(task.reasoning_type) + "_" + std::string(to_string(variant)) + ".csv",
             csv.str());
    }
  }
}

void analyze_delta(Stage& s) {
  const SaeModel sae = s.sae();
  const auto orig = s.steered_traces("mono");
  const auto refined = s.steered_traces("complementary");
  const std::size_t top_n = as_size(s.at("analysis").at("top_n"));
  json all;
  for (ReasoningType t : kReasoningTypes) {
    const DeltaFeatureReport r =
        delta_features(sae, of_type(orig, t), of_type(refined, t), s.analysis_aggregation(), top_n);
    s.text("delta_" + type_name(t) + ".csv", delta_csv(r));
    all[type_name(t)] = r.delta;
  }
  s.json_file("delta.json", all);
}

void coactivation_stage(Stage& s) {
  const SaeModel sae = s.sae();
  std::vector<std::string> labels;
  std::vector<Vector> settings;
  for (const char* variant : {"unsteered", "mono", "complementary"}) {
    const auto traces = s.steered_traces(variant);
    for (ReasoningType t : kReasoningTypes) {
      labels.push_back(type_name(t) + "/" + variant);
      settings.push_back(mean_code(sae, of_type(traces, t), s.analysis_aggregation()));
    }
  }
  const CoactivationMatrix m =
      coactivation(labels, settings, as_size(s.at("analysis").at("k")),
                   s.at("analysis").at("coactivation_mask").get<bool>());
  s.text("coactivation.csv", coactivation_csv(m));
}

void spans_stage(Stage& s) {
  const fs::path external = s.configured("sidecar", "");
  json sidecar;
  if (!external.empty()) {
    try {
      sidecar = json::parse(read_text_file(external));
    } catch (const json::exception& e) {
      fail(ErrorKind::FormatError, std::string("bad log-prob sidecar: ") + e.what());
    }
  } else {
    const ToyModel model = s.model();
    const auto refined = s.vectors("refined");
    const EvalOptions eo = s.eval_options();
    sidecar = {{"version", 1}, {"instances", json::array()}};
    for (const ToyTask& task : s.tasks()) {
      const auto inst = s.split(task);
      std::vector<json> rows(inst.size());
      const SteeringSpec spec{refined[index_of(task.reasoning_type)], s.steer_layer(),
                              s.steer_strength()};
      kernels::for_each_index(inst.size(), [&](std::size_t i) {
        const auto seq = patch_sequence(model, inst[i].prompt, spec, eo);
        const std::size_t from = inst[i].prompt.size();
        const Steering st{spec.layer, spec.steering_vector()};
        rows[i] = {{"instance_id", inst[i].instance_id},
                   {"reasoning_type", type_name(task.reasoning_type)},
                   {"token_ids", std::vector<std::uint32_t>(seq.begin() + static_cast<long>(from), seq.end())},
                   {"logprobs_steered", token_logprobs(model, seq, from, st)},
                   {"logprobs_base", token_logprobs(model, seq, from)}};
      });
      for (auto& r : rows) sidecar["instances"].push_back(std::move(r));
    }
    s.json_file("spans_sidecar.json", sidecar);
  }

  CsvWriter csv("instance_id,type,start,end,score,token_ids");
  const std::size_t max_len = as_size(s.at("analysis").at("span_max_len"));
  try {
    for (const json& row : sidecar.at("instances")) {
      const auto ids = row.at("token_ids").get<std::vector<std::uint32_t>>();
      const auto delta = token_log_shift(row.at("logprobs_steered").get<std::vector<double>>(),
                                         row.at("logprobs_base").get<std::vector<double>>());
      require(ids.size() == delta.size(), ErrorKind::LengthMismatch,
              "sidecar token_ids and log-probs differ in length");
      const SpanResult r = extract_span(delta, max_len);
      std::string tokens;
      for (std::size_t i = r.start; i <= r.end; ++i)
        tokens += (i == r.start ? "" : " ") + std::to_string(ids[i]);
      csv.row(row.at("instance_id").get<std::string>(), row.value("reasoning_type", ""), r.start,
              r.end, r.score, tokens);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("bad log-prob sidecar: ") + e.what());
  }
  s.text("spans.csv", csv.str());
}

void patch_stage(Stage& s) {
  const ToyModel model = s.model();
  const std::size_t which = as_size(s.at("analysis").at("patch_instance"));
  for (const char* kind : {"naive", "refined"}) {
    const auto vectors = s.vectors(kind);
    const std::string variant = std::string(kind) == "naive" ? "mono" : "complementary";
    for (const ToyTask& task : s.tasks()) {
      const auto inst = s.split(task);
      require(which < inst.size(), ErrorKind::ConfigError, "analysis.patch_instance out of range");
      PatchOptions po;
      po.generation = s.eval_options();
      if (task.reasoning_type == ReasoningType::inductive) {
        po.metric = PatchMetric::hidden_semantic_diff;
      } else {
        po.metric = PatchMetric::logit_diff;
        po.answer_token = inst[which].answer;
      }
      const SteeringSpec spec{vectors[index_of(task.reasoning_type)], s.steer_layer(),
                              s.steer_strength()};
      const PatchHeatmap h = patch_heads(model, inst[which].prompt, spec, po);
      s.text("heatmap_" + type_name(task.reasoning_type) + "_" + variant + ".csv", heatmap_csv(h));
    }
  }
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

void sensitivity_sweep(Stage& s) {
  const auto lcom = s.at("sensitivity").at("lambda_com").get<std::vector<double>>();
  const auto lsub = s.at("sensitivity").at("lambda_sub").get<std::vector<double>>();
  require(!lcom.empty() && !lsub.empty(), ErrorKind::ConfigError, "sensitivity grid is empty");
  const bool steering = s.at("sensitivity").at("metric") == "steering_accuracy";

  const auto naive = s.vectors("naive");
  const auto data = s.datasets();
  const auto subs = s.subspaces();
  std::optional<ToyModel> model;
  std::optional<TaskSuite> tasks;
  if (steering) {
    model = s.model();
    tasks = s.tasks();
  }

  struct Row {
    double lc, ls;
    PerType<double> metric;
  };
  std::vector<Row> rows;
  for (double lc : lcom)
    for (double ls : lsub) {
      RefineConfig rc = s.refine_config();
      rc.lambda_com = lc;
      rc.lambda_sub = ls;
      const RefineResult r = refine_vectors(naive, data, subs, rc);
      Row row{lc, ls, {}};
      for (ReasoningType t : kReasoningTypes) {
        const std::size_t i = index_of(t);
        if (steering) {
          const ToyTask& task = (*tasks)[i];
          const SteeringSpec spec{r.vectors[i], s.steer_layer(), s.steer_strength()};
          row.metric[i] = evaluate(*model, task, s.split(task), spec, DecodeMode::greedy(),
                                   EvalVariant::complementary, s.eval_options())
                              .metric;
        } else {
          row.metric[i] = probe_accuracy(r.vectors[i], LabeledSet::from(data[i]));
        }
      }
      rows.push_back(row);
    }

  for (ReasoningType t : kReasoningTypes) {
    const std::size_t i = index_of(t);
    CsvWriter csv("row,lambda_com,lambda_sub,metric,std");
    std::vector<double> values;
    for (const Row& r : rows) {
      csv.row("grid", r.lc, r.ls, r.metric[i], "");
      values.push_back(r.metric[i]);
    }
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    csv.row("summary", "", "", mean, sample_std(values));
    s.text("sensitivity_" + type_name(t) + ".csv", csv.str());
    s.log(type_name(t) + ": " + format_double(mean) + " ± " + format_double(sample_std(values)));
  }
}

using StageFn = std::function<void(Stage&)>;

const std::map<std::string, StageFn, std::less<>>& stage_table() {
  static const std::map<std::string, StageFn, std::less<>> table = {
      {"gen-synthetic", gen_synthetic},   {"train-toy", train_toy},
      {"train-sae", train_sae_stage},     {"extract-pairs", extract_pairs},
      {"train-probes", train_probes},     {"build-subspaces", build_subspaces},
      {"refine", refine_stage},           {"steer-eval", steer_eval},
      {"sweep", sweep_stage},             {"analyze-delta", analyze_delta},
      {"coactivation", coactivation_stage}, {"spans", spans_stage},
      {"patch", patch_stage},             {"sensitivity-sweep", sensitivity_sweep}};
  return table;
}

}  // namespace

StageResult run_stage(std::string_view name, const json& config) {
  const auto& table = stage_table();
  const auto it = table.find(name);
  if (it == table.end()) fail(ErrorKind::ConfigError, "unknown stage '" + std::string(name) + "'");
  validate_config(config);

  Stage stage(config);
  it->second(stage);

  const std::string config_text = config.dump();
  json seeds = json::object();
  collect_seeds(config, "", seeds);
  json artifacts = json::array();
  for (const auto& rel : stage.result().artifacts) {
    const std::string bytes = read_text_file(stage.out() / rel);
    artifacts.push_back({{"path", rel.generic_string()}, {"fnv1a64", hex64(fnv1a64(bytes))}});
  }
  const json manifest = {{"stage", std::string(name)},
                         {"config", config},
                         {"config_hash", hex64(fnv1a64(config_text))},
                         {"seeds", seeds},
                         {"artifacts", artifacts}};
  const fs::path mpath = stage.out() / "manifests" / (std::string(name) + ".json");
  fs::create_directories(mpath.parent_path());
  write_text_file(mpath, manifest.dump(2) + "\n");
  return stage.result();
}

}  // namespace rvec
