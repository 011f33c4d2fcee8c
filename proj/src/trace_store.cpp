#include "rvec/trace_store.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>

#include "rvec/container.hpp"
#include "rvec/error.hpp"
#include "rvec/kernels.hpp"

namespace rvec {

using nlohmann::json;

void ActivationTrace::validate() const {
  if (activations.rows() == 0) fail(ErrorKind::EmptyTrace, "trace " + instance_id + " has no rows");
  if (!token_ids.empty() && token_ids.size() != activations.rows())
    fail(ErrorKind::DimensionMismatch, "token_ids length does not match activation rows");
  if (layer < 0) fail(ErrorKind::ConfigError, "negative layer");
}

Matrix ContrastDataset::positives() const {
  Matrix m(pairs.size(), d);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    std::copy(pairs[i].pos_mean.begin(), pairs[i].pos_mean.end(), m.row(i).begin());
  return m;
}

Matrix ContrastDataset::negatives() const {
  Matrix m(pairs.size(), d);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    std::copy(pairs[i].neg_mean.begin(), pairs[i].neg_mean.end(), m.row(i).begin());
  return m;
}

Vector mean_activation(const ActivationTrace& trace) {
  const Matrix& a = trace.activations;
  if (a.rows() == 0) fail(ErrorKind::EmptyTrace, "mean of an empty trace");
  if (!all_finite(a.data())) fail(ErrorKind::NonFinite, "trace " + trace.instance_id + " has NaN/Inf");
  Vector mean(a.cols());
  kernels::serial::column_means(a, mean);
  return mean;
}

ContrastDataset build_contrast_pairs(std::span<const ActivationTrace> strong_runs,
                                     std::span<const ActivationTrace> weak_runs) {
  require(!strong_runs.empty(), ErrorKind::NoValidPairs, "no strong runs");
  const ReasoningType type = strong_runs.front().reasoning_type;
  const std::size_t d = strong_runs.front().dim();

  std::map<std::string, const ActivationTrace*> weak_by_id;
  for (const auto& w : weak_runs) {
    require(w.variant == Variant::weak_prompt, ErrorKind::ConfigError,
            "weak run " + w.instance_id + " is not a weak_prompt variant");
    require(w.reasoning_type == type, ErrorKind::ConfigError, "mixed reasoning types");
    require(w.dim() == d, ErrorKind::DimensionMismatch, "run dimension differs across dataset");
    weak_by_id.emplace(w.instance_id, &w);
  }

  ContrastDataset out;
  out.reasoning_type = type;
  out.d = d;
  for (const auto& s : strong_runs) {
    require(s.variant == Variant::strong_prompt, ErrorKind::ConfigError,
            "strong run " + s.instance_id + " is not a strong_prompt variant");
    require(s.reasoning_type == type, ErrorKind::ConfigError, "mixed reasoning types");
    require(s.dim() == d, ErrorKind::DimensionMismatch, "run dimension differs across dataset");
    auto it = weak_by_id.find(s.instance_id);
    if (it == weak_by_id.end()) {
      ++out.unmatched;
      continue;
    }
    const ActivationTrace& w = *it->second;
    if (!(s.correct && !w.correct)) continue;
    out.pairs.push_back({s.instance_id, type, mean_activation(s), mean_activation(w)});
  }
  if (out.pairs.empty())
    fail(ErrorKind::NoValidPairs, "no (strong correct, weak incorrect) instances for " +
                                      std::string(to_string(type)));
  return out;
}

std::map<ReasoningType, ContrastDataset> build_contrast_datasets(
    std::span<const ActivationTrace> runs) {
  std::map<ReasoningType, ContrastDataset> out;
  for (ReasoningType t : kReasoningTypes) {
    std::vector<ActivationTrace> strong, weak;
    for (const auto& r : runs) {
      if (r.reasoning_type != t) continue;
      if (r.variant == Variant::strong_prompt) strong.push_back(r);
      if (r.variant == Variant::weak_prompt) weak.push_back(r);
    }
    if (strong.empty()) continue;
    try {
      out.emplace(t, build_contrast_pairs(strong, weak));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NoValidPairs) throw;
    }
  }
  return out;
}

namespace {

template <typename F>
auto with_format_errors(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("bad header: ") + e.what());
  }
}

}  // namespace

void write_trace(const ActivationTrace& trace, const std::filesystem::path& path) {
  trace.validate();
  json header = {
      {"instance_id", trace.instance_id},
      {"reasoning_type", to_string(trace.reasoning_type)},
      {"variant", to_string(trace.variant)},
      {"layer", trace.layer},
      {"correct", trace.correct},
      {"n_tokens", trace.n_tokens()},
      {"d", trace.dim()},
      {"has_token_ids", !trace.token_ids.empty()},
  };
  BodyWriter body;
  body.matrix(trace.activations);
  if (!trace.token_ids.empty()) body.u32(trace.token_ids);
  write_container(path, "RVTR", header, body.bytes());
}

ActivationTrace read_trace(const std::filesystem::path& path) {
  Container c = read_container(path, "RVTR");
  return with_format_errors([&] {
    ActivationTrace t;
    const json& h = c.header;
    t.instance_id = h.at("instance_id").get<std::string>();
    t.reasoning_type = parse_reasoning_type(h.at("reasoning_type").get<std::string>());
    t.variant = parse_variant(h.at("variant").get<std::string>());
    t.layer = h.at("layer").get<int>();
    t.correct = h.at("correct").get<bool>();
    const auto n = h.at("n_tokens").get<std::size_t>();
    const auto d = h.at("d").get<std::size_t>();
    const bool has_ids = h.at("has_token_ids").get<bool>();
    if (n == 0) fail(ErrorKind::FormatError, "trace declares zero tokens");
    BodyReader body(c.body);
    t.activations = body.matrix(n, d);
    if (has_ids) t.token_ids = body.u32(n);
    body.expect_end();
    return t;
  });
}

void write_trace_dataset(const std::filesystem::path& dir, std::span<const ActivationTrace> traces) {
  std::filesystem::create_directories(dir);
  json manifest = {{"version", 1}, {"traces", json::array()}};
  for (std::size_t i = 0; i < traces.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "trace_%06zu.rvtr", i);
    write_trace(traces[i], dir / name);
    manifest["traces"].push_back(name);
  }
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<ActivationTrace> read_trace_dataset(const std::filesystem::path& dir) {
  const std::string text = read_text_file(dir / "manifest.json");
  std::vector<std::string> files = with_format_errors([&] {
    return json::parse(text).at("traces").get<std::vector<std::string>>();
  });
  std::vector<ActivationTrace> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_trace(dir / f));
  if (!out.empty()) {
    const std::size_t d = out.front().dim();
    for (const auto& t : out)
      require(t.dim() == d, ErrorKind::DimensionMismatch, "trace dimension differs in dataset");
  }
  return out;
}

void write_contrast_dataset(const ContrastDataset& data, const std::filesystem::path& path) {
  json ids = json::array();
  for (const auto& p : data.pairs) ids.push_back(p.instance_id);
  json header = {{"reasoning_type", to_string(data.reasoning_type)},
                 {"n_pairs", data.pairs.size()},
                 {"d", data.d},
                 {"unmatched", data.unmatched},
                 {"instance_ids", ids}};
  BodyWriter body;
  body.matrix(data.positives());
  body.matrix(data.negatives());
  write_container(path, "RVCD", header, body.bytes());
}

ContrastDataset read_contrast_dataset(const std::filesystem::path& path) {
  Container c = read_container(path, "RVCD");
  return with_format_errors([&] {
    ContrastDataset data;
    const json& h = c.header;
    data.reasoning_type = parse_reasoning_type(h.at("reasoning_type").get<std::string>());
    data.d = h.at("d").get<std::size_t>();
    data.unmatched = h.at("unmatched").get<std::size_t>();
    const auto ids = h.at("instance_ids").get<std::vector<std::string>>();
    const auto n = h.at("n_pairs").get<std::size_t>();
    if (ids.size() != n) fail(ErrorKind::FormatError, "instance_ids length mismatch");
    BodyReader body(c.body);
    Matrix pos = body.matrix(n, data.d);
    Matrix neg = body.matrix(n, data.d);
    body.expect_end();
    for (std::size_t i = 0; i < n; ++i) {
      auto pr = pos.row(i);
      auto nr = neg.row(i);
      data.pairs.push_back({ids[i], data.reasoning_type, Vector(pr.begin(), pr.end()),
                            Vector(nr.begin(), nr.end())});
    }
    return data;
  });
}

}  // namespace rvec
