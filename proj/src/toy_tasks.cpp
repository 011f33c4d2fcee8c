#include "rvec/toy_tasks.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

#include "rvec/batching.hpp"
#include "rvec/error.hpp"

namespace rvec {

using nlohmann::json;

std::vector<std::uint32_t> TaskInstance::completion() const {
  return {vocab::THINK, answer, vocab::EOS};
}

bool ToyTask::is_candidate(std::uint32_t token) const {
  return std::find(candidates.begin(), candidates.end(), token) != candidates.end();
}

std::optional<std::uint32_t> ToyTask::find_answer(std::span<const std::uint32_t> generated) const {
  for (std::uint32_t t : generated)
    if (is_candidate(t)) return t;
  return std::nullopt;
}

void TaskSuiteConfig::validate() const {
  require(n_train >= 1 && n_train < 256, ErrorKind::ConfigError,
          "tasks.n_train must be in [1, 255]");
}

namespace {

constexpr std::size_t kPerTask = 256;

std::string make_id(ReasoningType t, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3s-%03zu", std::string(to_string(t)).c_str(), i);
  return buf;
}

TaskInstance enumerate(ReasoningType type, std::size_t i) {
  TaskInstance inst;
  inst.instance_id = make_id(type, i);
  const auto n = static_cast<std::uint32_t>(i);
  switch (type) {
    case ReasoningType::deductive: {
      const std::uint32_t a = n / 16, b = n % 16;
      inst.prompt = {vocab::BOS_D, a, b, vocab::SEP};
      inst.answer = vocab::ANS0 + (a + b) % 4;
      break;
    }
    case ReasoningType::inductive: {
      // i = c·64 + (q1·16 + q2·4 + q3), x_k = 4·q_k + c
      const std::uint32_t c = n / 64, q = n % 64;
      inst.prompt = {vocab::BOS_I, 4 * (q / 16) + c, 4 * ((q / 4) % 4) + c, 4 * (q % 4) + c,
                     vocab::SEP};
      inst.answer = vocab::ANS0 + c;
      break;
    }
    case ReasoningType::abductive: {
      const std::uint32_t o1 = n / 16, o2 = n % 16;
      inst.prompt = {vocab::BOS_A, o1, o2, vocab::SEP};
      inst.answer = vocab::ANS0 + (o1 + 16 - o2) % 4;
      break;
    }
  }
  inst.weak_prompt = inst.prompt;
  inst.weak_prompt[1] = vocab::MASK;
  return inst;
}

json instance_json(const TaskInstance& inst) {
  return {{"instance_id", inst.instance_id},
          {"prompt", inst.prompt},
          {"weak_prompt", inst.weak_prompt},
          {"answer", inst.answer}};
}

TaskInstance instance_from_json(const json& j) {
  TaskInstance inst;
  inst.instance_id = j.at("instance_id").get<std::string>();
  inst.prompt = j.at("prompt").get<std::vector<std::uint32_t>>();
  inst.weak_prompt = j.at("weak_prompt").get<std::vector<std::uint32_t>>();
  inst.answer = j.at("answer").get<std::uint32_t>();
  return inst;
}

}  // namespace

TaskSuite make_tasks(const TaskSuiteConfig& cfg) {
  cfg.validate();
  TaskSuite suite;
  for (ReasoningType type : kReasoningTypes) {
    ToyTask& task = suite[index_of(type)];
    task.reasoning_type = type;
    for (std::uint32_t k = 0; k < vocab::kAnswers; ++k) task.candidates.push_back(vocab::ANS0 + k);

    std::vector<std::size_t> order(kPerTask);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed + index_of(type));
    shuffle_indices(order, rng);
    std::sort(order.begin(), order.begin() + static_cast<long>(cfg.n_train));
    std::sort(order.begin() + static_cast<long>(cfg.n_train), order.end());
    for (std::size_t k = 0; k < kPerTask; ++k)
      (k < cfg.n_train ? task.train : task.held_out).push_back(enumerate(type, order[k]));
  }
  return suite;
}

json tasks_to_json(const TaskSuite& tasks) {
  json out = json::object();
  for (const ToyTask& task : tasks) {
    json t = {{"candidates", task.candidates}};
    t["train"] = json::array();
    t["held_out"] = json::array();
    for (const auto& inst : task.train) t["train"].push_back(instance_json(inst));
    for (const auto& inst : task.held_out) t["held_out"].push_back(instance_json(inst));
    out[std::string(to_string(task.reasoning_type))] = std::move(t);
  }
  return out;
}

TaskSuite tasks_from_json(const json& j) {
  TaskSuite suite;
  try {
    for (ReasoningType type : kReasoningTypes) {
      const json& t = j.at(std::string(to_string(type)));
      ToyTask& task = suite[index_of(type)];
      task.reasoning_type = type;
      task.candidates = t.at("candidates").get<std::vector<std::uint32_t>>();
      for (const auto& inst : t.at("train")) task.train.push_back(instance_from_json(inst));
      for (const auto& inst : t.at("held_out")) task.held_out.push_back(instance_from_json(inst));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("bad task JSON: ") + e.what());
  }
  return suite;
}

}  // namespace rvec
