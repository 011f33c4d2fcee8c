#pragma once

// Three small token grammars, one per reasoning type, each answered by one of
// four candidate tokens. Prompts end with SEP; the trained completion is
// THINK, answer, EOS, so the answer is the second generated token.
//
//   deductive  [BOS_D, a, b, SEP]       answer (a + b) mod 4
//   inductive  [BOS_I, x1, x2, x3, SEP]  all x ≡ c (mod 4), answer c
//   abductive  [BOS_A, o1, o2, SEP]      answer (o1 − o2) mod 4
//
// Symbols are tokens 0..15. The weak prompt replaces the first argument with
// MASK, which removes the information needed to answer.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvec/reasoning.hpp"

namespace rvec {

namespace vocab {
inline constexpr std::uint32_t kSymbols = 16;
inline constexpr std::uint32_t SEP = 16;
inline constexpr std::uint32_t THINK = 17;
inline constexpr std::uint32_t BOS_D = 18;
inline constexpr std::uint32_t BOS_I = 19;
inline constexpr std::uint32_t BOS_A = 20;
inline constexpr std::uint32_t MASK = 21;
inline constexpr std::uint32_t EOS = 22;
inline constexpr std::uint32_t ANS0 = 60;
inline constexpr std::uint32_t kAnswers = 4;
inline constexpr std::uint32_t kMinVocab = ANS0 + kAnswers;
}  // namespace vocab

struct TaskInstance {
  std::string instance_id;
  std::vector<std::uint32_t> prompt;
  std::vector<std::uint32_t> weak_prompt;
  std::uint32_t answer = 0;  // a candidate token

  /// THINK, answer, EOS.
  std::vector<std::uint32_t> completion() const;
};

struct ToyTask {
  ReasoningType reasoning_type = ReasoningType::deductive;
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> held_out;
  std::vector<std::uint32_t> candidates;

  bool is_candidate(std::uint32_t token) const;
  /// The first candidate token in a generation, if any.
  std::optional<std::uint32_t> find_answer(std::span<const std::uint32_t> generated) const;
};

struct TaskSuiteConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 192;  // of 256 enumerated prompts per task
  void validate() const;
};

using TaskSuite = std::array<ToyTask, 3>;

TaskSuite make_tasks(const TaskSuiteConfig& cfg);

nlohmann::json tasks_to_json(const TaskSuite& tasks);
TaskSuite tasks_from_json(const nlohmann::json& j);

}  // namespace rvec
