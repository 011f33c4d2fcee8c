#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "rvec/toy_model.hpp"
#include "rvec/toy_tasks.hpp"

namespace rvec {

struct ToyTrainConfig {
  int steps = 1500;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
  void validate() const;
};

struct ToyTrainResult {
  ToyModel model;
  std::array<double, 3> held_out_accuracy{};  // indexed by reasoning type
  std::vector<double> loss_history;           // mean batch loss per step
};

/// Mean cross-entropy of tokens[i] given tokens[<i] over i ≥ from_position.
/// When `grad` is non-null the parameter gradient is added to it.
double sequence_loss(const ToyModel& model, std::span<const std::uint32_t> tokens,
                     std::size_t from_position, ToyModel* grad = nullptr);

/// Fraction of instances whose answer token wins an argmax restricted to the
/// task's candidates, read after the prompt and THINK.
double answer_accuracy(const ToyModel& model, const ToyTask& task,
                       std::span<const TaskInstance> instances);

/// Teacher-forced training on the completions of every task's train split.
/// Throws DivergenceError when the loss stops being finite.
ToyTrainResult train_toy_model(const ToyModelConfig& model_cfg, const TaskSuite& tasks,
                               const ToyTrainConfig& cfg);

/// Flat copies of all parameters in for_each_tensor order.
std::vector<double> pack_parameters(const ToyModel& model);
void unpack_parameters(std::span<const double> flat, ToyModel& model);

}  // namespace rvec
