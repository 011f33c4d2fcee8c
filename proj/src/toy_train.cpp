#include "rvec/toy_train.hpp"

#include <algorithm>
#include <cmath>

#include "rvec/adam.hpp"
#include "rvec/batching.hpp"
#include "rvec/error.hpp"
#include "rvec/kernels.hpp"
#include "toy_model_internal.hpp"

namespace rvec {

void ToyTrainConfig::validate() const {
  require(steps >= 0, ErrorKind::ConfigError, "toy_train.steps must be >= 0");
  require(batch_size >= 1, ErrorKind::ConfigError, "toy_train.batch_size must be >= 1");
  require(learning_rate > 0.0, ErrorKind::ConfigError, "toy_train.learning_rate must be > 0");
}

std::vector<double> pack_parameters(const ToyModel& model) {
  std::vector<double> flat;
  flat.reserve(model.parameter_count());
  model.for_each_tensor([&](const std::string&, const std::vector<double>& t) {
    flat.insert(flat.end(), t.begin(), t.end());
  });
  return flat;
}

void unpack_parameters(std::span<const double> flat, ToyModel& model) {
  std::size_t off = 0;
  model.for_each_tensor([&](const std::string&, std::vector<double>& t) {
    std::copy_n(flat.begin() + static_cast<long>(off), t.size(), t.begin());
    off += t.size();
  });
  require(off == flat.size(), ErrorKind::DimensionMismatch, "flat parameter size mismatch");
}

double sequence_loss(const ToyModel& model, std::span<const std::uint32_t> tokens,
                     std::size_t from_position, ToyModel* grad) {
  require(from_position >= 1 && from_position < tokens.size(), ErrorKind::ConfigError,
          "sequence_loss: from_position must be in [1, T)");
  detail::ForwardCache cache;
  ForwardResult fr =
      detail::forward_impl(model, tokens, {}, {}, {}, grad ? &cache : nullptr);
  const std::size_t count = tokens.size() - from_position;
  Matrix dlogits(fr.logits.rows(), fr.logits.cols());
  double loss = 0.0;
  for (std::size_t i = from_position; i < tokens.size(); ++i) {
    auto row = fr.logits.row(i - 1);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    const double log_z = mx + std::log(total);
    loss -= row[tokens[i]] - log_z;
    auto drow = dlogits.row(i - 1);
    for (std::size_t c = 0; c < row.size(); ++c)
      drow[c] = std::exp(row[c] - log_z) / static_cast<double>(count);
    drow[tokens[i]] -= 1.0 / static_cast<double>(count);
  }
  if (grad) detail::backward(model, cache, dlogits, *grad);
  return loss / static_cast<double>(count);
}

double answer_accuracy(const ToyModel& model, const ToyTask& task,
                       std::span<const TaskInstance> instances) {
  require(!instances.empty(), ErrorKind::EmptyInput, "answer_accuracy: no instances");
  std::vector<int> hit(instances.size(), 0);
  kernels::for_each_index(instances.size(), [&](std::size_t i) {
    std::vector<std::uint32_t> seq = instances[i].prompt;
    seq.push_back(vocab::THINK);
    ForwardResult fr = forward(model, seq);
    auto row = fr.logits.row(seq.size() - 1);
    std::uint32_t best = task.candidates.front();
    for (std::uint32_t c : task.candidates)
      if (row[c] > row[best]) best = c;
    hit[i] = best == instances[i].answer ? 1 : 0;
  });
  double n_hit = 0.0;
  for (int h : hit) n_hit += h;
  return n_hit / static_cast<double>(instances.size());
}

ToyTrainResult train_toy_model(const ToyModelConfig& model_cfg, const TaskSuite& tasks,
                               const ToyTrainConfig& cfg) {
  cfg.validate();
  require(model_cfg.vocab >= static_cast<int>(vocab::kMinVocab), ErrorKind::ConfigError,
          "toy model vocab too small for the task tokens");

  struct Example {
    std::vector<std::uint32_t> tokens;
    std::size_t from;
  };
  std::vector<Example> pool;
  for (const ToyTask& task : tasks)
    for (const TaskInstance& inst : task.train) {
      Example ex{inst.prompt, inst.prompt.size()};
      const auto c = inst.completion();
      ex.tokens.insert(ex.tokens.end(), c.begin(), c.end());
      pool.push_back(std::move(ex));
    }
  require(!pool.empty(), ErrorKind::EmptyInput, "no training examples");

  ToyTrainResult result;
  result.model = ToyModel::init(model_cfg);
  std::vector<double> params = pack_parameters(result.model);
  Adam adam(params.size(), cfg.learning_rate);
  BatchCursor cursor(pool.size(), cfg.batch_size, cfg.seed);

  const ToyModel zero = ToyModel::zeros_like(result.model);
  for (int step = 0; step < cfg.steps; ++step) {
    const auto batch = cursor.next();
    std::vector<ToyModel> grads(batch.size(), zero);
    std::vector<double> losses(batch.size(), 0.0);
    kernels::for_each_index(batch.size(), [&](std::size_t i) {
      const Example& ex = pool[batch[i]];
      losses[i] = sequence_loss(result.model, ex.tokens, ex.from, &grads[i]);
    });

    std::vector<double> grad(params.size(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      loss += losses[i];
      std::size_t off = 0;
      grads[i].for_each_tensor([&](const std::string&, const std::vector<double>& t) {
        for (std::size_t k = 0; k < t.size(); ++k) grad[off + k] += t[k];
        off += t.size();
      });
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& g : grad) g *= inv;
    loss *= inv;
    if (!std::isfinite(loss) || !all_finite(grad))
      fail(ErrorKind::DivergenceError,
           "toy model loss became non-finite at step " + std::to_string(step));
    result.loss_history.push_back(loss);

    adam.step(params, grad);
    unpack_parameters(params, result.model);
  }

  result.model.for_each_tensor([](const std::string&, std::vector<double>& t) { round_to_f32(t); });
  for (const ToyTask& task : tasks)
    result.held_out_accuracy[index_of(task.reasoning_type)] =
        answer_accuracy(result.model, task, task.held_out);
  return result;
}

}  // namespace rvec
