#pragma once

/**
 * Maximum-likelihood trainer. Serves both phases that need it: base-policy
 * pretraining over the toy corpus (prompt is just <bos>, the whole document
 * is the target) and the SFT warm-up over (instruction, context) -> annotated
 * output pairs. The two differ only in their data.
 *
 * Plain SGD with a fixed learning rate; batches are drawn uniformly at random
 * from a seed-derived stream, and the loss reduction is a mean so example
 * order within a batch cannot matter.
 */

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlvr/common.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/rng.hpp"

namespace rlvr::mle {

struct SftExample {
  std::string id;
  std::vector<int> prompt;  // instruction + context tokens (with <bos>)
  std::vector<int> target;  // annotated output tokens, ending in <eos>
};

struct NllResult {
  double loss = 0.0;
  std::vector<double> grad;  // gradient of the loss w.r.t. the parameters
};

/// Mean over the batch of -log pi(target | prompt), with the matching
/// gradient. Gradient is of the loss itself: descending it maximizes
/// likelihood.
inline NllResult nll_and_grad(const policy::PolicyParams& params,
                              std::span<const SftExample> batch) {
  if (batch.empty()) {
    throw InputError("empty SFT batch");
  }
  NllResult out;
  out.grad.assign(params.values().size(), 0.0);
  const double scale = -1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    if (static_cast<int>(ex.prompt.size() + ex.target.size()) > policy::kContextBudget) {
      throw InputError("example '" + ex.id + "' exceeds the context budget");
    }
    const auto lp = policy::log_prob(params, ex.prompt, ex.target);
    out.loss -= lp.sum / static_cast<double>(batch.size());
    if (!ex.target.empty()) {
      std::vector<double> weights(ex.target.size(), scale);
      const auto g = policy::grad_weighted_log_prob(params, ex.prompt, ex.target, weights);
      for (std::size_t i = 0; i < g.size(); ++i) {
        out.grad[i] += g[i];
      }
    }
  }
  return out;
}

struct MleSchedule {
  double learning_rate = 0.1;
  int steps = 2000;
  int batch_size = 8;

  void validate() const {
    if (learning_rate <= 0.0 || steps < 0 || batch_size < 1) {
      throw ConfigError("invalid MLE schedule");
    }
  }
};

struct MleResult {
  policy::PolicyParams params;
  std::vector<double> loss_curve;
};

using MleStepHook = std::function<void(int step, double loss, const policy::PolicyParams&)>;

inline MleResult train_mle(std::span<const SftExample> dataset, policy::PolicyParams initial,
                           const MleSchedule& schedule, std::uint64_t seed,
                           const MleStepHook& on_step = {}) {
  schedule.validate();
  if (dataset.empty()) {
    throw InputError("MLE dataset is empty");
  }
  MleResult out{std::move(initial), {}};
  out.loss_curve.reserve(static_cast<std::size_t>(schedule.steps));
  rng::Stream batch_stream(rng::mix(seed, rng::tag::kBatch));
  double initial_loss = 0.0;
  int divergent_streak = 0;

  std::vector<SftExample> batch;
  for (int step = 0; step < schedule.steps; ++step) {
    batch.clear();
    for (int b = 0; b < schedule.batch_size; ++b) {
      batch.push_back(dataset[static_cast<std::size_t>(
          batch_stream.uniform_int(0, static_cast<int>(dataset.size()) - 1))]);
    }
    const auto nll = nll_and_grad(out.params, batch);
    if (!std::isfinite(nll.loss)) {
      throw NumericError("non-finite MLE loss at step " + std::to_string(step));
    }
    if (step == 0) {
      initial_loss = nll.loss;
    }
    divergent_streak = nll.loss > 10.0 * initial_loss ? divergent_streak + 1 : 0;
    if (divergent_streak >= 100) {
      throw NumericError("MLE diverged: loss exceeded 10x the initial loss for 100 steps");
    }
    auto values = out.params.values_mut();
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] -= schedule.learning_rate * nll.grad[i];
    }
    out.params.bump_version();
    out.loss_curve.push_back(nll.loss);
    if (on_step) {
      on_step(step, nll.loss, out.params);
    }
  }
  return out;
}

}  // namespace rlvr::mle
