#pragma once

/**
 * Group Relative Policy Optimization.
 *
 * For each query, G responses are sampled from the frozen old policy and
 * scored by the rule-based verifier. Rewards are standardized within the
 * group (population std; zero-variance groups contribute no policy gradient)
 * and the clipped surrogate with a per-token KL penalty against a fixed
 * reference policy is ascended one step per mini-batch, with the old policy
 * refreshed every step.
 *
 * Ratio granularity is token-level by default: the per-token ratio
 * rho_t = exp(logpi(t) - logpi_old(t)) enters min(rho*A, clip(rho)*A) and the
 * trajectory objective is the mean over its tokens. Sequence-level ratios
 * (the literal whole-sequence form) are available behind the granularity
 * flag; there the KL term is summed over tokens.
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlvr/common.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/rng.hpp"
#include "rlvr/vocab.hpp"
#include "rlvr/verify.hpp"

namespace rlvr::grpo {

enum class RatioLevel { token, sequence };

struct GrpoConfig {
  int group_size = 12;
  double clip = 0.2;
  double kl_coef = 0.001;
  double learning_rate = 1e-4;
  int minibatch_queries = 8;
  int epochs = 1;
  int max_steps = 0;  // 0 = bounded by epochs only
  bool zero_degenerate_groups = true;  // false drops zero-variance groups entirely
  RatioLevel ratio_level = RatioLevel::token;

  void validate() const {
    if (group_size < 2) {
      throw ConfigError("group size must be >= 2");
    }
    if (!(clip > 0.0 && clip < 1.0)) {
      throw ConfigError("clip epsilon must lie in (0, 1)");
    }
    if (kl_coef < 0.0) {
      throw ConfigError("KL coefficient must be nonnegative");
    }
    if (learning_rate <= 0.0 || minibatch_queries < 1 || epochs < 0 || max_steps < 0) {
      throw ConfigError("invalid GRPO schedule");
    }
  }
};

struct RolloutGroup {
  std::vector<int> query;  // prompt token ids
  std::vector<policy::Trajectory> rollouts;
  std::vector<double> rewards;
  std::vector<double> advantages;
  bool advantages_ready = false;
  std::uint64_t old_snapshot = 0;  // params version the rollouts were drawn from
  std::uint64_t ref_snapshot = 0;
};

/// Group-standardized advantages with population std. Groups whose rewards
/// have (near-)zero variance map to all-zero advantages.
inline std::vector<double> compute_advantages(std::span<const double> rewards) {
  const std::size_t g = rewards.size();
  if (g < 2) {
    throw InputError("advantage computation needs a group of at least 2");
  }
  double mean = 0.0;
  for (double r : rewards) {
    if (!std::isfinite(r)) {
      throw InputError("rewards must be finite");
    }
    mean += r;
  }
  mean /= static_cast<double>(g);
  double var = 0.0;
  for (double r : rewards) {
    var += (r - mean) * (r - mean);
  }
  const double std_dev = std::sqrt(var / static_cast<double>(g));
  std::vector<double> out(g, 0.0);
  if (std_dev < 1e-12) {
    return out;
  }
  for (std::size_t j = 0; j < g; ++j) {
    out[j] = (rewards[j] - mean) / std_dev;
  }
  return out;
}

struct SurrogateResult {
  double objective = 0.0;
  std::vector<double> grad;
  double mean_kl = 0.0;        // mean per-token k3 estimate
  double clip_fraction = 0.0;  // fraction of tokens on the clipped branch
  long token_count = 0;
};

/// Clipped surrogate objective and its gradient for one rollout group.
/// Old-policy log-probs are the trajectories' recorded values (the group must
/// have been generated by `old_params`, enforced via the snapshot id).
inline SurrogateResult surrogate_and_grad(const RolloutGroup& group,
                                          const policy::PolicyParams& params,
                                          const policy::PolicyParams& old_params,
                                          const policy::PolicyParams& ref_params,
                                          const GrpoConfig& cfg) {
  cfg.validate();
  if (!group.advantages_ready || group.advantages.size() != group.rollouts.size()) {
    throw InputError("advantages not computed for this group");
  }
  if (group.old_snapshot != old_params.version()) {
    throw StalenessError("rollout group was generated under a different old-policy snapshot");
  }
  const double g = static_cast<double>(group.rollouts.size());
  SurrogateResult out;
  out.grad.assign(params.values().size(), 0.0);
  long clipped_tokens = 0;
  double kl_sum = 0.0;

  std::vector<double> weights;
  for (std::size_t j = 0; j < group.rollouts.size(); ++j) {
    const auto& traj = group.rollouts[j];
    const double adv = group.advantages[j];
    if (traj.response.empty()) {
      continue;
    }
    const auto lp_new = policy::log_prob(params, traj.prompt, traj.response);
    const auto lp_ref = policy::log_prob(ref_params, traj.prompt, traj.response);
    const std::span<const double> lp_old(traj.logprobs);
    const auto kl = policy::kl_token_estimates(lp_new.per_token, lp_ref.per_token);
    const std::size_t len = traj.response.size();
    const double t = static_cast<double>(len);
    weights.assign(len, 0.0);

    if (cfg.ratio_level == RatioLevel::token) {
      double obj_j = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double rho = std::exp(lp_new.per_token[i] - lp_old[i]);
        const double clipped = std::clamp(rho, 1.0 - cfg.clip, 1.0 + cfg.clip);
        const double unclipped_val = rho * adv;
        const double clipped_val = clipped * adv;
        const bool use_unclipped = unclipped_val <= clipped_val;
        if (!use_unclipped) {
          ++clipped_tokens;
        }
        obj_j += std::min(unclipped_val, clipped_val) - cfg.kl_coef * kl[i];
        // d/dtheta: ratio branch contributes A*rho*grad_logp when unclipped;
        // the k3 penalty contributes +beta*(e^delta - 1)*grad_logp.
        const double delta = lp_ref.per_token[i] - lp_new.per_token[i];
        weights[i] = ((use_unclipped ? rho * adv : 0.0) + cfg.kl_coef * std::expm1(delta)) /
                     (t * g);
        kl_sum += kl[i];
      }
      out.objective += obj_j / (t * g);
    } else {
      const double lp_old_sum = [&] {
        double s = 0.0;
        for (double v : lp_old) {
          s += v;
        }
        return s;
      }();
      const double rho_seq = std::exp(lp_new.sum - lp_old_sum);
      const double clipped = std::clamp(rho_seq, 1.0 - cfg.clip, 1.0 + cfg.clip);
      const double unclipped_val = rho_seq * adv;
      const double clipped_val = clipped * adv;
      const bool use_unclipped = unclipped_val <= clipped_val;
      if (!use_unclipped) {
        clipped_tokens += static_cast<long>(len);
      }
      double kl_j = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        kl_j += kl[i];
        const double delta = lp_ref.per_token[i] - lp_new.per_token[i];
        weights[i] = ((use_unclipped ? rho_seq * adv : 0.0) + cfg.kl_coef * std::expm1(delta)) / g;
        kl_sum += kl[i];
      }
      out.objective += (std::min(unclipped_val, clipped_val) - cfg.kl_coef * kl_j) / g;
    }
    out.token_count += static_cast<long>(len);

    bool any = false;
    for (double w : weights) {
      if (w != 0.0) {
        any = true;
        break;
      }
    }
    if (any) {
      const auto gj = policy::grad_weighted_log_prob(params, traj.prompt, traj.response, weights);
      for (std::size_t i = 0; i < gj.size(); ++i) {
        out.grad[i] += gj[i];
      }
    }
  }
  out.mean_kl = out.token_count > 0 ? kl_sum / static_cast<double>(out.token_count) : 0.0;
  out.clip_fraction =
      out.token_count > 0 ? static_cast<double>(clipped_tokens) / static_cast<double>(out.token_count)
                          : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct RlvrQuery {
  std::string id;
  std::string category;
  std::vector<int> prompt;
  std::string gold;
  verify::AnswerKind kind;
};

/// Reward for one rollout of one query. The default implementation decodes
/// the response and applies the rule-based verifier.
using RewardFn = std::function<double(const RlvrQuery&, const policy::Trajectory&)>;

inline RewardFn make_default_reward(const Vocabulary& vocab) {
  return [&vocab](const RlvrQuery& q, const policy::Trajectory& traj) {
    return verify::reward_text(vocab.decode(traj.response), q.gold, q.kind);
  };
}

struct StepRecord {
  int step = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double mean_len = 0.0;
  double clip_frac = 0.0;
  double mean_think_len = 0.0;  // tokens strictly between the think markers
  double wall_ms = 0.0;
};

struct TrainHooks {
  // Called after each optimization step with the updated parameters.
  std::function<void(const StepRecord&, const policy::PolicyParams&)> on_step;
};

struct TrainResult {
  policy::PolicyParams params;
  std::vector<StepRecord> log;
};

inline double think_span_tokens(const policy::Trajectory& traj) {
  const auto& r = traj.response;
  const auto open = std::find(r.begin(), r.end(), kThinkOpen);
  if (open == r.end()) {
    return -1.0;
  }
  const auto close = std::find(open + 1, r.end(), kThinkClose);
  if (close == r.end()) {
    return -1.0;
  }
  return static_cast<double>(close - open - 1);
}

inline void append_step_json(std::ostream& os, const StepRecord& r) {
  os << "{\"step\":" << r.step << ",\"mean_reward\":" << r.mean_reward
     << ",\"mean_kl\":" << r.mean_kl << ",\"mean_len\":" << r.mean_len
     << ",\"clip_frac\":" << r.clip_frac << ",\"mean_think_len\":" << r.mean_think_len
     << ",\"wall_ms\":" << r.wall_ms << "}\n";
}

/// Full RLVR loop. The reference policy is fixed to `initial` for the whole
/// run; the old policy is refreshed every step (one ascent step per
/// mini-batch). Deterministic for a fixed seed: every rollout draws from a
/// stream keyed by (seed, step, query index, rollout index).
inline TrainResult train_rlvr(std::span<const RlvrQuery> dataset, policy::PolicyParams initial,
                              const GrpoConfig& cfg, const policy::DecodingConfig& decoding,
                              const RewardFn& reward_fn, std::uint64_t seed,
                              const TrainHooks& hooks = {}, std::ostream* log_stream = nullptr) {
  cfg.validate();
  decoding.validate();
  if (dataset.empty()) {
    throw InputError("RLVR dataset is empty");
  }

  policy::PolicyParams params = initial;
  const policy::PolicyParams ref = std::move(initial);
  TrainResult result{params, {}};
  int step = 0;
  bool stop = false;

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }

  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    rng::Stream shuffle_stream(rng::mix(seed, rng::tag::kShuffle, epoch));
    shuffle_stream.shuffle(order);
    for (std::size_t begin = 0; begin < order.size() && !stop;
         begin += static_cast<std::size_t>(cfg.minibatch_queries)) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.minibatch_queries));

      const policy::PolicyParams old = params;  // snapshot pi_old

      std::vector<RolloutGroup> groups;
      groups.reserve(end - begin);
      double reward_sum = 0.0;
      double len_sum = 0.0;
      double think_sum = 0.0;
      long think_n = 0;
      long rollout_n = 0;
      for (std::size_t qi = begin; qi < end; ++qi) {
        const RlvrQuery& q = dataset[order[qi]];
        RolloutGroup group;
        group.query = q.prompt;
        group.old_snapshot = old.version();
        group.ref_snapshot = ref.version();
        for (int j = 0; j < cfg.group_size; ++j) {
          policy::DecodingConfig roll = decoding;
          roll.seed = seed;
          roll.stream = rng::mix(static_cast<std::uint64_t>(step), order[qi],
                                 static_cast<std::uint64_t>(j));
          auto traj = policy::sample(old, q.prompt, roll);
          const double r = reward_fn(q, traj);
          reward_sum += r;
          len_sum += static_cast<double>(traj.response.size());
          const double think = think_span_tokens(traj);
          if (think >= 0.0) {
            think_sum += think;
            ++think_n;
          }
          ++rollout_n;
          group.rewards.push_back(r);
          group.rollouts.push_back(std::move(traj));
        }
        group.advantages = compute_advantages(group.rewards);
        group.advantages_ready = true;
        bool degenerate = true;
        for (double a : group.advantages) {
          if (a != 0.0) {
            degenerate = false;
            break;
          }
        }
        if (degenerate && !cfg.zero_degenerate_groups) {
          continue;  // drop the group entirely
        }
        groups.push_back(std::move(group));
      }

      StepRecord record;
      record.step = step;
      record.mean_reward = rollout_n > 0 ? reward_sum / static_cast<double>(rollout_n) : 0.0;

      if (!groups.empty()) {
        std::vector<double> grad(params.values().size(), 0.0);
        double kl_acc = 0.0;
        double clip_acc = 0.0;
        for (const auto& group : groups) {
          const auto sg = surrogate_and_grad(group, params, old, ref, cfg);
          for (std::size_t i = 0; i < grad.size(); ++i) {
            grad[i] += sg.grad[i] / static_cast<double>(groups.size());
          }
          kl_acc += sg.mean_kl;
          clip_acc += sg.clip_fraction;
        }
        for (double gv : grad) {
          if (!std::isfinite(gv)) {
            throw NumericError("non-finite gradient at step " + std::to_string(step) +
                               "; mean reward " + std::to_string(record.mean_reward));
          }
        }
        auto values = params.values_mut();
        for (std::size_t i = 0; i < values.size(); ++i) {
          values[i] += cfg.learning_rate * grad[i];
        }
        params.bump_version();
        record.mean_kl = kl_acc / static_cast<double>(groups.size());
        record.clip_frac = clip_acc / static_cast<double>(groups.size());
      }

      record.mean_len = rollout_n > 0 ? len_sum / static_cast<double>(rollout_n) : 0.0;
      record.mean_think_len = think_n > 0 ? think_sum / static_cast<double>(think_n) : 0.0;
      record.wall_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
      if (log_stream) {
        append_step_json(*log_stream, record);
        log_stream->flush();
      }
      result.log.push_back(record);
      if (hooks.on_step) {
        hooks.on_step(record, params);
      }
      ++step;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        stop = true;
      }
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace rlvr::grpo
