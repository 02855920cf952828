#pragma once

/**
 * Small differentiable autoregressive token policy.
 *
 * Architecture: token embeddings over a sliding window of the last W tokens
 * (left-padded with <pad>), one tanh hidden layer, softmax output head.
 * Small enough for finite-difference validation, expressive enough to
 * memorize the toy task suite.
 *
 * Parameter layout (flat, row-major):
 *   embedding  V x d
 *   hidden_w   h x (W*d)
 *   hidden_b   h
 *   out_w      V x h
 *   out_b      V
 *
 * Sampling restricts to the top-p nucleus at temperature T, but the recorded
 * per-token log-probabilities are those of the unrestricted temperature-1
 * policy, so they are directly reusable as pi_old values in ratio
 * computations.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlvr/common.hpp"
#include "rlvr/rng.hpp"
#include "rlvr/vocab.hpp"

namespace rlvr::policy {

/// Hard bound on prompt+response length; the window slides, this only guards
/// against runaway inputs.
constexpr int kContextBudget = 512;

/// Logits are clamped to this magnitude before softmax to avoid overflow.
constexpr double kLogitClamp = 30.0;

struct ArchDescriptor {
  int context_window = 16;
  int embed_dim = 32;
  int hidden_dim = 64;
  int vocab_size = 0;

  bool operator==(const ArchDescriptor&) const = default;

  std::size_t param_count() const {
    const std::size_t v = static_cast<std::size_t>(vocab_size);
    const std::size_t d = static_cast<std::size_t>(embed_dim);
    const std::size_t w = static_cast<std::size_t>(context_window);
    const std::size_t h = static_cast<std::size_t>(hidden_dim);
    return v * d + h * (w * d) + h + v * h + v;
  }

  void validate() const {
    if (context_window < 1 || embed_dim < 1 || hidden_dim < 1 || vocab_size < 1) {
      throw ConfigError("architecture descriptor fields must be positive");
    }
    if (param_count() >= 200000) {
      throw ConfigError("parameter count " + std::to_string(param_count()) +
                        " exceeds the desk-scale bound of 200,000");
    }
  }
};

class PolicyParams {
 public:
  PolicyParams() = default;

  PolicyParams(ArchDescriptor arch, std::vector<double> values, std::uint64_t version = 0)
      : arch_(arch), values_(std::move(values)), version_(version) {
    arch_.validate();
    if (values_.size() != arch_.param_count()) {
      throw InputError("parameter vector size does not match descriptor");
    }
  }

  static PolicyParams zeros(ArchDescriptor arch) {
    arch.validate();
    return PolicyParams(arch, std::vector<double>(arch.param_count(), 0.0));
  }

  static PolicyParams random_init(ArchDescriptor arch, double scale, rng::Stream& stream) {
    arch.validate();
    std::vector<double> v(arch.param_count());
    for (auto& x : v) {
      x = scale * stream.normal();
    }
    return PolicyParams(arch, std::move(v));
  }

  const ArchDescriptor& arch() const { return arch_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values_mut() { return values_; }
  std::uint64_t version() const { return version_; }
  void set_version(std::uint64_t v) { version_ = v; }
  void bump_version() { ++version_; }

  // Block offsets into the flat array.
  std::size_t off_embedding() const { return 0; }
  std::size_t off_hidden_w() const {
    return static_cast<std::size_t>(arch_.vocab_size) * arch_.embed_dim;
  }
  std::size_t off_hidden_b() const {
    return off_hidden_w() +
           static_cast<std::size_t>(arch_.hidden_dim) * arch_.context_window * arch_.embed_dim;
  }
  std::size_t off_out_w() const { return off_hidden_b() + arch_.hidden_dim; }
  std::size_t off_out_b() const {
    return off_out_w() + static_cast<std::size_t>(arch_.vocab_size) * arch_.hidden_dim;
  }

 private:
  ArchDescriptor arch_;
  std::vector<double> values_;
  std::uint64_t version_ = 0;
};

struct Trajectory {
  std::vector<int> prompt;
  std::vector<int> response;
  std::vector<double> logprobs;  // unrestricted T=1 log-probs, one per response token
  bool terminated = false;       // response ends with <eos>
  bool truncated = false;        // hit max response length
};

struct DecodingConfig {
  double temperature = 0.6;
  double top_p = 0.95;
  int max_response_len = 32;
  bool greedy = false;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  // per-trajectory stream index

  void validate() const {
    if (!greedy && !(temperature > 0.0)) {
      throw ConfigError("temperature must be positive unless greedy");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) {
      throw ConfigError("top_p must lie in (0, 1]");
    }
    if (max_response_len < 1) {
      throw ConfigError("max response length must be >= 1");
    }
  }
};

namespace detail {

inline void check_tokens(const PolicyParams& params, std::span<const int> tokens) {
  for (int id : tokens) {
    if (id < 0 || id >= params.arch().vocab_size) {
      throw InputError("token id out of range: " + std::to_string(id));
    }
  }
}

/// Scratch space for one forward/backward position.
struct Workspace {
  std::vector<int> window;        // W token ids
  std::vector<double> x;          // W*d concatenated embeddings
  std::vector<double> hidden;     // h, tanh activations
  std::vector<double> logits;     // V, clamped
  std::vector<bool> clamp_pass;   // V, true where clamp derivative is 1
  std::vector<double> logprobs;   // V, log-softmax of logits
  std::vector<double> probs;      // V

  void resize(const ArchDescriptor& a) {
    window.assign(static_cast<std::size_t>(a.context_window), kPad);
    x.assign(static_cast<std::size_t>(a.context_window) * a.embed_dim, 0.0);
    hidden.assign(static_cast<std::size_t>(a.hidden_dim), 0.0);
    logits.assign(static_cast<std::size_t>(a.vocab_size), 0.0);
    clamp_pass.assign(static_cast<std::size_t>(a.vocab_size), true);
    logprobs.assign(static_cast<std::size_t>(a.vocab_size), 0.0);
    probs.assign(static_cast<std::size_t>(a.vocab_size), 0.0);
  }
};

/// Fills ws.window with the last W tokens of `tokens`, left-padded.
inline void fill_window(const ArchDescriptor& a, std::span<const int> tokens,
                        std::size_t upto, Workspace& ws) {
  const int w = a.context_window;
  for (int slot = 0; slot < w; ++slot) {
    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(upto) - w + slot;
    ws.window[static_cast<std::size_t>(slot)] =
        src >= 0 ? tokens[static_cast<std::size_t>(src)] : kPad;
  }
}

/// Forward pass for one position; fills hidden, logits, logprobs, probs.
inline void forward(const PolicyParams& params, Workspace& ws) {
  const auto& a = params.arch();
  const double* p = params.values().data();
  const double* emb = p + params.off_embedding();
  const double* hw = p + params.off_hidden_w();
  const double* hb = p + params.off_hidden_b();
  const double* ow = p + params.off_out_w();
  const double* ob = p + params.off_out_b();
  const int w = a.context_window;
  const int d = a.embed_dim;
  const int h = a.hidden_dim;
  const int v = a.vocab_size;

  for (int slot = 0; slot < w; ++slot) {
    const double* row = emb + static_cast<std::size_t>(ws.window[slot]) * d;
    std::memcpy(ws.x.data() + static_cast<std::size_t>(slot) * d, row,
                static_cast<std::size_t>(d) * sizeof(double));
  }
  const int in = w * d;
  for (int i = 0; i < h; ++i) {
    const double* row = hw + static_cast<std::size_t>(i) * in;
    double acc = hb[i];
    for (int j = 0; j < in; ++j) {
      acc += row[j] * ws.x[static_cast<std::size_t>(j)];
    }
    ws.hidden[static_cast<std::size_t>(i)] = std::tanh(acc);
  }
  double max_logit = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < v; ++i) {
    const double* row = ow + static_cast<std::size_t>(i) * h;
    double acc = ob[i];
    for (int j = 0; j < h; ++j) {
      acc += row[j] * ws.hidden[static_cast<std::size_t>(j)];
    }
    if (!std::isfinite(acc)) {
      throw NumericError("non-finite logit");
    }
    const bool inside = acc > -kLogitClamp && acc < kLogitClamp;
    ws.clamp_pass[static_cast<std::size_t>(i)] = inside;
    acc = std::clamp(acc, -kLogitClamp, kLogitClamp);
    ws.logits[static_cast<std::size_t>(i)] = acc;
    max_logit = std::max(max_logit, acc);
  }
  double z = 0.0;
  for (int i = 0; i < v; ++i) {
    z += std::exp(ws.logits[static_cast<std::size_t>(i)] - max_logit);
  }
  const double log_z = max_logit + std::log(z);
  for (int i = 0; i < v; ++i) {
    ws.logprobs[static_cast<std::size_t>(i)] = ws.logits[static_cast<std::size_t>(i)] - log_z;
    ws.probs[static_cast<std::size_t>(i)] = std::exp(ws.logprobs[static_cast<std::size_t>(i)]);
  }
}

/// Accumulates w_t * d(log p(target))/d(theta) into grad for one position.
/// Expects forward() to have been run on ws.
inline void backward(const PolicyParams& params, const Workspace& ws, int target,
                     double weight, std::span<double> grad) {
  const auto& a = params.arch();
  const double* p = params.values().data();
  const double* hw = p + params.off_hidden_w();
  const double* ow = p + params.off_out_w();
  double* g_emb = grad.data() + params.off_embedding();
  double* g_hw = grad.data() + params.off_hidden_w();
  double* g_hb = grad.data() + params.off_hidden_b();
  double* g_ow = grad.data() + params.off_out_w();
  double* g_ob = grad.data() + params.off_out_b();
  const int w = a.context_window;
  const int d = a.embed_dim;
  const int h = a.hidden_dim;
  const int v = a.vocab_size;
  const int in = w * d;

  // d(log p_t)/d(logit_i) = (1{i==t} - p_i), gated by the clamp.
  thread_local std::vector<double> g_logit, g_hidden, g_x;
  g_logit.assign(static_cast<std::size_t>(v), 0.0);
  g_hidden.assign(static_cast<std::size_t>(h), 0.0);
  g_x.assign(static_cast<std::size_t>(in), 0.0);
  for (int i = 0; i < v; ++i) {
    double g = (i == target ? 1.0 : 0.0) - ws.probs[static_cast<std::size_t>(i)];
    if (!ws.clamp_pass[static_cast<std::size_t>(i)]) {
      g = 0.0;
    }
    g_logit[static_cast<std::size_t>(i)] = weight * g;
  }
  for (int i = 0; i < v; ++i) {
    const double gi = g_logit[static_cast<std::size_t>(i)];
    if (gi == 0.0) {
      continue;
    }
    g_ob[i] += gi;
    const double* row = ow + static_cast<std::size_t>(i) * h;
    double* grow = g_ow + static_cast<std::size_t>(i) * h;
    for (int j = 0; j < h; ++j) {
      grow[j] += gi * ws.hidden[static_cast<std::size_t>(j)];
      g_hidden[static_cast<std::size_t>(j)] += gi * row[j];
    }
  }
  for (int i = 0; i < h; ++i) {
    const double hi = ws.hidden[static_cast<std::size_t>(i)];
    const double ga = g_hidden[static_cast<std::size_t>(i)] * (1.0 - hi * hi);
    if (ga == 0.0) {
      continue;
    }
    g_hb[i] += ga;
    const double* row = hw + static_cast<std::size_t>(i) * in;
    double* grow = g_hw + static_cast<std::size_t>(i) * in;
    for (int j = 0; j < in; ++j) {
      grow[j] += ga * ws.x[static_cast<std::size_t>(j)];
      g_x[static_cast<std::size_t>(j)] += ga * row[j];
    }
  }
  for (int slot = 0; slot < w; ++slot) {
    double* erow = g_emb + static_cast<std::size_t>(ws.window[slot]) * d;
    const double* gx = g_x.data() + static_cast<std::size_t>(slot) * d;
    for (int j = 0; j < d; ++j) {
      erow[j] += gx[j];
    }
  }
}

}  // namespace detail

/// Next-token log-probabilities (T=1, unrestricted) for the given history.
inline std::vector<double> next_token_logprobs(const PolicyParams& params,
                                               std::span<const int> history) {
  detail::check_tokens(params, history);
  detail::Workspace ws;
  ws.resize(params.arch());
  detail::fill_window(params.arch(), history, history.size(), ws);
  detail::forward(params, ws);
  return ws.logprobs;
}

inline Trajectory sample(const PolicyParams& params, std::span<const int> prompt,
                         const DecodingConfig& cfg) {
  cfg.validate();
  detail::check_tokens(params, prompt);
  if (static_cast<int>(prompt.size()) + cfg.max_response_len > kContextBudget) {
    throw InputError("prompt plus max response exceeds context budget");
  }

  const int v = params.arch().vocab_size;
  rng::Stream stream(rng::mix(cfg.seed, rng::tag::kRollout, cfg.stream));
  detail::Workspace ws;
  ws.resize(params.arch());

  Trajectory traj;
  traj.prompt.assign(prompt.begin(), prompt.end());
  std::vector<int> tokens(prompt.begin(), prompt.end());

  // (probability, id) pairs for nucleus selection.
  std::vector<std::pair<double, int>> order(static_cast<std::size_t>(v));

  for (int step = 0; step < cfg.max_response_len; ++step) {
    detail::fill_window(params.arch(), tokens, tokens.size(), ws);
    detail::forward(params, ws);

    int chosen = 0;
    if (cfg.greedy) {
      for (int i = 1; i < v; ++i) {
        if (ws.logits[static_cast<std::size_t>(i)] > ws.logits[static_cast<std::size_t>(chosen)]) {
          chosen = i;
        }
      }
    } else {
      // Temperature-scaled distribution.
      double max_logit = *std::max_element(ws.logits.begin(), ws.logits.end());
      double z = 0.0;
      for (int i = 0; i < v; ++i) {
        const double p = std::exp((ws.logits[static_cast<std::size_t>(i)] - max_logit) /
                                  cfg.temperature);
        order[static_cast<std::size_t>(i)] = {p, i};
        z += p;
      }
      // Smallest nucleus of cumulative mass >= top_p; ties broken by id for
      // determinism.
      std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) {
          return a.first > b.first;
        }
        return a.second < b.second;
      });
      const double target_mass = cfg.top_p * z;
      double nucleus_mass = 0.0;
      std::size_t nucleus_len = 0;
      while (nucleus_len < order.size() && nucleus_mass < target_mass) {
        nucleus_mass += order[nucleus_len].first;
        ++nucleus_len;
      }
      const double u = stream.uniform() * nucleus_mass;
      double acc = 0.0;
      chosen = order[nucleus_len - 1].second;
      for (std::size_t i = 0; i < nucleus_len; ++i) {
        acc += order[i].first;
        if (u < acc) {
          chosen = order[i].second;
          break;
        }
      }
    }

    traj.response.push_back(chosen);
    traj.logprobs.push_back(ws.logprobs[static_cast<std::size_t>(chosen)]);
    tokens.push_back(chosen);
    if (chosen == kEos) {
      traj.terminated = true;
      break;
    }
  }
  if (!traj.terminated && static_cast<int>(traj.response.size()) == cfg.max_response_len) {
    traj.truncated = true;
  }
  return traj;
}

struct LogProbResult {
  std::vector<double> per_token;
  double sum = 0.0;
};

inline LogProbResult log_prob(const PolicyParams& params, std::span<const int> prompt,
                              std::span<const int> response) {
  detail::check_tokens(params, prompt);
  detail::check_tokens(params, response);
  if (static_cast<int>(prompt.size() + response.size()) > kContextBudget) {
    throw InputError("prompt plus response exceeds context budget");
  }
  detail::Workspace ws;
  ws.resize(params.arch());
  std::vector<int> tokens(prompt.begin(), prompt.end());
  tokens.insert(tokens.end(), response.begin(), response.end());
  LogProbResult out;
  out.per_token.reserve(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    detail::fill_window(params.arch(), tokens, prompt.size() + t, ws);
    detail::forward(params, ws);
    const double lp = ws.logprobs[static_cast<std::size_t>(response[t])];
    out.per_token.push_back(lp);
    out.sum += lp;
  }
  return out;
}

/// Gradient of sum_t weights[t] * log pi(response[t] | history) w.r.t. params.
inline std::vector<double> grad_weighted_log_prob(const PolicyParams& params,
                                                  std::span<const int> prompt,
                                                  std::span<const int> response,
                                                  std::span<const double> weights) {
  detail::check_tokens(params, prompt);
  detail::check_tokens(params, response);
  if (weights.size() != response.size()) {
    throw InputError("weight count does not match response length");
  }
  if (static_cast<int>(prompt.size() + response.size()) > kContextBudget) {
    throw InputError("prompt plus response exceeds context budget");
  }
  std::vector<double> grad(params.values().size(), 0.0);
  detail::Workspace ws;
  ws.resize(params.arch());
  std::vector<int> tokens(prompt.begin(), prompt.end());
  tokens.insert(tokens.end(), response.begin(), response.end());
  for (std::size_t t = 0; t < response.size(); ++t) {
    if (weights[t] == 0.0) {
      continue;
    }
    detail::fill_window(params.arch(), tokens, prompt.size() + t, ws);
    detail::forward(params, ws);
    detail::backward(params, ws, response[t], weights[t], grad);
  }
  return grad;
}

inline std::vector<double> grad_log_prob(const PolicyParams& params, std::span<const int> prompt,
                                         std::span<const int> response) {
  std::vector<double> ones(response.size(), 1.0);
  return grad_weighted_log_prob(params, prompt, response, ones);
}

/// Low-variance per-token KL estimates: exp(delta) - delta - 1 with
/// delta = logp_ref - logp_current. Nonnegative, zero exactly at equality.
inline std::vector<double> kl_token_estimates(std::span<const double> logp_current,
                                              std::span<const double> logp_ref) {
  if (logp_current.size() != logp_ref.size()) {
    throw InputError("per-token log-prob sequences differ in length");
  }
  std::vector<double> out(logp_current.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double delta = logp_ref[i] - logp_current[i];
    out[i] = std::expm1(delta) - delta;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "RLVF" magic, u32 format version, u32 descriptor fields
// (W, d, h, V), u64 params version, then little-endian f64 values in declared
// order.
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot write checkpoint: " + path.string());
  }
  auto put_u32 = [&](std::uint32_t x) { out.write(reinterpret_cast<const char*>(&x), 4); };
  out.write("RLVF", 4);
  put_u32(kCheckpointVersion);
  put_u32(static_cast<std::uint32_t>(params.arch().context_window));
  put_u32(static_cast<std::uint32_t>(params.arch().embed_dim));
  put_u32(static_cast<std::uint32_t>(params.arch().hidden_dim));
  put_u32(static_cast<std::uint32_t>(params.arch().vocab_size));
  const std::uint64_t ver = params.version();
  out.write(reinterpret_cast<const char*>(&ver), 8);
  out.write(reinterpret_cast<const char*>(params.values().data()),
            static_cast<std::streamsize>(params.values().size() * sizeof(double)));
  if (!out) {
    throw DataError("short write on checkpoint: " + path.string());
  }
}

inline PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open checkpoint: " + path.string());
  }
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "RLVF", 4) != 0) {
    throw DataError("bad checkpoint magic in " + path.string());
  }
  auto get_u32 = [&]() {
    std::uint32_t x = 0;
    in.read(reinterpret_cast<char*>(&x), 4);
    return x;
  };
  const std::uint32_t fmt = get_u32();
  if (fmt != kCheckpointVersion) {
    throw DataError("unsupported checkpoint format version " + std::to_string(fmt));
  }
  ArchDescriptor arch;
  arch.context_window = static_cast<int>(get_u32());
  arch.embed_dim = static_cast<int>(get_u32());
  arch.hidden_dim = static_cast<int>(get_u32());
  arch.vocab_size = static_cast<int>(get_u32());
  std::uint64_t ver = 0;
  in.read(reinterpret_cast<char*>(&ver), 8);
  arch.validate();
  std::vector<double> values(arch.param_count());
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in || in.gcount() != static_cast<std::streamsize>(values.size() * sizeof(double))) {
    throw DataError("truncated checkpoint: " + path.string());
  }
  return PolicyParams(arch, std::move(values), ver);
}

}  // namespace rlvr::policy
