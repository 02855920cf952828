#pragma once

/**
 * Pass@k, Reliable Pass@k, and the pass-rate-vs-RL-gain regression.
 *
 * Reliable Pass@k applies two gates on top of raw correctness counts:
 *   pass threshold   tau_p = ceil(k / C) + 2
 *   entropy gate     H(label distribution) < tau_e = 0.8 * ln(C)
 * where C is the class count. Unparseable generations form one extra
 * pseudo-label in the distribution (never correct), so garbage raises entropy
 * instead of inflating confidence. Natural logarithms throughout; the
 * pass/fail decision is base-invariant as long as H and tau_e share one.
 */

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "rlvr/common.hpp"

namespace rlvr::diagnostics {

struct Outcome {
  std::optional<std::string> label;  // canonical predicted label; nullopt = invalid
  bool correct = false;
};

struct SampleMatrix {
  int k = 0;
  std::vector<std::vector<Outcome>> rows;  // exactly k outcomes per row

  void validate() const {
    if (k < 1) {
      throw InputError("sample matrix needs k >= 1");
    }
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != k) {
        throw InputError("sample matrix row does not have exactly k outcomes");
      }
    }
  }
};

struct ReliabilityConfig {
  int k = 12;
  int class_count = 0;

  int tau_p() const { return (k + class_count - 1) / class_count + 2; }
  double tau_e() const { return 0.8 * std::log(static_cast<double>(class_count)); }

  void validate() const {
    if (class_count < 2) {
      throw ConfigError("reliability config needs class count >= 2");
    }
    if (k < 1) {
      throw ConfigError("reliability config needs k >= 1");
    }
  }
};

/// Empirical pass@k: an example passes iff any of its first k outcomes is
/// correct.
inline double pass_at_k(const SampleMatrix& matrix, int k) {
  matrix.validate();
  if (k < 1 || k > matrix.k) {
    throw InputError("requested k exceeds available outcomes");
  }
  if (matrix.rows.empty()) {
    return 0.0;
  }
  long passed = 0;
  for (const auto& row : matrix.rows) {
    for (int i = 0; i < k; ++i) {
      if (row[static_cast<std::size_t>(i)].correct) {
        ++passed;
        break;
      }
    }
  }
  return static_cast<double>(passed) / static_cast<double>(matrix.rows.size());
}

/// Entropy (natural log) of the empirical label distribution of one row,
/// with invalid outcomes pooled into a single pseudo-label.
inline double row_label_entropy(std::span<const Outcome> row) {
  std::map<std::string, int> counts;
  int invalid = 0;
  for (const auto& o : row) {
    if (o.label) {
      ++counts[*o.label];
    } else {
      ++invalid;
    }
  }
  if (invalid > 0) {
    counts["\x01<invalid>"] = invalid;
  }
  const double n = static_cast<double>(row.size());
  double h = 0.0;
  for (const auto& [label, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

inline double reliable_pass_at_k(const SampleMatrix& matrix, const ReliabilityConfig& cfg) {
  matrix.validate();
  cfg.validate();
  if (cfg.k != matrix.k) {
    throw InputError("reliability config k does not match matrix");
  }
  if (matrix.rows.empty()) {
    return 0.0;
  }
  const int tau_p = cfg.tau_p();
  const double tau_e = cfg.tau_e();
  long confident = 0;
  for (const auto& row : matrix.rows) {
    int c = 0;
    for (const auto& o : row) {
      c += o.correct ? 1 : 0;
    }
    if (c >= tau_p && row_label_entropy(row) < tau_e) {
      ++confident;
    }
  }
  return static_cast<double>(confident) / static_cast<double>(matrix.rows.size());
}

struct Regression {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double p_value = 1.0;
};

/// Ordinary least squares of y on x with the two-sided p-value of the slope
/// (t statistic, n-2 degrees of freedom).
inline Regression gain_regression(std::span<const std::pair<double, double>> points) {
  const std::size_t n = points.size();
  if (n < 3) {
    throw InputError("regression needs at least 3 points");
  }
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [x, y] : points) {
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw InputError("regression points must be finite");
    }
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx <= 0.0) {
    throw InputError("degenerate regression: all x values identical");
  }
  Regression out;
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  double ss_res = 0.0;
  for (const auto& [x, y] : points) {
    const double e = y - (out.intercept + out.slope * x);
    ss_res += e * e;
  }
  out.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;

  const double df = static_cast<double>(n - 2);
  const double se2 = ss_res / df / sxx;
  if (se2 <= 0.0) {
    out.p_value = 0.0;  // exact fit
    return out;
  }
  const double t = out.slope / std::sqrt(se2);
  boost::math::students_t dist(df);
  out.p_value = 2.0 * boost::math::cdf(dist, -std::abs(t));
  return out;
}

}  // namespace rlvr::diagnostics
