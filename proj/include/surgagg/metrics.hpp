#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "surgagg/data.hpp"
#include "surgagg/errors.hpp"
#include "surgagg/fed_model.hpp"
#include "surgagg/nn.hpp"
#include "surgagg/registry.hpp"

namespace surgagg {

/// Mann-Whitney AUROC: probability that a random positive scores above a
/// random negative, ties counting one half. Empty when either label value is
/// missing.
///
/// Computed from doubled average ranks in integer arithmetic, so the result
/// is exactly (2 * concordant + ties) / (2 * P * N).
inline std::optional<double> auroc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ContractViolation("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::uint64_t pos = 0;
  std::uint64_t twice_rank_sum = 0;  // sum over positives of 2 * average rank (1-based)
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t twice_avg = static_cast<std::uint64_t>(i + 1 + j);  // (i+1) + j over 2, doubled
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] > 0.5) {
        ++pos;
        twice_rank_sum += twice_avg;
      }
    }
    i = j;
  }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const std::uint64_t twice_u = twice_rank_sum - pos * (pos + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * pos * neg);
}

enum class AurocStatus { defined, degenerate_labels, not_covered };

struct EvalResult {
  std::map<std::size_t, std::optional<double>> per_class_auroc;
  std::map<std::size_t, AurocStatus> status;
  std::optional<double> mean_auroc;
  std::map<std::string, std::optional<double>> group_means;

  /// Defined per-class values of `classes`, in the given order.
  std::vector<double> defined_values(std::span<const std::size_t> classes) const {
    std::vector<double> out;
    for (auto c : classes) {
      auto it = per_class_auroc.find(c);
      if (it != per_class_auroc.end() && it->second) out.push_back(*it->second);
    }
    return out;
  }
};

/// Mean of the defined AUROCs over `classes`. Empty if any class is not
/// covered by the model, or if none is defined.
inline std::optional<double> mean_over(const EvalResult& r, std::span<const std::size_t> classes) {
  double sum = 0.0;
  std::size_t count = 0;
  for (auto c : classes) {
    auto st = r.status.find(c);
    if (st == r.status.end() || st->second == AurocStatus::not_covered) return std::nullopt;
    if (st->second == AurocStatus::defined) {
      sum += *r.per_class_auroc.at(c);
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

/// Scores `model` on `test` (full-width labels) over `class_subset`. Classes
/// absent from the model head are reported as not covered and make every mean
/// that includes them undefined. Group means follow `profile` when given.
inline EvalResult evaluate(const Model& model, const LabeledSet& test, std::span<const std::size_t> class_subset,
                           const SharingProfile* profile = nullptr,
                           std::optional<std::vector<std::size_t>> custom_group = std::nullopt) {
  const Tensor2 probs = predict(model.params, model.arch, test.x);
  EvalResult r;
  std::vector<std::size_t> subset(class_subset.begin(), class_subset.end());
  for (auto c : subset) {
    if (c >= test.y.cols) throw ConfigError("evaluate: class " + std::to_string(c) + " outside the test labels");
    auto it = std::find(model.head_classes.begin(), model.head_classes.end(), c);
    if (it == model.head_classes.end()) {
      r.per_class_auroc[c] = std::nullopt;
      r.status[c] = AurocStatus::not_covered;
      continue;
    }
    const auto col = static_cast<std::size_t>(it - model.head_classes.begin());
    const auto a = auroc(probs.column(col), test.y.column(c));
    r.per_class_auroc[c] = a;
    r.status[c] = a ? AurocStatus::defined : AurocStatus::degenerate_labels;
  }
  r.mean_auroc = mean_over(r, subset);

  auto group = [&](const std::string& name, const std::vector<std::size_t>& members) {
    std::vector<std::size_t> in;
    for (auto c : members)
      if (std::find(subset.begin(), subset.end(), c) != subset.end()) in.push_back(c);
    r.group_means[name] = in.empty() ? std::nullopt : mean_over(r, in);
  };
  if (profile != nullptr) {
    group("shared_by_all", profile->shared_by_all);
    group("partially_shared", profile->partially_shared);
    group("unique", profile->unique);
  }
  if (custom_group) group("custom", *custom_group);
  return r;
}

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ConfigError("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::betacf(a, b, x) / a;
  return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

/// Student-t CDF with `df` degrees of freedom.
inline double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw ConfigError("student_t_cdf: df must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // two-sided
  std::size_t df = 0;
  bool degenerate = false;  // all differences zero; p = 1 by convention
};

/// Paired t-test on a - b.
inline TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("paired_ttest: samples differ in length");
  const std::size_t n = a.size();
  if (n < 2) throw ConfigError("paired_ttest: need at least two pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  TTestResult r;
  r.df = n - 1;
  if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) {
    r.degenerate = true;
    return r;
  }
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double dfd = static_cast<double>(r.df);
  r.p = std::min(1.0, incomplete_beta(0.5 * dfd, 0.5, dfd / (dfd + r.t * r.t)));
  return r;
}

/// "ns" for p > 0.05, then "*", "**", "***" at 0.05, 0.01, 0.001.
inline std::string significance_marker(double p) {
  if (p <= 0.001) return "***";
  if (p <= 0.01) return "**";
  if (p <= 0.05) return "*";
  return "ns";
}

}  // namespace surgagg
