#pragma once

// Seeded synthetic multi-label data with linear ground truth, split across
// clients that each observe only their own label subset.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "surgagg/errors.hpp"
#include "surgagg/registry.hpp"
#include "surgagg/rng.hpp"
#include "surgagg/tensor.hpp"

namespace surgagg {

enum class Split { train, val, test, stats };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::stats: return "stats";
  }
  return "?";
}

struct LabeledSet {
  Tensor2 x;  // n x d
  Tensor2 y;  // n x (label width), entries in {0, 1}
  Split split = Split::train;

  std::size_t size() const { return x.rows; }
};

enum class Skew { iid, feature_shift };

struct ScenarioSpec {
  std::size_t n_per_client = 1000;
  std::size_t d = 20;
  std::size_t M = 3;
  std::size_t K = 2;
  // Explicit assignment: one sorted-or-not list of global indices per client.
  // When empty the assignment is generated from the three counts below.
  std::vector<std::vector<std::size_t>> client_classes;
  std::vector<std::string> class_names;  // empty -> c0, c1, ...
  std::size_t shared_count = 0;
  std::size_t partial_count = 0;
  std::size_t unique_count = 0;
  Skew skew = Skew::iid;
  double shift_sigma = 0.0;
  double label_noise = 0.05;
  std::uint64_t seed = 0;
  std::size_t n_test = 2000;
  std::size_t n_stats = 1024;
  double val_fraction = 0.2;

  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

struct ClientData {
  LabeledSet train;  // labels restricted to C_k, in local column order
  LabeledSet val;
};

struct ScenarioStats {
  std::vector<std::size_t> n_train;
  std::vector<std::size_t> n_val;
  std::vector<std::vector<double>> train_prevalence;  // per client, per local class
  std::vector<double> test_prevalence;                // per global class
  std::size_t threshold_attempts = 0;
};

struct Scenario {
  ScenarioSpec spec;
  ClassRegistry registry;
  LabeledSet test;   // full M labels, drawn before any client data
  LabeledSet stats;  // held-out unlabeled-use split for batch-norm statistics
  std::vector<ClientData> clients;
  ScenarioStats realized;
};

// Threshold range for the per-class decision offsets. With unit-norm class
// directions and standard normal features this keeps prevalence in ~[0.31, 0.5].
inline constexpr double kThresholdLow = 0.0;
inline constexpr double kThresholdHigh = 0.5;
inline constexpr std::size_t kMaxThresholdAttempts = 100;

/// Columns C_k copied, every other column zero.
inline Tensor2 mask_missing_as_negative(const Tensor2& y, std::span<const std::size_t> classes) {
  Tensor2 out(y.rows, y.cols);
  for (auto c : classes) {
    if (c >= y.cols) throw ConfigError("class index " + std::to_string(c) + " out of range");
    for (std::size_t i = 0; i < y.rows; ++i) out(i, c) = y(i, c);
  }
  return out;
}

/// Inverse of restricting to C_k: places local columns at their global index,
/// zero elsewhere.
inline Tensor2 expand_local_labels(const Tensor2& y_local, std::span<const std::size_t> classes, std::size_t M) {
  if (y_local.cols != classes.size()) throw ContractViolation("local labels width != |C_k|");
  Tensor2 out(y_local.rows, M);
  for (std::size_t j = 0; j < classes.size(); ++j) {
    if (classes[j] >= M) throw ConfigError("class index out of range");
    for (std::size_t i = 0; i < y_local.rows; ++i) out(i, classes[j]) = y_local(i, j);
  }
  return out;
}

/// Builds the registry described by a scenario. Generated assignments give
/// shared classes to every client, partial class j to clients {j, j+1} mod K
/// and unique class j to client j mod K; classes are then numbered in
/// lexicographic order of their holder sets.
inline ClassRegistry build_registry(const ScenarioSpec& spec) {
  auto names = spec.class_names.empty() ? default_class_names(spec.M) : spec.class_names;
  if (names.size() != spec.M) throw ConfigError("class_names has " + std::to_string(names.size()) + " entries, M = " +
                                                std::to_string(spec.M));
  if (!spec.client_classes.empty()) {
    if (spec.client_classes.size() != spec.K) throw ConfigError("client_classes must have K entries");
    return ClassRegistry(std::move(names), spec.client_classes);
  }
  if (spec.shared_count + spec.partial_count + spec.unique_count != spec.M) {
    throw ConfigError("shared_count + partial_count + unique_count must equal M");
  }
  if (spec.partial_count > 0 && spec.K < 3) throw ConfigError("partially shared classes need K >= 3");
  std::vector<std::vector<std::size_t>> holders;
  for (std::size_t j = 0; j < spec.shared_count; ++j) {
    std::vector<std::size_t> all(spec.K);
    for (std::size_t k = 0; k < spec.K; ++k) all[k] = k;
    holders.push_back(std::move(all));
  }
  for (std::size_t j = 0; j < spec.partial_count; ++j) {
    std::vector<std::size_t> h{j % spec.K, (j + 1) % spec.K};
    std::sort(h.begin(), h.end());
    holders.push_back(std::move(h));
  }
  for (std::size_t j = 0; j < spec.unique_count; ++j) holders.push_back({j % spec.K});
  std::stable_sort(holders.begin(), holders.end());
  std::vector<std::vector<std::size_t>> client_classes(spec.K);
  for (std::size_t c = 0; c < holders.size(); ++c)
    for (auto k : holders[c]) client_classes[k].push_back(c);
  return ClassRegistry(std::move(names), std::move(client_classes));
}

namespace detail {

inline void validate_spec(const ScenarioSpec& s) {
  if (s.K == 0) throw ConfigError("K must be >= 1");
  if (s.M == 0) throw ConfigError("M must be >= 1");
  if (s.d == 0) throw ConfigError("d must be >= 1");
  if (s.n_test < 2) throw ConfigError("n_test must be >= 2");
  if (!(s.label_noise >= 0.0 && s.label_noise < 0.5)) throw ConfigError("label_noise must be in [0, 0.5)");
  if (!(s.val_fraction > 0.0 && s.val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0, 1)");
  if (s.skew == Skew::feature_shift && !(s.shift_sigma >= 0.0)) throw ConfigError("shift_sigma must be >= 0");
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(s.n_per_client) * s.val_fraction));
  if (n_val < 2 || s.n_per_client < n_val + 2) throw ConfigError("n_per_client too small for a train/val split");
}

inline Tensor2 draw_features(Rng& rng, std::size_t n, std::size_t d, const std::vector<Vector>& offsets,
                             std::size_t fixed_component, bool mixture) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor2 x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& off = offsets[mixture ? i % offsets.size() : fixed_component];
    for (std::size_t j = 0; j < d; ++j) x(i, j) = normal(rng) + off[j];
  }
  return x;
}

inline Tensor2 label(const Tensor2& x, const std::vector<Vector>& dirs, const Vector& thresholds, Rng& noise_rng,
                     double noise) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Tensor2 y(x.rows, dirs.size());
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto xi = x.row(i);
    for (std::size_t c = 0; c < dirs.size(); ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < xi.size(); ++j) s += xi[j] * dirs[c][j];
      bool pos = s > thresholds[c];
      if (unif(noise_rng) < noise) pos = !pos;
      y(i, c) = pos ? 1.0 : 0.0;
    }
  }
  return y;
}

// Every column has both label values.
inline bool both_labels_present(const Tensor2& y) {
  for (std::size_t c = 0; c < y.cols; ++c) {
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < y.rows && !(pos && neg); ++i) (y(i, c) > 0.5 ? pos : neg) = true;
    if (!(pos && neg)) return false;
  }
  return true;
}

inline double column_mean(const Tensor2& y, std::size_t c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.rows; ++i) s += y(i, c);
  return y.rows ? s / static_cast<double>(y.rows) : 0.0;
}

}  // namespace detail

/// Generates the registry, the global test set, the batch-norm statistics
/// split, and each client's train/val data. Deterministic given `spec`.
/// Feature matrices depend only on (seed, K, sizes, skew), never on the class
/// assignment.
inline Scenario generate_synthetic(const ScenarioSpec& spec) {
  detail::validate_spec(spec);
  Scenario sc;
  sc.spec = spec;
  sc.registry = build_registry(spec);

  const std::size_t K = spec.K, M = spec.M, d = spec.d;

  std::vector<Vector> offsets(K, Vector(d, 0.0));
  if (spec.skew == Skew::feature_shift && spec.shift_sigma > 0.0) {
    Rng shift_rng = make_stream(spec.seed, {stream::shift});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& off : offsets) {
      double norm = 0.0;
      for (auto& v : off) {
        v = normal(shift_rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : off) v *= spec.shift_sigma / norm;
    }
  }

  // Global test set first, then the stats split, then client pools.
  Rng feat_rng = make_stream(spec.seed, {stream::features});
  Tensor2 test_x = detail::draw_features(feat_rng, spec.n_test, d, offsets, 0, true);
  Tensor2 stats_x = detail::draw_features(feat_rng, spec.n_stats, d, offsets, 0, true);
  std::vector<Tensor2> pools;
  for (std::size_t k = 0; k < K; ++k) pools.push_back(detail::draw_features(feat_rng, spec.n_per_client, d, offsets, k, false));

  const auto n_val =
      static_cast<std::size_t>(std::llround(static_cast<double>(spec.n_per_client) * spec.val_fraction));
  const std::size_t n_train = spec.n_per_client - n_val;

  for (std::size_t attempt = 0; attempt < kMaxThresholdAttempts; ++attempt) {
    Rng truth_rng = make_stream(spec.seed, {stream::truth, attempt});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> thr(kThresholdLow, kThresholdHigh);
    std::vector<Vector> dirs(M, Vector(d));
    Vector thresholds(M);
    for (std::size_t c = 0; c < M; ++c) {
      double norm = 0.0;
      for (auto& v : dirs[c]) {
        v = normal(truth_rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : dirs[c]) v /= norm;
      thresholds[c] = thr(truth_rng);
    }

    Rng noise_rng = make_stream(spec.seed, {stream::noise});
    Tensor2 test_y = detail::label(test_x, dirs, thresholds, noise_rng, spec.label_noise);
    Tensor2 stats_y = detail::label(stats_x, dirs, thresholds, noise_rng, spec.label_noise);
    std::vector<Tensor2> pool_y;
    for (const auto& px : pools) pool_y.push_back(detail::label(px, dirs, thresholds, noise_rng, spec.label_noise));

    bool ok = detail::both_labels_present(test_y);
    std::vector<ClientData> clients;
    for (std::size_t k = 0; k < K && ok; ++k) {
      std::vector<std::size_t> tr(n_train), va(n_val);
      for (std::size_t i = 0; i < n_train; ++i) tr[i] = i;
      for (std::size_t i = 0; i < n_val; ++i) va[i] = n_train + i;
      Tensor2 ytr = gather_rows(pool_y[k], tr), yva = gather_rows(pool_y[k], va);
      ok = detail::both_labels_present(ytr) && detail::both_labels_present(yva);
      const auto& ck = sc.registry.client_classes(k);
      clients.push_back({{gather_rows(pools[k], tr), gather_cols(ytr, ck), Split::train},
                         {gather_rows(pools[k], va), gather_cols(yva, ck), Split::val}});
    }
    if (!ok) continue;

    sc.test = {std::move(test_x), std::move(test_y), Split::test};
    sc.stats = {std::move(stats_x), std::move(stats_y), Split::stats};
    sc.clients = std::move(clients);
    sc.realized.threshold_attempts = attempt + 1;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& cd = sc.clients[k];
      sc.realized.n_train.push_back(cd.train.size());
      sc.realized.n_val.push_back(cd.val.size());
      Vector prev(cd.train.y.cols);
      for (std::size_t j = 0; j < prev.size(); ++j) prev[j] = detail::column_mean(cd.train.y, j);
      sc.realized.train_prevalence.push_back(std::move(prev));
    }
    for (std::size_t c = 0; c < M; ++c) sc.realized.test_prevalence.push_back(detail::column_mean(sc.test.y, c));
    return sc;
  }
  throw ConfigError("could not draw thresholds giving every class both labels in every split after " +
                    std::to_string(kMaxThresholdAttempts) + " attempts (n_per_client=" +
                    std::to_string(spec.n_per_client) + ", n_test=" + std::to_string(spec.n_test) + ")");
}

/// Shared settings for the two ablation ladders.
struct LadderOptions {
  std::size_t total_samples = 8400;  // divisible by every K on the client ladder
  std::size_t d = 20;
  std::size_t M = 14;
  std::size_t clients_ladder_shared = 4;
  std::size_t shared_ladder_clients = 4;
  double label_noise = 0.05;
  std::size_t n_test = 2000;
};

inline constexpr std::size_t kClientLadder[] = {2, 3, 4, 5, 6, 8, 10};
inline constexpr std::size_t kSharedLadder[] = {0, 1, 2, 4, 8, 12, 14};

/// K in {2,3,4,5,6,8,10}; per-client sample count total/K so the network-wide
/// total stays constant. A fixed number of classes is shared by everybody and
/// the rest are unique, dealt round-robin.
inline std::vector<ScenarioSpec> effect_of_clients_scenarios(std::uint64_t base_seed, const LadderOptions& opt = {}) {
  std::vector<ScenarioSpec> out;
  for (auto K : kClientLadder) {
    ScenarioSpec s;
    s.K = K;
    s.M = opt.M;
    s.d = opt.d;
    s.n_per_client = opt.total_samples / K;
    s.shared_count = opt.clients_ladder_shared;
    s.unique_count = opt.M - opt.clients_ladder_shared;
    s.label_noise = opt.label_noise;
    s.n_test = opt.n_test;
    s.seed = base_seed;
    out.push_back(std::move(s));
  }
  return out;
}

/// K fixed, shared classes in {0,1,2,4,8,12,14}; the remaining classes are
/// unique. Sample draws are identical across rungs; only label masking moves.
inline std::vector<ScenarioSpec> effect_of_shared_classes_scenarios(std::uint64_t base_seed,
                                                                    const LadderOptions& opt = {}) {
  std::vector<ScenarioSpec> out;
  for (auto shared : kSharedLadder) {
    ScenarioSpec s;
    s.K = opt.shared_ladder_clients;
    s.M = opt.M;
    s.d = opt.d;
    s.n_per_client = opt.total_samples / s.K;
    s.shared_count = std::min(shared, opt.M);
    s.unique_count = opt.M - s.shared_count;
    s.label_noise = opt.label_noise;
    s.n_test = opt.n_test;
    s.seed = base_seed;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace surgagg
