#pragma once

// Client-side view of a federated model: initialization, per-class head
// column access, head warm-up and local epochs of SGD.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "surgagg/data.hpp"
#include "surgagg/errors.hpp"
#include "surgagg/nn.hpp"
#include "surgagg/rng.hpp"

namespace surgagg {

/// A classifier together with the global class behind each head column.
struct Model {
  Architecture arch;
  ParamSet params;
  std::vector<std::size_t> head_classes;
};

/// Glorot-uniform dense weights, zero biases, identity batch-norm.
/// Feature layer i draws from stream (seed, i); head column j draws from
/// stream (seed, head_classes[j]) with its own N->1 fan, so two clients that
/// both hold class c start with the same column for c.
inline ParamSet init_model(const Architecture& arch, std::span<const std::size_t> head_classes, std::uint64_t seed) {
  arch.validate();
  if (head_classes.empty()) throw ConfigError("init_model: head needs at least one class");
  ParamSet p;
  std::size_t di = 0;
  for (const auto& l : arch.feature_layers()) {
    if (l.kind == LayerKind::dense) {
      Rng rng = make_stream(seed, {stream::init_feature, di++});
      const double limit = std::sqrt(6.0 / static_cast<double>(l.in_dim + l.out_dim));
      std::uniform_real_distribution<double> u(-limit, limit);
      DenseParams d{Tensor2(l.in_dim, l.out_dim), Vector(l.out_dim, 0.0)};
      for (auto& w : d.W.data) w = u(rng);
      p.feature.dense.push_back(std::move(d));
    } else if (l.kind == LayerKind::batchnorm) {
      p.feature.bn.emplace_back(l.in_dim);
    }
  }
  const std::size_t N = arch.feature_width();
  const double limit = std::sqrt(6.0 / static_cast<double>(N + 1));
  p.head_W = Tensor2(N, head_classes.size());
  p.head_b.assign(head_classes.size(), 0.0);
  for (std::size_t j = 0; j < head_classes.size(); ++j) {
    Rng rng = make_stream(seed, {stream::init_head, head_classes[j]});
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t r = 0; r < N; ++r) p.head_W(r, j) = u(rng);
  }
  return p;
}

inline ParamSet init_model(const Architecture& arch, std::size_t head_classes, std::uint64_t seed) {
  std::vector<std::size_t> idx(head_classes);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return init_model(arch, idx, seed);
}

/// Head column `local_col` followed by its bias entry (length N + 1).
inline Vector class_column(const ParamSet& p, std::size_t local_col) {
  if (local_col >= p.head_width()) {
    throw ContractViolation("class_column: column " + std::to_string(local_col) + " out of range");
  }
  Vector v(p.head_W.rows + 1);
  for (std::size_t r = 0; r < p.head_W.rows; ++r) v[r] = p.head_W(r, local_col);
  v.back() = p.head_b[local_col];
  return v;
}

inline void set_class_column(ParamSet& p, std::size_t local_col, std::span<const double> v) {
  if (local_col >= p.head_width()) {
    throw ContractViolation("set_class_column: column " + std::to_string(local_col) + " out of range");
  }
  if (v.size() != p.head_W.rows + 1) throw ContractViolation("set_class_column: expected N + 1 values");
  for (std::size_t r = 0; r < p.head_W.rows; ++r) p.head_W(r, local_col) = v[r];
  p.head_b[local_col] = v.back();
}

enum class LossMode { local_classes, all_classes_negatives };

/// One participant: its model, the classes behind its head columns, the
/// labels it trains on (same width as its head) and a private shuffle stream.
struct ClientState {
  std::size_t id = 0;
  ParamSet params;
  std::vector<std::size_t> head_classes;  // global class of each head column
  std::vector<std::size_t> loss_columns;  // head columns holding C_k
  LabeledSet train;
  LabeledSet val;
  std::size_t epoch_counter = 0;
  Rng rng;

  std::vector<std::size_t> mask(LossMode mode) const {
    if (mode == LossMode::local_classes) return loss_columns;
    std::vector<std::size_t> all(params.head_width());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
};

struct EpochStats {
  double mean_loss = 0.0;  // mean of mini-batch losses
  std::size_t steps = 0;
};

namespace detail {

inline EpochStats run_epochs(ClientState& client, const Architecture& arch, std::size_t epochs, double lr,
                             std::size_t batch_size, std::span<const std::size_t> mask,
                             const std::set<std::string>& frozen) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  const std::size_t n = client.train.size();
  if (n == 0) throw ConfigError("client " + std::to_string(client.id) + " has no training data");
  if (client.train.y.cols != client.params.head_width()) {
    throw ContractViolation("client " + std::to_string(client.id) + ": label width != head width");
  }
  EpochStats stats;
  double loss_sum = 0.0;
  std::vector<std::size_t> order(n);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), client.rng);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t stop = std::min(n, start + batch_size);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      Tensor2 xb = gather_rows(client.train.x, idx);
      Tensor2 yb = gather_rows(client.train.y, idx);
      ForwardCache cache;
      try {
        cache = forward(client.params, arch, xb, Mode::train);
      } catch (const NumericError& err) {
        throw NumericError("client " + std::to_string(client.id) + ": " + err.what(), err.layer());
      }
      const double loss = masked_bce_loss(cache.output(), yb, mask);
      if (!std::isfinite(loss)) throw NumericError("client " + std::to_string(client.id) + ": non-finite loss");
      loss_sum += loss;
      ++stats.steps;
      ParamGrad g = backward(client.params, arch, cache, yb, mask);
      sgd_step(client.params, g, lr, frozen);
    }
  }
  stats.mean_loss = stats.steps ? loss_sum / static_cast<double>(stats.steps) : 0.0;
  return stats;
}

}  // namespace detail

/// Head-only training with the feature extractor frozen. Forward passes run in
/// train mode, so batch-norm running statistics still move.
inline EpochStats head_warmup(ClientState& client, const Architecture& arch, std::size_t warmup_epochs, double lr,
                              std::size_t batch_size, LossMode mode = LossMode::local_classes) {
  if (warmup_epochs == 0) return {};
  const auto mask = client.mask(mode);
  return detail::run_epochs(client, arch, warmup_epochs, lr, batch_size, mask, {std::string(kFeatureGroup)});
}

/// E full passes over the shuffled local training set.
inline EpochStats local_train(ClientState& client, const Architecture& arch, std::size_t epochs, double lr,
                              std::size_t batch_size, LossMode mode) {
  if (epochs == 0) throw ConfigError("local_train: epochs must be >= 1");
  const auto mask = client.mask(mode);
  auto stats = detail::run_epochs(client, arch, epochs, lr, batch_size, mask, {});
  client.epoch_counter += epochs;
  return stats;
}

/// Eval-mode loss on the client's validation split.
inline double validation_loss(const ClientState& client, const Architecture& arch, LossMode mode) {
  const auto mask = client.mask(mode);
  Tensor2 p = predict(client.params, arch, client.val.x);
  return masked_bce_loss(p, client.val.y, mask);
}

}  // namespace surgagg
