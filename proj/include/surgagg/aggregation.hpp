#pragma once

// Server-side update. Feature extractors are averaged with a pluggable
// strategy; the classification head is rebuilt class by class, averaging each
// class column only over the clients that hold that class, and every client
// gets back just the columns of its own classes.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "surgagg/errors.hpp"
#include "surgagg/nn.hpp"
#include "surgagg/registry.hpp"

namespace surgagg {

enum class Strategy { fedavg, fedbn, fedbn_plus };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::fedavg: return "fedavg";
    case Strategy::fedbn: return "fedbn";
    case Strategy::fedbn_plus: return "fedbn_plus";
  }
  return "?";
}

inline Strategy strategy_from_string(std::string_view s) {
  if (s == "fedavg") return Strategy::fedavg;
  if (s == "fedbn") return Strategy::fedbn;
  if (s == "fedbn_plus") return Strategy::fedbn_plus;
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

struct GlobalHead {
  Tensor2 W;  // N x M
  Vector b;   // M
};

struct LocalHead {
  Tensor2 W;  // N x M_k
  Vector b;   // M_k
};

namespace detail {

// out[i] = mean over parts of get(p)[i]; summation in part order, then one
// division, so a single part passes through bit-exactly. With per-part
// weights the mean is sum(w_p * x_p) / sum(w_p).
template <class Get>
Vector mean_of(std::size_t parts, std::size_t len, Get&& get, std::span<const double> weights = {}) {
  if (parts == 0) throw ContractViolation("average over zero parts");
  Vector out(len, 0.0);
  auto checked = [&](std::size_t p) -> decltype(auto) {
    const auto& v = get(p);
    if (v.size() != len) throw ContractViolation("averaging: shape mismatch across clients");
    return v;
  };
  if (weights.empty() || parts == 1) {
    const auto& first = checked(0);
    std::copy(first.begin(), first.end(), out.begin());
    for (std::size_t p = 1; p < parts; ++p) {
      const auto& v = checked(p);
      for (std::size_t i = 0; i < len; ++i) out[i] += v[i];
    }
    if (parts > 1) {
      const double n = static_cast<double>(parts);
      for (auto& x : out) x /= n;
    }
    return out;
  }
  double total = 0.0;
  for (std::size_t p = 0; p < parts; ++p) {
    const auto& v = checked(p);
    total += weights[p];
    for (std::size_t i = 0; i < len; ++i) out[i] += weights[p] * v[i];
  }
  for (auto& x : out) x /= total;
  return out;
}

inline void check_weights(std::span<const double> w, std::size_t K) {
  if (w.empty()) return;
  if (w.size() != K) throw ConfigError("sample weights: expected one weight per client");
  for (double x : w)
    if (!(x > 0.0)) throw ConfigError("sample weights must be positive");
}

}  // namespace detail

/// Elementwise mean of every feature tensor, including batch-norm running
/// statistics. Clients are summed in index order.
inline FeatureParams fedavg_feature(std::span<const FeatureParams* const> locals,
                                    std::span<const double> sample_weights = {}) {
  if (locals.empty()) throw ContractViolation("fedavg_feature: no clients");
  detail::check_weights(sample_weights, locals.size());
  const FeatureParams& ref = *locals.front();
  for (const auto* l : locals) {
    if (l->dense.size() != ref.dense.size() || l->bn.size() != ref.bn.size()) {
      throw ContractViolation("fedavg_feature: clients have different layer counts");
    }
  }
  const std::size_t K = locals.size();
  auto mean = [&](std::size_t len, auto&& get) { return detail::mean_of(K, len, get, sample_weights); };
  FeatureParams out;
  for (std::size_t i = 0; i < ref.dense.size(); ++i) {
    const auto& d0 = ref.dense[i];
    for (const auto* l : locals)
      if (!l->dense[i].W.same_shape(d0.W)) throw ContractViolation("fedavg_feature: dense shape mismatch");
    DenseParams d;
    d.W = Tensor2(d0.W.rows, d0.W.cols,
                  mean(d0.W.data.size(), [&](std::size_t k) -> const Vector& { return locals[k]->dense[i].W.data; }));
    d.b = mean(d0.b.size(), [&](std::size_t k) -> const Vector& { return locals[k]->dense[i].b; });
    out.dense.push_back(std::move(d));
  }
  for (std::size_t i = 0; i < ref.bn.size(); ++i) {
    const auto& s0 = ref.bn[i];
    const std::size_t w = s0.width();
    BatchNormState s(w);
    s.momentum = s0.momentum;
    s.epsilon = s0.epsilon;
    s.gamma = mean(w, [&](std::size_t k) -> const Vector& { return locals[k]->bn[i].gamma; });
    s.beta = mean(w, [&](std::size_t k) -> const Vector& { return locals[k]->bn[i].beta; });
    s.running_mean = mean(w, [&](std::size_t k) -> const Vector& { return locals[k]->bn[i].running_mean; });
    s.running_var = mean(w, [&](std::size_t k) -> const Vector& { return locals[k]->bn[i].running_var; });
    out.bn.push_back(std::move(s));
  }
  return out;
}

/// FedAvg on trainable feature weights; the global model's batch-norm running
/// statistics are replaced by the supplied pretrained ones.
inline FeatureParams fedbn_plus_feature(std::span<const FeatureParams* const> locals,
                                        std::span<const BatchNormState> pretrained_bn,
                                        std::span<const double> sample_weights = {}) {
  FeatureParams out = fedavg_feature(locals, sample_weights);
  if (pretrained_bn.size() != out.bn.size()) {
    throw ConfigError("fedbn_plus: expected pretrained statistics for " + std::to_string(out.bn.size()) +
                      " batch-norm layers, got " + std::to_string(pretrained_bn.size()));
  }
  for (std::size_t i = 0; i < out.bn.size(); ++i) {
    if (pretrained_bn[i].running_mean.size() != out.bn[i].width() ||
        pretrained_bn[i].running_var.size() != out.bn[i].width()) {
      throw ConfigError("fedbn_plus: pretrained statistics width mismatch at layer " + std::to_string(i));
    }
    out.bn[i].running_mean = pretrained_bn[i].running_mean;
    out.bn[i].running_var = pretrained_bn[i].running_var;
  }
  return out;
}

/// Builds the N x M global head. Column c (with its bias entry) is the mean of
/// the c-columns of exactly the clients holding c; a class held by a single
/// client is copied through unchanged. heads[k] must have |C_k| columns in the
/// registry's local order.
inline GlobalHead surgical_head_update(std::span<const LocalHead* const> heads, const ClassRegistry& registry,
                                       std::span<const double> sample_weights = {}) {
  const std::size_t K = registry.num_clients();
  if (heads.size() != K) {
    throw ContractViolation("surgical_head_update: " + std::to_string(heads.size()) + " heads for " +
                            std::to_string(K) + " registered clients");
  }
  detail::check_weights(sample_weights, K);
  const std::size_t N = heads.front()->W.rows;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& h = *heads[k];
    const std::size_t mk = registry.client_classes(k).size();
    if (h.W.cols != mk || h.b.size() != mk || h.W.rows != N) {
      throw ContractViolation("surgical_head_update: client " + std::to_string(k) + " head is " + shape_str(h.W) +
                              ", registry expects " + std::to_string(N) + "x" + std::to_string(mk));
    }
  }
  const std::size_t M = registry.num_classes();
  GlobalHead g{Tensor2(N, M), Vector(M)};
  std::vector<Vector> cols;
  std::vector<double> weights;
  for (std::size_t c = 0; c < M; ++c) {
    const auto& holders = registry.clients_with_class(c);
    cols.clear();
    for (auto k : holders) {
      const std::size_t j = *registry.global_to_local(k, c);
      const auto& h = *heads[k];
      Vector v(N + 1);
      for (std::size_t r = 0; r < N; ++r) v[r] = h.W(r, j);
      v[N] = h.b[j];
      cols.push_back(std::move(v));
    }
    weights.clear();
    if (!sample_weights.empty())
      for (auto k : holders) weights.push_back(sample_weights[k]);
    Vector mean = detail::mean_of(cols.size(), N + 1, [&](std::size_t p) -> const Vector& { return cols[p]; }, weights);
    for (std::size_t r = 0; r < N; ++r) g.W(r, c) = mean[r];
    g.b[c] = mean[N];
  }
  return g;
}

/// Client k's head: local column j is global column local_to_global(k, j).
inline LocalHead reconstruct_client_head(const GlobalHead& global, const ClassRegistry& registry, std::size_t k) {
  if (global.W.cols != registry.num_classes() || global.b.size() != registry.num_classes()) {
    throw ContractViolation("reconstruct_client_head: global head width != M");
  }
  const auto& ck = registry.client_classes(k);
  LocalHead h{gather_cols(global.W, ck), Vector(ck.size())};
  for (std::size_t j = 0; j < ck.size(); ++j) h.b[j] = global.b[ck[j]];
  return h;
}

struct ServerOptions {
  Strategy strategy = Strategy::fedavg;
  bool aggregate_heads = true;               // false: heads stay personal (PFL)
  std::vector<double> sample_weights;        // empty: unweighted means
  std::vector<BatchNormState> pretrained_bn;  // required by fedbn_plus
};

struct ServerResult {
  std::optional<ParamSet> global;  // absent for fedbn and for personal heads
  std::vector<ParamSet> to_clients;
};

/// One server round. `head_registry` states which global classes sit behind
/// each client's head columns.
inline ServerResult server_update(std::span<const ParamSet> clients, const ClassRegistry& head_registry,
                                  const ServerOptions& opt) {
  if (clients.empty()) throw ContractViolation("server_update: no clients");
  std::vector<const FeatureParams*> feats;
  for (const auto& c : clients) feats.push_back(&c.feature);
  FeatureParams global_feat = opt.strategy == Strategy::fedbn_plus
                                  ? fedbn_plus_feature(feats, opt.pretrained_bn, opt.sample_weights)
                                  : fedavg_feature(feats, opt.sample_weights);

  ServerResult res;
  std::optional<GlobalHead> ghead;
  if (opt.aggregate_heads) {
    std::vector<LocalHead> heads;
    heads.reserve(clients.size());
    for (const auto& c : clients) heads.push_back({c.head_W, c.head_b});
    std::vector<const LocalHead*> ptrs;
    for (const auto& h : heads) ptrs.push_back(&h);
    ghead = surgical_head_update(ptrs, head_registry, opt.sample_weights);
  }

  const bool local_stats = opt.strategy != Strategy::fedavg;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    ParamSet p;
    p.feature = global_feat;
    if (local_stats) {
      for (std::size_t i = 0; i < p.feature.bn.size(); ++i) {
        p.feature.bn[i].running_mean = clients[k].feature.bn[i].running_mean;
        p.feature.bn[i].running_var = clients[k].feature.bn[i].running_var;
      }
    }
    if (ghead) {
      auto h = reconstruct_client_head(*ghead, head_registry, k);
      p.head_W = std::move(h.W);
      p.head_b = std::move(h.b);
    } else {
      p.head_W = clients[k].head_W;
      p.head_b = clients[k].head_b;
    }
    res.to_clients.push_back(std::move(p));
  }
  if (ghead && opt.strategy != Strategy::fedbn) {
    ParamSet g;
    g.feature = std::move(global_feat);
    g.head_W = std::move(ghead->W);
    g.head_b = std::move(ghead->b);
    res.global = std::move(g);
  }
  return res;
}

}  // namespace surgagg
