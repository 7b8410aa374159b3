#pragma once

// Runs surgical aggregation and the comparison methods on a generated
// scenario under shared seeds, reporting every communication round.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "surgagg/aggregation.hpp"
#include "surgagg/data.hpp"
#include "surgagg/errors.hpp"
#include "surgagg/fed_model.hpp"
#include "surgagg/metrics.hpp"
#include "surgagg/nn.hpp"
#include "surgagg/registry.hpp"
#include "surgagg/rng.hpp"

namespace surgagg {

enum class Method { surgical, vanilla_fl, fl_partial_loss, pfl, centralized, individual };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::surgical: return "surgical";
    case Method::vanilla_fl: return "vanilla_fl";
    case Method::fl_partial_loss: return "fl_partial_loss";
    case Method::pfl: return "pfl";
    case Method::centralized: return "centralized";
    case Method::individual: return "individual";
  }
  return "?";
}

inline Method method_from_string(std::string_view s) {
  for (auto m : {Method::surgical, Method::vanilla_fl, Method::fl_partial_loss, Method::pfl, Method::centralized,
                 Method::individual}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

/// Methods that end with one model predicting every class.
inline bool produces_global_model(Method m) {
  return m == Method::surgical || m == Method::vanilla_fl || m == Method::fl_partial_loss ||
         m == Method::centralized;
}

inline bool is_federated(Method m) {
  return m == Method::surgical || m == Method::vanilla_fl || m == Method::fl_partial_loss || m == Method::pfl;
}

/// One feature-extractor layer; `width` is only meaningful for dense.
struct LayerConfig {
  LayerKind kind = LayerKind::dense;
  std::size_t width = 0;

  friend bool operator==(const LayerConfig&, const LayerConfig&) = default;
};

inline std::vector<LayerConfig> default_feature_layers() {
  return {{LayerKind::dense, 32}, {LayerKind::batchnorm, 0}, {LayerKind::relu, 0}, {LayerKind::dense, 16},
          {LayerKind::relu, 0}};
}

inline Architecture build_architecture(std::size_t input_dim, const std::vector<LayerConfig>& layers) {
  Architecture a(input_dim);
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::dense: a.add_dense(l.width); break;
      case LayerKind::batchnorm: a.add_batchnorm(); break;
      case LayerKind::relu: a.add_relu(); break;
      case LayerKind::sigmoid: throw ConfigError("sigmoid is reserved for the head");
    }
  }
  a.validate();
  return a;
}

struct SeedBundle {
  std::uint64_t init = 0;     // model initialization (shared by every client)
  std::uint64_t shuffle = 0;  // per-client mini-batch order streams

  friend bool operator==(const SeedBundle&, const SeedBundle&) = default;
};

struct ExperimentConfig {
  ScenarioSpec scenario;
  Method method = Method::surgical;
  Strategy strategy = Strategy::fedavg;
  std::size_t T = 100;
  std::size_t E = 1;
  std::size_t warmup_epochs = 5;
  double warmup_lr = 1e-2;
  double lr = 5e-2;
  std::size_t batch_size = 32;
  bool sample_weighted = false;
  std::vector<LayerConfig> feature_layers = default_feature_layers();
  SeedBundle seeds;

  /// Sets the data, init and shuffle seeds at once.
  void set_all_seeds(std::uint64_t s) {
    scenario.seed = s;
    seeds = {s, s};
  }

  void validate() const {
    if (E < 1) throw ConfigError("E must be >= 1");
    if (T < E) throw ConfigError("T must be >= E");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr >= 0.0) || !(warmup_lr >= 0.0)) throw ConfigError("learning rates must be non-negative");
    if (strategy == Strategy::fedbn && is_federated(method) && method != Method::pfl) {
      throw ConfigError("strategy fedbn emits no global model and is only valid for method pfl");
    }
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<double> train_loss;  // per client (one entry for centralized)
  std::vector<double> val_loss;
  double mean_val_loss = 0.0;
  std::vector<std::optional<double>> global_auroc;  // per global class; empty without a global model
  std::optional<double> global_mean_auroc;
  double wall_seconds = 0.0;
};

struct GlobalModel {
  ParamSet params;
  std::size_t round = 0;
};

struct ExperimentResult {
  Method method = Method::surgical;
  Architecture arch;
  ClassRegistry registry;
  std::optional<GlobalModel> global;  // checkpoint with the lowest mean validation loss
  std::vector<Model> client_models;   // pfl / individual: one selected model per client
  std::vector<RoundReport> reports;
  std::size_t best_round = 0;
  std::vector<std::size_t> epochs_per_client;

  Model global_model() const {
    if (!global) throw ConfigError(std::string(to_string(method)) + " produces no global model");
    std::vector<std::size_t> all(registry.num_classes());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return {arch, global->params, all};
  }
};

/// What the observer sees after every server update.
struct RoundSnapshot {
  std::size_t round = 0;
  const std::optional<ParamSet>* global = nullptr;
  std::span<const ClientState> clients;
};

struct RunOptions {
  std::size_t parallel_clients = 1;
  std::function<void(const RoundSnapshot&)> observer;
};

namespace detail {

// Runs fn(k) for k in [0, n) on up to `threads` threads. Exceptions are
// rethrown for the lowest failing k.
template <class Fn>
void for_each_client(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(threads, n);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t k = w; k < n; k += workers) {
        try {
          fn(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<std::size_t> iota_vec(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

inline LossMode loss_mode_for(Method m) {
  return m == Method::vanilla_fl ? LossMode::all_classes_negatives : LossMode::local_classes;
}

inline bool full_width_head(Method m) { return m == Method::vanilla_fl || m == Method::fl_partial_loss; }

inline ClientState make_client(const ExperimentConfig& cfg, const Scenario& sc, const Architecture& arch,
                               std::size_t k) {
  const auto& ck = sc.registry.client_classes(k);
  const std::size_t M = sc.registry.num_classes();
  ClientState c;
  c.id = k;
  c.rng = make_stream(cfg.seeds.shuffle, {stream::shuffle, k});
  c.train = sc.clients[k].train;
  c.val = sc.clients[k].val;
  if (full_width_head(cfg.method)) {
    c.head_classes = iota_vec(M);
    c.loss_columns = ck;
    c.train.y = expand_local_labels(c.train.y, ck, M);
    c.val.y = expand_local_labels(c.val.y, ck, M);
  } else {
    c.head_classes = ck;
    c.loss_columns = iota_vec(ck.size());
  }
  c.params = init_model(arch, c.head_classes, cfg.seeds.init);
  return c;
}

// Concatenation of every client's data with missing classes as negatives.
inline ClientState make_centralized(const ExperimentConfig& cfg, const Scenario& sc, const Architecture& arch) {
  const std::size_t M = sc.registry.num_classes();
  std::vector<Tensor2> tx, ty, vx, vy;
  for (std::size_t k = 0; k < sc.clients.size(); ++k) {
    const auto& ck = sc.registry.client_classes(k);
    tx.push_back(sc.clients[k].train.x);
    ty.push_back(expand_local_labels(sc.clients[k].train.y, ck, M));
    vx.push_back(sc.clients[k].val.x);
    vy.push_back(expand_local_labels(sc.clients[k].val.y, ck, M));
  }
  ClientState c;
  c.id = 0;
  c.rng = make_stream(cfg.seeds.shuffle, {stream::shuffle, 0});
  c.train = {vstack(tx), vstack(ty), Split::train};
  c.val = {vstack(vx), vstack(vy), Split::val};
  c.head_classes = iota_vec(M);
  c.loss_columns = iota_vec(M);
  c.params = init_model(arch, c.head_classes, cfg.seeds.init);
  return c;
}

inline void rethrow_with_round(std::size_t round, const NumericError& err) {
  throw NumericError("round " + std::to_string(round) + ": " + err.what(), err.layer());
}

}  // namespace detail

/// Per-layer batch mean/variance of `x` under `params`, packed as running
/// statistics (used as the pretrained statistics of FedBN+).
inline std::vector<BatchNormState> batch_statistics(const ParamSet& params, const Architecture& arch,
                                                    const Tensor2& x) {
  std::vector<BatchNormState> stats = params.feature.bn;
  for (auto& s : stats) s.momentum = 1.0;
  detail::forward_impl(params, arch, x, Mode::train, &stats);
  for (std::size_t i = 0; i < stats.size(); ++i) stats[i].momentum = params.feature.bn[i].momentum;
  return stats;
}

inline std::vector<std::optional<double>> per_class_auroc(const Model& model, const LabeledSet& test) {
  const auto all = detail::iota_vec(test.y.cols);
  const auto r = evaluate(model, test, all);
  std::vector<std::optional<double>> out;
  for (auto c : all) out.push_back(r.per_class_auroc.at(c));
  return out;
}

namespace detail {

inline ExperimentResult run_federated(const ExperimentConfig& cfg, const Scenario& sc, const RunOptions& opt) {
  const Architecture arch = build_architecture(sc.spec.d, cfg.feature_layers);
  const std::size_t K = sc.registry.num_clients();
  const std::size_t M = sc.registry.num_classes();
  const LossMode mode = loss_mode_for(cfg.method);
  const ClassRegistry head_registry =
      full_width_head(cfg.method) ? ClassRegistry::homogeneous(sc.registry.class_names(), K) : sc.registry;

  ExperimentResult res;
  res.method = cfg.method;
  res.arch = arch;
  res.registry = sc.registry;

  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < K; ++k) clients.push_back(make_client(cfg, sc, arch, k));

  ServerOptions server;
  server.strategy = cfg.strategy;
  server.aggregate_heads = cfg.method != Method::pfl;
  if (cfg.sample_weighted)
    for (const auto& c : clients) server.sample_weights.push_back(static_cast<double>(c.train.size()));
  if (cfg.strategy == Strategy::fedbn_plus) {
    server.pretrained_bn = batch_statistics(init_model(arch, iota_vec(M), cfg.seeds.init), arch, sc.stats.x);
  }

  for_each_client(K, opt.parallel_clients, [&](std::size_t k) {
    head_warmup(clients[k], arch, cfg.warmup_epochs, cfg.warmup_lr, cfg.batch_size, mode);
  });

  const std::size_t rounds = cfg.T / cfg.E;
  const Model eval_shell{arch, {}, iota_vec(M)};
  double best = std::numeric_limits<double>::infinity();
  std::vector<ParamSet> best_clients;

  for (std::size_t r = 1; r <= rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundReport rep;
    rep.round = r;
    rep.train_loss.assign(K, 0.0);
    try {
      for_each_client(K, opt.parallel_clients, [&](std::size_t k) {
        rep.train_loss[k] = local_train(clients[k], arch, cfg.E, cfg.lr, cfg.batch_size, mode).mean_loss;
      });
    } catch (const NumericError& err) {
      rethrow_with_round(r, err);
    }

    std::vector<ParamSet> locals;
    for (const auto& c : clients) locals.push_back(c.params);
    auto update = server_update(locals, head_registry, server);
    for (std::size_t k = 0; k < K; ++k) clients[k].params = std::move(update.to_clients[k]);

    rep.val_loss.assign(K, 0.0);
    for_each_client(K, opt.parallel_clients,
                    [&](std::size_t k) { rep.val_loss[k] = validation_loss(clients[k], arch, mode); });
    rep.mean_val_loss = std::accumulate(rep.val_loss.begin(), rep.val_loss.end(), 0.0) / static_cast<double>(K);

    if (update.global) {
      Model g = eval_shell;
      g.params = *update.global;
      rep.global_auroc = per_class_auroc(g, sc.test);
      rep.global_mean_auroc = evaluate(g, sc.test, g.head_classes).mean_auroc;
    }
    if (opt.observer) opt.observer({r, &update.global, clients});

    if (rep.mean_val_loss < best) {
      best = rep.mean_val_loss;
      res.best_round = r;
      if (update.global) res.global = GlobalModel{*update.global, r};
      best_clients.clear();
      for (const auto& c : clients) best_clients.push_back(c.params);
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.reports.push_back(std::move(rep));
  }

  // Epochs after the last communication round still train locally.
  if (const std::size_t rest = cfg.T - rounds * cfg.E; rest > 0) {
    for_each_client(K, opt.parallel_clients, [&](std::size_t k) {
      local_train(clients[k], arch, rest, cfg.lr, cfg.batch_size, mode);
    });
  }

  if (cfg.method == Method::pfl) {
    for (std::size_t k = 0; k < K; ++k) res.client_models.push_back({arch, best_clients[k], clients[k].head_classes});
  }
  for (const auto& c : clients) res.epochs_per_client.push_back(c.epoch_counter);
  return res;
}

// Standalone training of one or more independent models, reporting every E
// epochs. Used by the centralized and individual baselines.
inline ExperimentResult run_standalone(const ExperimentConfig& cfg, const Scenario& sc, const RunOptions& opt) {
  const Architecture arch = build_architecture(sc.spec.d, cfg.feature_layers);
  const std::size_t M = sc.registry.num_classes();
  ExperimentResult res;
  res.method = cfg.method;
  res.arch = arch;
  res.registry = sc.registry;

  std::vector<ClientState> models;
  if (cfg.method == Method::centralized) {
    models.push_back(make_centralized(cfg, sc, arch));
  } else {
    for (std::size_t k = 0; k < sc.registry.num_clients(); ++k) models.push_back(make_client(cfg, sc, arch, k));
  }
  const std::size_t n = models.size();
  const LossMode mode = LossMode::local_classes;

  for_each_client(n, opt.parallel_clients, [&](std::size_t k) {
    head_warmup(models[k], arch, cfg.warmup_epochs, cfg.warmup_lr, cfg.batch_size, mode);
  });

  const std::size_t rounds = cfg.T / cfg.E;
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<ParamSet> best_params(n);
  double best_mean = std::numeric_limits<double>::infinity();
  const Model eval_shell{arch, {}, detail::iota_vec(M)};

  for (std::size_t r = 1; r <= rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundReport rep;
    rep.round = r;
    rep.train_loss.assign(n, 0.0);
    rep.val_loss.assign(n, 0.0);
    try {
      for_each_client(n, opt.parallel_clients, [&](std::size_t k) {
        rep.train_loss[k] = local_train(models[k], arch, cfg.E, cfg.lr, cfg.batch_size, mode).mean_loss;
        rep.val_loss[k] = validation_loss(models[k], arch, mode);
      });
    } catch (const NumericError& err) {
      rethrow_with_round(r, err);
    }
    rep.mean_val_loss = std::accumulate(rep.val_loss.begin(), rep.val_loss.end(), 0.0) / static_cast<double>(n);

    std::optional<ParamSet> global;
    if (cfg.method == Method::centralized) {
      global = models.front().params;
      Model g = eval_shell;
      g.params = *global;
      rep.global_auroc = per_class_auroc(g, sc.test);
      rep.global_mean_auroc = evaluate(g, sc.test, g.head_classes).mean_auroc;
    }
    if (opt.observer) opt.observer({r, &global, models});

    for (std::size_t k = 0; k < n; ++k) {
      if (rep.val_loss[k] < best[k]) {
        best[k] = rep.val_loss[k];
        best_params[k] = models[k].params;
      }
    }
    if (rep.mean_val_loss < best_mean) {
      best_mean = rep.mean_val_loss;
      res.best_round = r;
      if (global) res.global = GlobalModel{*global, r};
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.reports.push_back(std::move(rep));
  }
  if (const std::size_t rest = cfg.T - rounds * cfg.E; rest > 0) {
    for_each_client(n, opt.parallel_clients,
                    [&](std::size_t k) { local_train(models[k], arch, rest, cfg.lr, cfg.batch_size, mode); });
  }
  if (cfg.method == Method::individual) {
    for (std::size_t k = 0; k < n; ++k) res.client_models.push_back({arch, best_params[k], models[k].head_classes});
  }
  for (const auto& m : models) res.epochs_per_client.push_back(m.epoch_counter);
  return res;
}

}  // namespace detail

/// Surgical aggregation: local epochs on local classes, feature-extractor
/// averaging, per-class head aggregation and per-client head reconstruction.
inline ExperimentResult run_surgical(const ExperimentConfig& cfg, const Scenario& sc, const RunOptions& opt = {}) {
  cfg.validate();
  if (cfg.method != Method::surgical) throw ConfigError("run_surgical requires method surgical");
  return detail::run_federated(cfg, sc, opt);
}

/// Any of the comparison methods.
inline ExperimentResult run_baseline(const ExperimentConfig& cfg, const Scenario& sc, const RunOptions& opt = {}) {
  cfg.validate();
  switch (cfg.method) {
    case Method::surgical: throw ConfigError("run_baseline: surgical is not a baseline");
    case Method::vanilla_fl:
    case Method::fl_partial_loss:
    case Method::pfl: return detail::run_federated(cfg, sc, opt);
    case Method::centralized:
    case Method::individual: return detail::run_standalone(cfg, sc, opt);
  }
  throw ConfigError("unknown method");
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Scenario& sc, const RunOptions& opt = {}) {
  return cfg.method == Method::surgical ? run_surgical(cfg, sc, opt) : run_baseline(cfg, sc, opt);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  return run_experiment(cfg, generate_synthetic(cfg.scenario), opt);
}

}  // namespace surgagg
