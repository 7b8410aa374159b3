// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "surgagg/cli.hpp"

using namespace surgagg;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, double budget_s, const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool in_time = s < budget_s;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::printf("[%s] criterion %d: %s | %s | %.1fs (budget %.0fs%s)\n", pass ? "PASS" : "FAIL", id, title.c_str(),
              o.detail.c_str(), s, budget_s, in_time ? "" : ", exceeded");
  std::fflush(stdout);
}

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

ExperimentConfig heterogeneous_config(Method m, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.method = m;
  cfg.scenario.K = 4;
  cfg.scenario.M = 8;
  cfg.scenario.d = 20;
  cfg.scenario.n_per_client = 2000;
  cfg.scenario.shared_count = 2;
  cfg.scenario.partial_count = 3;
  cfg.scenario.unique_count = 3;
  cfg.scenario.label_noise = 0.05;
  cfg.T = 100;
  cfg.E = 1;
  cfg.set_all_seeds(seed);
  return cfg;
}

fs::path scratch_dir() {
  const auto p = fs::temp_directory_path() / ("surgagg_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("'") + SURGAGG_CLI_PATH + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text_file(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// 1: homogeneous classes, surgical equals FedAvg vanilla FL every round.
Outcome fedavg_reduction() {
  auto cfg = heterogeneous_config(Method::surgical, 11);
  cfg.scenario.shared_count = 8;
  cfg.scenario.partial_count = cfg.scenario.unique_count = 0;
  cfg.T = 20;
  const auto sc = generate_synthetic(cfg.scenario);
  auto trajectory = [&](Method m) {
    std::vector<ParamSet> out;
    cfg.method = m;
    RunOptions opt;
    opt.observer = [&](const RoundSnapshot& s) { out.push_back(**s.global); };
    run_experiment(cfg, sc, opt);
    return out;
  };
  const auto a = trajectory(Method::surgical), b = trajectory(Method::vanilla_fl);
  std::size_t same = 0;
  for (std::size_t r = 0; r < std::min(a.size(), b.size()); ++r) same += a[r] == b[r] ? 1 : 0;
  return {a.size() == 20 && b.size() == 20 && same == 20,
          std::to_string(same) + "/20 rounds bit-identical global ParamSets"};
}

// 2: per-class head aggregation algebra on random registries.
Outcome head_algebra() {
  std::mt19937_64 rng(20240601);
  std::size_t checked = 0, bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t M = 1 + rng() % 12, K = 1 + rng() % 8, N = 1 + rng() % 6;
    std::vector<std::vector<std::size_t>> cls(K);
    for (std::size_t c = 0; c < M; ++c) {
      const std::size_t owner = rng() % K;
      for (std::size_t k = 0; k < K; ++k)
        if (k == owner || rng() % 3 == 0) cls[k].push_back(c);
    }
    for (auto& ck : cls)
      if (ck.empty()) ck.push_back(rng() % M);
    const ClassRegistry reg(default_class_names(M), cls);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<LocalHead> heads;
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t w = reg.client_classes(k).size();
      LocalHead h{Tensor2(N, w), Vector(w)};
      for (auto& v : h.W.data) v = n(rng);
      for (auto& v : h.b) v = n(rng);
      heads.push_back(std::move(h));
    }
    auto ptrs = [](const std::vector<LocalHead>& hs) {
      std::vector<const LocalHead*> p;
      for (const auto& h : hs) p.push_back(&h);
      return p;
    };
    const auto g = surgical_head_update(ptrs(heads), reg);
    for (std::size_t c = 0; c < M; ++c) {
      const auto holders = reg.clients_with_class(c);
      for (std::size_t r = 0; r <= N; ++r) {
        auto entry = [&](std::size_t k) {
          const std::size_t j = *reg.global_to_local(k, c);
          return r < N ? heads[k].W(r, j) : heads[k].b[j];
        };
        double s = entry(holders[0]);
        for (std::size_t h = 1; h < holders.size(); ++h) s += entry(holders[h]);
        if (holders.size() > 1) s /= static_cast<double>(holders.size());
        const double got = r < N ? g.W(r, c) : g.b[c];
        ++checked;
        if (got != s || (holders.size() == 1 && got != entry(holders[0]))) ++bad;
      }
    }
    // Perturb one client's column; every other global column is untouched.
    const std::size_t k = rng() % K;
    const std::size_t j = rng() % reg.client_classes(k).size();
    const std::size_t target = reg.client_classes(k)[j];
    auto moved = heads;
    for (std::size_t r = 0; r < N; ++r) moved[k].W(r, j) += 1.0 + n(rng);
    moved[k].b[j] += 1.0;
    const auto g2 = surgical_head_update(ptrs(moved), reg);
    for (std::size_t c = 0; c < M; ++c) {
      if (c == target) continue;
      ++checked;
      if (g2.W.column(c) != g.W.column(c) || g2.b[c] != g.b[c]) ++bad;
    }
  }
  return {bad == 0, std::to_string(checked) + " entries/columns checked, " + std::to_string(bad) + " mismatches"};
}

// 3: backward pass against central differences on a seeded 2-layer model.
Outcome gradient_check() {
  Architecture arch(5);
  arch.add_dense(8).add_batchnorm().add_relu().add_dense(6).add_relu();
  ParamSet p = init_model(arch, 3, 77);
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& d : p.feature.dense)
    for (auto& v : d.b) v = 0.3 * n(rng);
  for (auto& s : p.feature.bn)
    for (std::size_t i = 0; i < s.width(); ++i) {
      s.gamma[i] = 1.0 + 0.3 * n(rng);
      s.beta[i] = 0.3 * n(rng);
    }
  for (auto& v : p.head_b) v = 0.3 * n(rng);
  Tensor2 x(10, 5), y(10, 3);
  for (auto& v : x.data) v = n(rng);
  for (auto& v : y.data) v = rng() % 2 ? 1.0 : 0.0;
  const std::vector<std::size_t> mask{0, 2};

  auto loss = [&](ParamSet q) {
    auto cache = forward(q, arch, x, Mode::train);
    return masked_bce_loss(cache.output(), y, mask);
  };
  ParamSet work = p;
  const auto cache = forward(work, arch, x, Mode::train);
  const auto g = backward(p, arch, cache, y, mask);
  constexpr double h = 1e-5;
  double worst = 0.0;
  std::size_t probes = 0;
  auto probe = [&](auto&& at, double analytic) {
    ParamSet a = p, b = p;
    at(a) += h;
    at(b) -= h;
    const double fd = (loss(a) - loss(b)) / (2 * h);
    worst = std::max(worst, std::fabs(fd - analytic) / std::max({std::fabs(fd), std::fabs(analytic), 1e-6}));
    ++probes;
  };
  for (std::size_t l = 0; l < p.feature.dense.size(); ++l) {
    for (std::size_t i = 0; i < p.feature.dense[l].W.data.size(); ++i)
      probe([&](ParamSet& q) -> double& { return q.feature.dense[l].W.data[i]; }, g.dense[l].W.data[i]);
    for (std::size_t i = 0; i < p.feature.dense[l].b.size(); ++i)
      probe([&](ParamSet& q) -> double& { return q.feature.dense[l].b[i]; }, g.dense[l].b[i]);
  }
  for (std::size_t i = 0; i < p.feature.bn[0].width(); ++i) {
    probe([&](ParamSet& q) -> double& { return q.feature.bn[0].gamma[i]; }, g.bn[0].gamma[i]);
    probe([&](ParamSet& q) -> double& { return q.feature.bn[0].beta[i]; }, g.bn[0].beta[i]);
  }
  for (std::size_t i = 0; i < p.head_W.data.size(); ++i)
    probe([&](ParamSet& q) -> double& { return q.head_W.data[i]; }, g.head_W.data[i]);
  for (std::size_t i = 0; i < p.head_b.size(); ++i)
    probe([&](ParamSet& q) -> double& { return q.head_b[i]; }, g.head_b[i]);
  char buf[96];
  std::snprintf(buf, sizeof buf, "max relative error %.3e over %zu parameters (< 1e-4)", worst, probes);
  return {worst < 1e-4, buf};
}

// 4: rank AUROC against pair counting, with ties.
Outcome auroc_oracle() {
  std::mt19937_64 rng(4242);
  std::size_t bad = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng() % 63;
    std::vector<double> s(n), y(n), flipped(n), mapped(n);
    const std::uint64_t levels = 1 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % levels) / static_cast<double>(levels);
      y[i] = static_cast<double>(rng() % 2);
    }
    y[1 + rng() % (n - 1)] = 1.0 - y[0];  // both labels present
    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (y[i] == 1.0 && y[j] == 0.0) {
          pairs += 1.0;
          num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    for (std::size_t i = 0; i < n; ++i) {
      flipped[i] = 1.0 - y[i];
      mapped[i] = std::atan(5.0 * s[i] - 1.0) + 2.0;
    }
    const auto a = auroc(s, y), c = auroc(s, flipped), m = auroc(mapped, y);
    if (!a || !c || !m || *a != num / pairs || std::fabs(*a + *c - 1.0) > 1e-15 || *m != *a) ++bad;
  }
  return {bad == 0, "500 instances, " + std::to_string(bad) + " violations of oracle/complement/monotone"};
}

// 5: convergence on the heterogeneous K=4, M=8 scenario.
Outcome convergence() {
  const auto cfg = heterogeneous_config(Method::surgical, 0);
  const auto sc = generate_synthetic(cfg.scenario);
  const auto res = run_experiment(cfg, sc);
  const auto all = detail::iota_vec(8);
  const auto mean = evaluate(res.global_model(), sc.test, all).mean_auroc;
  const double v5 = res.reports.at(4).mean_val_loss, v100 = res.reports.at(99).mean_val_loss;
  const bool ok = mean && *mean >= 0.90 && v100 < v5;
  return {ok, "global mean AUROC " + (mean ? num(*mean) : std::string("undefined")) + " (>= 0.90, round " +
                  std::to_string(res.best_round) + " checkpoint); mean val BCE round 5 " + num(v5) + " -> round 100 " +
                  num(v100)};
}

// 6: unique-class AUROC, surgical vs vanilla FL and FL + partial loss.
Outcome unique_classes() {
  double s = 0.0, v = 0.0, p = 0.0;
  const int seeds = 5;
  for (int seed = 0; seed < seeds; ++seed) {
    auto base = heterogeneous_config(Method::surgical, static_cast<std::uint64_t>(seed));
    const auto sc = generate_synthetic(base.scenario);
    const auto profile = sc.registry.sharing_profile();
    auto unique_mean = [&](Method m) {
      base.method = m;
      const auto res = run_experiment(base, sc);
      const auto r = evaluate(res.global_model(), sc.test, profile.unique);
      if (!r.mean_auroc) throw std::runtime_error("unique-class mean undefined");
      return *r.mean_auroc;
    };
    s += unique_mean(Method::surgical);
    v += unique_mean(Method::vanilla_fl);
    p += unique_mean(Method::fl_partial_loss);
  }
  s /= seeds;
  v /= seeds;
  p /= seeds;
  const bool ok = s - v >= 0.05 && s >= p - 0.02;
  return {ok, "unique-class mean AUROC over 5 seeds: surgical " + num(s) + ", vanilla_fl " + num(v) + " (gap " +
                  num(s - v) + " >= 0.05), fl_partial_loss " + num(p) + " (surgical - partial " + num(s - p) +
                  " >= -0.02)"};
}

// 7: clients ladder through the CLI; surgical dominates or ties vanilla FL.
constexpr double kTieTolerance = 0.005;

Outcome clients_ablation(const fs::path& scratch) {
  const fs::path out = scratch / "ablation_clients";
  const int code = run_cli("ablation clients --out '" + out.string() + "' --iterations 3 --quiet");
  if (code != 0) return {false, "cmd_ablation exited " + std::to_string(code)};
  const auto rows = read_csv(out / "summary.csv");
  const auto& head = rows.at(0);
  auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(head.begin(), head.end(), name) - head.begin());
  };
  const std::size_t cx = col("x"), cm = col("method"), cy = col("mean_auroc");
  std::map<std::string, std::map<std::string, double>> by_x;
  for (std::size_t i = 1; i < rows.size(); ++i) by_x[rows[i][cx]][rows[i][cm]] = std::stod(rows[i][cy]);
  bool ok = by_x.size() == 7;
  std::string detail = "K: surgical-vanilla";
  double worst = 1.0;
  for (const char* k : {"2", "3", "4", "5", "6", "8", "10"}) {
    const double gap = by_x[k].at("surgical") - by_x[k].at("vanilla_fl");
    worst = std::min(worst, gap);
    ok = ok && gap >= -kTieTolerance;
    detail += std::string(" ") + k + ":" + num(gap, 3);
  }
  detail += " (min " + num(worst, 4) + ", tie tolerance " + num(kTieTolerance, 3) + ", 3 seeds)";
  return {ok, detail};
}

// 8: byte-identical rounds.csv across reruns and client parallelism.
Outcome determinism(const fs::path& scratch) {
  const fs::path cfg = scratch / "criterion5.json";
  write_text_file(cfg, config_to_json(heterogeneous_config(Method::surgical, 0)).dump(2));
  const std::vector<std::string> extra{"", "", " --parallel-clients 4"};
  std::vector<std::string> files;
  for (std::size_t i = 0; i < extra.size(); ++i) {
    const fs::path out = scratch / ("det" + std::to_string(i));
    const int code = run_cli("run '" + cfg.string() + "' --out '" + out.string() + "' --quiet" + extra[i]);
    if (code != 0) return {false, "run exited " + std::to_string(code)};
    files.push_back(read_text_file(out / "rounds.csv"));
  }
  const bool ok = files[0] == files[1] && files[0] == files[2] && !files[0].empty();
  return {ok, "3 runs (sequential x2, --parallel-clients 4): rounds.csv " +
                  std::string(ok ? "byte-identical" : "differs") + ", " + std::to_string(files[0].size()) + " bytes"};
}

// 9: PFL client models have no mean AUROC over the full class set.
Outcome pfl_undefined(const fs::path& scratch) {
  auto cfg = heterogeneous_config(Method::pfl, 0);
  cfg.T = 10;
  const auto sc = generate_synthetic(cfg.scenario);
  const auto res = run_experiment(cfg, sc);
  const auto all = detail::iota_vec(8);
  bool ok = !res.global.has_value() && res.client_models.size() == 4;
  std::size_t undefined = 0, uncovered = 0;
  for (const auto& m : res.client_models) {
    const auto r = evaluate(m, sc.test, all);
    if (!r.mean_auroc) ++undefined;
    for (const auto& [c, st] : r.status)
      if (st == AurocStatus::not_covered) {
        ++uncovered;
        ok = ok && !r.per_class_auroc.at(c).has_value();
      }
  }
  ok = ok && undefined == 4;

  // The written result carries null, not a number.
  const fs::path c = scratch / "pfl.json", out = scratch / "pfl";
  write_text_file(c, config_to_json(cfg).dump(2));
  const int code = run_cli("run '" + c.string() + "' --out '" + out.string() + "' --quiet");
  bool json_null = false;
  if (code == 0) {
    const auto j = read_json_file((out / "result.json").string());
    json_null = j["evaluation"]["global"].is_null();
    for (const auto& cl : j["evaluation"]["clients"]) json_null = json_null && cl["all_classes"]["mean_auroc"].is_null();
  }
  ok = ok && json_null;
  return {ok, std::to_string(undefined) + "/4 client models undefined on all classes, " + std::to_string(uncovered) +
                  " uncovered class entries empty, result.json " + (json_null ? "null" : "NOT null")};
}

}  // namespace

int main() {
  const auto scratch = scratch_dir();
  report(1, "FedAvg reduction, homogeneous K=4, 20 rounds", 30, fedavg_reduction);
  report(2, "head aggregation algebra, 1000 random registries", 10, head_algebra);
  report(3, "finite-difference gradient check", 10, gradient_check);
  report(4, "AUROC rank formula vs pair counting", 5, auroc_oracle);
  report(5, "desk-scale convergence, K=4 M=8 T=100", 180, convergence);
  report(6, "unique-class AUROC ordering, 5 seeds", 900, unique_classes);
  report(7, "clients ablation, surgical vs vanilla FL", 1800, [&] { return clients_ablation(scratch); });
  report(8, "byte-identical rounds.csv", 600, [&] { return determinism(scratch); });
  report(9, "PFL mean AUROC undefined on full class set", 120, [&] { return pfl_undefined(scratch); });
  fs::remove_all(scratch);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
