#pragma once

// Multi-run comparisons: suites of member configs under paired seeds, and
// the two scenario ladders.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "surgagg/config.hpp"
#include "surgagg/metrics.hpp"
#include "surgagg/report.hpp"
#include "surgagg/simulator.hpp"

namespace surgagg {

enum class Pairing { classes, iterations };

struct SuiteMember {
  std::string name;
  ExperimentConfig config;
};

struct SuiteSpec {
  std::vector<SuiteMember> members;
  std::string reference;  // member name; empty -> first member
  Pairing pairing = Pairing::classes;
  std::vector<std::string> groups{"all", "shared_by_all", "partially_shared", "unique"};
  std::vector<std::uint64_t> seeds;  // empty -> each member's own seeds, one iteration
};

/// Outcome of one member: per iteration, per group, the per-class AUROCs
/// (empty optional when the group has no defined value for this model).
struct MemberOutcome {
  std::string name;
  Method method = Method::surgical;
  std::string error;  // non-empty when the member failed
  std::vector<std::map<std::string, std::optional<std::map<std::size_t, double>>>> per_seed;
};

struct GroupCell {
  std::optional<double> mean;
  std::optional<double> sd;
  std::string p = "NA";
  std::string sig = "NA";
};

struct ComparisonRow {
  std::string name;
  Method method = Method::surgical;
  std::string status = "ok";
  std::size_t runs = 0;
  std::vector<GroupCell> cells;  // aligned with SuiteSpec::groups
};

struct ComparisonTable {
  std::string hash;
  std::vector<std::string> groups;
  std::vector<ComparisonRow> rows;
  bool any_failed = false;
};

namespace detail {

inline Pairing pairing_from_string(const std::string& s) {
  if (s == "classes") return Pairing::classes;
  if (s == "iterations") return Pairing::iterations;
  throw ConfigError("pairing: expected 'classes' or 'iterations', got '" + s + "'");
}

inline std::string to_string(Pairing p) { return p == Pairing::classes ? "classes" : "iterations"; }

inline bool is_client_group(const std::string& g, std::size_t& k) {
  const std::string pre = "client", post = "_local";
  if (g.size() <= pre.size() + post.size() || g.rfind(pre, 0) != 0 ||
      g.compare(g.size() - post.size(), post.size(), post) != 0)
    return false;
  const std::string digits = g.substr(pre.size(), g.size() - pre.size() - post.size());
  if (digits.find_first_not_of("0123456789") != std::string::npos) return false;
  k = std::stoul(digits);
  return true;
}

inline void check_group_name(const std::string& g) {
  std::size_t k = 0;
  if (g == "all" || g == "shared_by_all" || g == "partially_shared" || g == "unique" || is_client_group(g, k)) return;
  throw ConfigError("groups: unknown group '" + g + "'");
}

inline std::vector<std::size_t> group_classes(const std::string& g, const ClassRegistry& reg) {
  std::size_t k = 0;
  if (g == "all") return iota_vec(reg.num_classes());
  const auto p = reg.sharing_profile();
  if (g == "shared_by_all") return p.shared_by_all;
  if (g == "partially_shared") return p.partially_shared;
  if (g == "unique") return p.unique;
  if (is_client_group(g, k)) {
    if (k >= reg.num_clients()) throw ConfigError("group " + g + ": no such client");
    return reg.client_classes(k);
  }
  throw ConfigError("unknown group '" + g + "'");
}

// Per-class AUROCs of the model that answers for `group`; empty when that
// model does not cover the group or no class in it is defined.
inline std::optional<std::map<std::size_t, double>> group_aurocs(const ExperimentResult& res, const Scenario& sc,
                                                                 const std::string& group) {
  const auto classes = group_classes(group, res.registry);
  if (classes.empty()) return std::nullopt;
  std::size_t k = 0;
  const Model* model = nullptr;
  Model global;
  if (res.global) {
    global = res.global_model();
    model = &global;
  } else if (is_client_group(group, k) && k < res.client_models.size()) {
    model = &res.client_models[k];
  }
  if (model == nullptr) return std::nullopt;
  const auto r = evaluate(*model, sc.test, classes);
  if (!mean_over(r, classes)) return std::nullopt;
  std::map<std::size_t, double> out;
  for (auto c : classes)
    if (const auto& v = r.per_class_auroc.at(c)) out[c] = *v;
  return out;
}

inline double mean_of_values(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline std::optional<double> sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return std::nullopt;
  const double m = mean_of_values(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// The sample a cell is summarized over: per-class values averaged over
// iterations, or per-iteration group means. Keys identify pairing units.
inline std::optional<std::map<std::size_t, double>> cell_sample(const MemberOutcome& m, const std::string& group,
                                                                Pairing pairing) {
  if (!m.error.empty() || m.per_seed.empty()) return std::nullopt;
  std::map<std::size_t, double> out;
  if (pairing == Pairing::iterations) {
    for (std::size_t s = 0; s < m.per_seed.size(); ++s) {
      const auto& v = m.per_seed[s].at(group);
      if (!v || v->empty()) return std::nullopt;
      double sum = 0.0;
      for (const auto& [c, a] : *v) sum += a;
      out[s] = sum / static_cast<double>(v->size());
    }
    return out;
  }
  std::map<std::size_t, std::vector<double>> by_class;
  for (const auto& seed : m.per_seed) {
    const auto& v = seed.at(group);
    if (!v) return std::nullopt;
    for (const auto& [c, a] : *v) by_class[c].push_back(a);
  }
  for (const auto& [c, vals] : by_class)
    if (vals.size() == m.per_seed.size()) out[c] = mean_of_values(vals);
  if (out.empty()) return std::nullopt;
  return out;
}

}  // namespace detail

inline SuiteSpec suite_from_json(const Json& j, const fs::path& base_dir = {}) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("suite: expected a JSON object");
  reject_unknown(j, "", {"members", "reference", "pairing", "groups", "seeds", "base"});
  SuiteSpec s;
  const Json base = j.contains("base") ? j["base"] : Json::object();
  if (!base.is_object()) throw ConfigError("base: expected an object");
  if (j.contains("pairing")) s.pairing = pairing_from_string(as_string(j["pairing"], "pairing"));
  if (j.contains("groups")) {
    if (!j["groups"].is_array()) throw ConfigError("groups: expected an array");
    s.groups.clear();
    for (const auto& g : j["groups"]) {
      s.groups.push_back(as_string(g, "groups"));
      check_group_name(s.groups.back());
    }
  }
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array()) throw ConfigError("seeds: expected an array");
    for (std::size_t i = 0; i < j["seeds"].size(); ++i)
      s.seeds.push_back(as_u64(j["seeds"][i], "seeds[" + std::to_string(i) + "]"));
  }
  const Json& members = require(j, "", "members");
  if (!members.is_array()) throw ConfigError("members: expected an array");
  for (std::size_t i = 0; i < members.size(); ++i) {
    const std::string where = "members[" + std::to_string(i) + "]";
    Json m = members[i];
    if (!m.is_object()) throw ConfigError(where + ": expected an object");
    Json merged = base;
    if (m.contains("config")) {
      const fs::path p = base_dir / as_string(m["config"], where + ".config");
      merged.merge_patch(read_json_file(p.string()));
      m.erase("config");
    }
    std::string name;
    if (m.contains("name")) {
      name = as_string(m["name"], where + ".name");
      m.erase("name");
    }
    merged.merge_patch(m);
    SuiteMember sm;
    sm.config = with_path(where, [&] { return config_from_json(merged); });
    sm.name = name.empty() ? std::string(to_string(sm.config.method)) : name;
    for (const auto& other : s.members)
      if (other.name == sm.name) throw ConfigError(where + ".name: duplicate member name '" + sm.name + "'");
    s.members.push_back(std::move(sm));
  }
  if (j.contains("reference")) {
    s.reference = as_string(j["reference"], "reference");
    bool found = false;
    for (const auto& m : s.members) found = found || m.name == s.reference;
    if (!found) throw ConfigError("reference: no member named '" + s.reference + "'");
  } else if (!s.members.empty()) {
    s.reference = s.members.front().name;
  }
  return s;
}

inline Json suite_to_json(const SuiteSpec& s) {
  Json j;
  j["reference"] = s.reference;
  j["pairing"] = detail::to_string(s.pairing);
  j["groups"] = s.groups;
  j["seeds"] = s.seeds;
  Json members = Json::array();
  for (const auto& m : s.members) {
    Json c = config_to_json(m.config);
    Json e;
    e["name"] = m.name;
    for (auto it = c.begin(); it != c.end(); ++it) e[it.key()] = it.value();
    members.push_back(e);
  }
  j["members"] = members;
  return j;
}

inline std::string suite_hash(const SuiteSpec& s) { return fnv1a_hex(suite_to_json(s).dump() + "\n" + kCodeVersion); }

/// Caches generated scenarios by their canonical description so paired
/// members train on the very same data.
class ScenarioCache {
 public:
  const Scenario& get(const ScenarioSpec& spec) {
    const std::string key = scenario_to_json(spec).dump();
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, generate_synthetic(spec)).first;
    return it->second;
  }

 private:
  std::map<std::string, Scenario> cache_;
};

struct SuiteOptions {
  RunOptions run;
  std::function<void(const std::string&)> log;
};

inline std::vector<MemberOutcome> run_suite_members(const SuiteSpec& s, const SuiteOptions& opt = {}) {
  ScenarioCache cache;
  std::vector<MemberOutcome> out;
  for (const auto& m : s.members) {
    MemberOutcome o;
    o.name = m.name;
    o.method = m.config.method;
    const std::size_t iters = s.seeds.empty() ? 1 : s.seeds.size();
    try {
      for (std::size_t it = 0; it < iters; ++it) {
        ExperimentConfig cfg = m.config;
        if (!s.seeds.empty()) cfg.set_all_seeds(s.seeds[it]);
        if (opt.log) opt.log("suite: " + m.name + " seed " + std::to_string(cfg.scenario.seed));
        const Scenario& sc = cache.get(cfg.scenario);
        const auto res = run_experiment(cfg, sc, opt.run);
        std::map<std::string, std::optional<std::map<std::size_t, double>>> groups;
        for (const auto& g : s.groups) groups[g] = detail::group_aurocs(res, sc, g);
        o.per_seed.push_back(std::move(groups));
      }
    } catch (const std::exception& e) {
      o.error = e.what();
      o.per_seed.clear();
      if (opt.log) opt.log("suite: member " + m.name + " failed: " + o.error);
    }
    out.push_back(std::move(o));
  }
  return out;
}

/// Method rows, one mean/SD/p/significance block per group. p-values are
/// paired t-tests against the reference member.
inline ComparisonTable build_comparison(const SuiteSpec& s, const std::vector<MemberOutcome>& outcomes) {
  ComparisonTable t;
  t.hash = suite_hash(s);
  t.groups = s.groups;
  const MemberOutcome* ref = nullptr;
  for (const auto& o : outcomes)
    if (o.name == s.reference) ref = &o;
  for (const auto& o : outcomes) {
    ComparisonRow row;
    row.name = o.name;
    row.method = o.method;
    row.runs = o.per_seed.size();
    if (!o.error.empty()) {
      row.status = "failed";
      t.any_failed = true;
    }
    for (const auto& g : s.groups) {
      GroupCell cell;
      const auto sample = detail::cell_sample(o, g, s.pairing);
      if (sample) {
        std::vector<double> v;
        for (const auto& [key, x] : *sample) v.push_back(x);
        cell.mean = detail::mean_of_values(v);
        cell.sd = detail::sample_sd(v);
      }
      if (&o == ref) {
        cell.p = cell.sig = "ref";
      } else if (sample && ref != nullptr) {
        if (const auto rs = detail::cell_sample(*ref, g, s.pairing)) {
          std::vector<double> a, b;
          for (const auto& [key, x] : *sample) {
            auto it = rs->find(key);
            if (it == rs->end()) continue;
            a.push_back(x);
            b.push_back(it->second);
          }
          if (a.size() >= 2) {
            const auto tt = paired_ttest(a, b);
            cell.p = fmt_double(tt.p);
            cell.sig = significance_marker(tt.p);
          }
        }
      }
      row.cells.push_back(cell);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::string comparison_csv(const ComparisonTable& t) {
  std::vector<std::string> head{"manifest_hash", "member", "method", "status", "runs"};
  for (const auto& g : t.groups)
    for (const char* f : {"_mean", "_sd", "_p", "_sig"}) head.push_back(g + f);
  std::string out = join(head) + "\n";
  for (const auto& r : t.rows) {
    std::vector<std::string> row{t.hash, r.name, std::string(to_string(r.method)), r.status, std::to_string(r.runs)};
    for (const auto& c : r.cells) {
      row.push_back(fmt_opt(c.mean));
      row.push_back(fmt_opt(c.sd));
      row.push_back(c.p);
      row.push_back(c.sig);
    }
    out += join(row) + "\n";
  }
  return out;
}

/// Long-format per-class AUROCs behind the comparison table.
inline std::string per_class_csv(const SuiteSpec& s, const std::vector<MemberOutcome>& outcomes,
                                 const std::string& hash) {
  std::string out = "manifest_hash,member,iteration,group,class,auroc\n";
  for (const auto& o : outcomes)
    for (std::size_t it = 0; it < o.per_seed.size(); ++it)
      for (const auto& g : s.groups) {
        const auto& v = o.per_seed[it].at(g);
        if (!v) continue;
        for (const auto& [c, a] : *v)
          out += hash + "," + o.name + "," + std::to_string(it) + "," + g + "," + std::to_string(c) + "," +
                 fmt_double(a) + "\n";
      }
  return out;
}

// --- Ablation ladders --------------------------------------------------------

enum class AblationKind { clients, shared_classes };

inline AblationKind ablation_kind_from_string(const std::string& s) {
  if (s == "clients") return AblationKind::clients;
  if (s == "shared_classes") return AblationKind::shared_classes;
  throw ConfigError("ablation kind must be 'clients' or 'shared_classes', got '" + s + "'");
}

inline std::string to_string(AblationKind k) { return k == AblationKind::clients ? "clients" : "shared_classes"; }

inline const std::vector<Method>& ablation_methods() {
  static const std::vector<Method> m{Method::surgical, Method::vanilla_fl, Method::fl_partial_loss,
                                     Method::centralized};
  return m;
}

struct AblationOptions {
  std::uint64_t seed = 0;  // iteration i uses seed + i
  std::size_t iterations = 3;
  ExperimentConfig base;  // training settings; the scenario is replaced per rung
  RunOptions run;
  std::function<void(const std::string&)> log;
};

struct AblationRun {
  std::size_t x = 0;
  Method method = Method::surgical;
  std::size_t iteration = 0;
  std::optional<double> mean_auroc;
  std::map<std::string, std::optional<double>> groups;
  std::string error;
};

struct AblationResult {
  AblationKind kind = AblationKind::clients;
  std::string hash;
  std::vector<std::size_t> xs;
  std::vector<AblationRun> runs;
  bool any_failed = false;
};

inline std::string ablation_hash(AblationKind kind, const AblationOptions& opt) {
  Json j;
  j["kind"] = to_string(kind);
  j["seed"] = opt.seed;
  j["iterations"] = opt.iterations;
  j["base"] = config_to_json(opt.base);
  return fnv1a_hex(j.dump() + "\n" + kCodeVersion);
}

inline AblationResult run_ablation(AblationKind kind, const AblationOptions& opt) {
  AblationResult out;
  out.kind = kind;
  out.hash = ablation_hash(kind, opt);
  if (kind == AblationKind::clients) {
    for (auto x : kClientLadder) out.xs.push_back(x);
  } else {
    for (auto x : kSharedLadder) out.xs.push_back(x);
  }
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    const std::uint64_t seed = opt.seed + it;
    const auto specs = kind == AblationKind::clients ? effect_of_clients_scenarios(seed)
                                                     : effect_of_shared_classes_scenarios(seed);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      std::optional<Scenario> sc;
      std::string gen_error;
      try {
        sc = generate_synthetic(specs[i]);
      } catch (const std::exception& e) {
        gen_error = e.what();
      }
      for (auto m : ablation_methods()) {
        AblationRun r;
        r.x = out.xs[i];
        r.method = m;
        r.iteration = it;
        if (!sc) {
          r.error = gen_error;
        } else {
          try {
            ExperimentConfig cfg = opt.base;
            cfg.scenario = specs[i];
            cfg.method = m;
            cfg.seeds = {seed, seed};
            if (opt.log)
              opt.log("ablation " + to_string(kind) + " x=" + std::to_string(r.x) + " " + std::string(to_string(m)) +
                      " iteration " + std::to_string(it));
            const auto res = run_experiment(cfg, *sc, opt.run);
            const auto profile = res.registry.sharing_profile();
            const auto all = detail::iota_vec(res.registry.num_classes());
            const auto ev = evaluate(res.global_model(), sc->test, all, &profile);
            r.mean_auroc = ev.mean_auroc;
            r.groups = ev.group_means;
          } catch (const std::exception& e) {
            r.error = e.what();
          }
        }
        if (!r.error.empty()) out.any_failed = true;
        out.runs.push_back(std::move(r));
      }
    }
  }
  return out;
}

inline std::string ablation_rung_csv(const AblationResult& a, std::size_t x) {
  std::string out =
      "manifest_hash,kind,x,method,iteration,status,mean_auroc,shared_by_all,partially_shared,unique\n";
  for (const auto& r : a.runs) {
    if (r.x != x) continue;
    auto g = [&](const char* name) {
      auto it = r.groups.find(name);
      return it == r.groups.end() ? std::string("NA") : fmt_opt(it->second);
    };
    out += join({a.hash, to_string(a.kind), std::to_string(x), std::string(to_string(r.method)),
                 std::to_string(r.iteration), r.error.empty() ? "ok" : "failed", fmt_opt(r.mean_auroc),
                 g("shared_by_all"), g("partially_shared"), g("unique")}) +
           "\n";
  }
  return out;
}

struct SummaryRow {
  std::size_t x = 0;
  Method method = Method::surgical;
  std::string status = "ok";
  std::optional<double> mean;
  std::optional<double> sd;
  std::size_t iterations = 0;
  std::string p = "NA";
  std::string sig = "NA";
};

/// One row per (rung, method): mean AUROC over iterations, with a paired
/// t-test across iterations against surgical aggregation.
inline std::vector<SummaryRow> ablation_summary(const AblationResult& a) {
  std::vector<SummaryRow> rows;
  for (auto x : a.xs) {
    std::map<Method, std::map<std::size_t, double>> vals;
    std::map<Method, bool> failed;
    for (const auto& r : a.runs) {
      if (r.x != x) continue;
      if (!r.error.empty() || !r.mean_auroc) {
        failed[r.method] = true;
        continue;
      }
      vals[r.method][r.iteration] = *r.mean_auroc;
    }
    for (auto m : ablation_methods()) {
      SummaryRow row;
      row.x = x;
      row.method = m;
      if (failed[m]) row.status = "failed";
      std::vector<double> v;
      for (const auto& [it, val] : vals[m]) v.push_back(val);
      row.iterations = v.size();
      if (!v.empty()) {
        row.mean = detail::mean_of_values(v);
        row.sd = detail::sample_sd(v);
      }
      if (m == Method::surgical) {
        row.p = row.sig = "ref";
      } else {
        std::vector<double> mine, ref;
        for (const auto& [it, val] : vals[m]) {
          auto f = vals[Method::surgical].find(it);
          if (f == vals[Method::surgical].end()) continue;
          mine.push_back(val);
          ref.push_back(f->second);
        }
        if (mine.size() >= 2) {
          const auto tt = paired_ttest(mine, ref);
          row.p = fmt_double(tt.p);
          row.sig = significance_marker(tt.p);
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::string ablation_summary_csv(const AblationResult& a) {
  std::string out = "manifest_hash,kind,x,method,status,iterations,mean_auroc,sd_auroc,p_vs_surgical,sig\n";
  for (const auto& r : ablation_summary(a))
    out += join({a.hash, to_string(a.kind), std::to_string(r.x), std::string(to_string(r.method)), r.status,
                 std::to_string(r.iterations), fmt_opt(r.mean), fmt_opt(r.sd), r.p, r.sig}) +
           "\n";
  return out;
}

}  // namespace surgagg
