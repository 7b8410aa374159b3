#pragma once

// Output files: rounds.csv, result.json, model checkpoints and dataset dumps.
// Floats are written with 17 significant digits so reruns compare byte for
// byte and values read back exactly.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "surgagg/config.hpp"
#include "surgagg/metrics.hpp"
#include "surgagg/simulator.hpp"

namespace surgagg {

namespace fs = std::filesystem;

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : "NA"; }

inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string join(const std::vector<std::string>& parts, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

/// One row per round. Wall time is left out so the file is reproducible.
inline std::string rounds_csv(const ExperimentResult& res, const std::string& hash) {
  const std::size_t K = res.reports.empty() ? 0 : res.reports.front().train_loss.size();
  std::vector<std::string> head{"manifest_hash", "round", "mean_val_loss", "global_mean_auroc"};
  for (std::size_t k = 0; k < K; ++k) head.push_back("train_loss_" + std::to_string(k));
  for (std::size_t k = 0; k < K; ++k) head.push_back("val_loss_" + std::to_string(k));
  for (const auto& name : res.registry.class_names()) head.push_back("auroc_" + name);
  std::string out = join(head) + "\n";
  for (const auto& r : res.reports) {
    std::vector<std::string> row{hash, std::to_string(r.round), fmt_double(r.mean_val_loss),
                                 fmt_opt(r.global_mean_auroc)};
    for (double v : r.train_loss) row.push_back(fmt_double(v));
    for (double v : r.val_loss) row.push_back(fmt_double(v));
    for (std::size_t c = 0; c < res.registry.num_classes(); ++c)
      row.push_back(r.global_auroc.empty() ? "NA" : fmt_opt(r.global_auroc[c]));
    out += join(row) + "\n";
  }
  return out;
}

inline std::string timing_csv(const ExperimentResult& res, const std::string& hash) {
  std::string out = "manifest_hash,round,wall_seconds\n";
  for (const auto& r : res.reports) out += hash + "," + std::to_string(r.round) + "," + fmt_double(r.wall_seconds) + "\n";
  return out;
}

inline std::string to_string(AurocStatus s) {
  switch (s) {
    case AurocStatus::defined: return "defined";
    case AurocStatus::degenerate_labels: return "degenerate_labels";
    case AurocStatus::not_covered: return "not_covered";
  }
  return "?";
}

inline Json eval_to_json(const EvalResult& r, const std::vector<std::string>& names) {
  Json per = Json::object(), status = Json::object(), groups = Json::object();
  for (const auto& [c, v] : r.per_class_auroc) per[names.at(c)] = opt_json(v);
  for (const auto& [c, s] : r.status) status[names.at(c)] = to_string(s);
  for (const auto& [g, v] : r.group_means) groups[g] = opt_json(v);
  Json j;
  j["mean_auroc"] = opt_json(r.mean_auroc);
  j["per_class_auroc"] = per;
  j["status"] = status;
  j["group_means"] = groups;
  return j;
}

inline Json scenario_stats_json(const Scenario& sc) {
  Json j;
  j["n_train"] = sc.realized.n_train;
  j["n_val"] = sc.realized.n_val;
  j["n_test"] = sc.test.size();
  j["n_stats"] = sc.stats.size();
  j["train_prevalence"] = sc.realized.train_prevalence;
  j["test_prevalence"] = sc.realized.test_prevalence;
  j["threshold_attempts"] = sc.realized.threshold_attempts;
  Json reg = Json::array();
  for (std::size_t k = 0; k < sc.registry.num_clients(); ++k) {
    Json row = Json::array();
    for (auto c : sc.registry.client_classes(k)) row.push_back(sc.registry.class_names()[c]);
    reg.push_back(row);
  }
  j["client_classes"] = reg;
  return j;
}

inline Json manifest_json(const ExperimentConfig& cfg, const Scenario& sc, const Json& outputs) {
  Json m;
  m["manifest_hash"] = manifest_hash(cfg);
  m["code_version"] = kCodeVersion;
  m["config"] = config_to_json(cfg);
  m["seeds"] = {{"data", cfg.scenario.seed}, {"init", cfg.seeds.init}, {"shuffle", cfg.seeds.shuffle}};
  m["scenario_stats"] = scenario_stats_json(sc);
  m["outputs"] = outputs;
  return m;
}

/// Final-model evaluation: the selected global model on every class, or, for
/// methods without one, each client model on every class (undefined mean)
/// and on its own classes.
inline Json evaluation_json(const ExperimentResult& res, const Scenario& sc) {
  const auto& names = res.registry.class_names();
  const auto profile = res.registry.sharing_profile();
  const auto all = detail::iota_vec(res.registry.num_classes());
  Json j;
  if (res.global) {
    j["global"] = eval_to_json(evaluate(res.global_model(), sc.test, all, &profile), names);
  } else {
    j["global"] = nullptr;
  }
  Json clients = Json::array();
  for (std::size_t k = 0; k < res.client_models.size(); ++k) {
    Json c;
    c["client"] = k;
    c["all_classes"] = eval_to_json(evaluate(res.client_models[k], sc.test, all, &profile), names);
    c["local_classes"] = eval_to_json(evaluate(res.client_models[k], sc.test, res.registry.client_classes(k)), names);
    clients.push_back(c);
  }
  j["clients"] = clients;
  return j;
}

// --- Checkpoints -----------------------------------------------------------
//
// Text format, one block per model:
//   model <name>
//   input_dim <d>
//   layers <kind[:width]> ...
//   classes <global indices of the head columns>
//   tensor <name> <rows> <cols>
//   <rows lines of comma-separated values>
//   ...
//   end

namespace detail {

inline void put_tensor(std::string& out, const std::string& name, std::size_t rows, std::size_t cols,
                       const double* data) {
  out += "tensor " + name + " " + std::to_string(rows) + " " + std::to_string(cols) + "\n";
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) out += ",";
      out += fmt_double(data[i * cols + j]);
    }
    out += "\n";
  }
}

inline void put_vector(std::string& out, const std::string& name, const Vector& v) {
  put_tensor(out, name, 1, v.size(), v.data());
}

class LineReader {
 public:
  explicit LineReader(const std::string& text) : in_(text) {}

  std::string next(const char* expecting) {
    std::string line;
    if (!std::getline(in_, line)) throw ConfigError(std::string("checkpoint: unexpected end, expecting ") + expecting);
    ++lineno_;
    return line;
  }
  bool more() { return in_.peek() != EOF; }
  std::size_t line() const { return lineno_; }

 private:
  std::istringstream in_;
  std::size_t lineno_ = 0;
};

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

inline double parse_double(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ConfigError("line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

inline std::size_t parse_size(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw ConfigError("line " + std::to_string(line) + ": bad count '" + s + "'");
  return static_cast<std::size_t>(v);
}

inline Tensor2 get_tensor(LineReader& r, const std::string& name) {
  const auto head = split_ws(r.next(name.c_str()));
  if (head.size() != 4 || head[0] != "tensor" || head[1] != name)
    throw ConfigError("checkpoint line " + std::to_string(r.line()) + ": expected tensor " + name);
  Tensor2 t(parse_size(head[2], r.line()), parse_size(head[3], r.line()));
  for (std::size_t i = 0; i < t.rows; ++i) {
    const std::string line = r.next(name.c_str());
    std::stringstream ss(line);
    std::string cell;
    std::size_t j = 0;
    while (std::getline(ss, cell, ',')) {
      if (j >= t.cols) throw ConfigError("checkpoint line " + std::to_string(r.line()) + ": too many values");
      t(i, j++) = parse_double(cell, r.line());
    }
    if (j != t.cols) throw ConfigError("checkpoint line " + std::to_string(r.line()) + ": too few values");
  }
  return t;
}

inline Vector get_vector(LineReader& r, const std::string& name) {
  auto t = get_tensor(r, name);
  if (t.rows != 1) throw ConfigError("checkpoint: " + name + " must have one row");
  return t.data;
}

}  // namespace detail

inline std::string checkpoint_text(const std::vector<std::pair<std::string, Model>>& models) {
  std::string out = "surgagg-checkpoint 1\n";
  for (const auto& [name, m] : models) {
    out += "model " + name + "\n";
    out += "input_dim " + std::to_string(m.arch.input_dim()) + "\n";
    out += "layers";
    for (const auto& l : m.arch.feature_layers()) {
      out += " " + std::string(to_string(l.kind));
      if (l.kind == LayerKind::dense) out += ":" + std::to_string(l.out_dim);
    }
    out += "\nclasses";
    for (auto c : m.head_classes) out += " " + std::to_string(c);
    out += "\n";
    const auto& p = m.params;
    for (std::size_t i = 0; i < p.feature.dense.size(); ++i) {
      const auto& d = p.feature.dense[i];
      detail::put_tensor(out, "dense" + std::to_string(i) + ".W", d.W.rows, d.W.cols, d.W.data.data());
      detail::put_vector(out, "dense" + std::to_string(i) + ".b", d.b);
    }
    for (std::size_t i = 0; i < p.feature.bn.size(); ++i) {
      const auto& s = p.feature.bn[i];
      const std::string pre = "bn" + std::to_string(i) + ".";
      detail::put_vector(out, pre + "gamma", s.gamma);
      detail::put_vector(out, pre + "beta", s.beta);
      detail::put_vector(out, pre + "running_mean", s.running_mean);
      detail::put_vector(out, pre + "running_var", s.running_var);
      detail::put_vector(out, pre + "hyper", {s.momentum, s.epsilon});
    }
    detail::put_tensor(out, "head.W", p.head_W.rows, p.head_W.cols, p.head_W.data.data());
    detail::put_vector(out, "head.b", p.head_b);
    out += "end\n";
  }
  return out;
}

inline std::vector<std::pair<std::string, Model>> parse_checkpoint(const std::string& text) {
  detail::LineReader r(text);
  if (r.next("header") != "surgagg-checkpoint 1") throw ConfigError("checkpoint: unrecognized header");
  std::vector<std::pair<std::string, Model>> out;
  while (r.more()) {
    auto words = detail::split_ws(r.next("model"));
    if (words.size() != 2 || words[0] != "model") throw ConfigError("checkpoint: expected 'model <name>'");
    const std::string name = words[1];
    words = detail::split_ws(r.next("input_dim"));
    if (words.size() != 2 || words[0] != "input_dim") throw ConfigError("checkpoint: expected input_dim");
    Architecture arch(detail::parse_size(words[1], r.line()));
    words = detail::split_ws(r.next("layers"));
    if (words.empty() || words[0] != "layers") throw ConfigError("checkpoint: expected layers");
    for (std::size_t i = 1; i < words.size(); ++i) {
      const auto colon = words[i].find(':');
      const auto kind = layer_kind_from_string(words[i].substr(0, colon));
      if (kind == LayerKind::dense) {
        if (colon == std::string::npos) throw ConfigError("checkpoint: dense layer without width");
        arch.add_dense(detail::parse_size(words[i].substr(colon + 1), r.line()));
      } else if (kind == LayerKind::batchnorm) {
        arch.add_batchnorm();
      } else if (kind == LayerKind::relu) {
        arch.add_relu();
      } else {
        throw ConfigError("checkpoint: sigmoid is not a feature layer");
      }
    }
    words = detail::split_ws(r.next("classes"));
    if (words.empty() || words[0] != "classes") throw ConfigError("checkpoint: expected classes");
    std::vector<std::size_t> classes;
    for (std::size_t i = 1; i < words.size(); ++i) classes.push_back(detail::parse_size(words[i], r.line()));

    ParamSet p;
    for (std::size_t i = 0; i < arch.dense_count(); ++i) {
      DenseParams d;
      d.W = detail::get_tensor(r, "dense" + std::to_string(i) + ".W");
      d.b = detail::get_vector(r, "dense" + std::to_string(i) + ".b");
      p.feature.dense.push_back(std::move(d));
    }
    for (std::size_t i = 0; i < arch.batchnorm_count(); ++i) {
      const std::string pre = "bn" + std::to_string(i) + ".";
      BatchNormState s;
      s.gamma = detail::get_vector(r, pre + "gamma");
      s.beta = detail::get_vector(r, pre + "beta");
      s.running_mean = detail::get_vector(r, pre + "running_mean");
      s.running_var = detail::get_vector(r, pre + "running_var");
      const auto hyper = detail::get_vector(r, pre + "hyper");
      if (hyper.size() != 2) throw ConfigError("checkpoint: " + pre + "hyper needs two values");
      s.momentum = hyper[0];
      s.epsilon = hyper[1];
      p.feature.bn.push_back(std::move(s));
    }
    p.head_W = detail::get_tensor(r, "head.W");
    p.head_b = detail::get_vector(r, "head.b");
    if (r.next("end") != "end") throw ConfigError("checkpoint: expected end of model " + name);
    if (p.head_b.size() != classes.size() || p.head_W.rows != arch.feature_width())
      throw ConfigError("checkpoint: head shape does not match model " + name);
    out.push_back({name, Model{arch, std::move(p), std::move(classes)}});
  }
  return out;
}

inline std::vector<std::pair<std::string, Model>> checkpoint_models(const ExperimentResult& res) {
  std::vector<std::pair<std::string, Model>> out;
  if (res.global) out.push_back({"global", res.global_model()});
  for (std::size_t k = 0; k < res.client_models.size(); ++k)
    out.push_back({"client" + std::to_string(k), res.client_models[k]});
  return out;
}

// --- Dataset dumps ---------------------------------------------------------

inline std::string tensor_csv(const Tensor2& t, const std::vector<std::string>& header) {
  std::string out = join(header) + "\n";
  for (std::size_t i = 0; i < t.rows; ++i) {
    for (std::size_t j = 0; j < t.cols; ++j) {
      if (j) out += ",";
      out += fmt_double(t(i, j));
    }
    out += "\n";
  }
  return out;
}

inline Tensor2 parse_tensor_csv(const std::string& text, std::size_t expected_cols) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("csv: missing header");
  std::vector<double> data;
  std::size_t rows = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      data.push_back(detail::parse_double(cell, lineno));
      ++cols;
    }
    if (cols != expected_cols)
      throw ConfigError("csv line " + std::to_string(lineno) + ": expected " + std::to_string(expected_cols) +
                        " values, got " + std::to_string(cols));
    ++rows;
  }
  return Tensor2(rows, expected_cols, std::move(data));
}

/// Writes every split of a scenario as x/y CSV pairs plus manifest.json.
inline void dump_scenario(const Scenario& sc, const fs::path& dir) {
  std::vector<std::string> xh;
  for (std::size_t j = 0; j < sc.spec.d; ++j) xh.push_back("x" + std::to_string(j));
  const auto& names = sc.registry.class_names();
  auto local_names = [&](std::size_t k) {
    std::vector<std::string> out;
    for (auto c : sc.registry.client_classes(k)) out.push_back(names[c]);
    return out;
  };
  auto write_set = [&](const std::string& stem, const LabeledSet& s, const std::vector<std::string>& yh) {
    write_text_file(dir / (stem + "_x.csv"), tensor_csv(s.x, xh));
    write_text_file(dir / (stem + "_y.csv"), tensor_csv(s.y, yh));
  };
  write_set("test", sc.test, names);
  write_set("stats", sc.stats, names);
  for (std::size_t k = 0; k < sc.clients.size(); ++k) {
    write_set("client" + std::to_string(k) + "_train", sc.clients[k].train, local_names(k));
    write_set("client" + std::to_string(k) + "_val", sc.clients[k].val, local_names(k));
  }
  Json m;
  m["code_version"] = kCodeVersion;
  m["scenario"] = scenario_to_json(sc.spec);
  m["scenario_stats"] = scenario_stats_json(sc);
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

inline Scenario load_scenario(const fs::path& dir) {
  const Json m = read_json_file((dir / "manifest.json").string());
  Scenario sc;
  sc.spec = detail::parse_scenario(m.at("scenario"), "scenario");
  sc.registry = build_registry(sc.spec);
  const std::size_t d = sc.spec.d, M = sc.spec.M;
  auto read_set = [&](const std::string& stem, std::size_t width, Split split) {
    LabeledSet s;
    s.x = parse_tensor_csv(read_text_file(dir / (stem + "_x.csv")), d);
    s.y = parse_tensor_csv(read_text_file(dir / (stem + "_y.csv")), width);
    if (s.x.rows != s.y.rows) throw ConfigError(stem + ": x and y row counts differ");
    s.split = split;
    return s;
  };
  sc.test = read_set("test", M, Split::test);
  sc.stats = read_set("stats", M, Split::stats);
  for (std::size_t k = 0; k < sc.spec.K; ++k) {
    const std::size_t w = sc.registry.client_classes(k).size();
    sc.clients.push_back({read_set("client" + std::to_string(k) + "_train", w, Split::train),
                          read_set("client" + std::to_string(k) + "_val", w, Split::val)});
    sc.realized.n_train.push_back(sc.clients.back().train.size());
    sc.realized.n_val.push_back(sc.clients.back().val.size());
  }
  const auto& st = m.at("scenario_stats");
  sc.realized.train_prevalence = st.at("train_prevalence").get<std::vector<std::vector<double>>>();
  sc.realized.test_prevalence = st.at("test_prevalence").get<std::vector<double>>();
  sc.realized.threshold_attempts = st.at("threshold_attempts").get<std::size_t>();
  return sc;
}

}  // namespace surgagg
