#pragma once

// JSON experiment configs. Keys mirror ExperimentConfig field names; class
// assignments are written by class name.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "surgagg/errors.hpp"
#include "surgagg/simulator.hpp"

namespace surgagg {

using Json = nlohmann::ordered_json;

inline constexpr const char* kCodeVersion = "surgagg 0.1.0";

namespace detail {

inline std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

inline void reject_unknown(const Json& obj, const std::string& where, std::initializer_list<const char*> known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(join_path(where, it.key()) + ": unknown field");
  }
}

inline const Json& require(const Json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) throw ConfigError(join_path(where, key) + ": required field missing");
  return obj.at(key);
}

inline std::uint64_t as_u64(const Json& v, const std::string& path) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError(path + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::size_t as_size(const Json& v, const std::string& path) { return static_cast<std::size_t>(as_u64(v, path)); }

inline double as_double(const Json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + ": expected a number");
  return v.get<double>();
}

inline bool as_bool(const Json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path + ": expected true or false");
  return v.get<bool>();
}

inline std::string as_string(const Json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + ": expected a string");
  return v.get<std::string>();
}

template <class F>
auto with_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0) throw;
    throw ConfigError(path + ": " + msg);
  }
}

inline Skew skew_from_string(const std::string& s, const std::string& path) {
  if (s == "iid") return Skew::iid;
  if (s == "feature_shift") return Skew::feature_shift;
  throw ConfigError(path + ": unknown skew '" + s + "'");
}

inline std::string to_string(Skew s) { return s == Skew::iid ? "iid" : "feature_shift"; }

inline ScenarioSpec parse_scenario(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(j, where,
                 {"K", "M", "d", "n_per_client", "client_classes", "class_names", "shared_count", "partial_count",
                  "unique_count", "skew", "shift_sigma", "label_noise", "seed", "n_test", "n_stats", "val_fraction"});
  ScenarioSpec s;
  auto p = [&](const char* k) { return join_path(where, k); };
  s.K = as_size(require(j, where, "K"), p("K"));
  s.M = as_size(require(j, where, "M"), p("M"));
  s.d = as_size(require(j, where, "d"), p("d"));
  s.n_per_client = as_size(require(j, where, "n_per_client"), p("n_per_client"));
  if (j.contains("class_names")) {
    const auto& names = j["class_names"];
    if (!names.is_array()) throw ConfigError(p("class_names") + ": expected an array of strings");
    for (std::size_t i = 0; i < names.size(); ++i)
      s.class_names.push_back(as_string(names[i], p("class_names") + "[" + std::to_string(i) + "]"));
    if (s.class_names.size() != s.M)
      throw ConfigError(p("class_names") + ": has " + std::to_string(s.class_names.size()) + " entries but M = " +
                        std::to_string(s.M));
  }
  if (j.contains("client_classes")) {
    const auto& cc = j["client_classes"];
    if (!cc.is_array()) throw ConfigError(p("client_classes") + ": expected one list of class names per client");
    const auto names = s.class_names.empty() ? default_class_names(s.M) : s.class_names;
    for (std::size_t k = 0; k < cc.size(); ++k) {
      const std::string ck = p("client_classes") + "[" + std::to_string(k) + "]";
      if (!cc[k].is_array()) throw ConfigError(ck + ": expected an array of class names");
      std::vector<std::size_t> idx;
      for (const auto& name : cc[k]) {
        const std::string n = as_string(name, ck);
        auto it = std::find(names.begin(), names.end(), n);
        if (it == names.end()) throw ConfigError(ck + ": unknown class '" + n + "'");
        idx.push_back(static_cast<std::size_t>(it - names.begin()));
      }
      s.client_classes.push_back(std::move(idx));
    }
  }
  if (j.contains("shared_count")) s.shared_count = as_size(j["shared_count"], p("shared_count"));
  if (j.contains("partial_count")) s.partial_count = as_size(j["partial_count"], p("partial_count"));
  if (j.contains("unique_count")) s.unique_count = as_size(j["unique_count"], p("unique_count"));
  if (s.client_classes.empty() && !j.contains("shared_count") && !j.contains("partial_count") &&
      !j.contains("unique_count"))
    s.shared_count = s.M;
  if (j.contains("skew")) s.skew = skew_from_string(as_string(j["skew"], p("skew")), p("skew"));
  if (j.contains("shift_sigma")) s.shift_sigma = as_double(j["shift_sigma"], p("shift_sigma"));
  if (j.contains("label_noise")) s.label_noise = as_double(j["label_noise"], p("label_noise"));
  if (j.contains("seed")) s.seed = as_u64(j["seed"], p("seed"));
  if (j.contains("n_test")) s.n_test = as_size(j["n_test"], p("n_test"));
  if (j.contains("n_stats")) s.n_stats = as_size(j["n_stats"], p("n_stats"));
  if (j.contains("val_fraction")) s.val_fraction = as_double(j["val_fraction"], p("val_fraction"));
  with_path(where, [&] { build_registry(s); });
  return s;
}

inline std::vector<LayerConfig> parse_layers(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of layers");
  std::vector<LayerConfig> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string at = where + "[" + std::to_string(i) + "]";
    if (!j[i].is_object()) throw ConfigError(at + ": expected an object");
    reject_unknown(j[i], at, {"kind", "width"});
    LayerConfig l;
    l.kind = with_path(at + ".kind", [&] { return layer_kind_from_string(as_string(require(j[i], at, "kind"), at + ".kind")); });
    if (l.kind == LayerKind::dense) l.width = as_size(require(j[i], at, "width"), at + ".width");
    out.push_back(l);
  }
  return out;
}

}  // namespace detail

/// Parses a config object. Errors name the offending field, e.g.
/// "scenario.K: required field missing".
inline ExperimentConfig config_from_json(const Json& j) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  reject_unknown(j, "", {"method", "strategy", "T", "E", "warmup_epochs", "warmup_lr", "lr", "batch_size",
                         "sample_weighted", "feature_layers", "seed", "seeds", "scenario"});
  ExperimentConfig c;
  c.method = with_path("method", [&] { return method_from_string(as_string(require(j, "", "method"), "method")); });
  c.scenario = parse_scenario(require(j, "", "scenario"), "scenario");
  if (j.contains("strategy"))
    c.strategy = with_path("strategy", [&] { return strategy_from_string(as_string(j["strategy"], "strategy")); });
  if (j.contains("T")) c.T = as_size(j["T"], "T");
  if (j.contains("E")) c.E = as_size(j["E"], "E");
  if (j.contains("warmup_epochs")) c.warmup_epochs = as_size(j["warmup_epochs"], "warmup_epochs");
  if (j.contains("warmup_lr")) c.warmup_lr = as_double(j["warmup_lr"], "warmup_lr");
  if (j.contains("lr")) c.lr = as_double(j["lr"], "lr");
  if (j.contains("batch_size")) c.batch_size = as_size(j["batch_size"], "batch_size");
  if (j.contains("sample_weighted")) c.sample_weighted = as_bool(j["sample_weighted"], "sample_weighted");
  if (j.contains("feature_layers")) c.feature_layers = parse_layers(j["feature_layers"], "feature_layers");
  // "seed" sets every seed at once; explicit entries below take precedence.
  if (j.contains("seed")) {
    const auto s = as_u64(j["seed"], "seed");
    if (j["scenario"].contains("seed")) {
      c.seeds = {s, s};
    } else {
      c.set_all_seeds(s);
    }
  }
  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    if (!s.is_object()) throw ConfigError("seeds: expected an object");
    reject_unknown(s, "seeds", {"init", "shuffle"});
    if (s.contains("init")) c.seeds.init = as_u64(s["init"], "seeds.init");
    if (s.contains("shuffle")) c.seeds.shuffle = as_u64(s["shuffle"], "seeds.shuffle");
  }
  with_path("config", [&] {
    c.validate();
    build_architecture(c.scenario.d, c.feature_layers);
  });
  return c;
}

inline Json scenario_to_json(const ScenarioSpec& s) {
  Json j;
  j["K"] = s.K;
  j["M"] = s.M;
  j["d"] = s.d;
  j["n_per_client"] = s.n_per_client;
  if (!s.class_names.empty()) j["class_names"] = s.class_names;
  if (!s.client_classes.empty()) {
    const auto names = s.class_names.empty() ? default_class_names(s.M) : s.class_names;
    Json cc = Json::array();
    for (const auto& ck : s.client_classes) {
      Json row = Json::array();
      for (auto c : ck) row.push_back(names.at(c));
      cc.push_back(row);
    }
    j["client_classes"] = cc;
  }
  j["shared_count"] = s.shared_count;
  j["partial_count"] = s.partial_count;
  j["unique_count"] = s.unique_count;
  j["skew"] = detail::to_string(s.skew);
  j["shift_sigma"] = s.shift_sigma;
  j["label_noise"] = s.label_noise;
  j["seed"] = s.seed;
  j["n_test"] = s.n_test;
  j["n_stats"] = s.n_stats;
  j["val_fraction"] = s.val_fraction;
  return j;
}

/// Canonical form: every field written, in a fixed order.
inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["method"] = std::string(to_string(c.method));
  j["strategy"] = std::string(to_string(c.strategy));
  j["T"] = c.T;
  j["E"] = c.E;
  j["warmup_epochs"] = c.warmup_epochs;
  j["warmup_lr"] = c.warmup_lr;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["sample_weighted"] = c.sample_weighted;
  Json layers = Json::array();
  for (const auto& l : c.feature_layers) {
    Json e;
    e["kind"] = std::string(to_string(l.kind));
    if (l.kind == LayerKind::dense) e["width"] = l.width;
    layers.push_back(e);
  }
  j["feature_layers"] = layers;
  j["seeds"] = {{"init", c.seeds.init}, {"shuffle", c.seeds.shuffle}};
  j["scenario"] = scenario_to_json(c.scenario);
  return j;
}

inline Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(origin + ": not valid JSON (" + e.what() + ")");
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path);
}

inline ExperimentConfig load_config(const std::string& path) { return config_from_json(read_json_file(path)); }

/// 64-bit FNV-1a, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Identifies a run: canonical config plus code version.
inline std::string manifest_hash(const ExperimentConfig& c) {
  return fnv1a_hex(config_to_json(c).dump() + "\n" + kCodeVersion);
}

}  // namespace surgagg
