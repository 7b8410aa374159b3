#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "surgagg/errors.hpp"

namespace surgagg {

/// Partition of the global classes by how many clients hold them.
struct SharingProfile {
  std::vector<std::size_t> shared_by_all;
  std::vector<std::size_t> partially_shared;
  std::vector<std::size_t> unique;
};

/// The global class universe and each client's subset of it. Client class
/// lists are kept sorted by global index; that order is the client's local
/// head column order.
class ClassRegistry {
 public:
  ClassRegistry() = default;

  ClassRegistry(std::vector<std::string> global_classes, std::vector<std::vector<std::size_t>> client_classes)
      : names_(std::move(global_classes)), clients_(std::move(client_classes)) {
    const std::size_t M = names_.size();
    if (M == 0) throw ConfigError("registry needs at least one class");
    if (clients_.empty()) throw ConfigError("registry needs at least one client");
    std::vector<bool> covered(M, false);
    for (std::size_t k = 0; k < clients_.size(); ++k) {
      auto& ck = clients_[k];
      if (ck.empty()) throw ConfigError("client " + std::to_string(k) + " has no classes");
      std::sort(ck.begin(), ck.end());
      if (std::adjacent_find(ck.begin(), ck.end()) != ck.end()) {
        throw ConfigError("client " + std::to_string(k) + " lists a class twice");
      }
      for (auto c : ck) {
        if (c >= M) throw ConfigError("client " + std::to_string(k) + " references class " + std::to_string(c) +
                                      " outside 0.." + std::to_string(M - 1));
        covered[c] = true;
      }
    }
    for (std::size_t c = 0; c < M; ++c) {
      if (!covered[c]) throw ConfigError("class '" + names_[c] + "' is held by no client");
    }
    holders_.assign(M, {});
    for (std::size_t k = 0; k < clients_.size(); ++k)
      for (auto c : clients_[k]) holders_[c].push_back(k);
  }

  /// Registry where each client's classes are given by name.
  static ClassRegistry from_names(std::vector<std::string> global_classes,
                                  const std::vector<std::vector<std::string>>& client_names) {
    std::vector<std::vector<std::size_t>> idx(client_names.size());
    for (std::size_t k = 0; k < client_names.size(); ++k) {
      for (const auto& n : client_names[k]) {
        auto it = std::find(global_classes.begin(), global_classes.end(), n);
        if (it == global_classes.end()) throw ConfigError("unknown class name '" + n + "'");
        idx[k].push_back(static_cast<std::size_t>(it - global_classes.begin()));
      }
    }
    return ClassRegistry(std::move(global_classes), std::move(idx));
  }

  /// Every one of `num_clients` clients holds all classes.
  static ClassRegistry homogeneous(std::vector<std::string> global_classes, std::size_t num_clients) {
    std::vector<std::size_t> all(global_classes.size());
    for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
    return ClassRegistry(std::move(global_classes), std::vector<std::vector<std::size_t>>(num_clients, all));
  }

  std::size_t num_classes() const { return names_.size(); }
  std::size_t num_clients() const { return clients_.size(); }
  const std::vector<std::string>& class_names() const { return names_; }
  const std::vector<std::vector<std::size_t>>& all_client_classes() const { return clients_; }

  const std::vector<std::size_t>& client_classes(std::size_t k) const {
    check_client(k);
    return clients_[k];
  }

  /// Clients k with c in C_k, ascending.
  const std::vector<std::size_t>& clients_with_class(std::size_t c) const {
    check_class(c);
    return holders_[c];
  }

  std::size_t local_to_global(std::size_t k, std::size_t local_col) const {
    const auto& ck = client_classes(k);
    if (local_col >= ck.size()) {
      throw ConfigError("local column " + std::to_string(local_col) + " out of range for client " + std::to_string(k));
    }
    return ck[local_col];
  }

  std::optional<std::size_t> global_to_local(std::size_t k, std::size_t c) const {
    check_class(c);
    const auto& ck = client_classes(k);
    auto it = std::lower_bound(ck.begin(), ck.end(), c);
    if (it == ck.end() || *it != c) return std::nullopt;
    return static_cast<std::size_t>(it - ck.begin());
  }

  SharingProfile sharing_profile() const {
    SharingProfile p;
    const std::size_t K = num_clients();
    for (std::size_t c = 0; c < num_classes(); ++c) {
      const std::size_t kc = holders_[c].size();
      if (kc == K) {
        p.shared_by_all.push_back(c);
      } else if (kc == 1) {
        p.unique.push_back(c);
      } else {
        p.partially_shared.push_back(c);
      }
    }
    return p;
  }

  bool is_homogeneous() const {
    return std::all_of(holders_.begin(), holders_.end(),
                       [this](const auto& h) { return h.size() == clients_.size(); });
  }

  friend bool operator==(const ClassRegistry& a, const ClassRegistry& b) {
    return a.names_ == b.names_ && a.clients_ == b.clients_;
  }

 private:
  void check_class(std::size_t c) const {
    if (c >= names_.size()) throw ConfigError("class index " + std::to_string(c) + " out of range");
  }
  void check_client(std::size_t k) const {
    if (k >= clients_.size()) throw ConfigError("client index " + std::to_string(k) + " out of range");
  }

  std::vector<std::string> names_;
  std::vector<std::vector<std::size_t>> clients_;
  std::vector<std::vector<std::size_t>> holders_;
};

/// Default class names "c0", "c1", ...
inline std::vector<std::string> default_class_names(std::size_t M) {
  std::vector<std::string> names(M);
  for (std::size_t c = 0; c < M; ++c) names[c] = "c" + std::to_string(c);
  return names;
}

}  // namespace surgagg
