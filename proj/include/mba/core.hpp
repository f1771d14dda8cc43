#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mba {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;
using RawId = std::int64_t;  // ids as they appear in behavior files

// Auxiliary = the dense, noisy behavior (clicks); target = the sparse behavior
// to predict (purchases).
enum class Behavior : std::uint8_t { auxiliary = 0, target = 1 };

inline const char* behavior_name(Behavior b) {
  return b == Behavior::auxiliary ? "auxiliary" : "target";
}

/// Sparse binary user-item matrix for one behavior type. Membership is O(1);
/// per-user item lists are kept sorted so every iteration order is stable.
class InteractionSet {
 public:
  InteractionSet() = default;
  InteractionSet(Behavior behavior, std::uint32_t num_users, std::uint32_t num_items)
      : behavior_(behavior),
        num_users_(num_users),
        num_items_(num_items),
        items_by_user_(num_users) {}

  Behavior behavior() const { return behavior_; }
  std::uint32_t num_users() const { return num_users_; }
  std::uint32_t num_items() const { return num_items_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  /// Returns false if the pair was already present.
  bool add(UserId u, ItemId i) {
    check_range(u, i);
    if (!pairs_.insert(key(u, i)).second) return false;
    auto& items = items_by_user_[u];
    items.insert(std::lower_bound(items.begin(), items.end(), i), i);
    return true;
  }

  bool contains(UserId u, ItemId i) const {
    check_range(u, i);
    return pairs_.count(key(u, i)) != 0;
  }

  /// Sorted item ids the user interacted with.
  const std::vector<ItemId>& items_of(UserId u) const {
    if (u >= num_users_) {
      throw std::out_of_range("InteractionSet: user " + std::to_string(u) +
                              " out of range (num_users=" + std::to_string(num_users_) + ")");
    }
    return items_by_user_[u];
  }

  std::size_t degree(UserId u) const { return items_of(u).size(); }

  /// All pairs in (user asc, item asc) order.
  std::vector<std::pair<UserId, ItemId>> pairs() const {
    std::vector<std::pair<UserId, ItemId>> out;
    out.reserve(size());
    for (UserId u = 0; u < num_users_; ++u) {
      for (ItemId i : items_by_user_[u]) out.emplace_back(u, i);
    }
    return out;
  }

  template <typename Fn>
  void for_each_pair(Fn&& fn) const {
    for (UserId u = 0; u < num_users_; ++u) {
      for (ItemId i : items_by_user_[u]) fn(u, i);
    }
  }

 private:
  static std::uint64_t key(UserId u, ItemId i) {
    return (static_cast<std::uint64_t>(u) << 32) | i;
  }

  void check_range(UserId u, ItemId i) const {
    if (u >= num_users_ || i >= num_items_) {
      throw std::out_of_range("InteractionSet: pair (" + std::to_string(u) + ", " +
                              std::to_string(i) + ") out of range for " +
                              std::to_string(num_users_) + " users x " +
                              std::to_string(num_items_) + " items");
    }
  }

  Behavior behavior_ = Behavior::target;
  std::uint32_t num_users_ = 0;
  std::uint32_t num_items_ = 0;
  std::vector<std::vector<ItemId>> items_by_user_;
  std::unordered_set<std::uint64_t> pairs_;
};

/// Pairs of `a` that are not in `b` (dimensions taken from `a`).
inline InteractionSet subtract(const InteractionSet& a, const InteractionSet& b) {
  InteractionSet out(a.behavior(), a.num_users(), a.num_items());
  a.for_each_pair([&](UserId u, ItemId i) {
    if (!b.contains(u, i)) out.add(u, i);
  });
  return out;
}

/// Bijection between raw dataset ids and dense [0, n) indices.
class IndexMap {
 public:
  std::uint32_t add(RawId raw) {
    auto [it, inserted] = to_dense_.try_emplace(raw, static_cast<std::uint32_t>(to_raw_.size()));
    if (inserted) to_raw_.push_back(raw);
    return it->second;
  }

  std::optional<std::uint32_t> find(RawId raw) const {
    auto it = to_dense_.find(raw);
    if (it == to_dense_.end()) return std::nullopt;
    return it->second;
  }

  RawId raw(std::uint32_t dense) const {
    if (dense >= to_raw_.size()) {
      throw std::out_of_range("IndexMap: dense id " + std::to_string(dense) + " out of range");
    }
    return to_raw_[dense];
  }

  std::uint32_t size() const { return static_cast<std::uint32_t>(to_raw_.size()); }

 private:
  std::unordered_map<RawId, std::uint32_t> to_dense_;
  std::vector<RawId> to_raw_;
};

/// One loaded dataset: target train/test plus auxiliary train, sharing index maps.
struct SplitDataset {
  InteractionSet train_f;  // target train (purchases)
  InteractionSet test_f;   // target test
  InteractionSet train_g;  // auxiliary train (clicks; train purchases folded in)
  IndexMap users;
  IndexMap items;

  std::uint32_t num_users() const { return users.size(); }
  std::uint32_t num_items() const { return items.size(); }
};

struct Hyperparams {
  double alpha = 100.0;  // weight of the alignment KL terms
  double beta = 0.8;     // inference blend between the latent model and the pretrained target model
  double c1 = 100.0;     // stand-in for -log h_neg(u,i) in the first alternating step
  double c2 = 100.0;     // stand-in for -log(1 - h_pos(u,i)) in the second alternating step
  double lr = 0.001;
  std::uint32_t dim = 32;
  double l2 = 1e-5;
  std::uint32_t batch_size = 2048;
  std::uint32_t patience = 20;  // early-stopping patience, in epochs
  std::uint32_t max_epochs = 500;
  double eps = 1e-7;  // probability clamp
  std::uint64_t seed = 42;
};

/// nullopt when valid, otherwise a message naming the offending field.
/// allow_zero_c admits c1 = c2 = 0 for degenerate/ablation training
/// configurations; the CLI-facing default keeps them strictly positive.
inline std::optional<std::string> validate_hyperparams(const Hyperparams& h,
                                                       bool allow_zero_c = false) {
  if (!(h.alpha >= 0)) return "alpha must be >= 0";
  if (!(h.beta >= 0 && h.beta <= 1)) return "beta must be in [0, 1]";
  if (!(allow_zero_c ? h.c1 >= 0 : h.c1 > 0)) return "c1 must be > 0";
  if (!(allow_zero_c ? h.c2 >= 0 : h.c2 > 0)) return "c2 must be > 0";
  if (!(h.lr > 0)) return "lr must be > 0";
  if (h.dim == 0) return "dim must be >= 1";
  if (!(h.l2 >= 0)) return "l2 must be >= 0";
  if (h.batch_size == 0) return "batch_size must be >= 1";
  if (h.max_epochs == 0) return "max_epochs must be >= 1";
  if (!(h.eps > 0 && h.eps < 0.5)) return "eps must be in (0, 0.5)";
  return std::nullopt;
}

inline void require_valid(const Hyperparams& h, bool allow_zero_c = false) {
  if (auto err = validate_hyperparams(h, allow_zero_c)) throw std::invalid_argument(*err);
}

}  // namespace mba
