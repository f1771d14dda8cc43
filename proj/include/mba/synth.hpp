#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mba/core.hpp"
#include "mba/dataio.hpp"
#include "mba/eval.hpp"
#include "mba/model.hpp"
#include "mba/rng.hpp"

namespace mba {

/// Synthetic multi-behavior generator with planted true preferences: clicks
/// are exposed preferred pairs plus spurious noise clicks, purchases are
/// preferred clicked pairs that convert. Purchases are a subset of clicks by
/// construction.
struct SynthConfig {
  std::uint32_t num_users = 50;
  std::uint32_t num_items = 40;
  std::uint32_t dim_true = 4;   // planted factor dimension
  double click_noise = 0.3;     // P(spurious click on a non-preferred pair)
  double exposure = 0.7;        // P(a preferred pair is observed at all)
  double purchase_rate = 0.5;   // P(a preferred, clicked pair converts)
  double split_ratio = 0.2;
  std::uint64_t seed = 1;
};

inline void validate_synth_config(const SynthConfig& c) {
  if (c.num_users == 0 || c.num_items == 0 || c.dim_true == 0) {
    throw std::invalid_argument("synth: num_users, num_items and dim_true must be positive");
  }
  auto check01 = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument(std::string("synth: ") + name + " must be in [0, 1]");
    }
  };
  check01(c.click_noise, "click_noise");
  check01(c.exposure, "exposure");
  check01(c.purchase_rate, "purchase_rate");
  if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) {
    throw std::invalid_argument("synth: split_ratio must be in (0, 1)");
  }
}

struct RawSynthData {
  std::vector<std::pair<RawId, RawId>> clicks;
  std::vector<std::pair<RawId, RawId>> purchases;
  std::vector<std::pair<RawId, RawId>> preferred;  // planted r_t = 1 pairs
};

/// Raw pair lists over dense [0, n) ids, before any user filtering.
inline RawSynthData generate_raw(const SynthConfig& cfg) {
  validate_synth_config(cfg);
  Rng rng(mix_seed(cfg.seed, 0x73796e7468ULL));  // "synth"

  Matrix<double> user_factors(cfg.num_users, cfg.dim_true);
  Matrix<double> item_factors(cfg.num_items, cfg.dim_true);
  for (auto& v : user_factors.data()) v = normal01(rng);
  for (auto& v : item_factors.data()) v = normal01(rng);

  // top quartile of each user's affinities marks their preferred items
  const std::uint32_t num_preferred = std::max<std::uint32_t>(1, cfg.num_items / 4);

  RawSynthData out;
  std::vector<ItemId> order(cfg.num_items);
  std::vector<double> affinity(cfg.num_items);
  std::vector<std::uint8_t> is_preferred(cfg.num_items);

  for (std::uint32_t u = 0; u < cfg.num_users; ++u) {
    for (std::uint32_t i = 0; i < cfg.num_items; ++i) {
      const auto pu = user_factors.row(u);
      const auto qi = item_factors.row(i);
      affinity[i] = std::inner_product(pu.begin(), pu.end(), qi.begin(), 0.0);
    }
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
      if (affinity[a] != affinity[b]) return affinity[a] > affinity[b];
      return a < b;
    });
    std::fill(is_preferred.begin(), is_preferred.end(), 0);
    for (std::uint32_t k = 0; k < num_preferred; ++k) is_preferred[order[k]] = 1;

    for (std::uint32_t i = 0; i < cfg.num_items; ++i) {
      const RawId ru = u, ri = i;
      if (is_preferred[i]) out.preferred.emplace_back(ru, ri);
      const double coin = uniform01(rng);
      const bool clicked = is_preferred[i] ? coin < cfg.exposure : coin < cfg.click_noise;
      if (!clicked) continue;
      out.clicks.emplace_back(ru, ri);
      if (is_preferred[i] && uniform01(rng) < cfg.purchase_rate) {
        out.purchases.emplace_back(ru, ri);
      }
    }
  }
  return out;
}

/// Planted r_t = 1 pairs in the final dense index space of a SplitDataset.
class GroundTruth {
 public:
  GroundTruth() = default;
  GroundTruth(std::uint32_t num_users, std::uint32_t num_items)
      : num_items_(num_items), preferred_(num_users) {}

  void add(UserId u, ItemId i) {
    auto& row = preferred_.at(u);
    row.insert(std::lower_bound(row.begin(), row.end(), i), i);
  }

  std::uint32_t num_users() const { return static_cast<std::uint32_t>(preferred_.size()); }
  std::uint32_t num_items() const { return num_items_; }

  const std::vector<ItemId>& preferred_of(UserId u) const { return preferred_.at(u); }

  bool contains(UserId u, ItemId i) const {
    const auto& row = preferred_.at(u);
    return std::binary_search(row.begin(), row.end(), i);
  }

 private:
  std::uint32_t num_items_ = 0;
  std::vector<std::vector<ItemId>> preferred_;
};

/// Generates a ready-to-train dataset plus the planted truth, remapped into
/// the dataset's index space. Users filtered out during dataset construction
/// (and items no surviving user touched) drop out of the truth as well.
inline std::pair<SplitDataset, GroundTruth> generate(const SynthConfig& cfg) {
  RawSynthData raw = generate_raw(cfg);
  SplitDataset ds = build_split(raw.clicks, raw.purchases, cfg.split_ratio, cfg.seed);

  GroundTruth truth(ds.num_users(), ds.num_items());
  for (const auto& [ru, ri] : raw.preferred) {
    const auto u = ds.users.find(ru);
    const auto i = ds.items.find(ri);
    if (u && i) truth.add(*u, *i);
  }
  return {std::move(ds), std::move(truth)};
}

/// Recall@k against the planted preferences instead of observed test
/// purchases; all items are candidates. score_user(u, out) fills raw scores.
template <typename ScoreFn>
double oracle_recall(ScoreFn&& score_user, const GroundTruth& truth, std::size_t k) {
  if (k < 1) throw std::invalid_argument("oracle_recall: k must be >= 1");
  KahanSum sum;
  std::uint64_t users = 0;
  std::vector<double> scores(truth.num_items());
  for (UserId u = 0; u < truth.num_users(); ++u) {
    const auto& pref = truth.preferred_of(u);
    if (pref.empty()) continue;
    score_user(u, std::span<double>(scores));
    const auto topk = rank_items(scores, std::span<const ItemId>(), k);
    sum.add(recall_at_k(topk, pref));
    ++users;
  }
  if (users == 0) throw std::runtime_error("oracle_recall: no user has planted preferences");
  return sum.value() / static_cast<double>(users);
}

/// Behavior-file writer ("<user> <item>" lines, deterministic order).
inline void write_pairs_file(const std::string& path,
                             const std::vector<std::pair<RawId, RawId>>& pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  for (const auto& [u, i] : pairs) out << u << ' ' << i << '\n';
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace mba
