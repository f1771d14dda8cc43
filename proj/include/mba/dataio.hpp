#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mba/core.hpp"
#include "mba/rng.hpp"

namespace mba {

namespace detail {

inline bool parse_raw_id(const std::string& tok, RawId& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

constexpr std::uint64_t kSplitSalt = 0x73706c6974ULL;    // "split"
constexpr std::uint64_t kHoldoutSalt = 0x686f6c64ULL;    // "hold"
constexpr std::uint64_t kEpochSalt = 0x65706f6368ULL;    // "epoch"

}  // namespace detail

/// Parses "<raw_user_id> <raw_item_id>" lines. Lines starting with '#' and
/// blank lines are skipped. Duplicates are preserved; deduplication happens
/// when the pairs are folded into an InteractionSet.
inline std::vector<std::pair<RawId, RawId>> parse_behavior_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open behavior file: " + path);

  std::vector<std::pair<RawId, RawId>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tok_u, tok_i, extra;
    if (!(ls >> tok_u)) continue;  // blank line
    if (tok_u[0] == '#') continue;
    const bool has_item = static_cast<bool>(ls >> tok_i);
    const bool has_extra = static_cast<bool>(ls >> extra);
    RawId u = 0, i = 0;
    if (!has_item || has_extra || !detail::parse_raw_id(tok_u, u) ||
        !detail::parse_raw_id(tok_i, i)) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected '<user_id> <item_id>', got \"" + line + "\"");
    }
    pairs.emplace_back(u, i);
  }
  return pairs;
}

/// Dataset manifest: key=value lines (clicks=, purchases=, split=, seed=).
/// Relative paths are resolved against the manifest's directory.
struct Manifest {
  std::string clicks_path;
  std::string purchases_path;
  double split_ratio = 0.2;
  std::uint64_t seed = 0;
};

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  const auto base = std::filesystem::path(path).parent_path();

  Manifest m;
  bool have_clicks = false, have_purchases = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    auto resolve = [&](const std::string& p) {
      std::filesystem::path fp(p);
      return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    if (key == "clicks") {
      m.clicks_path = resolve(value);
      have_clicks = true;
    } else if (key == "purchases") {
      m.purchases_path = resolve(value);
      have_purchases = true;
    } else if (key == "split") {
      m.split_ratio = std::stod(value);
    } else if (key == "seed") {
      m.seed = std::stoull(value);
    } else {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown key \"" + key +
                               "\"");
    }
  }
  if (!have_clicks || !have_purchases) {
    throw std::runtime_error(path + ": manifest must set both clicks= and purchases=");
  }
  return m;
}

/// Builds a SplitDataset from raw pair lists:
///   - users lacking observed interactions in either behavior are dropped,
///   - survivors' target interactions are split per user ~4:1 (seeded),
///   - all click pairs go to auxiliary train,
///   - train purchases are folded into auxiliary train (a purchase implies an
///     implicit click, so the sample taxonomy stays exhaustive).
inline SplitDataset build_split(const std::vector<std::pair<RawId, RawId>>& click_pairs,
                                const std::vector<std::pair<RawId, RawId>>& purchase_pairs,
                                double split_ratio, std::uint64_t seed) {
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
    throw std::invalid_argument("split_ratio must be in (0, 1)");
  }

  std::unordered_map<RawId, std::unordered_set<RawId>> clicks_by_user, purch_by_user;
  for (const auto& [u, i] : click_pairs) clicks_by_user[u].insert(i);
  for (const auto& [u, i] : purchase_pairs) purch_by_user[u].insert(i);

  std::vector<RawId> survivors;
  for (const auto& [u, items] : purch_by_user) {
    auto it = clicks_by_user.find(u);
    if (it != clicks_by_user.end() && !it->second.empty() && !items.empty()) {
      survivors.push_back(u);
    }
  }
  if (survivors.empty()) {
    throw std::runtime_error("empty dataset: no user has interactions in both behaviors");
  }
  std::sort(survivors.begin(), survivors.end());

  SplitDataset ds;
  for (RawId u : survivors) ds.users.add(u);

  std::set<RawId> item_universe;
  for (RawId u : survivors) {
    for (RawId i : clicks_by_user[u]) item_universe.insert(i);
    for (RawId i : purch_by_user[u]) item_universe.insert(i);
  }
  for (RawId i : item_universe) ds.items.add(i);

  const std::uint32_t nu = ds.users.size();
  const std::uint32_t ni = ds.items.size();
  ds.train_f = InteractionSet(Behavior::target, nu, ni);
  ds.test_f = InteractionSet(Behavior::target, nu, ni);
  ds.train_g = InteractionSet(Behavior::auxiliary, nu, ni);

  Rng rng(mix_seed(seed, detail::kSplitSalt));
  for (std::uint32_t du = 0; du < nu; ++du) {
    const RawId raw_u = ds.users.raw(du);

    std::vector<ItemId> purchases;
    for (RawId ri : purch_by_user[raw_u]) purchases.push_back(*ds.items.find(ri));
    std::sort(purchases.begin(), purchases.end());

    shuffle(purchases, rng);
    const std::size_t n = purchases.size();
    std::size_t test_n = 0;
    if (n >= 2) {
      test_n = static_cast<std::size_t>(std::llround(static_cast<double>(n) * split_ratio));
      test_n = std::max<std::size_t>(1, std::min(test_n, n - 1));
    }
    for (std::size_t k = 0; k < n; ++k) {
      (k < test_n ? ds.test_f : ds.train_f).add(du, purchases[k]);
    }

    for (RawId ri : clicks_by_user[raw_u]) ds.train_g.add(du, *ds.items.find(ri));
  }

  // fold train purchases into the auxiliary train set
  ds.train_f.for_each_pair([&](UserId u, ItemId i) { ds.train_g.add(u, i); });
  return ds;
}

inline SplitDataset load_dataset(const std::string& clicks_path, const std::string& purchases_path,
                                 double split_ratio, std::uint64_t seed) {
  auto clicks = parse_behavior_file(clicks_path);
  auto purchases = parse_behavior_file(purchases_path);
  return build_split(clicks, purchases, split_ratio, seed);
}

inline SplitDataset load_dataset(const Manifest& m) {
  return load_dataset(m.clicks_path, m.purchases_path, m.split_ratio, m.seed);
}

// ---------------------------------------------------------------------------
// Training samples
// ---------------------------------------------------------------------------

/// The three interaction situations a training sample can fall into.
enum class Situation : std::uint8_t {
  clicked_and_purchased = 0,  // r_g=1, r_f=1
  clicked_not_purchased = 1,  // r_g=1, r_f=0
  unobserved = 2,             // r_g=0, r_f=0 (sampled negative)
};

inline const char* situation_name(Situation s) {
  switch (s) {
    case Situation::clicked_and_purchased: return "I";
    case Situation::clicked_not_purchased: return "II";
    default: return "III";
  }
}

struct TrainingSample {
  UserId user = 0;
  ItemId item = 0;
  std::uint8_t r_f = 0;
  std::uint8_t r_g = 0;
  Situation situation = Situation::unobserved;
};

/// One epoch of samples: every auxiliary-train positive exactly once
/// (situation I if it is also a target-train pair, otherwise II), each paired
/// with one negative drawn uniformly from the user's non-interacted items
/// (situation III). The combined sequence is shuffled.
inline std::vector<TrainingSample> sample_epoch(const InteractionSet& train_f,
                                                const InteractionSet& train_g, Rng& rng) {
  const std::uint32_t num_users = train_g.num_users();
  const std::uint32_t num_items = train_g.num_items();
  if (train_g.empty()) throw std::invalid_argument("sample_epoch: empty training data");

  std::vector<TrainingSample> samples;
  samples.reserve(2 * train_g.size());

  for (UserId u = 0; u < num_users; ++u) {
    const auto& pos = train_g.items_of(u);
    if (pos.empty()) continue;

    std::size_t forbidden = pos.size();
    for (ItemId i : train_f.items_of(u)) {
      if (!train_g.contains(u, i)) ++forbidden;
    }
    if (forbidden >= num_items) {
      throw std::runtime_error("sample_epoch: user " + std::to_string(u) +
                               " has interacted with every item; no negative exists");
    }

    for (ItemId i : pos) {
      const bool purchased = train_f.contains(u, i);
      samples.push_back({u, i, static_cast<std::uint8_t>(purchased), 1,
                         purchased ? Situation::clicked_and_purchased
                                   : Situation::clicked_not_purchased});

      ItemId j = 0;
      do {
        j = static_cast<ItemId>(uniform_index(rng, num_items));
      } while (train_g.contains(u, j) || train_f.contains(u, j));
      samples.push_back({u, j, 0, 0, Situation::unobserved});
    }
  }

  shuffle(samples, rng);
  return samples;
}

inline std::vector<TrainingSample> sample_epoch(const SplitDataset& ds, Rng& rng) {
  return sample_epoch(ds.train_f, ds.train_g, rng);
}

/// Splits off ~fraction of the pairs (floor) as a held-out slice for
/// early-stopping validation. Returns {kept, held}.
inline std::pair<InteractionSet, InteractionSet> holdout_pairs(const InteractionSet& set,
                                                               double fraction,
                                                               std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("holdout fraction must be in [0, 1)");
  }
  auto pairs = set.pairs();
  Rng rng(mix_seed(seed, detail::kHoldoutSalt));
  shuffle(pairs, rng);

  const std::size_t held_n = static_cast<std::size_t>(static_cast<double>(pairs.size()) * fraction);
  InteractionSet kept(set.behavior(), set.num_users(), set.num_items());
  InteractionSet held(set.behavior(), set.num_users(), set.num_items());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    (k < held_n ? held : kept).add(pairs[k].first, pairs[k].second);
  }
  return {std::move(kept), std::move(held)};
}

}  // namespace mba
