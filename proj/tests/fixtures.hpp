#pragma once

// Shared test fixtures and independent metric oracles. The oracles
// deliberately re-implement ranking and both metrics with plain sorts and
// counting loops so library results can be checked against a second route.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mba/core.hpp"

namespace fixtures {

struct RankedUser {
  std::vector<double> scores;       // one score per item
  std::vector<mba::ItemId> mask;    // sorted; excluded from ranking
  std::vector<mba::ItemId> test;    // sorted; relevant items
};

/// 5 users x 10 items with distinct score shapes: strictly decreasing,
/// strictly increasing, all-tied, zig-zag, and a modular permutation.
inline std::vector<RankedUser> metric_fixture() {
  std::vector<RankedUser> users(5);
  for (int i = 0; i < 10; ++i) users[0].scores.push_back(1.0 - 0.1 * i);
  users[0].mask = {1};
  users[0].test = {0, 3};

  for (int i = 0; i < 10; ++i) users[1].scores.push_back(0.1 * i);
  users[1].mask = {};
  users[1].test = {9};

  users[2].scores.assign(10, 0.5);
  users[2].mask = {0, 1};
  users[2].test = {2, 5, 7};

  users[3].scores = {0.3, 0.9, 0.2, 0.8, 0.1, 0.7, 0.05, 0.6, 0.04, 0.5};
  users[3].mask = {9};
  users[3].test = {4, 8};

  for (int i = 0; i < 10; ++i) users[4].scores.push_back(((i * 7) % 10) / 10.0);
  users[4].mask = {4};
  users[4].test = {3, 7};
  return users;
}

/// Full ranking by (score desc, item asc) with masked items removed.
inline std::vector<mba::ItemId> oracle_ranking(const RankedUser& u) {
  std::vector<mba::ItemId> items;
  const auto n = static_cast<mba::ItemId>(u.scores.size());
  for (mba::ItemId i = 0; i < n; ++i) {
    if (!std::binary_search(u.mask.begin(), u.mask.end(), i)) items.push_back(i);
  }
  std::sort(items.begin(), items.end(), [&](mba::ItemId a, mba::ItemId b) {
    if (u.scores[a] != u.scores[b]) return u.scores[a] > u.scores[b];
    return a < b;
  });
  return items;
}

inline double oracle_recall(const RankedUser& u, std::size_t k) {
  const auto ranked = oracle_ranking(u);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    for (mba::ItemId t : u.test) {
      if (ranked[r] == t) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(u.test.size());
}

inline double oracle_ndcg(const RankedUser& u, std::size_t k) {
  const auto ranked = oracle_ranking(u);
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    for (mba::ItemId t : u.test) {
      if (ranked[r] == t) dcg += 1.0 / std::log2(static_cast<double>(r + 2));
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, u.test.size()); ++r) {
    idcg += 1.0 / std::log2(static_cast<double>(r + 2));
  }
  return dcg / idcg;
}

/// Two-outcome enumeration of KL between Bernoulli(p) and Bernoulli(q):
/// sum over x in {0,1} of P_p(x) * ln(P_p(x) / P_q(x)).
inline double oracle_bernoulli_kl(double p, double q) {
  auto pmf = [](double theta, int x) { return x == 1 ? theta : 1.0 - theta; };
  double sum = 0.0;
  for (int x : {0, 1}) {
    sum += pmf(p, x) * std::log(pmf(p, x) / pmf(q, x));
  }
  return sum;
}

}  // namespace fixtures
