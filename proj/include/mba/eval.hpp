#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mba/core.hpp"
#include "mba/math.hpp"
#include "mba/model.hpp"

namespace mba {

/// Top-k item indices by score, excluding `mask` (sorted ids). Ties break by
/// ascending item index. If fewer than k unmasked items exist, all of them are
/// returned, ranked.
inline std::vector<ItemId> rank_items(std::span<const double> scores,
                                      std::span<const ItemId> mask, std::size_t k) {
  if (k < 1) throw std::invalid_argument("rank_items: k must be >= 1");

  std::vector<ItemId> candidates;
  candidates.reserve(scores.size());
  std::size_t m = 0;
  const ItemId n = static_cast<ItemId>(scores.size());
  for (ItemId i = 0; i < n; ++i) {
    while (m < mask.size() && mask[m] < i) ++m;
    if (m < mask.size() && mask[m] == i) continue;
    candidates.push_back(i);
  }

  const auto better = [&scores](ItemId a, ItemId b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  if (k >= candidates.size()) {
    std::sort(candidates.begin(), candidates.end(), better);
    return candidates;
  }
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                    candidates.end(), better);
  candidates.resize(k);
  return candidates;
}

/// |topk ∩ test_items| / |test_items|. test_items must be sorted and nonempty.
inline double recall_at_k(std::span<const ItemId> topk, const std::vector<ItemId>& test_items) {
  if (test_items.empty()) throw std::invalid_argument("recall_at_k: empty test set");
  std::size_t hits = 0;
  for (ItemId i : topk) {
    if (std::binary_search(test_items.begin(), test_items.end(), i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test_items.size());
}

/// DCG of the ranked list over binary relevance, normalized by the ideal DCG
/// truncated at min(k, |test_items|). test_items must be sorted and nonempty.
inline double ndcg_at_k(std::span<const ItemId> topk, const std::vector<ItemId>& test_items,
                        std::size_t k) {
  if (test_items.empty()) throw std::invalid_argument("ndcg_at_k: empty test set");
  double dcg = 0.0;
  for (std::size_t r = 0; r < topk.size(); ++r) {
    if (std::binary_search(test_items.begin(), test_items.end(), topk[r])) {
      dcg += 1.0 / std::log2(static_cast<double>(r + 2));
    }
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, test_items.size());
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r + 2));
  return dcg / idcg;
}

struct CutoffMetrics {
  std::uint32_t k = 0;
  double recall = 0.0;
  double ndcg = 0.0;
};

struct EvalReport {
  std::vector<CutoffMetrics> cutoffs;
  std::uint64_t users_evaluated = 0;

  /// "metric,k,value,users" rows.
  std::string to_csv() const {
    std::ostringstream out;
    out << "metric,k,value,users\n";
    out << std::setprecision(10);
    for (const auto& c : cutoffs) out << "recall," << c.k << ',' << c.recall << ',' << users_evaluated << '\n';
    for (const auto& c : cutoffs) out << "ndcg," << c.k << ',' << c.ndcg << ',' << users_evaluated << '\n';
    return out.str();
  }

  std::string to_table() const {
    std::ostringstream out;
    out << "users evaluated: " << users_evaluated << '\n';
    out << std::left << std::setw(8) << "k" << std::setw(14) << "recall" << "ndcg\n";
    for (const auto& c : cutoffs) {
      out << std::left << std::setw(8) << c.k << std::setw(14) << std::setprecision(6)
          << std::fixed << c.recall << std::setprecision(6) << c.ndcg << '\n';
    }
    return out.str();
  }
};

struct EvalOptions {
  unsigned threads = 1;
};

/// Generic top-k protocol: for every user with test interactions, score all
/// items, exclude the user's `mask` positives, and average Recall@k / NDCG@k
/// at each cutoff. `score_user(u, out)` must fill raw scores for all items;
/// only score order matters. Per-user work may fan out over threads; partial
/// sums are compensated and merged in a fixed order.
template <typename ScoreFn>
EvalReport evaluate_ranking(const InteractionSet& test, const InteractionSet& mask,
                            ScoreFn&& score_user, std::span<const std::uint32_t> cutoffs,
                            EvalOptions opts = {}) {
  if (cutoffs.empty()) throw std::invalid_argument("evaluate_ranking: no cutoffs");
  const std::uint32_t num_items = test.num_items();

  std::vector<UserId> users;
  for (UserId u = 0; u < test.num_users(); ++u) {
    if (test.degree(u) > 0) users.push_back(u);
  }
  if (users.empty()) {
    throw std::runtime_error("evaluate_ranking: empty test set (no user has test interactions)");
  }

  const std::uint32_t kmax = *std::max_element(cutoffs.begin(), cutoffs.end());

  struct Partial {
    std::vector<KahanSum> recall, ndcg;
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads,
                                                           static_cast<unsigned>(users.size())));
  std::vector<Partial> partials(threads);
  for (auto& p : partials) {
    p.recall.resize(cutoffs.size());
    p.ndcg.resize(cutoffs.size());
  }

  auto work = [&](unsigned tid) {
    const std::size_t lo = users.size() * tid / threads;
    const std::size_t hi = users.size() * (tid + 1) / threads;
    std::vector<double> scores(num_items);
    for (std::size_t n = lo; n < hi; ++n) {
      const UserId u = users[n];
      score_user(u, std::span<double>(scores));
      const auto topk = rank_items(scores, mask.items_of(u), kmax);
      const auto& test_items = test.items_of(u);
      for (std::size_t c = 0; c < cutoffs.size(); ++c) {
        const std::size_t len = std::min<std::size_t>(cutoffs[c], topk.size());
        const std::span<const ItemId> prefix(topk.data(), len);
        partials[tid].recall[c].add(recall_at_k(prefix, test_items));
        partials[tid].ndcg[c].add(ndcg_at_k(prefix, test_items, cutoffs[c]));
      }
    }
  };

  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned tid = 0; tid < threads; ++tid) pool.emplace_back(work, tid);
    for (auto& t : pool) t.join();
  }

  EvalReport report;
  report.users_evaluated = users.size();
  for (std::size_t c = 0; c < cutoffs.size(); ++c) {
    KahanSum r, n;
    for (const auto& p : partials) {
      r.merge(p.recall[c]);
      n.merge(p.ndcg[c]);
    }
    report.cutoffs.push_back({cutoffs[c], r.value() / static_cast<double>(users.size()),
                              n.value() / static_cast<double>(users.size())});
  }
  return report;
}

/// Target-behavior evaluation with the blended score: candidate set is all
/// items minus the user's target-train positives.
template <typename Real>
EvalReport evaluate(const FactorModel<Real>& t, const FrozenModel<Real>& f, const SplitDataset& ds,
                    double beta, std::span<const std::uint32_t> cutoffs, double eps = 1e-7,
                    EvalOptions opts = {}) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must be in [0, 1]");
  const std::uint32_t ni = ds.num_items();
  auto scorer = [&](UserId u, std::span<double> out) {
    std::vector<double> t_raw(ni), f_raw(ni);
    t.score_all_items(u, t_raw);
    f.score_all_items(u, f_raw);
    for (ItemId i = 0; i < ni; ++i) {
      out[i] = beta * clamp_prob(sigmoid(t_raw[i]), eps) +
               (1.0 - beta) * clamp_prob(sigmoid(f_raw[i]), eps);
    }
  };
  return evaluate_ranking(ds.test_f, ds.train_f, scorer, cutoffs, opts);
}

}  // namespace mba
