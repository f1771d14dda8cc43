#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mba/core.hpp"
#include "mba/dataio.hpp"
#include "mba/eval.hpp"
#include "mba/math.hpp"
#include "mba/model.hpp"
#include "mba/rng.hpp"

namespace mba {

/// -ln sigmoid(raw(u,i) - raw(u,j)), the pairwise ranking loss for one triple.
template <typename Real>
double bpr_pair_loss(const FactorModel<Real>& m, UserId u, ItemId i, ItemId j) {
  return softplus(-(m.raw_score(u, i) - m.raw_score(u, j)));
}

struct PretrainOptions {
  double holdout_frac = 0.1;     // share of pairs held out for early stopping
  std::uint32_t val_cutoff = 20; // Recall@k cutoff used for early stopping
  std::ostream* log = nullptr;   // optional "behavior,epoch,loss,val_recall" CSV rows
};

template <typename Real = float>
struct PretrainResult {
  FactorModel<Real> model;
  std::vector<double> epoch_loss;   // mean pairwise loss per epoch
  std::vector<double> val_recall;   // empty when the holdout slice is empty
  std::uint32_t best_epoch = 0;     // 1-based; 0 when no validation ran
  double best_val_recall = 0.0;
  std::uint32_t epochs_run = 0;
};

/// Pairwise-ranking pretraining of one behavior model: every positive is
/// paired with a uniformly sampled non-interacted item each epoch, minibatch
/// Adam updates, early stopping on Recall@k over an internal held-out slice.
/// Returns the best-validation snapshot (final model if no validation ran).
template <typename Real = float>
PretrainResult<Real> bpr_pretrain(const InteractionSet& data, const Hyperparams& h,
                                  PretrainOptions opts = {}) {
  if (data.empty()) throw std::invalid_argument("bpr_pretrain: empty interaction set");
  require_valid(h);

  const std::uint64_t base = mix_seed(h.seed, static_cast<std::uint64_t>(data.behavior()) + 0xb9);
  auto [train, val] = holdout_pairs(data, opts.holdout_frac, mix_seed(base, 1));
  const bool has_val = !val.empty();  // tiny inputs keep everything in train

  const std::uint32_t num_items = data.num_items();
  FactorModel<Real> model = init_model<Real>(data.num_users(), num_items, h.dim, mix_seed(base, 2));
  AdamState<Real> adam = AdamState<Real>::like(model);
  Rng rng(mix_seed(base, 3));

  PretrainResult<Real> result;
  FactorModel<Real> best = model;
  std::uint32_t since_best = 0;
  double best_recall = -1.0;

  auto positives = train.pairs();

  for (std::uint32_t epoch = 1; epoch <= h.max_epochs; ++epoch) {
    shuffle(positives, rng);
    KahanSum epoch_loss;

    for (std::size_t off = 0; off < positives.size(); off += h.batch_size) {
      const std::size_t batch_end = std::min(positives.size(), off + h.batch_size);
      const double w = 1.0 / static_cast<double>(batch_end - off);
      SparseGrad grads(h.dim);

      for (std::size_t n = off; n < batch_end; ++n) {
        const auto [u, i] = positives[n];
        if (train.degree(u) >= num_items) {
          throw std::runtime_error("bpr_pretrain: user " + std::to_string(u) +
                                   " has interacted with every item; no negative exists");
        }
        ItemId j = 0;
        do {
          j = static_cast<ItemId>(uniform_index(rng, num_items));
        } while (train.contains(u, j));

        const double x = model.raw_score(u, i) - model.raw_score(u, j);
        epoch_loss.add(softplus(-x));
        const double e = sigmoid(-x);  // -d loss / d x

        auto& gu = grads.user_row(u);
        SparseGrad::axpy<Real>(gu, -e * w, model.item_emb.row(i));
        SparseGrad::axpy<Real>(gu, e * w, model.item_emb.row(j));
        SparseGrad::axpy<Real>(grads.item_row(i), -e * w, model.user_emb.row(u));
        SparseGrad::axpy<Real>(grads.item_row(j), e * w, model.user_emb.row(u));
      }
      adam_step(model, adam, grads, h.lr, h.l2);
    }

    result.epoch_loss.push_back(epoch_loss.value() / static_cast<double>(positives.size()));
    result.epochs_run = epoch;

    if (has_val) {
      const std::uint32_t cutoffs[1] = {opts.val_cutoff};
      auto scorer = [&](UserId u, std::span<double> out) { model.score_all_items(u, out); };
      const double recall = evaluate_ranking(val, train, scorer, cutoffs).cutoffs[0].recall;
      result.val_recall.push_back(recall);
      if (recall > best_recall) {
        best_recall = recall;
        best = model;
        result.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
    }

    if (opts.log) {
      *opts.log << behavior_name(data.behavior()) << ',' << epoch << ','
                << result.epoch_loss.back() << ','
                << (has_val ? std::to_string(result.val_recall.back()) : std::string("nan"))
                << '\n';
    }

    if (has_val && since_best >= h.patience) break;
  }

  result.model = has_val ? std::move(best) : std::move(model);
  result.best_val_recall = has_val ? best_recall : 0.0;
  return result;
}

}  // namespace mba
