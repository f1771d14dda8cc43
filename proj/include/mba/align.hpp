#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mba/core.hpp"
#include "mba/dataio.hpp"
#include "mba/eval.hpp"
#include "mba/math.hpp"
#include "mba/model.hpp"
#include "mba/pretrain.hpp"
#include "mba/rng.hpp"

namespace mba {

/// KL divergence between two Bernoulli distributions with parameters p and q;
/// both must already be clamped away from {0, 1}.
inline double bernoulli_kl(double p, double q) {
  return p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
}

/// The two alternating training steps: step 0 trains the positive-conditional
/// emission heads (negative-conditional ones pinned near 0 through c1), step 1
/// trains the negative-conditional heads (positive-conditional pinned near 1
/// through c2). The latent model updates in both.
enum class StepFlag : std::uint8_t { positive_heads = 0, negative_heads = 1 };

inline StepFlag flip(StepFlag f) {
  return f == StepFlag::positive_heads ? StepFlag::negative_heads : StepFlag::positive_heads;
}

/// The seven models of one alignment run. All share the dataset's index space.
template <typename Real = float>
struct MbaModels {
  FactorModel<Real> t;       // latent preference model
  FactorModel<Real> hf_pos;  // P(purchase | preferred)
  FactorModel<Real> hf_neg;  // P(purchase | not preferred)
  FactorModel<Real> hg_pos;  // P(click | preferred)
  FactorModel<Real> hg_neg;  // P(click | not preferred)
  FrozenModel<Real> f;       // pretrained target-behavior model
  FrozenModel<Real> g;       // pretrained auxiliary-behavior model
};

namespace detail {

/// Value and partials of one expectation branch; t and h are clamped
/// probabilities. Losses are the negated expectation contributions.
struct BranchTerm {
  double value;
  double d_t;
  double d_h;
};

// step 0, observed (r=1):   -t ln h + c1 (1 - t)
inline BranchTerm pos_head_observed(double t, double h, double c1) {
  return {-t * std::log(h) + c1 * (1.0 - t), -std::log(h) - c1, -t / h};
}

// step 0, unobserved (r=0): -t ln(1 - h)
inline BranchTerm pos_head_unobserved(double t, double h) {
  return {-t * std::log1p(-h), -std::log1p(-h), t / (1.0 - h)};
}

// step 1, observed (r=1):   -(1 - t) ln h
inline BranchTerm neg_head_observed(double t, double h) {
  return {-(1.0 - t) * std::log(h), std::log(h), -(1.0 - t) / h};
}

// step 1, unobserved (r=0): c2 t - (1 - t) ln(1 - h)
inline BranchTerm neg_head_unobserved(double t, double h, double c2) {
  return {c2 * t - (1.0 - t) * std::log1p(-h), c2 + std::log1p(-h), (1.0 - t) / (1.0 - h)};
}

inline BranchTerm head_term(StepFlag flag, bool observed, double t, double h, double c1,
                            double c2) {
  if (flag == StepFlag::positive_heads) {
    return observed ? pos_head_observed(t, h, c1) : pos_head_unobserved(t, h);
  }
  return observed ? neg_head_observed(t, h) : neg_head_unobserved(t, h, c2);
}

}  // namespace detail

/// Negated expectation contribution of one sample under the given step flag:
/// the click-side and purchase-side branch selected by r_g / r_f.
template <typename Real>
double branch_loss(const MbaModels<Real>& m, const TrainingSample& s, StepFlag flag, double c1,
                   double c2, double eps) {
  const double t = m.t.prob(s.user, s.item, eps);
  const auto& click_head = flag == StepFlag::positive_heads ? m.hg_pos : m.hg_neg;
  const auto& purchase_head = flag == StepFlag::positive_heads ? m.hf_pos : m.hf_neg;
  const double click =
      detail::head_term(flag, s.r_g != 0, t, click_head.prob(s.user, s.item, eps), c1, c2).value;
  const double purchase =
      detail::head_term(flag, s.r_f != 0, t, purchase_head.prob(s.user, s.item, eps), c1, c2)
          .value;
  return click + purchase;
}

/// alpha * sum over the batch's pairs of KL(f||t) + KL(g||t). Gradient flows
/// only into t; the pretrained models enter as constants.
template <typename Real>
double kl_term(const MbaModels<Real>& m, std::span<const TrainingSample> batch, double alpha,
               double eps) {
  if (batch.empty()) throw std::invalid_argument("kl_term: empty batch");
  KahanSum sum;
  for (const auto& s : batch) {
    const double t = m.t.prob(s.user, s.item, eps);
    sum.add(bernoulli_kl(m.f.prob(s.user, s.item, eps), t));
    sum.add(bernoulli_kl(m.g.prob(s.user, s.item, eps), t));
  }
  return alpha * sum.value();
}

/// The minimized per-batch objective: mean branch loss plus the KL term
/// normalized by batch size.
template <typename Real>
double batch_objective(const MbaModels<Real>& m, std::span<const TrainingSample> batch,
                       StepFlag flag, const Hyperparams& h) {
  if (batch.empty()) throw std::invalid_argument("batch_objective: empty batch");
  KahanSum acc;
  for (const auto& s : batch) acc.add(branch_loss(m, s, flag, h.c1, h.c2, h.eps));
  const double n = static_cast<double>(batch.size());
  return acc.value() / n + kl_term(m, batch, h.alpha, h.eps) / n;
}

/// Gradients of batch_objective for the models active under the step flag.
/// click_head / purchase_head refer to hg_pos / hf_pos at step 0 and to
/// hg_neg / hf_neg at step 1. f and g are filled only in co-training mode.
struct MbaBatchGrads {
  SparseGrad t, click_head, purchase_head, f, g;
  double objective = 0.0;
  double kl = 0.0;

  explicit MbaBatchGrads(std::uint32_t dim)
      : t(dim), click_head(dim), purchase_head(dim), f(dim), g(dim) {}
};

template <typename Real>
MbaBatchGrads compute_batch_gradients(const MbaModels<Real>& m,
                                      std::span<const TrainingSample> batch, StepFlag flag,
                                      const Hyperparams& h, bool co_train_fg = false) {
  if (batch.empty()) throw std::invalid_argument("compute_batch_gradients: empty batch");
  MbaBatchGrads out(m.t.dim());

  const auto& click_head = flag == StepFlag::positive_heads ? m.hg_pos : m.hg_neg;
  const auto& purchase_head = flag == StepFlag::positive_heads ? m.hf_pos : m.hf_neg;
  const double w = 1.0 / static_cast<double>(batch.size());

  KahanSum objective, kl_acc;
  for (const auto& s : batch) {
    const UserId u = s.user;
    const ItemId i = s.item;

    const double sig_t = sigmoid(m.t.raw_score(u, i));
    const double t = clamp_prob(sig_t, h.eps);
    const double dt = clamped_sigmoid_grad(sig_t, h.eps);

    const double sig_c = sigmoid(click_head.raw_score(u, i));
    const double hc = clamp_prob(sig_c, h.eps);
    const double dhc = clamped_sigmoid_grad(sig_c, h.eps);

    const double sig_p = sigmoid(purchase_head.raw_score(u, i));
    const double hp = clamp_prob(sig_p, h.eps);
    const double dhp = clamped_sigmoid_grad(sig_p, h.eps);

    const auto click = detail::head_term(flag, s.r_g != 0, t, hc, h.c1, h.c2);
    const auto purchase = detail::head_term(flag, s.r_f != 0, t, hp, h.c1, h.c2);

    const double pf = m.f.prob(u, i, h.eps);
    const double pg = m.g.prob(u, i, h.eps);
    const double kl_pair = bernoulli_kl(pf, t) + bernoulli_kl(pg, t);
    const double dkl_dt = -pf / t + (1.0 - pf) / (1.0 - t) - pg / t + (1.0 - pg) / (1.0 - t);

    const double sample_loss = click.value + purchase.value + h.alpha * kl_pair;
    if (!std::isfinite(sample_loss)) {
      throw std::runtime_error(
          "non-finite loss for sample (user " + std::to_string(u) + ", item " + std::to_string(i) +
          ", situation " + situation_name(s.situation) + "): click=" + std::to_string(click.value) +
          " purchase=" + std::to_string(purchase.value) + " kl=" + std::to_string(kl_pair));
    }
    objective.add(w * sample_loss);
    kl_acc.add(w * h.alpha * kl_pair);

    const double g_t = w * (click.d_t + purchase.d_t + h.alpha * dkl_dt) * dt;
    SparseGrad::axpy<Real>(out.t.user_row(u), g_t, m.t.item_emb.row(i));
    SparseGrad::axpy<Real>(out.t.item_row(i), g_t, m.t.user_emb.row(u));

    const double g_c = w * click.d_h * dhc;
    SparseGrad::axpy<Real>(out.click_head.user_row(u), g_c, click_head.item_emb.row(i));
    SparseGrad::axpy<Real>(out.click_head.item_row(i), g_c, click_head.user_emb.row(u));

    const double g_p = w * purchase.d_h * dhp;
    SparseGrad::axpy<Real>(out.purchase_head.user_row(u), g_p, purchase_head.item_emb.row(i));
    SparseGrad::axpy<Real>(out.purchase_head.item_row(i), g_p, purchase_head.user_emb.row(u));

    if (co_train_fg) {
      const double sig_f = sigmoid(m.f.raw_score(u, i));
      const double sig_g = sigmoid(m.g.raw_score(u, i));
      const double d_pf = std::log(pf / t) - std::log((1.0 - pf) / (1.0 - t));
      const double d_pg = std::log(pg / t) - std::log((1.0 - pg) / (1.0 - t));
      const double g_f = w * h.alpha * d_pf * clamped_sigmoid_grad(sig_f, h.eps);
      const double g_g = w * h.alpha * d_pg * clamped_sigmoid_grad(sig_g, h.eps);
      SparseGrad::axpy<Real>(out.f.user_row(u), g_f, m.f.model().item_emb.row(i));
      SparseGrad::axpy<Real>(out.f.item_row(i), g_f, m.f.model().user_emb.row(u));
      SparseGrad::axpy<Real>(out.g.user_row(u), g_g, m.g.model().item_emb.row(i));
      SparseGrad::axpy<Real>(out.g.item_row(i), g_g, m.g.model().user_emb.row(u));
    }
  }

  out.objective = objective.value();
  out.kl = kl_acc.value();
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct MbaTrainOptions {
  bool co_train_fg = false;       // ablation: update f and g through the KL instead of freezing
  double holdout_frac = 0.1;      // share of target-train pairs held out for early stopping
  std::uint32_t val_cutoff = 20;  // Recall@k cutoff for early stopping
  std::ostream* log_csv = nullptr;
  bool log_header = true;
  std::string state_path;         // when set, resumable training state lands here
  std::uint32_t state_every = 1;  // epochs between state snapshots
};

struct EpochLogRow {
  std::uint32_t epoch = 0;
  int flag_parity = 0;  // flag at the first batch of the epoch
  double mean_loss = 0.0;
  double mean_kl = 0.0;
  double val_recall = 0.0;
  double elapsed_s = 0.0;
};

inline const char* epoch_log_header() {
  return "epoch,flag_parity,mean_loss,mean_kl,val_recall@20,elapsed_s";
}

inline std::string to_csv_row(const EpochLogRow& r) {
  std::ostringstream out;
  out.precision(10);
  out << r.epoch << ',' << r.flag_parity << ',' << r.mean_loss << ',' << r.mean_kl << ','
      << r.val_recall << ',' << r.elapsed_s;
  return out.str();
}

template <typename Real = float>
struct MbaTrainResult {
  MbaModels<Real> models;  // best-validation snapshot (final state if no validation ran)
  std::vector<EpochLogRow> log;
  std::uint32_t best_epoch = 0;
  double best_val_recall = 0.0;
  std::uint32_t epochs_run = 0;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated training state");
  return v;
}

template <typename Real>
void write_matrix(std::ostream& out, const Matrix<Real>& m) {
  write_pod(out, m.rows());
  write_pod(out, m.cols());
  out.write(reinterpret_cast<const char*>(m.data().data()),
            static_cast<std::streamsize>(m.data().size() * sizeof(Real)));
}

template <typename Real>
Matrix<Real> read_matrix(std::istream& in) {
  const auto rows = read_pod<std::uint32_t>(in);
  const auto cols = read_pod<std::uint32_t>(in);
  Matrix<Real> m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data().data()),
          static_cast<std::streamsize>(m.data().size() * sizeof(Real)));
  if (!in) throw std::runtime_error("truncated training state");
  return m;
}

template <typename Real>
void write_model(std::ostream& out, const FactorModel<Real>& m) {
  write_matrix(out, m.user_emb);
  write_matrix(out, m.item_emb);
}

template <typename Real>
FactorModel<Real> read_model(std::istream& in) {
  FactorModel<Real> m;
  m.user_emb = read_matrix<Real>(in);
  m.item_emb = read_matrix<Real>(in);
  return m;
}

template <typename Real>
void write_adam(std::ostream& out, const AdamState<Real>& a) {
  write_matrix(out, a.m_user);
  write_matrix(out, a.v_user);
  write_matrix(out, a.m_item);
  write_matrix(out, a.v_item);
  write_pod(out, a.step);
}

template <typename Real>
AdamState<Real> read_adam(std::istream& in) {
  AdamState<Real> a;
  a.m_user = read_matrix<Real>(in);
  a.v_user = read_matrix<Real>(in);
  a.m_item = read_matrix<Real>(in);
  a.v_item = read_matrix<Real>(in);
  a.step = read_pod<std::uint64_t>(in);
  return a;
}

constexpr std::uint64_t kMbaValSalt = 0x76616cULL;  // "val"
constexpr std::uint64_t kMbaInitSalt = 0x696e6974ULL;
constexpr std::uint64_t kMbaEpochSalt = 0x7374657073ULL;

}  // namespace detail

/// Alternating-step trainer. Owns the five trainable models; the pretrained
/// models stay frozen unless co-training is requested. Fully deterministic
/// under a fixed seed, and resumable from a saved state snapshot.
template <typename Real = float>
class MbaTrainer {
 public:
  MbaTrainer(const SplitDataset& ds, FrozenModel<Real> f, FrozenModel<Real> g, Hyperparams h,
             MbaTrainOptions opts = {})
      : ds_(&ds), h_(h), opts_(std::move(opts)) {
    require_valid(h_, /*allow_zero_c=*/true);
    check_shape(f, "pretrained target model");
    check_shape(g, "pretrained auxiliary model");

    auto [kept, held] =
        holdout_pairs(ds.train_f, opts_.holdout_frac, mix_seed(h_.seed, detail::kMbaValSalt));
    train_f_ = std::move(kept);
    val_ = std::move(held);
    train_g_ = subtract(ds.train_g, val_);

    const std::uint32_t nu = ds.num_users();
    const std::uint32_t ni = ds.num_items();
    models_.t = init_model<Real>(nu, ni, h_.dim, mix_seed(h_.seed, detail::kMbaInitSalt + 0));
    models_.hf_pos = init_model<Real>(nu, ni, h_.dim, mix_seed(h_.seed, detail::kMbaInitSalt + 1));
    models_.hf_neg = init_model<Real>(nu, ni, h_.dim, mix_seed(h_.seed, detail::kMbaInitSalt + 2));
    models_.hg_pos = init_model<Real>(nu, ni, h_.dim, mix_seed(h_.seed, detail::kMbaInitSalt + 3));
    models_.hg_neg = init_model<Real>(nu, ni, h_.dim, mix_seed(h_.seed, detail::kMbaInitSalt + 4));
    models_.f = std::move(f);
    models_.g = std::move(g);

    adam_t_ = AdamState<Real>::like(models_.t);
    adam_hf_pos_ = AdamState<Real>::like(models_.hf_pos);
    adam_hf_neg_ = AdamState<Real>::like(models_.hf_neg);
    adam_hg_pos_ = AdamState<Real>::like(models_.hg_pos);
    adam_hg_neg_ = AdamState<Real>::like(models_.hg_neg);
    if (opts_.co_train_fg) {
      adam_f_ = AdamState<Real>::like(models_.f.model());
      adam_g_ = AdamState<Real>::like(models_.g.model());
    }

    rng_ = Rng(mix_seed(h_.seed, detail::kMbaEpochSalt));
    best_ = models_;
  }

  StepFlag flag() const { return flag_; }
  std::uint32_t epoch() const { return epoch_; }
  bool has_validation() const { return !val_.empty(); }
  const MbaModels<Real>& models() const { return models_; }
  const InteractionSet& validation_pairs() const { return val_; }

  /// One gradient step on the models active under the current flag, then the
  /// flag flips. Returns {batch objective, kl share}.
  std::pair<double, double> step_batch(std::span<const TrainingSample> batch) {
    auto grads = compute_batch_gradients(models_, batch, flag_, h_, opts_.co_train_fg);
    adam_step(models_.t, adam_t_, grads.t, h_.lr, h_.l2);
    if (flag_ == StepFlag::positive_heads) {
      adam_step(models_.hg_pos, adam_hg_pos_, grads.click_head, h_.lr, h_.l2);
      adam_step(models_.hf_pos, adam_hf_pos_, grads.purchase_head, h_.lr, h_.l2);
    } else {
      adam_step(models_.hg_neg, adam_hg_neg_, grads.click_head, h_.lr, h_.l2);
      adam_step(models_.hf_neg, adam_hf_neg_, grads.purchase_head, h_.lr, h_.l2);
    }
    if (opts_.co_train_fg) {
      adam_step(models_.f.mutable_model(), adam_f_, grads.f, h_.lr, h_.l2);
      adam_step(models_.g.mutable_model(), adam_g_, grads.g, h_.lr, h_.l2);
    }
    flag_ = flip(flag_);
    return {grads.objective, grads.kl};
  }

  EpochLogRow run_epoch() {
    const auto start = std::chrono::steady_clock::now();
    ++epoch_;
    EpochLogRow row;
    row.epoch = epoch_;
    row.flag_parity = static_cast<int>(flag_);

    auto samples = sample_epoch(train_f_, train_g_, rng_);
    KahanSum loss, kl;
    std::size_t batches = 0;
    for (std::size_t off = 0; off < samples.size(); off += h_.batch_size) {
      const std::size_t end = std::min(samples.size(), off + h_.batch_size);
      try {
        auto [o, k] = step_batch(std::span<const TrainingSample>(samples.data() + off, end - off));
        loss.add(o);
        kl.add(k);
      } catch (const std::exception& e) {
        throw std::runtime_error("mba training aborted at epoch " + std::to_string(epoch_) +
                                 ", batch " + std::to_string(batches) + ": " + e.what());
      }
      ++batches;
    }
    row.mean_loss = loss.value() / static_cast<double>(batches);
    row.mean_kl = kl.value() / static_cast<double>(batches);

    if (has_validation()) {
      row.val_recall = validation_recall();
      if (row.val_recall > best_val_) {
        best_val_ = row.val_recall;
        best_epoch_ = epoch_;
        since_best_ = 0;
        best_ = models_;
      } else {
        ++since_best_;
      }
    } else {
      row.val_recall = std::numeric_limits<double>::quiet_NaN();
    }

    row.elapsed_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log_.push_back(row);
    if (opts_.log_csv) {
      if (opts_.log_header && epoch_ == 1) *opts_.log_csv << epoch_log_header() << '\n';
      *opts_.log_csv << to_csv_row(row) << '\n' << std::flush;
    }
    if (!opts_.state_path.empty() && epoch_ % std::max(1u, opts_.state_every) == 0) {
      save_state(opts_.state_path);
    }
    return row;
  }

  bool finished() const {
    if (epoch_ >= h_.max_epochs) return true;
    return has_validation() && since_best_ >= h_.patience;
  }

  MbaTrainResult<Real> run() {
    while (!finished()) run_epoch();
    return result();
  }

  /// Result at the current point: best-validation snapshot plus the log rows
  /// produced by this trainer instance.
  MbaTrainResult<Real> result() const {
    MbaTrainResult<Real> r;
    r.models = has_validation() ? best_ : models_;
    r.log = log_;
    r.best_epoch = best_epoch_;
    r.best_val_recall = has_validation() ? best_val_ : 0.0;
    r.epochs_run = epoch_;
    return r;
  }

  // --- resumable state -----------------------------------------------------

  void save_state(std::ostream& out) const {
    out.write("MBAS", 4);
    detail::write_pod(out, std::uint32_t{1});
    detail::write_pod(out, static_cast<std::uint8_t>(sizeof(Real)));
    detail::write_pod(out, static_cast<std::uint8_t>(opts_.co_train_fg));
    detail::write_pod(out, epoch_);
    detail::write_pod(out, static_cast<std::uint8_t>(flag_));
    detail::write_pod(out, since_best_);
    detail::write_pod(out, best_epoch_);
    detail::write_pod(out, best_val_);

    auto write_set = [&](const MbaModels<Real>& m) {
      detail::write_model(out, m.t);
      detail::write_model(out, m.hf_pos);
      detail::write_model(out, m.hf_neg);
      detail::write_model(out, m.hg_pos);
      detail::write_model(out, m.hg_neg);
      if (opts_.co_train_fg) {
        detail::write_model(out, m.f.model());
        detail::write_model(out, m.g.model());
      }
    };
    write_set(models_);
    write_set(best_);

    detail::write_adam(out, adam_t_);
    detail::write_adam(out, adam_hf_pos_);
    detail::write_adam(out, adam_hf_neg_);
    detail::write_adam(out, adam_hg_pos_);
    detail::write_adam(out, adam_hg_neg_);
    if (opts_.co_train_fg) {
      detail::write_adam(out, adam_f_);
      detail::write_adam(out, adam_g_);
    }

    std::ostringstream rng_text;
    rng_text << rng_;
    const std::string s = rng_text.str();
    detail::write_pod(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!out) throw std::runtime_error("failed to write training state");
  }

  void save_state(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open training state for writing: " + path);
    save_state(out);
  }

  void load_state(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MBAS", 4) != 0) {
      throw std::runtime_error("not an MBA training state");
    }
    if (detail::read_pod<std::uint32_t>(in) != 1) {
      throw std::runtime_error("unsupported training state version");
    }
    if (detail::read_pod<std::uint8_t>(in) != sizeof(Real)) {
      throw std::runtime_error("training state scalar width mismatch");
    }
    if (detail::read_pod<std::uint8_t>(in) != static_cast<std::uint8_t>(opts_.co_train_fg)) {
      throw std::runtime_error("training state co-training mode mismatch");
    }
    epoch_ = detail::read_pod<std::uint32_t>(in);
    flag_ = static_cast<StepFlag>(detail::read_pod<std::uint8_t>(in));
    since_best_ = detail::read_pod<std::uint32_t>(in);
    best_epoch_ = detail::read_pod<std::uint32_t>(in);
    best_val_ = detail::read_pod<double>(in);

    auto read_set = [&](MbaModels<Real>& m) {
      auto read_into = [&](FactorModel<Real>& dst, const char* what) {
        FactorModel<Real> loaded = detail::read_model<Real>(in);
        if (loaded.num_users() != ds_->num_users() || loaded.num_items() != ds_->num_items() ||
            loaded.dim() != h_.dim) {
          throw std::runtime_error(std::string("training state shape mismatch for ") + what);
        }
        dst = std::move(loaded);
      };
      read_into(m.t, "t");
      read_into(m.hf_pos, "hf_pos");
      read_into(m.hf_neg, "hf_neg");
      read_into(m.hg_pos, "hg_pos");
      read_into(m.hg_neg, "hg_neg");
      if (opts_.co_train_fg) {
        read_into(m.f.mutable_model(), "f");
        read_into(m.g.mutable_model(), "g");
      }
    };
    read_set(models_);
    read_set(best_);

    adam_t_ = detail::read_adam<Real>(in);
    adam_hf_pos_ = detail::read_adam<Real>(in);
    adam_hf_neg_ = detail::read_adam<Real>(in);
    adam_hg_pos_ = detail::read_adam<Real>(in);
    adam_hg_neg_ = detail::read_adam<Real>(in);
    if (opts_.co_train_fg) {
      adam_f_ = detail::read_adam<Real>(in);
      adam_g_ = detail::read_adam<Real>(in);
    }

    const auto len = detail::read_pod<std::uint32_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("truncated training state");
    std::istringstream rng_text(s);
    rng_text >> rng_;
    if (!rng_text) throw std::runtime_error("corrupt rng state in training state");
  }

  void load_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open training state: " + path);
    load_state(in);
  }

 private:
  void check_shape(const FrozenModel<Real>& m, const char* what) const {
    if (m.num_users() != ds_->num_users() || m.num_items() != ds_->num_items()) {
      throw std::invalid_argument(std::string(what) + " shape " + std::to_string(m.num_users()) +
                                  "x" + std::to_string(m.num_items()) +
                                  " does not match dataset " + std::to_string(ds_->num_users()) +
                                  "x" + std::to_string(ds_->num_items()));
    }
  }

  double validation_recall() const {
    const std::uint32_t ni = ds_->num_items();
    const std::uint32_t cutoffs[1] = {opts_.val_cutoff};
    auto scorer = [&](UserId u, std::span<double> out) {
      std::vector<double> t_raw(ni), f_raw(ni);
      models_.t.score_all_items(u, t_raw);
      models_.f.score_all_items(u, f_raw);
      for (ItemId i = 0; i < ni; ++i) {
        out[i] = h_.beta * clamp_prob(sigmoid(t_raw[i]), h_.eps) +
                 (1.0 - h_.beta) * clamp_prob(sigmoid(f_raw[i]), h_.eps);
      }
    };
    return evaluate_ranking(val_, train_f_, scorer, cutoffs).cutoffs[0].recall;
  }

  const SplitDataset* ds_;
  Hyperparams h_;
  MbaTrainOptions opts_;

  InteractionSet train_f_, train_g_, val_;
  MbaModels<Real> models_, best_;
  AdamState<Real> adam_t_, adam_hf_pos_, adam_hf_neg_, adam_hg_pos_, adam_hg_neg_, adam_f_, adam_g_;
  Rng rng_;
  StepFlag flag_ = StepFlag::positive_heads;
  std::uint32_t epoch_ = 0;
  std::uint32_t best_epoch_ = 0;
  std::uint32_t since_best_ = 0;
  double best_val_ = -1.0;
  std::vector<EpochLogRow> log_;
};

/// Full training run: alternating minibatch steps with early stopping on the
/// blended validation Recall@k; returns the best-validation models.
template <typename Real = float>
MbaTrainResult<Real> mba_train(const SplitDataset& ds, FrozenModel<Real> f, FrozenModel<Real> g,
                               const Hyperparams& h, MbaTrainOptions opts = {}) {
  MbaTrainer<Real> trainer(ds, std::move(f), std::move(g), h, std::move(opts));
  return trainer.run();
}

}  // namespace mba
