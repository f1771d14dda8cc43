#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mba/core.hpp"
#include "mba/math.hpp"
#include "mba/rng.hpp"

namespace mba {

template <typename Real = float>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::uint32_t rows, std::uint32_t cols)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, Real(0)) {}

  std::uint32_t rows() const { return rows_; }
  std::uint32_t cols() const { return cols_; }

  std::span<Real> row(std::uint32_t r) {
    return std::span<Real>(data_.data() + static_cast<std::size_t>(r) * cols_, cols_);
  }
  std::span<const Real> row(std::uint32_t r) const {
    return std::span<const Real>(data_.data() + static_cast<std::size_t>(r) * cols_, cols_);
  }

  std::vector<Real>& data() { return data_; }
  const std::vector<Real>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::uint32_t rows_ = 0;
  std::uint32_t cols_ = 0;
  std::vector<Real> data_;
};

/// User/item embedding tables with dot-product scoring and a clamped sigmoid
/// Bernoulli head. The same structure serves the latent preference model, the
/// four emission models, and the two pretrained behavior models.
template <typename Real = float>
struct FactorModel {
  Matrix<Real> user_emb;
  Matrix<Real> item_emb;

  std::uint32_t num_users() const { return user_emb.rows(); }
  std::uint32_t num_items() const { return item_emb.rows(); }
  std::uint32_t dim() const { return user_emb.cols(); }

  double raw_score(UserId u, ItemId i) const {
    check_ids(u, i);
    const auto pu = user_emb.row(u);
    const auto qi = item_emb.row(i);
    double acc = 0.0;
    for (std::uint32_t k = 0; k < dim(); ++k) acc += static_cast<double>(pu[k]) * qi[k];
    return acc;
  }

  /// sigmoid(raw_score) clamped to [eps, 1-eps].
  double prob(UserId u, ItemId i, double eps) const {
    return clamp_prob(sigmoid(raw_score(u, i)), eps);
  }

  /// Raw scores of every item for one user.
  void score_all_items(UserId u, std::span<double> out) const {
    check_ids(u, 0);
    if (out.size() != num_items()) {
      throw std::invalid_argument("score_all_items: output span has wrong length");
    }
    const auto pu = user_emb.row(u);
    for (ItemId i = 0; i < num_items(); ++i) {
      const auto qi = item_emb.row(i);
      double acc = 0.0;
      for (std::uint32_t k = 0; k < dim(); ++k) acc += static_cast<double>(pu[k]) * qi[k];
      out[i] = acc;
    }
  }

  bool operator==(const FactorModel&) const = default;

 private:
  void check_ids(UserId u, ItemId i) const {
    if (u >= num_users() || i >= num_items()) {
      throw std::out_of_range("FactorModel: (" + std::to_string(u) + ", " + std::to_string(i) +
                              ") out of range for " + std::to_string(num_users()) + " users x " +
                              std::to_string(num_items()) + " items");
    }
  }
};

template <typename Real>
class MbaTrainer;  // fwd; granted mutable access to FrozenModel in co-training mode

/// Read-only handle over a trained model: scoring only, no update path.
template <typename Real = float>
class FrozenModel {
 public:
  FrozenModel() = default;
  explicit FrozenModel(FactorModel<Real> m) : model_(std::move(m)) {}

  std::uint32_t num_users() const { return model_.num_users(); }
  std::uint32_t num_items() const { return model_.num_items(); }
  std::uint32_t dim() const { return model_.dim(); }

  double raw_score(UserId u, ItemId i) const { return model_.raw_score(u, i); }
  double prob(UserId u, ItemId i, double eps) const { return model_.prob(u, i, eps); }
  void score_all_items(UserId u, std::span<double> out) const { model_.score_all_items(u, out); }

  const FactorModel<Real>& model() const { return model_; }

 private:
  friend class MbaTrainer<Real>;
  FactorModel<Real>& mutable_model() { return model_; }

  FactorModel<Real> model_;
};

template <typename Real>
FrozenModel<Real> freeze(FactorModel<Real> m) {
  return FrozenModel<Real>(std::move(m));
}

/// beta * P_t(u,i) + (1 - beta) * P_f(u,i): the inference-time ranking score.
template <typename Real>
double blended_score(const FactorModel<Real>& t, const FrozenModel<Real>& f, UserId u, ItemId i,
                     double beta, double eps) {
  return beta * t.prob(u, i, eps) + (1.0 - beta) * f.prob(u, i, eps);
}

/// Entries ~ N(0, (0.1/sqrt(dim))^2), deterministic under seed.
template <typename Real = float>
FactorModel<Real> init_model(std::uint32_t num_users, std::uint32_t num_items, std::uint32_t dim,
                             std::uint64_t seed) {
  if (num_users == 0 || num_items == 0 || dim == 0) {
    throw std::invalid_argument("init_model: num_users, num_items and dim must be positive");
  }
  FactorModel<Real> m{Matrix<Real>(num_users, dim), Matrix<Real>(num_items, dim)};
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  const double scale = 0.1 / std::sqrt(static_cast<double>(dim));
  for (auto& v : m.user_emb.data()) v = static_cast<Real>(scale * normal01(rng));
  for (auto& v : m.item_emb.data()) v = static_cast<Real>(scale * normal01(rng));
  return m;
}

/// Per-row gradient accumulator for one model. Rows are keyed by index in an
/// ordered map so application order is always the same; values accumulate in
/// double regardless of the model's storage type.
class SparseGrad {
 public:
  explicit SparseGrad(std::uint32_t dim) : dim_(dim) {}

  std::uint32_t dim() const { return dim_; }
  bool empty() const { return user_rows_.empty() && item_rows_.empty(); }

  std::vector<double>& user_row(std::uint32_t u) { return touch(user_rows_, u); }
  std::vector<double>& item_row(std::uint32_t i) { return touch(item_rows_, i); }

  const std::map<std::uint32_t, std::vector<double>>& user_rows() const { return user_rows_; }
  const std::map<std::uint32_t, std::vector<double>>& item_rows() const { return item_rows_; }

  /// row += scale * src
  template <typename Real>
  static void axpy(std::vector<double>& row, double scale, std::span<const Real> src) {
    for (std::size_t k = 0; k < row.size(); ++k) row[k] += scale * static_cast<double>(src[k]);
  }

 private:
  std::vector<double>& touch(std::map<std::uint32_t, std::vector<double>>& rows, std::uint32_t r) {
    auto [it, inserted] = rows.try_emplace(r);
    if (inserted) it->second.assign(dim_, 0.0);
    return it->second;
  }

  std::uint32_t dim_;
  std::map<std::uint32_t, std::vector<double>> user_rows_, item_rows_;
};

/// Adam moments shaped like a FactorModel; one shared step counter.
template <typename Real = float>
struct AdamState {
  Matrix<Real> m_user, v_user, m_item, v_item;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;

  AdamState() = default;
  AdamState(std::uint32_t num_users, std::uint32_t num_items, std::uint32_t dim)
      : m_user(num_users, dim), v_user(num_users, dim), m_item(num_items, dim), v_item(num_items, dim) {}

  static AdamState like(const FactorModel<Real>& m) {
    return AdamState(m.num_users(), m.num_items(), m.dim());
  }
};

/// Bias-corrected Adam on the touched rows only; l2 * param is added to each
/// gradient before the update. Throws on non-finite gradients.
template <typename Real>
void adam_step(FactorModel<Real>& model, AdamState<Real>& state, const SparseGrad& grads,
               double lr, double l2) {
  if (grads.dim() != model.dim()) {
    throw std::invalid_argument("adam_step: gradient dim " + std::to_string(grads.dim()) +
                                " != model dim " + std::to_string(model.dim()));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  auto apply = [&](Matrix<Real>& param, Matrix<Real>& m, Matrix<Real>& v,
                   const std::map<std::uint32_t, std::vector<double>>& rows, const char* side) {
    for (const auto& [r, grad] : rows) {
      if (r >= param.rows()) {
        throw std::out_of_range(std::string("adam_step: ") + side + " row " + std::to_string(r) +
                                " out of range");
      }
      auto p = param.row(r);
      auto mr = m.row(r);
      auto vr = v.row(r);
      for (std::uint32_t k = 0; k < param.cols(); ++k) {
        const double g = grad[k] + l2 * static_cast<double>(p[k]);
        if (!std::isfinite(g)) {
          throw std::runtime_error(std::string("adam_step: non-finite gradient at ") + side +
                                   " row " + std::to_string(r) + ", dim " + std::to_string(k));
        }
        const double mk = state.beta1 * static_cast<double>(mr[k]) + (1.0 - state.beta1) * g;
        const double vk = state.beta2 * static_cast<double>(vr[k]) + (1.0 - state.beta2) * g * g;
        mr[k] = static_cast<Real>(mk);
        vr[k] = static_cast<Real>(vk);
        const double update = lr * (mk / bc1) / (std::sqrt(vk / bc2) + state.eps_adam);
        p[k] = static_cast<Real>(static_cast<double>(p[k]) - update);
      }
    }
  };
  apply(model.user_emb, state.m_user, state.v_user, grads.user_rows(), "user");
  apply(model.item_emb, state.m_item, state.v_item, grads.item_rows(), "item");
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "MBA1", little-endian u32 num_users, num_items,
// dim, then the user table row-major as little-endian f32, then the item
// table. Bit-exact round trip for float models.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32_le(std::string& out, float v) {
  put_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

inline float get_f32_le(const unsigned char* p) {
  return std::bit_cast<float>(get_u32_le(p));
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'M', 'B', 'A', '1'};

/// 4 magic + 12 header + 4 bytes per stored float.
inline std::uint64_t checkpoint_byte_size(std::uint64_t num_users, std::uint64_t num_items,
                                          std::uint64_t dim) {
  return 16 + 4 * dim * (num_users + num_items);
}

template <typename Real>
void save_checkpoint(const FactorModel<Real>& m, const std::string& path) {
  std::string buf;
  buf.reserve(checkpoint_byte_size(m.num_users(), m.num_items(), m.dim()));
  buf.append(kCheckpointMagic, 4);
  detail::put_u32_le(buf, m.num_users());
  detail::put_u32_le(buf, m.num_items());
  detail::put_u32_le(buf, m.dim());
  for (Real v : m.user_emb.data()) detail::put_f32_le(buf, static_cast<float>(v));
  for (Real v : m.item_emb.data()) detail::put_f32_le(buf, static_cast<float>(v));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write to checkpoint: " + path);
}

template <typename Real = float>
FactorModel<Real> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 16 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("not an MBA1 checkpoint: " + path);
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const std::uint32_t nu = detail::get_u32_le(p + 4);
  const std::uint32_t ni = detail::get_u32_le(p + 8);
  const std::uint32_t dim = detail::get_u32_le(p + 12);
  if (nu == 0 || ni == 0 || dim == 0) {
    throw std::runtime_error("invalid checkpoint dimensions in " + path);
  }
  // overflow guard before sizing anything from untrusted header fields
  const std::uint64_t rows = static_cast<std::uint64_t>(nu) + ni;
  const std::uint64_t max_entries = (std::numeric_limits<std::uint64_t>::max() - 16) / 4;
  if (dim > max_entries / rows) {
    throw std::runtime_error("checkpoint dimension overflow in " + path);
  }
  const std::uint64_t expected = checkpoint_byte_size(nu, ni, dim);
  if (buf.size() != expected) {
    throw std::runtime_error("truncated or oversized checkpoint " + path + ": expected " +
                             std::to_string(expected) + " bytes, found " +
                             std::to_string(buf.size()));
  }

  FactorModel<Real> m{Matrix<Real>(nu, dim), Matrix<Real>(ni, dim)};
  std::size_t off = 16;
  for (auto& v : m.user_emb.data()) {
    v = static_cast<Real>(detail::get_f32_le(p + off));
    off += 4;
  }
  for (auto& v : m.item_emb.data()) {
    v = static_cast<Real>(detail::get_f32_le(p + off));
    off += 4;
  }
  for (Real v : m.user_emb.data()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::runtime_error("non-finite value in checkpoint " + path);
    }
  }
  for (Real v : m.item_emb.data()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::runtime_error("non-finite value in checkpoint " + path);
    }
  }
  return m;
}

}  // namespace mba
