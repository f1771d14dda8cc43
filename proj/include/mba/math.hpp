#pragma once

#include <algorithm>
#include <cmath>

namespace mba {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + e^x), overflow-safe.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double clamp_prob(double p, double eps) {
  return std::min(1.0 - eps, std::max(eps, p));
}

/// d/ds of clamp(sigmoid(s)); zero where the clamp is active.
inline double clamped_sigmoid_grad(double sig, double eps) {
  if (sig < eps || sig > 1.0 - eps) return 0.0;
  return sig * (1.0 - sig);
}

/// Compensated (Kahan) summation; keeps reductions order-robust.
struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }

  void merge(const KahanSum& other) {
    add(other.sum);
    add(-other.carry);
  }

  double value() const { return sum; }
};

}  // namespace mba
