#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "tabshap/error.hpp"

namespace tabshap {

enum class Metric { jsd, kl, l1 };

std::string_view to_string(Metric m);
// "jsd" | "kl" | "l1" (case-insensitive); ContractError otherwise.
Metric parse_metric(std::string_view name);

// Added to every entry of q (then renormalized) before KL.
inline constexpr double kKlSmoothing = 1e-10;
inline constexpr double kSumTolerance = 1e-6;

namespace detail {

template <typename DerivedP, typename DerivedQ>
void check_pair(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  if (p.size() != q.size() || p.size() == 0) {
    throw ContractError("distributions must be non-empty and of equal length");
  }
  auto valid = [](const auto& v) {
    using std::abs;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (!(v[i] >= Scalar(0))) return false;
    }
    return abs(v.sum() - Scalar(1)) <= Scalar(kSumTolerance);
  };
  if (!valid(p) || !valid(q)) {
    throw ContractError("distribution entries must be non-negative and sum to 1");
  }
}

// sum_i a_i ln(a_i / b_i) with 0 ln 0 = 0.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar kl_terms(const Eigen::MatrixBase<DerivedA>& a,
                                   const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  using std::log;
  Scalar acc(0);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] > Scalar(0)) acc += a[i] * log(a[i] / b[i]);
  }
  return acc;
}

}  // namespace detail

// Jensen-Shannon divergence in nats through the mixture m = (p + q) / 2.
// Symmetric, and within [0, ln 2] for any support.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar jsd_nat(const Eigen::MatrixBase<DerivedP>& p,
                                  const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  using std::log;
  detail::check_pair(p, q);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> m = (p + q) / Scalar(2);
  const Scalar js = (detail::kl_terms(p, m) + detail::kl_terms(q, m)) / Scalar(2);
  const Scalar ln2 = log(Scalar(2));
  return std::clamp(js, Scalar(0), ln2);
}

// KL(p || q) in nats after q <- (q + eps) / (1 + n eps).
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_nat(const Eigen::MatrixBase<DerivedP>& p,
                                 const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  detail::check_pair(p, q);
  const Scalar eps(kKlSmoothing);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> smoothed =
      (q.array() + eps).matrix() / (Scalar(1) + eps * Scalar(q.size()));
  return std::max(detail::kl_terms(p, smoothed), Scalar(0));
}

// Sum of absolute differences, in [0, 2].
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar l1(const Eigen::MatrixBase<DerivedP>& p,
                             const Eigen::MatrixBase<DerivedQ>& q) {
  detail::check_pair(p, q);
  return (p - q).cwiseAbs().sum();
}

// Bounded similarity in [0, 1]; identical distributions map to 1.
//   jsd: 1 - min(JSD / ln 2, 1)
//   kl:  1 - min(KL(p_full || p_s) / ln 2, 1)
//   l1:  1 - L1 / 2
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar similarity(Metric metric, const Eigen::MatrixBase<DerivedP>& p_full,
                                     const Eigen::MatrixBase<DerivedQ>& p_s) {
  using Scalar = typename DerivedP::Scalar;
  using std::log;
  const Scalar ln2 = log(Scalar(2));
  detail::check_pair(p_full, p_s);
  // Smoothing would otherwise leave a residue of order eps when p has zeros.
  if (p_full == p_s) return Scalar(1);
  Scalar s;
  switch (metric) {
    case Metric::jsd:
      s = Scalar(1) - std::min(Scalar(jsd_nat(p_full, p_s) / ln2), Scalar(1));
      break;
    case Metric::kl:
      s = Scalar(1) - std::min(Scalar(kl_nat(p_full, p_s) / ln2), Scalar(1));
      break;
    case Metric::l1:
      s = Scalar(1) - l1(p_full, p_s) / Scalar(2);
      break;
    default:
      throw ContractError("unknown metric");
  }
  return std::clamp(s, Scalar(0), Scalar(1));
}

}  // namespace tabshap
