#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "psnrlab/errors.hpp"
#include "psnrlab/graph.hpp"

namespace psnrlab {

enum class DynamicKind { resgcn, appnp, psnr };

/// Linear residual dynamic: the weight-free recursion each residual family
/// reduces to when the backbone is linearized.
struct LinearDynamic {
  DynamicKind kind = DynamicKind::resgcn;
  Mat N;                         // dense propagation operator
  Mat H;                         // input features
  int k = 1;                     // order
  double alpha = 0.1;            // appnp
  std::vector<Eigen::VectorXd> lambdas;  // psnr: diagonal of Lambda_1..Lambda_{k-1}

  void validate() const {
    if (k < 1) throw ConfigError("LinearDynamic: k must be >= 1");
    if (N.rows() != N.cols() || N.rows() != H.rows())
      throw ShapeError("LinearDynamic: dimension mismatch");
    // alpha = 1 degenerates to the fixed point H_k = H and is allowed here;
    // the closed form needs the open interval.
    if (kind == DynamicKind::appnp && !(alpha > 0.0 && alpha <= 1.0))
      throw ConfigError("LinearDynamic: alpha must be in (0,1]");
    if (kind == DynamicKind::psnr) {
      if (static_cast<int>(lambdas.size()) < k - 1)
        throw ConfigError("LinearDynamic: psnr needs k-1 Lambda diagonals");
      for (const auto& l : lambdas)
        for (Eigen::Index i = 0; i < l.size(); ++i)
          if (!(l(i) > 0.0 && l(i) < 1.0))
            throw ConfigError("LinearDynamic: Lambda entries must lie in (0,1)");
    }
  }
};

/// Exact k-step recursion, the reference the closed forms are checked against.
///   resgcn: H_k = (I + N) H_{k-1}
///   appnp:  H_k = alpha H + (1-alpha) N H_{k-1}
///   psnr:   H_k = H_1 + Lambda_{k-1} (H_1 - N H_{k-1}),  H_1 = N H
inline Mat iterate_linear(const LinearDynamic& dyn) {
  dyn.validate();
  switch (dyn.kind) {
    case DynamicKind::resgcn: {
      Mat Hk = dyn.H;
      for (int s = 0; s < dyn.k; ++s) Hk = Hk + dyn.N * Hk;
      return Hk;
    }
    case DynamicKind::appnp: {
      Mat Hk = dyn.H;
      for (int s = 0; s < dyn.k; ++s) Hk = dyn.alpha * dyn.H + (1.0 - dyn.alpha) * dyn.N * Hk;
      return Hk;
    }
    case DynamicKind::psnr: {
      Mat H1 = dyn.N * dyn.H;
      Mat Hk = H1;
      for (int s = 2; s <= dyn.k; ++s) {
        const Eigen::VectorXd& lam = dyn.lambdas[static_cast<std::size_t>(s - 2)];
        Hk = H1 + lam.asDiagonal() * (H1 - dyn.N * Hk);
      }
      return Hk;
    }
  }
  throw ConfigError("iterate_linear: unknown kind");
}

namespace detail {

inline double binom(int n, int r) {
  double c = 1.0;
  for (int i = 0; i < r; ++i) c = c * (n - i) / (i + 1);
  return c;
}

// Dense LU solve of A X = B with a residual check; near-singularity fails loudly.
inline Mat lu_solve_checked(const Mat& A, const Mat& B, double residual_tol,
                            const std::string& who) {
  Eigen::PartialPivLU<Mat> lu(A);
  Mat X = lu.solve(B);
  double resid = (A * X - B).norm() / std::max(1.0, B.norm());
  if (!X.allFinite() || resid > residual_tol)
    throw NumericError(who + ": solve residual " + std::to_string(resid) +
                       " exceeds tolerance");
  return X;
}

}  // namespace detail

/// Binomial closed form: H_k = sum_{j=0}^{k} C(k,j) N^j H.
inline Mat closed_resgcn(const Mat& N, const Mat& H, int k) {
  if (k < 0 || k > 30) throw std::range_error("closed_resgcn: k must be in [0,30]");
  Mat acc = Mat::Zero(H.rows(), H.cols());
  Mat NjH = H;  // N^0 H
  for (int j = 0; j <= k; ++j) {
    acc += detail::binom(k, j) * NjH;
    if (j < k) NjH = N * NjH;
  }
  return acc;
}

/// Telescoped closed form via the shift T = a ((1-a) N - I)^{-1} H, which
/// turns the recursion into H_k + T = ((1-a) N)^k (H + T). The inverse exists
/// by the alpha-in-(0,1) lemma.
inline Mat closed_appnp(const Mat& N, const Mat& H, double alpha, int k) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("closed_appnp: alpha in (0,1)");
  if (k < 1) throw ConfigError("closed_appnp: k must be >= 1");
  Mat A = (1.0 - alpha) * N - Mat::Identity(N.rows(), N.cols());
  Mat T = alpha * detail::lu_solve_checked(A, H, 1e-9, "closed_appnp T");
  Mat acc = H + T;
  for (int i = 0; i < k; ++i) acc = (1.0 - alpha) * (N * acc);
  return acc - T;
}

/// Telescoping closed form of the posterior-residual recursion:
/// H_k = sum_{i=2}^{k-1} prod_{j=i}^{k-1} Nt_j (M_i - M_{i-1})
///       + prod_{i=1}^{k-1} Nt_i (H_1 + M_1) - M_{k-1},
/// with Nt_i = -Lambda_i N and M_i = -(Lambda_i N + I)^{-1} (I + Lambda_i) H_1.
/// Empty products are the identity.
inline Mat closed_psnr(const Mat& N, const Mat& H,
                       const std::vector<Eigen::VectorXd>& lambdas) {
  const int k = static_cast<int>(lambdas.size()) + 1;
  const Eigen::Index n = N.rows();
  for (const auto& l : lambdas)
    for (Eigen::Index i = 0; i < l.size(); ++i)
      if (!(l(i) > 0.0 && l(i) < 1.0))
        throw ConfigError("closed_psnr: Lambda entries must lie in (0,1)");

  Mat H1 = N * H;
  if (k == 1) return H1;

  auto Nt = [&](int i) -> Mat {
    return -(lambdas[static_cast<std::size_t>(i - 1)].asDiagonal() * N);
  };
  auto M = [&](int i) -> Mat {
    const auto& lam = lambdas[static_cast<std::size_t>(i - 1)];
    Mat A = lam.asDiagonal() * N + Mat::Identity(n, n);
    Mat B = (Mat::Identity(n, n) + Mat(lam.asDiagonal())) * H1;
    return -detail::lu_solve_checked(A, B, 1e-9, "closed_psnr M_" + std::to_string(i));
  };

  // prod_{j=i}^{k-1} Nt_j applied as successive left-multiplications, j ascending.
  auto prod_apply = [&](int i_lo, const Mat& X) -> Mat {
    Mat acc = X;
    for (int j = i_lo; j <= k - 1; ++j) acc = Nt(j) * acc;
    return acc;
  };

  std::vector<Mat> Ms(static_cast<std::size_t>(k));
  for (int i = 1; i <= k - 1; ++i) Ms[static_cast<std::size_t>(i)] = M(i);

  Mat acc = Mat::Zero(H.rows(), H.cols());
  for (int i = 2; i <= k - 1; ++i)
    acc += prod_apply(i, Ms[static_cast<std::size_t>(i)] - Ms[static_cast<std::size_t>(i - 1)]);
  acc += prod_apply(1, H1 + Ms[1]);
  acc -= Ms[static_cast<std::size_t>(k - 1)];
  return acc;
}

/// Invertibility report for a lemma-level condition.
struct ConditionReport {
  bool invertible = false;
  double solve_residual = 0.0;
  double smallest_singular_value = 0.0;
};

/// (1-alpha) N - I is invertible for alpha in (0,1).
inline ConditionReport check_lemma1(const Mat& N, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("check_lemma1: alpha in (0,1)");
  Mat A = (1.0 - alpha) * N - Mat::Identity(N.rows(), N.cols());
  ConditionReport rep;
  Eigen::JacobiSVD<Mat> svd(A);
  rep.smallest_singular_value = svd.singularValues().minCoeff();
  Eigen::PartialPivLU<Mat> lu(A);
  Mat X = lu.solve(Mat::Identity(N.rows(), N.cols()));
  rep.solve_residual = (A * X - Mat::Identity(N.rows(), N.cols())).norm();
  rep.invertible = X.allFinite() && rep.solve_residual < 1e-9;
  return rep;
}

/// Lambda N + I is invertible for diagonal Lambda with entries in (0,1).
inline ConditionReport check_lemma2(const Mat& N, const Eigen::VectorXd& lambda) {
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    if (!(lambda(i) > 0.0 && lambda(i) < 1.0))
      throw ConfigError("check_lemma2: Lambda entries must lie in (0,1)");
  Mat A = lambda.asDiagonal() * N + Mat::Identity(N.rows(), N.cols());
  ConditionReport rep;
  Eigen::JacobiSVD<Mat> svd(A);
  rep.smallest_singular_value = svd.singularValues().minCoeff();
  Eigen::PartialPivLU<Mat> lu(A);
  Mat X = lu.solve(Mat::Identity(N.rows(), N.cols()));
  rep.solve_residual = (A * X - Mat::Identity(N.rows(), N.cols())).norm();
  rep.invertible = X.allFinite() && rep.solve_residual < 1e-9;
  return rep;
}

inline double relative_frobenius_gap(const Mat& A, const Mat& B) {
  return (A - B).norm() / std::max(1.0, B.norm());
}

}  // namespace psnrlab
