#pragma once

#include <cmath>

#include "rnnc/types.hpp"

namespace rnnc {

// Exponential kernel sigma2 * exp(-sum_j kappa_j |s_j - s'_j|) with a shared
// decay when `decay` has one entry (isotropic, kappa * euclidean distance).
struct CovarianceParams {
  double sigma2 = 1.0;
  Vector decay = Vector::Ones(1);

  void validate(int dim) const {
    if (!(sigma2 > 0.0)) throw validation_error("sigma2 must be > 0");
    if (decay.size() != 1 && decay.size() != dim)
      throw validation_error("decay length must be 1 or the point dimension");
    for (int j = 0; j < decay.size(); ++j)
      if (!(decay[j] > 0.0)) throw validation_error("decay must be > 0");
  }

  bool isotropic() const { return decay.size() == 1; }
};

struct NoiseParams {
  double tau2 = 0.0;      // nugget variance
  double tau2_rel = 0.0;  // nugget relative to sigma2 (tau2 = tau2_rel*sigma2)
};

inline CovarianceParams iso_params(double sigma2, double kappa) {
  CovarianceParams p;
  p.sigma2 = sigma2;
  p.decay = Vector::Constant(1, kappa);
  return p;
}

inline double kernel(const Vector& s, const Vector& s2,
                     const CovarianceParams& p) {
  if (s.size() != s2.size()) throw validation_error("point dimension mismatch");
  p.validate(static_cast<int>(s.size()));
  double expo;
  if (p.isotropic()) {
    expo = p.decay[0] * (s - s2).norm();
  } else {
    expo = 0.0;
    for (int j = 0; j < s.size(); ++j)
      expo += p.decay[j] * std::abs(s[j] - s2[j]);
  }
  return p.sigma2 * std::exp(-expo);
}

namespace detail {

// unvalidated row-vs-row kernel used by the block builders
inline double kernel_rows(const Matrix& A, int i, const Matrix& B, int j,
                          const CovarianceParams& p) {
  double expo = 0.0;
  if (p.isotropic()) {
    double d2 = 0.0;
    for (int c = 0; c < A.cols(); ++c) {
      const double d = A(i, c) - B(j, c);
      d2 += d * d;
    }
    expo = p.decay[0] * std::sqrt(d2);
  } else {
    for (int c = 0; c < A.cols(); ++c)
      expo += p.decay[c] * std::abs(A(i, c) - B(j, c));
  }
  return p.sigma2 * std::exp(-expo);
}

}  // namespace detail

inline Matrix cov_block(const LocationSet& A, const LocationSet& B,
                        const CovarianceParams& p) {
  if (A.dim() != B.dim()) throw validation_error("point dimension mismatch");
  p.validate(A.dim());
  Matrix out(A.n(), B.n());
  const bool square = &A == &B;
  for (int i = 0; i < A.n(); ++i) {
    const int jstart = square ? i : 0;
    for (int j = jstart; j < B.n(); ++j) {
      out(i, j) = detail::kernel_rows(A.coords, i, B.coords, j, p);
      if (square) out(j, i) = out(i, j);
    }
  }
  return out;
}

}  // namespace rnnc
