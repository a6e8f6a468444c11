#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Sparse>
#include <cmath>
#include <string>
#include <vector>

#include "rnnc/covariance.hpp"
#include "rnnc/geometry.hpp"
#include "rnnc/types.hpp"

namespace rnnc {

inline constexpr double kLog2Pi = 1.8378770664093453;

// Sparse Vecchia factorization of a GP at the ordered data points: row i
// regresses point i on its conditioning set, C~^{-1} = (I-A)' D^{-1} (I-A).
struct NNGPFactors {
  double sigma2 = 1.0;
  std::vector<int> order;              // ordered position -> data row
  std::vector<std::vector<int>> nbrs;  // conditioning sets, ordered positions
  std::vector<Vector> coef;            // a_i aligned with nbrs[i]
  Vector condvar;                      // d_ii > 0
  std::uint64_t pattern_id = 0;

  int n() const { return static_cast<int>(order.size()); }
  double logdet() const { return condvar.array().log().sum(); }
};

inline NNGPFactors compute_factors(const LocationSet& locs, const Ordering& ord,
                                   const NeighborIndex& nbr,
                                   const CovarianceParams& p) {
  const int n = locs.n();
  p.validate(locs.dim());
  if (static_cast<int>(ord.order.size()) != n ||
      static_cast<int>(nbr.sets.size()) != n)
    throw validation_error("ordering/neighbor index does not match locations");

  NNGPFactors f;
  f.sigma2 = p.sigma2;
  f.order = ord.order;
  f.nbrs = nbr.sets;
  f.pattern_id = nbr.pattern_id;
  f.coef.resize(n);
  f.condvar.resize(n);
  if (n == 0) return f;

  Matrix pts(n, locs.dim());
  for (int k = 0; k < n; ++k) pts.row(k) = locs.coords.row(ord.order[k]);
  const double jitter = kJitterRel * p.sigma2;

  bool full_prefix = n > 2 && nbr.m >= n - 1;
  for (int k = 0; full_prefix && k < n; ++k)
    full_prefix = static_cast<int>(nbr.sets[k].size()) == k;

  if (full_prefix) {
    // Saturated conditioning sets: one Cholesky of the whole Gram yields
    // every row (a_i from a triangular solve against the leading block),
    // replacing n separate m^3 solves. Output size is already n^2 here.
    auto one = make_location_set(pts);
    Matrix K = cov_block(one, one, p);
    K.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(K);
    if (llt.info() != Eigen::Success)
      throw numeric_error("covariance factorization failed");
    const Matrix& L = llt.matrixLLT();
    f.condvar[0] = p.sigma2;
    f.coef[0] = Vector();
    for (int i = 1; i < n; ++i) {
      Vector a = L.topLeftCorner(i, i)
                     .transpose()
                     .triangularView<Eigen::Upper>()
                     .solve(L.row(i).head(i).transpose());
      // nbrs[i] is distance-sorted; a is in position order 0..i-1
      Vector ai(i);
      for (int j = 0; j < i; ++j) ai[j] = a[f.nbrs[i][j]];
      f.coef[i] = std::move(ai);
      f.condvar[i] = L(i, i) * L(i, i) - jitter;
      if (!(f.condvar[i] > 0.0))
        throw numeric_error("singular neighbor matrix at ordered index " +
                            std::to_string(i));
    }
    return f;
  }

  for (int i = 0; i < n; ++i) {
    const auto& set = nbr.sets[i];
    const int k = static_cast<int>(set.size());
    if (k == 0) {
      f.coef[i] = Vector();
      f.condvar[i] = p.sigma2;
      continue;
    }
    Matrix G(k, k);
    Vector c(k);
    for (int r = 0; r < k; ++r) {
      c[r] = detail::kernel_rows(pts, i, pts, set[r], p);
      G(r, r) = p.sigma2 + jitter;
      for (int s = r + 1; s < k; ++s)
        G(r, s) = G(s, r) = detail::kernel_rows(pts, set[r], pts, set[s], p);
    }
    Eigen::LLT<Matrix> llt(G);
    if (llt.info() != Eigen::Success)
      throw numeric_error("singular neighbor matrix at ordered index " +
                          std::to_string(i));
    f.coef[i] = llt.solve(c);
    f.condvar[i] = p.sigma2 - c.dot(f.coef[i]);
    if (!(f.condvar[i] > 0.0))
      throw numeric_error("singular neighbor matrix at ordered index " +
                          std::to_string(i));
  }
  return f;
}

// v' C~^{-1} v for v in data order.
inline double sparse_quadform(const NNGPFactors& f, const Vector& v) {
  if (v.size() != f.n()) throw validation_error("vector length mismatch");
  double q = 0.0;
  for (int i = 0; i < f.n(); ++i) {
    double r = v[f.order[i]];
    const auto& set = f.nbrs[i];
    for (size_t j = 0; j < set.size(); ++j)
      r -= f.coef[i][j] * v[f.order[set[j]]];
    q += r * r / f.condvar[i];
  }
  return q;
}

// C~^{-1} v in data order, via (I-A)' D^{-1} (I-A) v.
inline Vector apply_precision(const NNGPFactors& f, const Vector& v) {
  if (v.size() != f.n()) throw validation_error("vector length mismatch");
  const int n = f.n();
  Vector w(n);
  for (int i = 0; i < n; ++i) {
    double r = v[f.order[i]];
    const auto& set = f.nbrs[i];
    for (size_t j = 0; j < set.size(); ++j)
      r -= f.coef[i][j] * v[f.order[set[j]]];
    w[i] = r / f.condvar[i];
  }
  Vector out_ord = w;
  for (int i = 0; i < n; ++i) {
    const auto& set = f.nbrs[i];
    for (size_t j = 0; j < set.size(); ++j)
      out_ord[set[j]] -= f.coef[i][j] * w[i];
  }
  Vector out(n);
  for (int i = 0; i < n; ++i) out[f.order[i]] = out_ord[i];
  return out;
}

// Solver for the collapsed covariance C~ + tau2*I. Works through the
// precision M = C~^{-1} + I/tau2 so only one sparse Cholesky per
// factorization is needed: (C~ + tau2*I)^{-1} r = M^{-1} (C~^{-1} r) / tau2
// and log det(C~ + tau2*I) = n log(tau2) + log det(C~) + log det(M).
// The M^{-1} C~^{-1} form avoids the cancellation the textbook
// tau^{-2} I - tau^{-4} M^{-1} difference suffers when tau2 is small.
class CollapsedSolver {
 public:
  void factorize(const NNGPFactors& f, double tau2) {
    if (tau2 < 0.0) throw validation_error("tau2 must be >= 0");
    f_ = &f;
    tau2_ = tau2;
    if (tau2 == 0.0) return;
    const int n = f.n();
    std::vector<Eigen::Triplet<double>> trips;
    size_t budget = n;
    for (int i = 0; i < n; ++i) {
      const size_t k = f.nbrs[i].size() + 1;
      budget += k * k;
    }
    trips.reserve(budget);
    std::vector<int> support;
    std::vector<double> weight;
    for (int i = 0; i < n; ++i) {
      const auto& set = f.nbrs[i];
      support.assign(1, i);
      weight.assign(1, 1.0);
      for (size_t j = 0; j < set.size(); ++j) {
        support.push_back(set[j]);
        weight.push_back(-f.coef[i][j]);
      }
      const double inv_d = 1.0 / f.condvar[i];
      for (size_t r = 0; r < support.size(); ++r)
        for (size_t c = 0; c < support.size(); ++c)
          trips.emplace_back(support[r], support[c],
                             weight[r] * weight[c] * inv_d);
    }
    const double inv_tau2 = 1.0 / tau2;
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, inv_tau2);
    M_.resize(n, n);
    M_.setFromTriplets(trips.begin(), trips.end());
    if (f.pattern_id != analyzed_pattern_ || n != analyzed_n_ ||
        analyzed_pattern_ == 0) {
      ldlt_.analyzePattern(M_);
      analyzed_pattern_ = f.pattern_id;
      analyzed_n_ = n;
    }
    ldlt_.factorize(M_);
    if (ldlt_.info() != Eigen::Success)
      throw numeric_error("collapsed precision factorization failed");
    logdet_m_ = ldlt_.vectorD().array().log().sum();
  }

  bool ready() const { return f_ != nullptr; }
  double tau2() const { return tau2_; }

  double logdet() const {
    check();
    if (tau2_ == 0.0) return f_->logdet();
    return f_->n() * std::log(tau2_) + f_->logdet() + logdet_m_;
  }

  // (C~ + tau2*I)^{-1} r, data order
  Vector solve(const Vector& r) const {
    check();
    Vector u = apply_precision(*f_, r);
    if (tau2_ == 0.0) return u;
    Vector u_ord(u.size());
    for (int i = 0; i < f_->n(); ++i) u_ord[i] = u[f_->order[i]];
    Vector y_ord = ldlt_.solve(u_ord) / tau2_;
    Vector y(u.size());
    for (int i = 0; i < f_->n(); ++i) y[f_->order[i]] = y_ord[i];
    return y;
  }

  Matrix solve(const Matrix& R) const {
    check();
    Matrix out(R.rows(), R.cols());
    for (int j = 0; j < R.cols(); ++j) out.col(j) = solve(Vector(R.col(j)));
    return out;
  }

  double quad(const Vector& r) const { return r.dot(solve(r)); }

  // log N(resid | 0, C~ + tau2*I)
  double loglik(const Vector& resid) const {
    check();
    if (tau2_ == 0.0)
      return -0.5 * (f_->n() * kLog2Pi + f_->logdet() +
                     sparse_quadform(*f_, resid));
    return -0.5 * (f_->n() * kLog2Pi + logdet() + quad(resid));
  }

 private:
  void check() const {
    if (!f_) throw validation_error("solver used before factorize");
  }

  const NNGPFactors* f_ = nullptr;
  double tau2_ = 0.0;
  Eigen::SparseMatrix<double> M_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  std::uint64_t analyzed_pattern_ = 0;
  int analyzed_n_ = -1;
  double logdet_m_ = 0.0;
};

// Gaussian log-density of resid under N(0, C~ + tau2*I).
inline double marginal_loglik(const NNGPFactors& f, const Vector& resid,
                              double tau2) {
  CollapsedSolver solver;
  solver.factorize(f, tau2);
  return solver.loglik(resid);
}

struct ConditionalOptions {
  // condition on the latent field (pure-C neighbor Gram) instead of the
  // noisy observations (C + tau2*I on the Gram diagonal)
  bool latent = false;
};

struct Conditional {
  std::vector<int> neighbors;  // reference rows used
  Vector mean_weights;         // kriging weights over those rows
  double mean = 0.0;
  double var = 0.0;
};

// Conditional of the latent field at `target` given reference residuals.
inline Conditional conditional_at(const Vector& target, const LocationSet& ref,
                                  const Vector& resid,
                                  const CovarianceParams& p, double tau2, int m,
                                  const NeighborQuery& query,
                                  ConditionalOptions opts = {}) {
  p.validate(static_cast<int>(target.size()));
  if (tau2 < 0.0) throw validation_error("tau2 must be >= 0");
  if (resid.size() != ref.n())
    throw validation_error("residual length does not match reference set");
  Conditional out;
  out.var = p.sigma2;
  if (ref.n() == 0 || m <= 0) return out;

  out.neighbors = query.nearest(target, m);
  const int k = static_cast<int>(out.neighbors.size());
  Matrix G(k, k);
  Vector c(k);
  const double jitter = kJitterRel * p.sigma2;
  const double diag = p.sigma2 + (opts.latent ? 0.0 : tau2) + jitter;
  for (int r = 0; r < k; ++r) {
    const int ir = out.neighbors[r];
    G(r, r) = diag;
    Vector sr = ref.coords.row(ir).transpose();
    c[r] = kernel(target, sr, p);
    for (int s = r + 1; s < k; ++s)
      G(r, s) = G(s, r) =
          detail::kernel_rows(ref.coords, ir, ref.coords, out.neighbors[s], p);
  }
  Eigen::LLT<Matrix> llt(G);
  if (llt.info() != Eigen::Success)
    throw numeric_error("singular conditioning set at target");
  out.mean_weights = llt.solve(c);
  out.mean = 0.0;
  for (int r = 0; r < k; ++r)
    out.mean += out.mean_weights[r] * resid[out.neighbors[r]];
  out.var = p.sigma2 - c.dot(out.mean_weights);
  const double floor = 1e-15 * p.sigma2;
  if (out.var < floor) out.var = floor;
  if (out.var > p.sigma2) out.var = p.sigma2;
  return out;
}

inline Conditional conditional_at(const Vector& target, const LocationSet& ref,
                                  const Vector& resid,
                                  const CovarianceParams& p, double tau2, int m,
                                  ConditionalOptions opts = {}) {
  if (ref.n() == 0) {
    p.validate(static_cast<int>(target.size()));
    Conditional out;
    out.var = p.sigma2;
    return out;
  }
  NeighborQuery query(ref);
  return conditional_at(target, ref, resid, p, tau2, m, query, opts);
}

}  // namespace rnnc
