#pragma once

// Dense brute-force reference model for tests and small-instance equivalence
// checks. Nothing here is used by the fitting paths.

#include <Eigen/Cholesky>
#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rnnc/covariance.hpp"
#include "rnnc/types.hpp"

namespace rnnc {

inline constexpr int kOracleMaxLevels = 4;
inline constexpr int kOracleMaxPoints = 500;

// Full multi-fidelity model at desk scale: level t draws
//   y_t(s) = zeta_{t-1}(s) y_{t-1}(s) + h_t(s)' beta_t + w_t(s),
//   z_t(s) = y_t(s) + eps_t,  eps_t ~ N(0, tau2_t),
// with w_t ~ GP(0, C_t) independent across levels.
struct OracleModel {
  std::vector<LocationSet> locs;      // S_1..S_T
  std::vector<BasisFn> h;             // trend basis per level
  std::vector<Vector> beta;
  std::vector<BasisFn> g;             // scale basis; entry j-1 serves zeta_j
  std::vector<Vector> gamma;
  std::vector<CovarianceParams> cov;  // theta_t per level
  std::vector<double> tau2;

  int T() const { return static_cast<int>(locs.size()); }

  int total() const {
    int n = 0;
    for (const auto& l : locs) n += l.n();
    return n;
  }

  void validate() const {
    const int t = T();
    if (t < 1) throw validation_error("oracle model needs at least one level");
    if (t > kOracleMaxLevels || total() > kOracleMaxPoints)
      throw validation_error("oracle scale guard exceeded");
    if (h.size() != locs.size() || beta.size() != locs.size() ||
        cov.size() != locs.size() || tau2.size() != locs.size())
      throw validation_error("oracle model per-level fields misaligned");
    if (g.size() + 1 != locs.size() || gamma.size() + 1 != locs.size())
      throw validation_error("oracle model needs T-1 scale bases");
  }

  // zeta_j(s) for paper-style j in 1..T-1
  double zeta(int j, const Vector& s) const {
    return g[j - 1](s).dot(gamma[j - 1]);
  }

  // product of zeta_j(s) for j = from..to (empty when from > to)
  double zeta_prod(int from, int to, const Vector& s) const {
    double prod = 1.0;
    for (int j = from; j <= to; ++j) prod *= zeta(j, s);
    return prod;
  }
};

namespace detail {

inline std::vector<std::unordered_map<std::string, int>> membership_maps(
    const OracleModel& mdl) {
  std::vector<std::unordered_map<std::string, int>> maps(mdl.T());
  for (int t = 0; t < mdl.T(); ++t)
    for (int k = 0; k < mdl.locs[t].n(); ++k)
      maps[t].emplace(location_key(mdl.locs[t], k), k);
  return maps;
}

}  // namespace detail

// Stacked mean vector; w (optional) supplies realized latent fields aligned
// with locs[i], entering exactly where the level-i field was observed.
inline Vector dense_mean(const OracleModel& mdl,
                         const std::vector<Vector>* w = nullptr) {
  mdl.validate();
  if (w && w->size() != mdl.locs.size())
    throw validation_error("latent fields misaligned with levels");
  auto member = detail::membership_maps(mdl);
  Vector mu(mdl.total());
  int row = 0;
  for (int t = 1; t <= mdl.T(); ++t) {
    const auto& S = mdl.locs[t - 1];
    for (int k = 0; k < S.n(); ++k, ++row) {
      Vector s = S.coords.row(k).transpose();
      double val = mdl.h[t - 1](s).dot(mdl.beta[t - 1]);
      if (w) val += (*w)[t - 1][k];
      for (int i = 1; i < t; ++i) {
        double term = mdl.h[i - 1](s).dot(mdl.beta[i - 1]);
        if (w) {
          auto hit = member[i - 1].find(point_key(s));
          if (hit != member[i - 1].end()) term += (*w)[i - 1][hit->second];
        }
        val += mdl.zeta_prod(i, t - 1, s) * term;
      }
      mu[row] = val;
    }
  }
  return mu;
}

enum class CovMode {
  Generative,  // derived from the recursion; the trusted oracle
  AsPrinted    // literal transcription, membership indicators included
};

// Stacked (sum n_t)^2 covariance of the observations z.
inline Matrix dense_cov(const OracleModel& mdl, CovMode mode) {
  mdl.validate();
  auto member = detail::membership_maps(mdl);
  const int N = mdl.total();
  Matrix lambda(N, N);
  std::vector<int> offset(mdl.T() + 1, 0);
  for (int t = 0; t < mdl.T(); ++t) offset[t + 1] = offset[t] + mdl.locs[t].n();

  auto in_level = [&](const Vector& s, int level1b) {
    return member[level1b - 1].count(point_key(s)) > 0;
  };

  for (int t = 1; t <= mdl.T(); ++t)
    for (int u = t; u <= mdl.T(); ++u) {
      const auto& St = mdl.locs[t - 1];
      const auto& Su = mdl.locs[u - 1];
      for (int k = 0; k < St.n(); ++k)
        for (int l = 0; l < Su.n(); ++l) {
          Vector sk = St.coords.row(k).transpose();
          Vector sl = Su.coords.row(l).transpose();
          double val = 0.0;
          if (mode == CovMode::Generative) {
            for (int i = 1; i <= t; ++i)
              val += mdl.zeta_prod(i, t - 1, sk) * mdl.zeta_prod(i, u - 1, sl) *
                     kernel(sk, sl, mdl.cov[i - 1]);
            if (t == u && k == l) val += mdl.tau2[t - 1];
          } else if (t == u) {
            // within-level: the printed sum stops at t-1 and would leave
            // level 1 with no field variance at all; the own-level C_t term
            // the recursion implies is restored here
            for (int i = 1; i < t; ++i) {
              if (in_level(sk, i) && in_level(sl, i)) continue;
              val += mdl.zeta_prod(i, t - 1, sk) * mdl.zeta_prod(i, t - 1, sl) *
                     kernel(sk, sl, mdl.cov[i - 1]);
            }
            val += kernel(sk, sl, mdl.cov[t - 1]);
            if (k == l) val += mdl.tau2[t - 1];
          } else {
            // cross-level, printed form: products truncate at min(t,u)-1 and
            // the min-level kernel carries no zeta factor
            for (int i = 1; i < t; ++i) {
              if (in_level(sk, i) && in_level(sl, i)) continue;
              val += mdl.zeta_prod(i, t - 1, sk) * mdl.zeta_prod(i, t - 1, sl) *
                     kernel(sk, sl, mdl.cov[i - 1]);
            }
            if (!(in_level(sk, t) && in_level(sl, t)))
              val += kernel(sk, sl, mdl.cov[t - 1]);
          }
          lambda(offset[t - 1] + k, offset[u - 1] + l) = val;
          lambda(offset[u - 1] + l, offset[t - 1] + k) = val;
        }
    }
  return lambda;
}

// log N(z | mu, cov) by dense Cholesky.
inline double dense_loglik(const Vector& z, const Vector& mu,
                           const Matrix& cov) {
  const int n = static_cast<int>(z.size());
  if (n > kOracleMaxPoints) throw validation_error("oracle scale guard exceeded");
  if (mu.size() != n || cov.rows() != n || cov.cols() != n)
    throw validation_error("dimension mismatch");
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success)
    throw numeric_error("dense covariance not positive definite");
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i));
  Vector r = z - mu;
  return -0.5 * (n * std::log(2.0 * M_PI) + logdet + r.dot(llt.solve(r)));
}

struct DenseConditional {
  double mean = 0.0;
  double var = 0.0;
};

// Gaussian conditioning of one target on jointly normal observations:
// target ~ N(prior_mean, prior_var), cov(target, obs) = cross.
inline DenseConditional dense_krige(const Vector& resid, const Matrix& cov_obs,
                                    const Vector& cross, double prior_mean,
                                    double prior_var) {
  const int n = static_cast<int>(resid.size());
  if (n > kOracleMaxPoints) throw validation_error("oracle scale guard exceeded");
  if (cov_obs.rows() != n || cov_obs.cols() != n || cross.size() != n)
    throw validation_error("dimension mismatch");
  if (n == 0) return {prior_mean, prior_var};
  Eigen::LLT<Matrix> llt(cov_obs);
  if (llt.info() != Eigen::Success)
    throw numeric_error("dense covariance not positive definite");
  Vector w = llt.solve(cross);
  return {prior_mean + w.dot(resid), prior_var - w.dot(cross)};
}

}  // namespace rnnc
