#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rnnc/cokrige.hpp"
#include "rnnc/covariance.hpp"
#include "rnnc/geometry.hpp"
#include "rnnc/nngp.hpp"
#include "rnnc/parallel.hpp"
#include "rnnc/rng.hpp"
#include "rnnc/types.hpp"

namespace rnnc {

// Gaussian prior for a coefficient block. In the conjugate fit the prior
// covariance is sigma2 * V (the process variance scales it); the sampler uses
// V directly.
struct NormalPrior {
  Vector mu;
  Matrix V;

  int dim() const { return static_cast<int>(mu.size()); }

  void validate() const {
    if (V.rows() != dim() || V.cols() != dim())
      throw validation_error("prior covariance shape mismatch");
    if (dim() == 0) return;
    Eigen::LLT<Matrix> llt(V);
    if (llt.info() != Eigen::Success)
      throw validation_error("prior covariance not positive definite");
  }
};

struct InverseGammaPrior {
  double a = 2.0;
  double b = 1.0;

  void validate() const {
    if (!(a > 0.0) || !(b > 0.0))
      throw validation_error("inverse-gamma prior needs a > 0 and b > 0");
  }
};

struct ConjugatePriors {
  NormalPrior beta;
  NormalPrior gamma;  // ignored when the level has no scale basis
  InverseGammaPrior sigma2;
};

// Hyperparameter candidates: (decay kappa, noise-to-signal ratio tau2_rel).
struct CandidateGrid {
  std::vector<std::pair<double, double>> entries;

  void validate() const {
    if (entries.empty()) throw validation_error("empty candidate grid");
    for (const auto& e : entries)
      if (!(e.first > 0.0) || !(e.second > 0.0))
        throw validation_error("candidate grid entries must be positive");
  }
};

// Log-spaced grid over both axes, kappa-major.
inline CandidateGrid log_grid(double kappa_lo = 0.1, double kappa_hi = 25.0,
                              int n_kappa = 20, double tau2_lo = 5e-4,
                              double tau2_hi = 0.4, int n_tau2 = 10) {
  if (!(kappa_lo > 0.0) || !(tau2_lo > 0.0) || kappa_hi < kappa_lo ||
      tau2_hi < tau2_lo || n_kappa < 1 || n_tau2 < 1)
    throw validation_error("invalid grid specification");
  auto logspace = [](double lo, double hi, int n) {
    std::vector<double> v(n);
    if (n == 1) {
      v[0] = lo;
      return v;
    }
    const double llo = std::log(lo), lhi = std::log(hi);
    for (int i = 0; i < n; ++i)
      v[i] = std::exp(llo + (lhi - llo) * i / (n - 1));
    return v;
  };
  CandidateGrid grid;
  grid.entries.reserve(static_cast<size_t>(n_kappa) * n_tau2);
  for (double k : logspace(kappa_lo, kappa_hi, n_kappa))
    for (double t : logspace(tau2_lo, tau2_hi, n_tau2))
      grid.entries.emplace_back(k, t);
  return grid;
}

namespace detail {

inline Matrix spd_inverse(const Matrix& a, const char* what) {
  if (a.size() == 0) return a;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw numeric_error(what);
  return llt.solve(Matrix::Identity(a.rows(), a.cols()));
}

// Prior precision pieces reused across the posterior formulas.
struct PriorPrecision {
  Matrix Vinv;
  Vector Vinv_mu;
  double mu_quad = 0.0;  // mu' V^{-1} mu

  explicit PriorPrecision(const NormalPrior& prior) {
    prior.validate();
    Vinv = spd_inverse(prior.V, "prior covariance not invertible");
    Vinv_mu = prior.dim() > 0 ? Vector(Vinv * prior.mu) : Vector();
    mu_quad = prior.dim() > 0 ? prior.mu.dot(Vinv_mu) : 0.0;
  }
};

}  // namespace detail

struct GammaPosterior {
  Vector mu_tilde;  // precision-weighted mean vector
  Matrix V_tilde;   // posterior covariance at unit sigma2
  Vector mean() const { return V_tilde * mu_tilde; }
};

// Scale-coefficient posterior given the trend coefficients, on the
// correlation-scale collapsed covariance Sigma = R~ + tau2_rel*I:
//   V~ = (V^-1 + W' Sigma^-1 W)^-1,  mu~ = V^-1 mu + W' Sigma^-1 (z - H beta)
// with W = diag(yprev) * G. The posterior is N(V~ mu~, sigma2 V~).
inline GammaPosterior posterior_gamma(const CollapsedSolver& sigma,
                                      const Vector& z, const Matrix& H,
                                      const Vector& beta, const Matrix& W,
                                      const NormalPrior& prior) {
  if (W.cols() == 0)
    throw validation_error("scale posterior requires a scale basis");
  if (prior.dim() != W.cols())
    throw validation_error("scale prior dimension mismatch");
  detail::PriorPrecision pg(prior);
  GammaPosterior out;
  if (z.size() == 0) {
    out.mu_tilde = pg.Vinv_mu;
    out.V_tilde = prior.V;
    return out;
  }
  Matrix SinvW = sigma.solve(W);
  Vector r = H.cols() > 0 ? Vector(z - H * beta) : z;
  out.V_tilde = detail::spd_inverse(
      Matrix(pg.Vinv + W.transpose() * SinvW),
      "scale posterior precision not positive definite");
  out.mu_tilde = pg.Vinv_mu + SinvW.transpose() * r;
  return out;
}

struct BetaPosterior {
  Vector mu_tilde;
  Matrix V_tilde;
  Vector mean() const { return V_tilde * mu_tilde; }
};

// Trend-coefficient posterior with the scale coefficients integrated out:
//   V~ = (V^-1 + H' Sigma^-1 H - M' Vg~ M)^-1,   M = W' Sigma^-1 H
//   mu~ = V^-1 mu + H' Sigma^-1 z - M' Vg~ u,    u = Vg^-1 mu_g + W' Sigma^-1 z
// Levels without a scale basis use the reduced form (no correction terms).
inline BetaPosterior posterior_beta(const CollapsedSolver& sigma,
                                    const Vector& z, const Matrix& H,
                                    const Matrix& W,
                                    const NormalPrior& beta_prior,
                                    const NormalPrior& gamma_prior) {
  if (H.cols() == 0)
    throw validation_error("trend posterior requires a trend basis");
  if (beta_prior.dim() != H.cols())
    throw validation_error("trend prior dimension mismatch");
  detail::PriorPrecision pb(beta_prior);
  BetaPosterior out;
  if (z.size() == 0) {
    out.mu_tilde = pb.Vinv_mu;
    out.V_tilde = beta_prior.V;
    return out;
  }
  Matrix SinvH = sigma.solve(H);
  Vector Sinvz = sigma.solve(z);
  Matrix prec = pb.Vinv + H.transpose() * SinvH;
  Vector mu = pb.Vinv_mu + H.transpose() * Sinvz;
  if (W.cols() > 0) {
    if (gamma_prior.dim() != W.cols())
      throw validation_error("scale prior dimension mismatch");
    detail::PriorPrecision pg(gamma_prior);
    Matrix SinvW = sigma.solve(W);
    Matrix Vg = detail::spd_inverse(
        Matrix(pg.Vinv + W.transpose() * SinvW),
        "scale posterior precision not positive definite");
    Matrix M = W.transpose() * SinvH;  // q x p
    Vector u = pg.Vinv_mu + SinvW.transpose() * z;
    prec -= M.transpose() * Vg * M;
    mu -= M.transpose() * (Vg * u);
  }
  out.V_tilde = detail::spd_inverse(
      prec, "trend posterior precision not positive definite");
  out.mu_tilde = mu;
  return out;
}

struct Sigma2Posterior {
  double a_star = 0.0;
  double b_star = 0.0;

  // posterior point estimate b*/(a*-1)
  double mean() const {
    if (!(a_star > 1.0))
      throw validation_error(
          "posterior mean of sigma2 undefined: a* must exceed 1");
    return b_star / (a_star - 1.0);
  }
};

// Marginal posterior of the process variance:
//   a* = a + n/2
//   b* = b + (z'S z + mu_b'Vb^-1 mu_b + mu_g'Vg^-1 mu_g
//             - mu~_b' V~_b mu~_b - u' Vg~ u) / 2
// where S = Sigma^-1 and u is the gamma precision-weighted data vector.
inline Sigma2Posterior posterior_sigma2(const CollapsedSolver& sigma,
                                        const Vector& z, const Matrix& H,
                                        const Matrix& W,
                                        const ConjugatePriors& priors) {
  priors.sigma2.validate();
  Sigma2Posterior out;
  out.a_star = priors.sigma2.a + 0.5 * z.size();
  if (z.size() == 0) {
    out.b_star = priors.sigma2.b;
    return out;
  }
  double bracket = sigma.quad(z);
  if (H.cols() > 0) {
    detail::PriorPrecision pb(priors.beta);
    BetaPosterior bp = posterior_beta(sigma, z, H, W, priors.beta,
                                      priors.gamma);
    bracket += pb.mu_quad - bp.mu_tilde.dot(bp.V_tilde * bp.mu_tilde);
  }
  if (W.cols() > 0) {
    detail::PriorPrecision pg(priors.gamma);
    Matrix SinvW = sigma.solve(W);
    Matrix Vg = detail::spd_inverse(
        Matrix(pg.Vinv + W.transpose() * SinvW),
        "scale posterior precision not positive definite");
    Vector u = pg.Vinv_mu + SinvW.transpose() * z;
    bracket += pg.mu_quad - u.dot(Vg * u);
  }
  out.b_star = priors.sigma2.b + 0.5 * bracket;
  if (!(out.b_star > 0.0))
    throw numeric_error("posterior scale of sigma2 not positive");
  return out;
}

// All three posteriors of one level at fixed hyperparameters, sharing the
// collapsed solves. gamma_hat is the conditional posterior mean at the
// plugged-in beta_hat.
struct LevelEstimate {
  Vector beta_hat;
  Matrix beta_cov_unit;  // V~_beta (multiply by sigma2 for the covariance)
  Vector gamma_hat;
  Matrix gamma_cov_unit;
  double a_star = 0.0;
  double b_star = 0.0;
  double sigma2_hat = 0.0;
};

inline LevelEstimate estimate_level(const CollapsedSolver& sigma,
                                    const Vector& z, const Matrix& H,
                                    const Matrix& W,
                                    const ConjugatePriors& priors) {
  LevelEstimate est;
  Sigma2Posterior s2 = posterior_sigma2(sigma, z, H, W, priors);
  est.a_star = s2.a_star;
  est.b_star = s2.b_star;
  est.sigma2_hat = s2.mean();
  BetaPosterior bp = posterior_beta(sigma, z, H, W, priors.beta,
                                    priors.gamma);
  est.beta_hat = bp.mean();
  est.beta_cov_unit = bp.V_tilde;
  if (W.cols() > 0) {
    GammaPosterior gp = posterior_gamma(sigma, z, H, est.beta_hat, W,
                                        priors.gamma);
    est.gamma_hat = gp.mean();
    est.gamma_cov_unit = gp.V_tilde;
  }
  return est;
}

struct KfoldOptions {
  int K = 5;
  int m = 10;
  std::uint64_t seed = 0;
  int threads = 1;
  OrderingStrategy ordering = OrderingStrategy::CoordSort;
};

struct CvSelection {
  int index = -1;         // row of cv_table / grid entry selected
  double kappa = 0.0;
  double tau2_rel = 0.0;
  Matrix cv_table;        // columns: kappa, tau2_rel, rmspe
};

// Winning row of a (kappa, tau2_rel, score) table: smallest score, ties to
// the smaller nugget ratio and then the smaller decay.
inline int select_candidate(const Matrix& cv_table) {
  if (cv_table.rows() < 1 || cv_table.cols() != 3)
    throw validation_error("selection table needs kappa, tau2, score columns");
  int best = 0;
  for (int c = 1; c < cv_table.rows(); ++c) {
    const double r = cv_table(c, 2), rb = cv_table(best, 2);
    const bool better =
        r < rb ||
        (r == rb && (cv_table(c, 1) < cv_table(best, 1) ||
                     (cv_table(c, 1) == cv_table(best, 1) &&
                      cv_table(c, 0) < cv_table(best, 0))));
    if (better) best = c;
  }
  return best;
}

namespace detail {

// Seeded Fisher-Yates with the project RNG so fold assignment is
// reproducible across toolchains.
inline std::vector<int> shuffled_indices(int n, std::uint64_t key) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  RngStream rng(key);
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(
        (static_cast<unsigned __int128>(rng.raw()) *
         static_cast<unsigned __int128>(i + 1)) >>
        64);
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

struct FoldData {
  LocationSet train_locs;
  Vector z;
  Matrix H;
  Matrix W;
  std::vector<int> heldout;  // data rows of this fold
  Ordering ord;
  NeighborIndex nbr;
  std::unique_ptr<NeighborQuery> query;
};

}  // namespace detail

// K-fold cross-validated grid search for (kappa, tau2_rel) at one level.
// Folds come from a seeded shuffle (fold = shuffled position mod K); each
// candidate is scored by the root of the mean of per-fold mean squared
// prediction errors; ties prefer smaller tau2_rel, then smaller kappa.
inline CvSelection kfold_select(const FidelityDataset& ds,
                                const Vector* yprev_mean,
                                const CandidateGrid& grid,
                                const ConjugatePriors& priors,
                                const KfoldOptions& opts) {
  ds.validate();
  grid.validate();
  const int n = ds.n();
  if (opts.K < 2 || opts.K > n)
    throw validation_error("fold count must be between 2 and the level size");
  if (opts.m < 1) throw validation_error("neighbor count must be >= 1");
  if (ds.level >= 2) {
    if (yprev_mean == nullptr)
      throw validation_error("missing previous-level field at level " +
                             std::to_string(ds.level));
    if (yprev_mean->size() != n)
      throw validation_error("previous-level field length mismatch");
  }

  const int q = ds.q();
  Matrix W_full(n, q);
  if (q > 0)
    W_full = (ds.G.array().colwise() * yprev_mean->array()).matrix();

  // fold of data row r
  std::vector<int> fold(n);
  {
    std::vector<int> perm = detail::shuffled_indices(
        n, stream_key(opts.seed, static_cast<std::uint64_t>(ds.level),
                      0xF01DULL));
    for (int i = 0; i < n; ++i) fold[perm[i]] = i % opts.K;
  }

  std::vector<detail::FoldData> folds(opts.K);
  for (int k = 0; k < opts.K; ++k) {
    detail::FoldData& fd = folds[k];
    std::vector<int> train;
    train.reserve(n);
    for (int r = 0; r < n; ++r)
      (fold[r] == k ? fd.heldout : train).push_back(r);
    const int ntr = static_cast<int>(train.size());
    Matrix coords(ntr, ds.locs.dim());
    fd.z = Vector(ntr);
    fd.H = Matrix(ntr, ds.p());
    fd.W = Matrix(ntr, q);
    for (int i = 0; i < ntr; ++i) {
      coords.row(i) = ds.locs.coords.row(train[i]);
      fd.z[i] = ds.z[train[i]];
      fd.H.row(i) = ds.H.row(train[i]);
      if (q > 0) fd.W.row(i) = W_full.row(train[i]);
    }
    fd.train_locs = make_location_set(std::move(coords));
    fd.ord = order_locations(fd.train_locs, opts.ordering);
    fd.nbr = build_neighbor_index(fd.train_locs, fd.ord, opts.m);
    fd.query = std::make_unique<NeighborQuery>(fd.train_locs);
  }

  const int L = static_cast<int>(grid.entries.size());
  Vector rmspe(L);
  parallel_for(L, opts.threads, [&](int c) {
    const double kappa = grid.entries[c].first;
    const double tau2_rel = grid.entries[c].second;
    const CovarianceParams corr = iso_params(1.0, kappa);
    double mse_sum = 0.0;
    CollapsedSolver solver;
    for (int k = 0; k < opts.K; ++k) {
      const detail::FoldData& fd = folds[k];
      NNGPFactors f = compute_factors(fd.train_locs, fd.ord, fd.nbr, corr);
      solver.factorize(f, tau2_rel);
      LevelEstimate est = estimate_level(solver, fd.z, fd.H, fd.W, priors);
      Vector resid = fd.z - fd.H * est.beta_hat;
      if (q > 0) resid -= fd.W * est.gamma_hat;
      double mse = 0.0;
      for (int r : fd.heldout) {
        const Vector s = ds.locs.coords.row(r).transpose();
        Conditional cond = conditional_at(s, fd.train_locs, resid, corr,
                                          tau2_rel, opts.m, *fd.query);
        double zhat = ds.H.row(r).dot(est.beta_hat) + cond.mean;
        if (q > 0)
          zhat += ds.G.row(r).dot(est.gamma_hat) * (*yprev_mean)[r];
        const double err = ds.z[r] - zhat;
        mse += err * err;
      }
      mse_sum += mse / static_cast<double>(fd.heldout.size());
    }
    rmspe[c] = std::sqrt(mse_sum / opts.K);
  });

  CvSelection sel;
  sel.cv_table = Matrix(L, 3);
  for (int c = 0; c < L; ++c) {
    sel.cv_table(c, 0) = grid.entries[c].first;
    sel.cv_table(c, 1) = grid.entries[c].second;
    sel.cv_table(c, 2) = rmspe[c];
  }
  sel.index = select_candidate(sel.cv_table);
  sel.kappa = grid.entries[sel.index].first;
  sel.tau2_rel = grid.entries[sel.index].second;
  return sel;
}

// One level's fitted conjugate posterior after grid selection and the
// full-data refit.
struct LevelPosterior {
  double kappa = 0.0;
  double tau2_rel = 0.0;
  double a_star = 0.0;
  double b_star = 0.0;
  double sigma2_hat = 0.0;
  Vector beta_hat;
  Matrix beta_cov;   // sigma2_hat * V~_beta
  Vector gamma_hat;  // empty at level 1
  Matrix gamma_cov;
  Matrix cv_table;
  NNGPFactors factors;  // correlation-scale factors of the full level

  double tau2_hat() const { return sigma2_hat * tau2_rel; }
};

inline LevelPosterior fit_level(const FidelityDataset& ds,
                                const Vector* yprev_mean,
                                const CandidateGrid& grid,
                                const ConjugatePriors& priors,
                                const KfoldOptions& opts) {
  CvSelection sel = kfold_select(ds, yprev_mean, grid, priors, opts);

  LevelPosterior post;
  post.kappa = sel.kappa;
  post.tau2_rel = sel.tau2_rel;
  post.cv_table = std::move(sel.cv_table);

  const int q = ds.q();
  Matrix W(ds.n(), q);
  if (q > 0) W = (ds.G.array().colwise() * yprev_mean->array()).matrix();

  const CovarianceParams corr = iso_params(1.0, post.kappa);
  Ordering ord = order_locations(ds.locs, opts.ordering);
  NeighborIndex nbr = build_neighbor_index(ds.locs, ord, opts.m);
  post.factors = compute_factors(ds.locs, ord, nbr, corr);
  CollapsedSolver solver;
  solver.factorize(post.factors, post.tau2_rel);

  LevelEstimate est = estimate_level(solver, ds.z, ds.H, W, priors);
  post.a_star = est.a_star;
  post.b_star = est.b_star;
  post.sigma2_hat = est.sigma2_hat;
  post.beta_hat = est.beta_hat;
  post.beta_cov = est.sigma2_hat * est.beta_cov_unit;
  post.gamma_hat = est.gamma_hat;
  if (est.gamma_cov_unit.size() > 0)
    post.gamma_cov = est.sigma2_hat * est.gamma_cov_unit;
  return post;
}

// All locations observed strictly above level t, deduplicated in
// first-occurrence order: where the level-t field must be available for the
// higher levels' fits.
inline LocationSet location_union_above(
    const std::vector<FidelityDataset>& levels, int t) {
  if (t < 1 || t > static_cast<int>(levels.size()))
    throw validation_error("level out of range");
  std::unordered_set<std::string> seen;
  std::vector<int> rows;
  std::vector<const LocationSet*> srcs;
  for (size_t u = t; u < levels.size(); ++u) {
    const LocationSet& ls = levels[u].locs;
    for (int i = 0; i < ls.n(); ++i)
      if (seen.insert(location_key(ls, i)).second) {
        rows.push_back(i);
        srcs.push_back(&ls);
      }
  }
  const int nk = static_cast<int>(rows.size());
  const int d = levels[t - 1].locs.dim();
  Matrix coords(nk, d);
  for (int i = 0; i < nk; ++i) coords.row(i) = srcs[i]->coords.row(rows[i]);
  return make_location_set(std::move(coords));
}

// Full conjugate fit of a fidelity stack: per level, grid selection by
// K-fold CV, full-data refit, and imputation of the level's field at every
// location observed above it (observed locations copy the datum).
struct ConjugateFit {
  std::vector<LevelPosterior> posteriors;
  std::vector<FittedLevel> stack;      // ready for recursive prediction
  std::vector<ImputedField> fields;    // level-t field over the union above t
};

inline ConjugateFit fit_all(const std::vector<FidelityDataset>& levels,
                            const std::vector<BasisFn>& h_fns,
                            const std::vector<BasisFn>& g_fns,
                            const CandidateGrid& grid,
                            const std::vector<ConjugatePriors>& priors,
                            const KfoldOptions& opts) {
  const int T = static_cast<int>(levels.size());
  if (T == 0) throw validation_error("no fidelity levels");
  if (static_cast<int>(h_fns.size()) != T)
    throw validation_error("one trend basis per level required");
  if (static_cast<int>(g_fns.size()) != T - 1)
    throw validation_error("one scale basis per level link required");
  if (static_cast<int>(priors.size()) != T)
    throw validation_error("one prior set per level required");
  for (int t = 0; t < T; ++t)
    if (levels[t].level != t + 1)
      throw validation_error("datasets must be ordered by level");

  ConjugateFit fit;
  fit.posteriors.reserve(T);
  fit.stack.reserve(T);
  fit.fields.reserve(T);

  for (int t = 1; t <= T; ++t) {
    const FidelityDataset& ds = levels[t - 1];
    ImputedField yprev;
    if (t >= 2) yprev = subset_field(fit.fields[t - 2], ds.locs);

    LevelPosterior post =
        fit_level(ds, t >= 2 ? &yprev.mean : nullptr, grid, priors[t - 1],
                  opts);

    FittedLevel fl;
    fl.data = ds;
    fl.h = h_fns[t - 1];
    if (t >= 2) fl.g = g_fns[t - 2];
    fl.params.trend.beta = post.beta_hat;
    if (t >= 2) fl.params.scale.gamma = post.gamma_hat;
    fl.params.cov = iso_params(post.sigma2_hat, post.kappa);
    fl.params.tau2 = post.tau2_hat();
    fl.yprev = std::move(yprev);

    LocationSet above = location_union_above(levels, t);
    ImputedField field;
    if (above.n() > 0) {
      if (t >= 2) {
        ImputedField yprev_above = subset_field(fit.fields[t - 2], above);
        field = impute_knots(fl, above, &yprev_above, opts.m, opts.threads);
      } else {
        field = impute_knots(fl, above, nullptr, opts.m, opts.threads);
      }
    } else {
      field.at = above;
      field.mean = Vector();
      field.var = Vector();
    }

    fit.posteriors.push_back(std::move(post));
    fit.stack.push_back(std::move(fl));
    fit.fields.push_back(std::move(field));
  }
  return fit;
}

}  // namespace rnnc
