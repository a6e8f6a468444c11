#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rnnc/cokrige.hpp"
#include "rnnc/conjugate.hpp"
#include "rnnc/covariance.hpp"
#include "rnnc/geometry.hpp"
#include "rnnc/nngp.hpp"
#include "rnnc/rng.hpp"
#include "rnnc/types.hpp"

namespace rnnc {

// Priors for one level of the MCMC fit. Unlike the conjugate fit, the
// coefficient priors here are on the data scale (not multiplied by the
// process variance), and the noise variance gets its own inverse-gamma law.
struct McmcPriors {
  NormalPrior beta;
  NormalPrior gamma;  // ignored at level 1
  InverseGammaPrior sigma2{2.0, 1.0};
  InverseGammaPrior tau2{2.0, 1.0};
};

struct ProposalScales {
  double sigma2 = 0.1;
  double kappa = 0.1;
  double tau2 = 0.1;
};

struct ChainConfig {
  int iterations = 10000;
  int burn_in = 2000;
  int thin = 1;
  ProposalScales scales;       // log-scale random-walk standard deviations
  bool adapt = true;           // Robbins-Monro scale adaptation during burn-in
  double target_accept = 0.30;
  double kappa_max = 25.0;     // upper bound of the uniform decay prior
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 1) throw validation_error("iterations must be >= 1");
    if (burn_in < 0 || burn_in >= iterations)
      throw validation_error("burn-in must leave at least one retained draw");
    if (thin < 1) throw validation_error("thinning must be >= 1");
    if (!(scales.sigma2 > 0.0) || !(scales.kappa > 0.0) ||
        !(scales.tau2 > 0.0))
      throw validation_error("proposal scales must be positive");
    if (!(kappa_max > 0.0))
      throw validation_error("decay upper bound must be positive");
    if (!(target_accept > 0.0) || !(target_accept < 1.0))
      throw validation_error("target acceptance must be inside (0, 1)");
  }
};

struct ThetaState {
  double sigma2 = 1.0;
  double kappa = 1.0;
  double tau2 = 0.1;
};

inline double log_ig_density(double x, const InverseGammaPrior& p) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return p.a * std::log(p.b) - std::lgamma(p.a) - (p.a + 1.0) * std::log(x) -
         p.b / x;
}

inline double log_uniform_density(double x, double hi) {
  if (!(x > 0.0) || !(x < hi))
    return -std::numeric_limits<double>::infinity();
  return -std::log(hi);
}

// Conjugate conditional of one coefficient block under the collapsed level
// covariance: precision = X' Lambda^-1 X + V^-1, precision-weighted mean
// V^-1 mu + X' Lambda^-1 r, with r the response minus the other block's part.
struct BlockConditional {
  Vector mean;
  Matrix cov;
};

inline BlockConditional coef_conditional(const CollapsedSolver& lam,
                                         const Matrix& X,
                                         const Vector& partial_resid,
                                         const NormalPrior& prior) {
  if (X.cols() != prior.dim())
    throw validation_error("design/prior dimension mismatch");
  if (X.rows() != partial_resid.size())
    throw validation_error("design/residual length mismatch");
  detail::PriorPrecision pp(prior);
  Matrix sol = lam.solve(X);
  BlockConditional out;
  out.cov = detail::spd_inverse(
      Matrix(pp.Vinv + X.transpose() * sol),
      "coefficient conditional covariance not positive definite");
  out.mean = out.cov * (pp.Vinv_mu + sol.transpose() * partial_resid);
  return out;
}

inline Vector draw_mvn(const BlockConditional& bc, RngStream& rng) {
  const int p = static_cast<int>(bc.mean.size());
  Eigen::LLT<Matrix> llt(bc.cov);
  if (llt.info() != Eigen::Success)
    throw numeric_error("conditional covariance factorization failed");
  Vector eps(p);
  for (int i = 0; i < p; ++i) eps[i] = rng.normal();
  return bc.mean + llt.matrixL() * eps;
}

// Draw the trend coefficients given everything else; the partial residual
// is the response minus the scaled previous-level field.
inline Vector gibbs_beta(const CollapsedSolver& lam, const Matrix& H,
                         const Vector& z_minus_scale, const NormalPrior& prior,
                         RngStream& rng) {
  return draw_mvn(coef_conditional(lam, H, z_minus_scale, prior), rng);
}

// Draw the scale coefficients given everything else; the design is the scale
// basis times the previous-level field, the partial residual removes the
// trend.
inline Vector gibbs_gamma(const CollapsedSolver& lam, const Matrix& W,
                          const Vector& z_minus_trend,
                          const NormalPrior& prior, RngStream& rng) {
  return draw_mvn(coef_conditional(lam, W, z_minus_trend, prior), rng);
}

// Marginal log posterior of the hyperparameters at a fixed residual:
// collapsed Gaussian log-likelihood plus the log prior densities; -inf
// outside the parameter support.
inline double theta_log_target(const LocationSet& locs, const Ordering& ord,
                               const NeighborIndex& nbr, const Vector& resid,
                               const ThetaState& th, const McmcPriors& priors,
                               double kappa_max) {
  if (!(th.sigma2 > 0.0) || !(th.tau2 > 0.0) || !(th.kappa > 0.0) ||
      !(th.kappa < kappa_max))
    return -std::numeric_limits<double>::infinity();
  NNGPFactors f =
      compute_factors(locs, ord, nbr, iso_params(th.sigma2, th.kappa));
  CollapsedSolver s;
  s.factorize(f, th.tau2);
  return s.loglik(resid) + log_ig_density(th.sigma2, priors.sigma2) +
         log_ig_density(th.tau2, priors.tau2) +
         log_uniform_density(th.kappa, kappa_max);
}

// Persistent likelihood block for one level: owns the factors the solver
// points into, so the pair can only be replaced together.
class ThetaBlock {
 public:
  ThetaBlock() = default;
  ThetaBlock(const ThetaBlock&) = delete;
  ThetaBlock& operator=(const ThetaBlock&) = delete;

  void reset(const LocationSet& locs, const Ordering& ord,
             const NeighborIndex& nbr, const ThetaState& th) {
    factors_ =
        compute_factors(locs, ord, nbr, iso_params(th.sigma2, th.kappa));
    solver_.factorize(factors_, th.tau2);
    theta_ = th;
  }

  void adopt(NNGPFactors&& f, const ThetaState& th) {
    factors_ = std::move(f);
    solver_.factorize(factors_, th.tau2);
    theta_ = th;
  }

  const CollapsedSolver& solver() const { return solver_; }
  const ThetaState& theta() const { return theta_; }

 private:
  NNGPFactors factors_;
  CollapsedSolver solver_;
  ThetaState theta_;
};

struct MhResult {
  bool accepted = false;
  double log_target = 0.0;  // target value of the retained state
};

// One joint Metropolis step on (sigma2, kappa, tau2): Gaussian random walk
// on the log of each parameter with the matching Jacobian correction.
// Exactly three normals and one uniform are consumed whether or not the
// proposal is accepted, so rejections keep the stream aligned.
inline MhResult mh_theta_tau(ThetaBlock& block, const LocationSet& locs,
                             const Ordering& ord, const NeighborIndex& nbr,
                             const Vector& resid, const McmcPriors& priors,
                             const ProposalScales& sc, double kappa_max,
                             RngStream& rng) {
  const ThetaState cur = block.theta();
  const double e1 = rng.normal();
  const double e2 = rng.normal();
  const double e3 = rng.normal();
  const double u = rng.uniform();

  const double cur_target =
      block.solver().loglik(resid) +
      log_ig_density(cur.sigma2, priors.sigma2) +
      log_ig_density(cur.tau2, priors.tau2) +
      log_uniform_density(cur.kappa, kappa_max);
  MhResult out;
  out.log_target = cur_target;

  ThetaState prop{cur.sigma2 * std::exp(sc.sigma2 * e1),
                  cur.kappa * std::exp(sc.kappa * e2),
                  cur.tau2 * std::exp(sc.tau2 * e3)};
  if (!(prop.kappa < kappa_max) || !std::isfinite(prop.sigma2) ||
      !std::isfinite(prop.tau2) || !(prop.sigma2 > 0.0) || !(prop.tau2 > 0.0))
    return out;  // outside the prior support: auto-reject

  NNGPFactors pf =
      compute_factors(locs, ord, nbr, iso_params(prop.sigma2, prop.kappa));
  CollapsedSolver ps;
  ps.factorize(pf, prop.tau2);
  const double prop_target = ps.loglik(resid) +
                             log_ig_density(prop.sigma2, priors.sigma2) +
                             log_ig_density(prop.tau2, priors.tau2) +
                             log_uniform_density(prop.kappa, kappa_max);
  const double jacobian = std::log(prop.sigma2) + std::log(prop.kappa) +
                          std::log(prop.tau2) - std::log(cur.sigma2) -
                          std::log(cur.kappa) - std::log(cur.tau2);
  const double delta = prop_target - cur_target + jacobian;
  if (std::log(u) <= delta) {
    block.adopt(std::move(pf), prop);
    out.accepted = true;
    out.log_target = prop_target;
  }
  return out;
}

// Conditional law of the level field at each knot given the current state:
// scaled previous field plus trend plus the kriged residual, with the
// response-conditioned kriging variance. Knots are conditionally independent
// given the state, so each row stands alone.
struct KnotConditionals {
  Vector mean;
  Vector var;
};

inline KnotConditionals knot_conditionals(
    const FidelityDataset& ds, const LocationSet& knots, const Matrix& Hk,
    const Matrix& Gk, const Vector& beta, const Vector& gamma,
    const Vector* yprev_data, const Vector* yprev_knots, const ThetaState& th,
    int m, const NeighborQuery& query) {
  const int nk = knots.n();
  KnotConditionals out;
  out.mean = Vector(nk);
  out.var = Vector(nk);
  if (nk == 0) return out;
  if (Hk.rows() != nk || Hk.cols() != ds.p())
    throw validation_error("knot trend basis shape mismatch");
  if (ds.q() > 0) {
    if (Gk.rows() != nk || Gk.cols() != ds.q())
      throw validation_error("knot scale basis shape mismatch");
    if (yprev_data == nullptr || yprev_data->size() != ds.n())
      throw validation_error("missing previous-level field at level " +
                             std::to_string(ds.level));
    if (yprev_knots == nullptr || yprev_knots->size() != nk)
      throw validation_error("missing previous-level field at the knots");
  }

  Vector resid = ds.z - ds.H * beta;
  if (ds.q() > 0)
    resid -= ((ds.G * gamma).array() * yprev_data->array()).matrix();
  const CovarianceParams p = iso_params(th.sigma2, th.kappa);
  for (int i = 0; i < nk; ++i) {
    const Vector s = knots.coords.row(i).transpose();
    Conditional c = conditional_at(s, ds.locs, resid, p, th.tau2, m, query);
    double mean = Hk.row(i).dot(beta) + c.mean;
    if (ds.q() > 0) mean += Gk.row(i).dot(gamma) * (*yprev_knots)[i];
    out.mean[i] = mean;
    out.var[i] = c.var;
  }
  return out;
}

// Independent normal draws at the knots; an empty knot set consumes nothing.
inline Vector sample_knots(const KnotConditionals& kc, RngStream& rng) {
  Vector draw(kc.mean.size());
  for (int i = 0; i < draw.size(); ++i)
    draw[i] = kc.mean[i] + std::sqrt(kc.var[i]) * rng.normal();
  return draw;
}

struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
};

struct LevelDraws {
  int level = 1;
  std::vector<std::string> names;  // column names of draws
  Matrix draws;                    // kept iterations x parameters
  std::vector<ParamSummary> summary;
  double accept_rate = 0.0;
};

struct ChainResult {
  std::vector<LevelDraws> levels;
  int kept = 0;
};

// Linear-interpolation sample quantile on a copy of the data.
inline double quantile_type7(std::vector<double> v, double p) {
  if (v.empty()) throw validation_error("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0))
    throw validation_error("quantile level must be in [0, 1]");
  std::sort(v.begin(), v.end());
  const int n = static_cast<int>(v.size());
  const double h = (n - 1) * p;
  const int lo = static_cast<int>(std::floor(h));
  if (lo >= n - 1) return v[n - 1];
  return v[lo] + (h - lo) * (v[lo + 1] - v[lo]);
}

namespace detail {

struct ChainPlan {
  Ordering ord;
  NeighborIndex nbr;
  std::unique_ptr<NeighborQuery> query;
  LocationSet knots;  // sites above this level that it does not observe
  Matrix Hk, Gk;      // bases at the knots
  // row-by-row source of the previous-level field: observed datum or knot
  std::vector<std::pair<bool, int>> data_prev;  // for this level's sites
  std::vector<std::pair<bool, int>> knot_prev;  // for this level's knots
  ThetaBlock theta;
  ProposalScales scales;
  Vector beta, gamma, yhat;
  long long accepted = 0;
};

inline std::vector<std::pair<bool, int>> map_to_previous(
    const LocationSet& targets, const LocationSet& obs,
    const LocationSet& knots) {
  std::unordered_map<std::string, int> obs_row, knot_row;
  for (int i = 0; i < obs.n(); ++i) obs_row.emplace(location_key(obs, i), i);
  for (int i = 0; i < knots.n(); ++i)
    knot_row.emplace(location_key(knots, i), i);
  std::vector<std::pair<bool, int>> out(targets.n());
  for (int i = 0; i < targets.n(); ++i) {
    const std::string key = location_key(targets, i);
    if (auto it = obs_row.find(key); it != obs_row.end())
      out[i] = {true, it->second};
    else if (auto it2 = knot_row.find(key); it2 != knot_row.end())
      out[i] = {false, it2->second};
    else
      throw validation_error("previous-level field unavailable at " + key);
  }
  return out;
}

inline Matrix eval_basis_rows(const BasisFn& fn, const LocationSet& at,
                              int cols, const char* what) {
  Matrix out(at.n(), cols);
  for (int i = 0; i < at.n(); ++i) {
    Vector row = fn(at.coords.row(i).transpose());
    if (row.size() != cols) throw validation_error(what);
    out.row(i) = row.transpose();
  }
  return out;
}

}  // namespace detail

// Collapsed MCMC over the whole fidelity stack. Levels factorize, so they
// are swept in order within each iteration with one RNG stream per
// (level, block); edits to a higher level can never disturb a lower one.
inline ChainResult run_chain(const std::vector<FidelityDataset>& levels,
                             const std::vector<BasisFn>& h_fns,
                             const std::vector<BasisFn>& g_fns,
                             const std::vector<McmcPriors>& priors,
                             const ChainConfig& cfg, int m = 10,
                             OrderingStrategy ordering =
                                 OrderingStrategy::CoordSort) {
  cfg.validate();
  const int T = static_cast<int>(levels.size());
  if (T == 0) throw validation_error("no fidelity levels");
  if (static_cast<int>(h_fns.size()) != T)
    throw validation_error("one trend basis per level required");
  if (static_cast<int>(g_fns.size()) != T - 1)
    throw validation_error("one scale basis per level link required");
  if (static_cast<int>(priors.size()) != T)
    throw validation_error("one prior set per level required");
  if (m < 1) throw validation_error("neighbor count must be >= 1");
  for (int t = 0; t < T; ++t) {
    if (levels[t].level != t + 1)
      throw validation_error("datasets must be ordered by level");
    levels[t].validate();
    if (priors[t].beta.mu.size() != levels[t].p())
      throw validation_error("trend prior dimension mismatch");
    if (t >= 1 && priors[t].gamma.mu.size() != levels[t].q())
      throw validation_error("scale prior dimension mismatch");
    priors[t].sigma2.validate();
    priors[t].tau2.validate();
  }

  std::vector<detail::ChainPlan> plans(T);
  std::vector<RngStream> mh_rng, beta_rng, gamma_rng, knot_rng;
  for (int t = 1; t <= T; ++t) {
    const FidelityDataset& ds = levels[t - 1];
    detail::ChainPlan& pl = plans[t - 1];
    pl.ord = order_locations(ds.locs, ordering);
    pl.nbr = build_neighbor_index(ds.locs, pl.ord, m);
    pl.query = std::make_unique<NeighborQuery>(ds.locs);
    pl.knots = knot_set(levels, t);
    pl.Hk = detail::eval_basis_rows(h_fns[t - 1], pl.knots, ds.p(),
                                    "trend basis dimension mismatch at knot");
    if (t >= 2) {
      pl.Gk = detail::eval_basis_rows(
          g_fns[t - 2], pl.knots, ds.q(),
          "scale basis dimension mismatch at knot");
      pl.data_prev = detail::map_to_previous(ds.locs, levels[t - 2].locs,
                                             plans[t - 2].knots);
      pl.knot_prev = detail::map_to_previous(pl.knots, levels[t - 2].locs,
                                             plans[t - 2].knots);
    } else {
      pl.Gk = Matrix(pl.knots.n(), 0);
    }
    pl.scales = cfg.scales;
    pl.beta = priors[t - 1].beta.mu;
    if (t >= 2) pl.gamma = priors[t - 1].gamma.mu;

    // Moment-based starting point: the sample variance of the level data,
    // a tenth of it as noise, and a mid-range decay.
    double v = 1.0;
    if (ds.n() >= 2) {
      const double mu = ds.z.mean();
      const double ss = (ds.z.array() - mu).square().sum() /
                        static_cast<double>(ds.n() - 1);
      if (ss > 0.0) v = ss;
    }
    ThetaState init{v, cfg.kappa_max / 5.0, 0.1 * v};
    pl.theta.reset(ds.locs, pl.ord, pl.nbr, init);

    mh_rng.emplace_back(stream_key(cfg.seed, t, 1));
    beta_rng.emplace_back(stream_key(cfg.seed, t, 2));
    gamma_rng.emplace_back(stream_key(cfg.seed, t, 3));
    knot_rng.emplace_back(stream_key(cfg.seed, t, 4));
  }

  // Deterministic knot start: the conditional mean at the initial state.
  for (int t = 1; t <= T; ++t) {
    detail::ChainPlan& pl = plans[t - 1];
    const FidelityDataset& ds = levels[t - 1];
    if (pl.knots.n() == 0) {
      pl.yhat = Vector();
      continue;
    }
    Vector ypd, ypk;
    if (t >= 2) {
      ypd = Vector(ds.n());
      for (int i = 0; i < ds.n(); ++i)
        ypd[i] = pl.data_prev[i].first
                     ? levels[t - 2].z[pl.data_prev[i].second]
                     : plans[t - 2].yhat[pl.data_prev[i].second];
      ypk = Vector(pl.knots.n());
      for (int i = 0; i < pl.knots.n(); ++i)
        ypk[i] = pl.knot_prev[i].first
                     ? levels[t - 2].z[pl.knot_prev[i].second]
                     : plans[t - 2].yhat[pl.knot_prev[i].second];
    }
    pl.yhat = knot_conditionals(ds, pl.knots, pl.Hk, pl.Gk, pl.beta,
                                pl.gamma, t >= 2 ? &ypd : nullptr,
                                t >= 2 ? &ypk : nullptr, pl.theta.theta(), m,
                                *pl.query)
                  .mean;
  }

  const int kept =
      (cfg.iterations - cfg.burn_in + cfg.thin - 1) / cfg.thin;
  ChainResult res;
  res.kept = kept;
  res.levels.resize(T);
  for (int t = 1; t <= T; ++t) {
    LevelDraws& ld = res.levels[t - 1];
    ld.level = t;
    for (int j = 0; j < levels[t - 1].p(); ++j)
      ld.names.push_back("beta" + std::to_string(j));
    if (t >= 2)
      for (int j = 0; j < levels[t - 1].q(); ++j)
        ld.names.push_back("gamma" + std::to_string(j));
    ld.names.push_back("sigma2");
    ld.names.push_back("kappa");
    ld.names.push_back("tau2");
    ld.draws = Matrix(kept, static_cast<int>(ld.names.size()));
  }

  for (int it = 0; it < cfg.iterations; ++it) {
    for (int t = 1; t <= T; ++t) {
      detail::ChainPlan& pl = plans[t - 1];
      const FidelityDataset& ds = levels[t - 1];
      const McmcPriors& pr = priors[t - 1];

      Vector ypd;
      Matrix Wd(ds.n(), ds.q());
      if (t >= 2) {
        ypd = Vector(ds.n());
        for (int i = 0; i < ds.n(); ++i)
          ypd[i] = pl.data_prev[i].first
                       ? levels[t - 2].z[pl.data_prev[i].second]
                       : plans[t - 2].yhat[pl.data_prev[i].second];
        Wd = (ds.G.array().colwise() * ypd.array()).matrix();
      }

      // hyperparameters
      Vector resid = ds.z - ds.H * pl.beta;
      if (t >= 2) resid -= Wd * pl.gamma;
      MhResult mh =
          mh_theta_tau(pl.theta, ds.locs, pl.ord, pl.nbr, resid, pr,
                       pl.scales, cfg.kappa_max, mh_rng[t - 1]);
      if (mh.accepted) ++pl.accepted;
      if (!std::isfinite(mh.log_target)) {
        const ThetaState& th = pl.theta.theta();
        throw numeric_error(
            "divergent chain at level " + std::to_string(t) + ", iteration " +
            std::to_string(it) + ": sigma2=" + std::to_string(th.sigma2) +
            " kappa=" + std::to_string(th.kappa) +
            " tau2=" + std::to_string(th.tau2));
      }
      if (cfg.adapt && it < cfg.burn_in) {
        const double eta = std::pow(it + 1.0, -0.8);
        const double step =
            eta * ((mh.accepted ? 1.0 : 0.0) - cfg.target_accept);
        const double f = std::exp(step);
        pl.scales.sigma2 *= f;
        pl.scales.kappa *= f;
        pl.scales.tau2 *= f;
      }

      // trend coefficients
      Vector zb = ds.z;
      if (t >= 2) zb -= Wd * pl.gamma;
      pl.beta = gibbs_beta(pl.theta.solver(), ds.H, zb, pr.beta,
                           beta_rng[t - 1]);

      // scale coefficients
      if (t >= 2)
        pl.gamma = gibbs_gamma(pl.theta.solver(), Wd,
                               Vector(ds.z - ds.H * pl.beta), pr.gamma,
                               gamma_rng[t - 1]);

      // field at the knots
      if (pl.knots.n() > 0) {
        Vector ypk;
        if (t >= 2) {
          ypk = Vector(pl.knots.n());
          for (int i = 0; i < pl.knots.n(); ++i)
            ypk[i] = pl.knot_prev[i].first
                         ? levels[t - 2].z[pl.knot_prev[i].second]
                         : plans[t - 2].yhat[pl.knot_prev[i].second];
        }
        KnotConditionals kc = knot_conditionals(
            ds, pl.knots, pl.Hk, pl.Gk, pl.beta, pl.gamma,
            t >= 2 ? &ypd : nullptr, t >= 2 ? &ypk : nullptr,
            pl.theta.theta(), m, *pl.query);
        pl.yhat = sample_knots(kc, knot_rng[t - 1]);
      }

      if (it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
        const int row = (it - cfg.burn_in) / cfg.thin;
        LevelDraws& ld = res.levels[t - 1];
        int col = 0;
        for (int j = 0; j < pl.beta.size(); ++j)
          ld.draws(row, col++) = pl.beta[j];
        for (int j = 0; j < pl.gamma.size(); ++j)
          ld.draws(row, col++) = pl.gamma[j];
        const ThetaState& th = pl.theta.theta();
        ld.draws(row, col++) = th.sigma2;
        ld.draws(row, col++) = th.kappa;
        ld.draws(row, col) = th.tau2;
      }
    }
  }

  for (int t = 1; t <= T; ++t) {
    LevelDraws& ld = res.levels[t - 1];
    ld.accept_rate = static_cast<double>(plans[t - 1].accepted) /
                     static_cast<double>(cfg.iterations);
    for (size_t j = 0; j < ld.names.size(); ++j) {
      std::vector<double> col(kept);
      for (int r = 0; r < kept; ++r) col[r] = ld.draws(r, static_cast<int>(j));
      ParamSummary s;
      s.name = ld.names[j];
      s.mean = ld.draws.col(static_cast<int>(j)).mean();
      s.lo95 = quantile_type7(col, 0.025);
      s.hi95 = quantile_type7(col, 0.975);
      ld.summary.push_back(std::move(s));
    }
  }
  return res;
}

}  // namespace rnnc
