#pragma once

#include <Eigen/Dense>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rnnc/covariance.hpp"
#include "rnnc/geometry.hpp"
#include "rnnc/nngp.hpp"
#include "rnnc/parallel.hpp"
#include "rnnc/types.hpp"

namespace rnnc {

// One fidelity level's observations plus its regression design: the trend
// basis evaluated at the observed locations and, from level 2 up, the scale
// basis linking this level to the one below.
struct FidelityDataset {
  int level = 1;   // 1 = least accurate
  LocationSet locs;
  Vector z;        // observed response
  Matrix H;        // n x p trend basis at locs
  Matrix G;        // n x q scale basis at locs; empty at level 1

  int n() const { return locs.n(); }
  int p() const { return static_cast<int>(H.cols()); }
  int q() const { return static_cast<int>(G.cols()); }

  void validate() const {
    if (level < 1) throw validation_error("fidelity level must be >= 1");
    const int nn = n();
    if (z.size() != nn)
      throw validation_error("observation length does not match locations");
    if (!z.allFinite()) throw validation_error("non-finite observation value");
    if (H.rows() != nn)
      throw validation_error("trend basis rows do not match locations");
    if (p() > 0) {
      Eigen::ColPivHouseholderQR<Matrix> qr(H);
      if (qr.rank() < p())
        throw validation_error("trend basis is rank deficient");
    }
    if (level == 1) {
      if (q() > 0)
        throw validation_error("level 1 carries no scale basis");
    } else {
      if (q() < 1)
        throw validation_error("scale basis required at level >= 2");
      if (G.rows() != nn)
        throw validation_error("scale basis rows do not match locations");
    }
  }
};

// Trend coefficients beta for one level.
struct TrendSpec {
  Vector beta;
};

// Scale-discrepancy coefficients gamma: the multiplier applied to the
// previous level's field is the basis expansion g(s) . gamma.
struct ScaleDiscrepancy {
  Vector gamma;
};

// A field reconstructed at a set of locations: posterior mean and variance
// of the latent response there (knot imputations or predictions).
struct ImputedField {
  LocationSet at;
  Vector mean;
  Vector var;

  void validate() const {
    if (mean.size() != at.n() || var.size() != at.n())
      throw validation_error("imputed field length mismatch");
    for (int i = 0; i < var.size(); ++i)
      if (!(var[i] >= 0.0))
        throw validation_error("imputed field variance must be >= 0");
  }
};

// Mean of the observation process at the level's own locations:
//   level 1:   H beta
//   level t>1: (G gamma) o yprev.mean + H beta   (elementwise product)
inline Vector level_mean(const FidelityDataset& ds, const TrendSpec& trend,
                         const ScaleDiscrepancy* scale = nullptr,
                         const ImputedField* yprev = nullptr) {
  if (trend.beta.size() != ds.p())
    throw validation_error("trend coefficient length mismatch");
  Vector mean = ds.p() > 0 ? Vector(ds.H * trend.beta)
                           : Vector(Vector::Zero(ds.n()));
  if (ds.level == 1) return mean;
  if (scale == nullptr)
    throw validation_error("missing scale discrepancy at level " +
                           std::to_string(ds.level));
  if (scale->gamma.size() != ds.q())
    throw validation_error("scale coefficient length mismatch");
  if (yprev == nullptr)
    throw validation_error("missing previous-level field at level " +
                           std::to_string(ds.level));
  if (yprev->mean.size() != ds.n())
    throw validation_error("previous-level field length mismatch");
  mean += (ds.G * scale->gamma).cwiseProduct(yprev->mean);
  return mean;
}

// Locations observed at levels above t but not at level t itself: the knot
// set where the level-t field must be imputed. First occurrence wins, walking
// levels t+1..T in order and rows within each level in order.
inline LocationSet knot_set(const std::vector<FidelityDataset>& levels,
                            int t) {
  if (t < 1 || t > static_cast<int>(levels.size()))
    throw validation_error("knot level out of range");
  const FidelityDataset& own = levels[t - 1];
  std::unordered_set<std::string> seen;
  seen.reserve(static_cast<size_t>(own.n()) * 2);
  for (int i = 0; i < own.n(); ++i) seen.insert(location_key(own.locs, i));
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
  const int d = own.locs.dim();
  Matrix coords(nk, d);
  for (int i = 0; i < nk; ++i) coords.row(i) = srcs[i]->coords.row(rows[i]);
  return make_location_set(std::move(coords));
}

// Covariance, noise, trend, and scale parameters of one fitted level
// (posterior point estimates or a current sampler state).
struct LevelParams {
  TrendSpec trend;        // beta_t
  ScaleDiscrepancy scale; // gamma into level t; empty at level 1
  CovarianceParams cov;   // sigma2_t, decay_t
  double tau2 = 0.0;      // nugget variance
};

// Everything needed to reconstruct the level-t field anywhere: the data it
// was fit on, the basis functions for new points, the fitted parameters, and
// the previous level's field at this level's own locations.
struct FittedLevel {
  FidelityDataset data;
  BasisFn h;           // trend basis, matches columns of data.H
  BasisFn g;           // scale basis, matches columns of data.G; unused at level 1
  LevelParams params;
  ImputedField yprev;  // previous-level field at data.locs; empty at level 1

  void validate() const {
    data.validate();
    params.cov.validate(data.locs.dim());
    if (params.tau2 < 0.0) throw validation_error("tau2 must be >= 0");
    if (data.level >= 2) {
      yprev.validate();
      if (yprev.at.n() != data.n())
        throw validation_error("previous-level field length mismatch");
    }
  }

  // Observed residuals: z minus the fitted observation mean.
  Vector residual() const {
    if (data.level == 1) return data.z - level_mean(data, params.trend);
    return data.z -
           level_mean(data, params.trend, &params.scale, &yprev);
  }
};

struct ImputeOptions {
  int m = 10;                    // conditioning-set size
  bool nested_shortcut = false;  // targets observed at this level copy the
                                 // datum: mean = z(s), var = tau2
  int threads = 1;
};

namespace detail {

inline void check_aligned(const ImputedField& field,
                          const LocationSet& targets) {
  if (field.at.n() != targets.n())
    throw validation_error("previous-level field length mismatch");
  for (int i = 0; i < targets.n(); ++i)
    if (location_key(field.at, i) != location_key(targets, i))
      throw validation_error("previous-level field misaligned at row " +
                             std::to_string(i));
}

}  // namespace detail

// Reconstructs the level-t field at arbitrary targets given the fitted level:
//   mean = zeta_prev(s) * yprev_targets.mean(s) + h(s).beta + kriged residual
//   var  = kriging variance + zeta_prev(s)^2 * yprev_targets.var(s)
// The previous-level field enters as fixed basis values with its own
// uncertainty propagated through the scale factor (modular treatment); the
// kriged residual conditions on this level's noisy observed residuals.
inline ImputedField impute_field(const FittedLevel& fl,
                                 const LocationSet& targets,
                                 const ImputedField* yprev_targets,
                                 const ImputeOptions& opts = {}) {
  fl.validate();
  if (targets.n() > 0 && targets.dim() != fl.data.locs.dim())
    throw validation_error("target dimension mismatch");
  if (fl.data.level >= 2) {
    if (yprev_targets == nullptr)
      throw validation_error("missing previous-level field at level " +
                             std::to_string(fl.data.level));
    yprev_targets->validate();
    detail::check_aligned(*yprev_targets, targets);
  }

  ImputedField out;
  out.at = targets;
  out.mean = Vector::Zero(targets.n());
  out.var = Vector::Zero(targets.n());
  if (targets.n() == 0) return out;

  const Vector resid = fl.residual();
  std::unordered_map<std::string, int> own;
  if (opts.nested_shortcut) {
    own.reserve(static_cast<size_t>(fl.data.n()) * 2);
    for (int i = 0; i < fl.data.n(); ++i)
      own.emplace(location_key(fl.data.locs, i), i);
  }
  const NeighborQuery query(fl.data.locs);

  parallel_for(targets.n(), opts.threads, [&](int i) {
    const Vector s = targets.coords.row(i).transpose();
    if (opts.nested_shortcut) {
      auto hit = own.find(location_key(targets, i));
      if (hit != own.end()) {
        out.mean[i] = fl.data.z[hit->second];
        out.var[i] = fl.params.tau2;
        return;
      }
    }
    const Conditional cond = conditional_at(s, fl.data.locs, resid,
                                            fl.params.cov, fl.params.tau2,
                                            opts.m, query);
    double mean = cond.mean;
    double var = cond.var;
    if (fl.data.p() > 0) {
      const Vector hs = fl.h(s);
      if (hs.size() != fl.data.p())
        throw validation_error("trend basis dimension mismatch at target");
      mean += hs.dot(fl.params.trend.beta);
    }
    if (fl.data.level >= 2) {
      const Vector gs = fl.g(s);
      if (gs.size() != fl.data.q())
        throw validation_error("scale basis dimension mismatch at target");
      const double zeta = gs.dot(fl.params.scale.gamma);
      mean += zeta * yprev_targets->mean[i];
      var += zeta * zeta * yprev_targets->var[i];
    }
    out.mean[i] = mean;
    out.var[i] = var;
  });
  return out;
}

// Imputes the level field at its knot set. Knots coincident with the level's
// own observed locations copy the datum (mean = z(s), var = tau2); the rest
// go through the conditional reconstruction.
inline ImputedField impute_knots(const FittedLevel& fl,
                                 const LocationSet& knots,
                                 const ImputedField* yprevprev, int m,
                                 int threads = 1) {
  ImputeOptions opts;
  opts.m = m;
  opts.nested_shortcut = true;
  opts.threads = threads;
  return impute_field(fl, knots, yprevprev, opts);
}

// Picks the rows of `field` matching `targets` (by canonical coordinate key).
// Used to align a field stored over a union of locations with a query set.
inline ImputedField subset_field(const ImputedField& field,
                                 const LocationSet& targets) {
  field.validate();
  std::unordered_map<std::string, int> index;
  index.reserve(static_cast<size_t>(field.at.n()) * 2);
  for (int i = 0; i < field.at.n(); ++i)
    index.emplace(location_key(field.at, i), i);
  ImputedField out;
  out.at = targets;
  out.mean = Vector(targets.n());
  out.var = Vector(targets.n());
  for (int i = 0; i < targets.n(); ++i) {
    auto hit = index.find(location_key(targets, i));
    if (hit == index.end())
      throw validation_error("field missing location " +
                             location_key(targets, i));
    out.mean[i] = field.mean[hit->second];
    out.var[i] = field.var[hit->second];
  }
  return out;
}

struct PredictOptions {
  int m = 10;
  int threads = 1;
  // widen the interval by the level's nugget so it covers noisy observations
  // rather than the latent response
  bool observation_interval = true;
};

// Per-level predictions at a set of targets: column t-1 holds the level-t
// field mean/variance, with an equal-tail 95% interval.
struct RecursivePrediction {
  LocationSet at;
  Matrix mean;  // n x T, latent-field posterior mean per level
  Matrix var;   // n x T, latent-field posterior variance per level
  Matrix lo95;  // n x T equal-tail bounds (observation scale by default)
  Matrix hi95;

  int levels() const { return static_cast<int>(mean.cols()); }
};

// Walks the fitted stack from level 1 to T at each target, feeding each
// level's reconstructed field into the next level's mean and propagating the
// scaled variance. Each level's interval is mean +/- z_.975 * sd with the
// level's nugget added to the variance when observation_interval is set.
inline RecursivePrediction predict_recursive(
    const std::vector<FittedLevel>& stack, const LocationSet& targets,
    const PredictOptions& opts = {}) {
  if (stack.empty()) throw validation_error("empty fitted stack");
  for (size_t t = 0; t < stack.size(); ++t)
    if (stack[t].data.level != static_cast<int>(t) + 1)
      throw validation_error("fitted stack must be ordered by level");

  const int T = static_cast<int>(stack.size());
  RecursivePrediction out;
  out.at = targets;
  out.mean = Matrix(targets.n(), T);
  out.var = Matrix(targets.n(), T);
  out.lo95 = Matrix(targets.n(), T);
  out.hi95 = Matrix(targets.n(), T);

  ImputeOptions iopts;
  iopts.m = opts.m;
  iopts.nested_shortcut = false;
  iopts.threads = opts.threads;

  ImputedField prev;
  for (int t = 1; t <= T; ++t) {
    ImputedField cur = impute_field(stack[t - 1], targets,
                                    t >= 2 ? &prev : nullptr, iopts);
    out.mean.col(t - 1) = cur.mean;
    out.var.col(t - 1) = cur.var;
    const double extra =
        opts.observation_interval ? stack[t - 1].params.tau2 : 0.0;
    for (int i = 0; i < targets.n(); ++i) {
      const double sd = std::sqrt(cur.var[i] + extra);
      out.lo95(i, t - 1) = cur.mean[i] - kZ975 * sd;
      out.hi95(i, t - 1) = cur.mean[i] + kZ975 * sd;
    }
    prev = std::move(cur);
  }
  return out;
}

}  // namespace rnnc
