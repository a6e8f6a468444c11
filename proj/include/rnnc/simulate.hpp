#pragma once

#include <Eigen/Cholesky>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "rnnc/cokrige.hpp"
#include "rnnc/conjugate.hpp"  // detail::shuffled_indices
#include "rnnc/covariance.hpp"
#include "rnnc/rng.hpp"
#include "rnnc/types.hpp"

namespace rnnc {

// Axis-aligned square region used to carve test data from the top level.
struct HoldoutBox {
  double cx = 0.5;
  double cy = 0.5;
  double side = 0.1;

  bool contains(double x, double y) const {
    return std::abs(x - cx) <= 0.5 * side && std::abs(y - cy) <= 0.5 * side;
  }
};

// Four squares jointly covering 10% of the unit square, placed like the
// testing regions of the synthetic studies.
inline std::vector<HoldoutBox> default_holdout_boxes() {
  const double side = 0.15811388300841897;  // sqrt(0.025)
  return {{0.25, 0.25, side},
          {0.72, 0.28, side},
          {0.28, 0.72, side},
          {0.75, 0.75, side}};
}

struct SimLevelSpec {
  int n = 100;          // sites observed at this level
  double beta = 0.0;    // constant trend
  double sigma2 = 1.0;  // process variance (0 allowed: no process term)
  double kappa = 10.0;  // exponential decay
  double tau2 = 0.1;    // noise variance (0 allowed: noise-free)
};

enum class SimDesign { NestedGrid, NonNestedUniform };

struct SimSpec {
  std::vector<SimLevelSpec> levels;
  std::vector<double> gamma;  // constant scale per level link (size T-1)
  SimDesign design = SimDesign::NestedGrid;
  std::vector<HoldoutBox> holdout = default_holdout_boxes();
  std::uint64_t seed = 0;

  int T() const { return static_cast<int>(levels.size()); }

  void validate() const {
    if (levels.empty()) throw validation_error("no fidelity levels");
    if (static_cast<int>(gamma.size()) != T() - 1)
      throw validation_error("one scale coefficient per level link required");
    for (const SimLevelSpec& l : levels) {
      if (l.n < 1) throw validation_error("level sizes must be >= 1");
      if (l.n > 20000)
        throw validation_error(
            "level too large for dense simulation; simulate sequentially "
            "level by level instead");
      if (!(l.sigma2 >= 0.0) || !(l.tau2 >= 0.0))
        throw validation_error("variances must be >= 0");
      if (!(l.kappa > 0.0)) throw validation_error("decay must be positive");
    }
    if (design == SimDesign::NestedGrid)
      for (size_t t = 1; t < levels.size(); ++t)
        if (levels[t].n > levels[t - 1].n)
          throw validation_error(
              "nested design requires non-increasing level sizes");
  }
};

struct SimResult {
  std::vector<FidelityDataset> train;  // top level excludes the holdout
  LocationSet test_locs;               // held-out top-level sites
  Vector test_truth;                   // latent top-level field there
  Vector test_z;                       // noisy observations there
};

namespace detail {

// Sites where the level-t field must be realized: everything this level and
// the levels above it observe, first occurrence kept.
struct FieldSites {
  LocationSet locs;
  std::unordered_map<std::string, int> row;
};

inline FieldSites dedup_sites(const std::vector<LocationSet>& sets,
                              size_t from) {
  FieldSites out;
  std::vector<int> keep_set, keep_row;
  for (size_t s = from; s < sets.size(); ++s)
    for (int i = 0; i < sets[s].n(); ++i) {
      const std::string key = location_key(sets[s], i);
      if (out.row.emplace(key, static_cast<int>(keep_set.size())).second) {
        keep_set.push_back(static_cast<int>(s));
        keep_row.push_back(i);
      }
    }
  Matrix coords(static_cast<int>(keep_set.size()), 2);
  for (size_t i = 0; i < keep_set.size(); ++i)
    coords.row(static_cast<int>(i)) =
        sets[keep_set[i]].coords.row(keep_row[i]);
  out.locs = make_location_set(coords);
  return out;
}

// Dense zero-mean draw from the exponential-covariance process.
inline Vector dense_field_draw(const LocationSet& locs, double sigma2,
                               double kappa, RngStream& rng) {
  const int n = locs.n();
  Vector eps(n);
  for (int i = 0; i < n; ++i) eps[i] = rng.normal();
  if (sigma2 == 0.0) return Vector::Zero(n);
  Matrix C = cov_block(locs, locs, iso_params(sigma2, kappa));
  C.diagonal().array() += 1e-10 * sigma2;
  Eigen::LLT<Matrix> llt(C);
  if (llt.info() != Eigen::Success)
    throw numeric_error("simulation covariance factorization failed");
  return llt.matrixL() * eps;
}

}  // namespace detail

// Generate a synthetic multi-fidelity stack: each level is the scaled
// previous field plus a constant trend plus an independent spatial process,
// observed with white noise. The top level is split into training data and
// the held-out boxes. Identical specs give identical bytes.
inline SimResult simulate(const SimSpec& spec) {
  spec.validate();
  const int T = spec.T();

  // design points per level
  std::vector<LocationSet> sites(T);
  if (spec.design == SimDesign::NestedGrid) {
    const int g = static_cast<int>(std::ceil(std::sqrt(
        static_cast<double>(spec.levels[0].n))));
    Matrix grid(g * g, 2);
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j) {
        grid(i * g + j, 0) = (i + 0.5) / g;
        grid(i * g + j, 1) = (j + 0.5) / g;
      }
    const std::vector<int> perm =
        detail::shuffled_indices(g * g, stream_key(spec.seed, 0, 4));
    for (int t = 0; t < T; ++t) {
      Matrix coords(spec.levels[t].n, 2);
      for (int i = 0; i < spec.levels[t].n; ++i)
        coords.row(i) = grid.row(perm[i]);
      sites[t] = make_location_set(coords);
    }
  } else {
    for (int t = 0; t < T; ++t) {
      RngStream rng(stream_key(spec.seed, t + 1, 3));
      Matrix coords(spec.levels[t].n, 2);
      for (int i = 0; i < spec.levels[t].n; ++i) {
        coords(i, 0) = rng.uniform();
        coords(i, 1) = rng.uniform();
      }
      sites[t] = make_location_set(coords);
    }
  }

  // realize the latent fields from the bottom level upward
  std::vector<detail::FieldSites> field(T);
  std::vector<Vector> y(T);
  for (int t = 0; t < T; ++t) {
    field[t] = detail::dedup_sites(sites, t);
    if (field[t].locs.n() > 20000)
      throw validation_error(
          "level too large for dense simulation; simulate sequentially "
          "level by level instead");
    RngStream rng(stream_key(spec.seed, t + 1, 1));
    y[t] = detail::dense_field_draw(field[t].locs, spec.levels[t].sigma2,
                                    spec.levels[t].kappa, rng);
    y[t].array() += spec.levels[t].beta;
    if (t >= 1)
      for (int i = 0; i < field[t].locs.n(); ++i) {
        const int prev =
            field[t - 1].row.at(location_key(field[t].locs, i));
        y[t][i] += spec.gamma[t - 1] * y[t - 1][prev];
      }
  }

  // observe each level with noise
  std::vector<Vector> z(T);
  for (int t = 0; t < T; ++t) {
    RngStream rng(stream_key(spec.seed, t + 1, 2));
    const int n = sites[t].n();
    z[t] = Vector(n);
    const double sd = std::sqrt(spec.levels[t].tau2);
    for (int i = 0; i < n; ++i) {
      const int r = field[t].row.at(location_key(sites[t], i));
      z[t][i] = y[t][r] + sd * rng.normal();
    }
  }

  // split the top level by the holdout boxes
  std::vector<int> train_rows, test_rows;
  for (int i = 0; i < sites[T - 1].n(); ++i) {
    const double x = sites[T - 1].coords(i, 0);
    const double yy = sites[T - 1].coords(i, 1);
    bool held = false;
    for (const HoldoutBox& b : spec.holdout)
      if (b.contains(x, yy)) {
        held = true;
        break;
      }
    (held ? test_rows : train_rows).push_back(i);
  }
  if (train_rows.empty())
    throw validation_error("holdout removed every top-level training site");

  SimResult res;
  res.train.resize(T);
  for (int t = 0; t < T; ++t) {
    FidelityDataset& ds = res.train[t];
    ds.level = t + 1;
    if (t < T - 1) {
      ds.locs = sites[t];
      ds.z = z[t];
    } else {
      Matrix coords(static_cast<int>(train_rows.size()), 2);
      Vector zt(static_cast<int>(train_rows.size()));
      for (size_t i = 0; i < train_rows.size(); ++i) {
        coords.row(static_cast<int>(i)) = sites[t].coords.row(train_rows[i]);
        zt[static_cast<int>(i)] = z[t][train_rows[i]];
      }
      ds.locs = make_location_set(coords);
      ds.z = zt;
    }
    ds.H = Matrix::Ones(ds.locs.n(), 1);
    if (t >= 1) ds.G = Matrix::Ones(ds.locs.n(), 1);
  }

  Matrix tc(static_cast<int>(test_rows.size()), 2);
  res.test_truth = Vector(static_cast<int>(test_rows.size()));
  res.test_z = Vector(static_cast<int>(test_rows.size()));
  for (size_t i = 0; i < test_rows.size(); ++i) {
    tc.row(static_cast<int>(i)) = sites[T - 1].coords.row(test_rows[i]);
    const int r =
        field[T - 1].row.at(location_key(sites[T - 1], test_rows[i]));
    res.test_truth[static_cast<int>(i)] = y[T - 1][r];
    res.test_z[static_cast<int>(i)] = z[T - 1][test_rows[i]];
  }
  res.test_locs = make_location_set(tc);
  return res;
}

}  // namespace rnnc
