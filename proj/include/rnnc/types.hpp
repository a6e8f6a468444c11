#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace rnnc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// A basis expansion evaluated at a single point: s -> (b_1(s), ..., b_p(s)).
using BasisFn = std::function<Vector(const Vector&)>;

// Input/contract violations (bad data, bad config, bad arguments).
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failures (singular systems, divergent chains).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kJitterRel = 1e-10;   // relative diagonal jitter
inline constexpr int kBruteForceMax = 10000;  // brute-force knn below this size
inline constexpr double kZ975 = 1.959963984540054;

// Coordinates are canonicalized to 12 significant digits at ingestion so that
// coincidence tests across fidelity levels reduce to exact equality.
inline double canon_coord(double v) {
  if (v == 0.0 || !std::isfinite(v)) return v == 0.0 ? 0.0 : v;
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::strtod(buf, nullptr);
}

struct LocationSet {
  Matrix coords;         // n x d
  std::vector<int> ids;  // stable labels, defaults to 0..n-1

  int n() const { return static_cast<int>(coords.rows()); }
  int dim() const { return static_cast<int>(coords.cols()); }
};

inline std::string location_key(const LocationSet& locs, int i) {
  std::string key;
  char buf[40];
  for (int j = 0; j < locs.dim(); ++j) {
    std::snprintf(buf, sizeof(buf), "%.12g", locs.coords(i, j));
    if (j) key.push_back(',');
    key += buf;
  }
  return key;
}

inline std::string point_key(const Vector& p) {
  std::string key;
  char buf[40];
  for (int j = 0; j < p.size(); ++j) {
    std::snprintf(buf, sizeof(buf), "%.12g", p[j]);
    if (j) key.push_back(',');
    key += buf;
  }
  return key;
}

inline LocationSet make_location_set(Matrix coords, std::vector<int> ids = {}) {
  LocationSet ls;
  ls.coords = std::move(coords);
  const int n = ls.n();
  if (n > 0 && ls.dim() < 1)
    throw validation_error("locations need dimension >= 1");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < ls.dim(); ++j)
      ls.coords(i, j) = canon_coord(ls.coords(i, j));
  if (ids.empty()) {
    ids.resize(n);
    for (int i = 0; i < n; ++i) ids[i] = i;
  }
  if (static_cast<int>(ids.size()) != n)
    throw validation_error("location ids length mismatch");
  ls.ids = std::move(ids);
  std::unordered_set<std::string> seen;
  seen.reserve(static_cast<size_t>(n) * 2);
  for (int i = 0; i < n; ++i) {
    if (!seen.insert(location_key(ls, i)).second)
      throw validation_error("duplicate coordinates at id " +
                             std::to_string(ls.ids[i]));
  }
  return ls;
}

struct Ordering {
  std::vector<int> order;  // order[k] = data row of the k-th ordered point
};

struct NeighborIndex {
  int m = 0;
  // sets[k]: conditioning set of ordered point k, ordered positions < k,
  // sorted by ascending distance then ascending position.
  std::vector<std::vector<int>> sets;
  // identity of the sparsity structure; solvers keyed on it can skip
  // re-analyzing an unchanged pattern when only parameter values move
  std::uint64_t pattern_id = 0;
};

}  // namespace rnnc
