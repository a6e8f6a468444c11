#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rnnc/cokrige.hpp"
#include "rnnc/conjugate.hpp"
#include "rnnc/metrics.hpp"
#include "rnnc/sampler.hpp"
#include "rnnc/simulate.hpp"
#include "rnnc/types.hpp"

namespace rnnc {

// ---------------------------------------------------------------------------
// text utilities
// ---------------------------------------------------------------------------
namespace ioutil {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) out.push_back("");
  return out;
}

inline double parse_double(const std::string& cell, const std::string& where) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    throw validation_error("non-numeric value " + where);
  }
  if (pos != cell.size())
    throw validation_error("non-numeric value " + where);
  return v;
}

inline long long parse_int(const std::string& cell,
                           const std::string& where) {
  size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(cell, &pos);
  } catch (const std::exception&) {
    throw validation_error("non-integer value " + where);
  }
  if (pos != cell.size())
    throw validation_error("non-integer value " + where);
  return v;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace ioutil

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

enum class BasisKind { Constant, Linear };

// Constant: b(s) = (1). Linear: b(s) = (1, s_1, ..., s_d).
inline BasisFn make_basis(BasisKind kind) {
  if (kind == BasisKind::Constant)
    return [](const Vector&) {
      Vector v(1);
      v[0] = 1.0;
      return v;
    };
  return [](const Vector& s) {
    Vector v(s.size() + 1);
    v[0] = 1.0;
    v.tail(s.size()) = s;
    return v;
  };
}

inline int basis_dim(BasisKind kind, int coord_dim = 2) {
  return kind == BasisKind::Constant ? 1 : 1 + coord_dim;
}

struct RunConfig {
  // model block
  int levels = 2;
  int m = 10;
  BasisKind trend_basis = BasisKind::Constant;
  BasisKind scale_basis = BasisKind::Constant;

  // candidate grid block
  double kappa_lo = 0.1, kappa_hi = 25.0;
  int kappa_count = 20;
  double tau2_lo = 5e-4, tau2_hi = 0.4;
  int tau2_count = 10;
  int folds = 5;

  // priors block
  double beta_mean = 0.0, beta_var = 1000.0;
  double gamma_mean = 0.0, gamma_var = 1000.0;
  double sigma2_a = 2.0, sigma2_b = 1.0;
  double tau2_a = 2.0, tau2_b = 1.0;

  // mcmc block
  int mcmc_iterations = 10000, mcmc_burn_in = 2000, mcmc_thin = 1;
  double scale_sigma2 = 0.1, scale_kappa = 0.1, scale_tau2 = 0.1;
  bool mcmc_adapt = true;
  double target_accept = 0.30;
  double kappa_max = 25.0;

  // data block
  char delimiter = ',';
  bool equirectangular = false;

  // simulation block
  SimDesign sim_design = SimDesign::NestedGrid;
  bool sim_holdout = true;
  std::vector<SimLevelSpec> sim_levels;
  std::vector<double> sim_gamma;

  RunConfig() { reset_sim_defaults(); }

  // Two-level synthetic-study truths, repeated for deeper stacks.
  void reset_sim_defaults() {
    sim_levels.assign(static_cast<size_t>(levels), {500, 1.0, 1.0, 10.0, 0.05});
    if (!sim_levels.empty()) sim_levels[0] = {500, 10.0, 4.0, 10.0, 0.1};
    sim_gamma.assign(static_cast<size_t>(std::max(levels - 1, 0)), 1.0);
  }

  void validate() const {
    if (levels < 1) throw validation_error("model.levels must be >= 1");
    if (m < 1) throw validation_error("model.m must be >= 1");
    if (!(kappa_lo > 0.0) || !(kappa_hi >= kappa_lo) || kappa_count < 1 ||
        !(tau2_lo > 0.0) || !(tau2_hi >= tau2_lo) || tau2_count < 1)
      throw validation_error("invalid grid specification");
    if (folds < 2) throw validation_error("grid.folds must be >= 2");
    if (!(beta_var > 0.0) || !(gamma_var > 0.0))
      throw validation_error("prior variances must be positive");
    if (!(sigma2_a > 0.0) || !(sigma2_b > 0.0) || !(tau2_a > 0.0) ||
        !(tau2_b > 0.0))
      throw validation_error("inverse-gamma priors need positive parameters");
    if (mcmc_iterations < 1 || mcmc_burn_in < 0 || mcmc_thin < 1)
      throw validation_error("invalid mcmc iteration counts");
    if (!(scale_sigma2 > 0.0) || !(scale_kappa > 0.0) || !(scale_tau2 > 0.0))
      throw validation_error("proposal scales must be positive");
    if (!(target_accept > 0.0) || !(target_accept < 1.0))
      throw validation_error("target acceptance must be inside (0, 1)");
    if (!(kappa_max > 0.0))
      throw validation_error("decay upper bound must be positive");
    if (static_cast<int>(sim_levels.size()) != levels ||
        static_cast<int>(sim_gamma.size()) != levels - 1)
      throw validation_error("simulation blocks must match model.levels");
  }
};

namespace detail {

inline std::string basis_name(BasisKind k) {
  return k == BasisKind::Constant ? "constant" : "linear";
}

inline BasisKind parse_basis(const std::string& v, const std::string& key) {
  if (v == "constant") return BasisKind::Constant;
  if (v == "linear") return BasisKind::Linear;
  throw validation_error("invalid value for " + key +
                         " (expected constant or linear)");
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw validation_error("invalid value for " + key +
                         " (expected true or false)");
}

}  // namespace detail

// Canonical text form: every schema key in fixed order. Hashing this string
// identifies the configuration.
inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  out << "model.levels = " << c.levels << "\n";
  out << "model.m = " << c.m << "\n";
  out << "model.trend_basis = " << detail::basis_name(c.trend_basis) << "\n";
  out << "model.scale_basis = " << detail::basis_name(c.scale_basis) << "\n";
  out << "grid.kappa_lo = " << ioutil::fmt(c.kappa_lo) << "\n";
  out << "grid.kappa_hi = " << ioutil::fmt(c.kappa_hi) << "\n";
  out << "grid.kappa_count = " << c.kappa_count << "\n";
  out << "grid.tau2_lo = " << ioutil::fmt(c.tau2_lo) << "\n";
  out << "grid.tau2_hi = " << ioutil::fmt(c.tau2_hi) << "\n";
  out << "grid.tau2_count = " << c.tau2_count << "\n";
  out << "grid.folds = " << c.folds << "\n";
  out << "priors.beta_mean = " << ioutil::fmt(c.beta_mean) << "\n";
  out << "priors.beta_var = " << ioutil::fmt(c.beta_var) << "\n";
  out << "priors.gamma_mean = " << ioutil::fmt(c.gamma_mean) << "\n";
  out << "priors.gamma_var = " << ioutil::fmt(c.gamma_var) << "\n";
  out << "priors.sigma2_a = " << ioutil::fmt(c.sigma2_a) << "\n";
  out << "priors.sigma2_b = " << ioutil::fmt(c.sigma2_b) << "\n";
  out << "priors.tau2_a = " << ioutil::fmt(c.tau2_a) << "\n";
  out << "priors.tau2_b = " << ioutil::fmt(c.tau2_b) << "\n";
  out << "mcmc.iterations = " << c.mcmc_iterations << "\n";
  out << "mcmc.burn_in = " << c.mcmc_burn_in << "\n";
  out << "mcmc.thin = " << c.mcmc_thin << "\n";
  out << "mcmc.scale_sigma2 = " << ioutil::fmt(c.scale_sigma2) << "\n";
  out << "mcmc.scale_kappa = " << ioutil::fmt(c.scale_kappa) << "\n";
  out << "mcmc.scale_tau2 = " << ioutil::fmt(c.scale_tau2) << "\n";
  out << "mcmc.adapt = " << (c.mcmc_adapt ? "true" : "false") << "\n";
  out << "mcmc.target_accept = " << ioutil::fmt(c.target_accept) << "\n";
  out << "mcmc.kappa_max = " << ioutil::fmt(c.kappa_max) << "\n";
  out << "data.delimiter = " << (c.delimiter == '\t' ? "tab" : "comma")
      << "\n";
  out << "data.projection = "
      << (c.equirectangular ? "equirectangular" : "none") << "\n";
  out << "sim.design = "
      << (c.sim_design == SimDesign::NestedGrid ? "nested-grid"
                                                : "non-nested-uniform")
      << "\n";
  out << "sim.holdout = " << (c.sim_holdout ? "default" : "none") << "\n";
  for (int t = 1; t <= c.levels; ++t) {
    const SimLevelSpec& l = c.sim_levels[t - 1];
    out << "sim.n." << t << " = " << l.n << "\n";
    out << "sim.beta." << t << " = " << ioutil::fmt(l.beta) << "\n";
    out << "sim.sigma2." << t << " = " << ioutil::fmt(l.sigma2) << "\n";
    out << "sim.kappa." << t << " = " << ioutil::fmt(l.kappa) << "\n";
    out << "sim.tau2." << t << " = " << ioutil::fmt(l.tau2) << "\n";
  }
  for (int t = 1; t <= c.levels - 1; ++t)
    out << "sim.gamma." << t << " = " << ioutil::fmt(c.sim_gamma[t - 1])
        << "\n";
  return out.str();
}

inline std::string config_hash(const RunConfig& c) {
  const std::string s = serialize_config(c);
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

// Key-value configuration parser. Lines are `key = value`; '#' starts a
// comment; unknown or duplicate keys are rejected.
inline RunConfig parse_config(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = ioutil::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw validation_error("config line " + std::to_string(lineno) +
                             " is not of the form key = value");
    const std::string key = ioutil::trim(line.substr(0, eq));
    const std::string value = ioutil::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw validation_error("config line " + std::to_string(lineno) +
                             " is not of the form key = value");
    if (!kv.emplace(key, value).second)
      throw validation_error("duplicate config key: " + key);
  }

  RunConfig cfg;
  // model.levels first: the per-level simulation keys depend on it
  if (auto it = kv.find("model.levels"); it != kv.end()) {
    cfg.levels = static_cast<int>(
        ioutil::parse_int(it->second, "for model.levels"));
    if (cfg.levels < 1) throw validation_error("model.levels must be >= 1");
    cfg.reset_sim_defaults();
  }

  auto take_double = [&](const std::string& key, double& slot) {
    if (auto it = kv.find(key); it != kv.end()) {
      slot = ioutil::parse_double(it->second, "for " + key);
      kv.erase(it);
    }
  };
  auto take_int = [&](const std::string& key, int& slot) {
    if (auto it = kv.find(key); it != kv.end()) {
      slot = static_cast<int>(ioutil::parse_int(it->second, "for " + key));
      kv.erase(it);
    }
  };
  kv.erase("model.levels");

  take_int("model.m", cfg.m);
  if (auto it = kv.find("model.trend_basis"); it != kv.end()) {
    cfg.trend_basis = detail::parse_basis(it->second, it->first);
    kv.erase(it);
  }
  if (auto it = kv.find("model.scale_basis"); it != kv.end()) {
    cfg.scale_basis = detail::parse_basis(it->second, it->first);
    kv.erase(it);
  }
  take_double("grid.kappa_lo", cfg.kappa_lo);
  take_double("grid.kappa_hi", cfg.kappa_hi);
  take_int("grid.kappa_count", cfg.kappa_count);
  take_double("grid.tau2_lo", cfg.tau2_lo);
  take_double("grid.tau2_hi", cfg.tau2_hi);
  take_int("grid.tau2_count", cfg.tau2_count);
  take_int("grid.folds", cfg.folds);
  take_double("priors.beta_mean", cfg.beta_mean);
  take_double("priors.beta_var", cfg.beta_var);
  take_double("priors.gamma_mean", cfg.gamma_mean);
  take_double("priors.gamma_var", cfg.gamma_var);
  take_double("priors.sigma2_a", cfg.sigma2_a);
  take_double("priors.sigma2_b", cfg.sigma2_b);
  take_double("priors.tau2_a", cfg.tau2_a);
  take_double("priors.tau2_b", cfg.tau2_b);
  take_int("mcmc.iterations", cfg.mcmc_iterations);
  take_int("mcmc.burn_in", cfg.mcmc_burn_in);
  take_int("mcmc.thin", cfg.mcmc_thin);
  take_double("mcmc.scale_sigma2", cfg.scale_sigma2);
  take_double("mcmc.scale_kappa", cfg.scale_kappa);
  take_double("mcmc.scale_tau2", cfg.scale_tau2);
  if (auto it = kv.find("mcmc.adapt"); it != kv.end()) {
    cfg.mcmc_adapt = detail::parse_bool(it->second, it->first);
    kv.erase(it);
  }
  take_double("mcmc.target_accept", cfg.target_accept);
  take_double("mcmc.kappa_max", cfg.kappa_max);
  if (auto it = kv.find("data.delimiter"); it != kv.end()) {
    if (it->second == "comma")
      cfg.delimiter = ',';
    else if (it->second == "tab")
      cfg.delimiter = '\t';
    else
      throw validation_error(
          "invalid value for data.delimiter (expected comma or tab)");
    kv.erase(it);
  }
  if (auto it = kv.find("data.projection"); it != kv.end()) {
    if (it->second == "none")
      cfg.equirectangular = false;
    else if (it->second == "equirectangular")
      cfg.equirectangular = true;
    else
      throw validation_error(
          "invalid value for data.projection (expected none or "
          "equirectangular)");
    kv.erase(it);
  }
  if (auto it = kv.find("sim.design"); it != kv.end()) {
    if (it->second == "nested-grid")
      cfg.sim_design = SimDesign::NestedGrid;
    else if (it->second == "non-nested-uniform")
      cfg.sim_design = SimDesign::NonNestedUniform;
    else
      throw validation_error(
          "invalid value for sim.design (expected nested-grid or "
          "non-nested-uniform)");
    kv.erase(it);
  }
  if (auto it = kv.find("sim.holdout"); it != kv.end()) {
    if (it->second == "default")
      cfg.sim_holdout = true;
    else if (it->second == "none")
      cfg.sim_holdout = false;
    else
      throw validation_error(
          "invalid value for sim.holdout (expected default or none)");
    kv.erase(it);
  }
  for (int t = 1; t <= cfg.levels; ++t) {
    SimLevelSpec& l = cfg.sim_levels[t - 1];
    take_int("sim.n." + std::to_string(t), l.n);
    take_double("sim.beta." + std::to_string(t), l.beta);
    take_double("sim.sigma2." + std::to_string(t), l.sigma2);
    take_double("sim.kappa." + std::to_string(t), l.kappa);
    take_double("sim.tau2." + std::to_string(t), l.tau2);
  }
  for (int t = 1; t <= cfg.levels - 1; ++t)
    take_double("sim.gamma." + std::to_string(t), cfg.sim_gamma[t - 1]);

  if (!kv.empty())
    throw validation_error("unknown config key: " + kv.begin()->first);
  cfg.validate();
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open config file: " + path);
  return parse_config(in);
}

// ---------------------------------------------------------------------------
// observation ingestion
// ---------------------------------------------------------------------------

// Optional equirectangular pre-projection: longitudes are compressed by the
// cosine of the mean latitude so planar distances approximate geodesics.
struct Projection {
  bool active = false;
  double cos_lat = 1.0;

  double apply_x(double x) const { return active ? x * cos_lat : x; }
};

inline Projection make_projection(bool active, const std::vector<double>& ys) {
  Projection p;
  p.active = active;
  if (active && !ys.empty()) {
    double mean = 0.0;
    for (double y : ys) mean += y;
    mean /= static_cast<double>(ys.size());
    p.cos_lat = std::max(std::cos(mean * 3.14159265358979323846 / 180.0),
                         1e-6);
  }
  return p;
}

struct NestednessReport {
  // per level link t -> t-1 for t = 2..T
  std::vector<int> shared;
  std::vector<int> total;

  std::string diagnosis() const {
    if (shared.empty()) return "single level";
    bool all_shared = true, none_shared = true;
    for (size_t i = 0; i < shared.size(); ++i) {
      if (shared[i] != total[i]) all_shared = false;
      if (shared[i] != 0) none_shared = false;
    }
    if (all_shared) return "fully nested";
    if (none_shared) return "non-nested";
    std::ostringstream s;
    s << "partially nested (";
    for (size_t i = 0; i < shared.size(); ++i) {
      if (i) s << ", ";
      s << "level " << i + 2 << ": " << shared[i] << "/" << total[i]
        << " shared";
    }
    s << ")";
    return s.str();
  }
};

struct IngestResult {
  std::vector<FidelityDataset> levels;
  NestednessReport nested;
  Projection projection;
};

// Parse a delimited observation file with header columns x, y, value, level
// into per-level datasets with the configured basis matrices.
inline IngestResult ingest(std::istream& in, const RunConfig& cfg) {
  std::string line;
  int lineno = 0;
  // skip artifact stamps and blank lines before the header
  do {
    if (!std::getline(in, line))
      throw validation_error("empty observation file");
    ++lineno;
  } while (ioutil::trim(line).empty() || ioutil::trim(line)[0] == '#');
  std::vector<std::string> header = ioutil::split(line, cfg.delimiter);
  for (std::string& h : header) {
    std::transform(h.begin(), h.end(), h.begin(),
                   [](unsigned char c) { return std::tolower(c); });
  }
  int cx = -1, cy = -1, cv = -1, cl = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "x")
      cx = static_cast<int>(i);
    else if (header[i] == "y")
      cy = static_cast<int>(i);
    else if (header[i] == "value")
      cv = static_cast<int>(i);
    else if (header[i] == "level")
      cl = static_cast<int>(i);
    else
      throw validation_error("unknown column '" + header[i] + "'");
  }
  if (cx < 0) throw validation_error("missing column 'x'");
  if (cy < 0) throw validation_error("missing column 'y'");
  if (cv < 0) throw validation_error("missing column 'value'");
  if (cl < 0) throw validation_error("missing column 'level'");

  struct Row {
    double x, y, z;
    int line;
  };
  std::vector<std::vector<Row>> rows(static_cast<size_t>(cfg.levels));
  std::vector<double> all_y;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string probe = ioutil::trim(line);
    if (probe.empty() || probe[0] == '#') continue;
    const std::vector<std::string> cells = ioutil::split(line, cfg.delimiter);
    if (static_cast<int>(cells.size()) != static_cast<int>(header.size()))
      throw validation_error("wrong cell count at row " +
                             std::to_string(lineno));
    const std::string where = "at row " + std::to_string(lineno);
    Row r;
    r.x = ioutil::parse_double(cells[cx], "for column 'x' " + where);
    r.y = ioutil::parse_double(cells[cy], "for column 'y' " + where);
    r.z = ioutil::parse_double(cells[cv], "for column 'value' " + where);
    if (!std::isfinite(r.x) || !std::isfinite(r.y))
      throw validation_error("non-finite coordinate " + where);
    const long long lvl =
        ioutil::parse_int(cells[cl], "for column 'level' " + where);
    if (lvl < 1 || lvl > cfg.levels)
      throw validation_error("level out of range " + where);
    r.line = lineno;
    rows[static_cast<size_t>(lvl - 1)].push_back(r);
    all_y.push_back(r.y);
  }
  for (int t = 1; t <= cfg.levels; ++t)
    if (rows[t - 1].empty())
      throw validation_error("no rows for level " + std::to_string(t));

  IngestResult res;
  res.projection = make_projection(cfg.equirectangular, all_y);
  const BasisFn h = make_basis(cfg.trend_basis);
  const BasisFn g = make_basis(cfg.scale_basis);

  for (int t = 1; t <= cfg.levels; ++t) {
    const std::vector<Row>& lv = rows[t - 1];
    const int n = static_cast<int>(lv.size());
    Matrix coords(n, 2);
    Vector z(n);
    for (int i = 0; i < n; ++i) {
      coords(i, 0) = canon_coord(res.projection.apply_x(lv[i].x));
      coords(i, 1) = canon_coord(lv[i].y);
      z[i] = lv[i].z;
    }
    // duplicate scan with source rows named
    std::unordered_map<std::string, int> seen;
    for (int i = 0; i < n; ++i) {
      char buf[90];
      std::snprintf(buf, sizeof(buf), "%.12g,%.12g", coords(i, 0),
                    coords(i, 1));
      auto [it, fresh] = seen.emplace(buf, i);
      if (!fresh)
        throw validation_error(
            "duplicate coordinates at rows " +
            std::to_string(lv[it->second].line) + " and " +
            std::to_string(lv[i].line) + " (level " + std::to_string(t) +
            ")");
    }

    FidelityDataset ds;
    ds.level = t;
    ds.locs = make_location_set(std::move(coords));
    ds.z = z;
    ds.H = Matrix(n, basis_dim(cfg.trend_basis));
    for (int i = 0; i < n; ++i)
      ds.H.row(i) = h(ds.locs.coords.row(i).transpose()).transpose();
    if (t >= 2) {
      ds.G = Matrix(n, basis_dim(cfg.scale_basis));
      for (int i = 0; i < n; ++i)
        ds.G.row(i) = g(ds.locs.coords.row(i).transpose()).transpose();
    }
    ds.validate();
    res.levels.push_back(std::move(ds));
  }

  for (int t = 2; t <= cfg.levels; ++t) {
    std::unordered_map<std::string, int> below;
    const LocationSet& prev = res.levels[t - 2].locs;
    for (int i = 0; i < prev.n(); ++i)
      below.emplace(location_key(prev, i), i);
    int shared = 0;
    const LocationSet& own = res.levels[t - 1].locs;
    for (int i = 0; i < own.n(); ++i)
      if (below.count(location_key(own, i))) ++shared;
    res.nested.shared.push_back(shared);
    res.nested.total.push_back(own.n());
  }
  return res;
}

inline IngestResult ingest_file(const std::string& path,
                                const RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open data file: " + path);
  return ingest(in, cfg);
}

// Projected copy of a location set (identity when the projection is off).
inline LocationSet project_locations(const LocationSet& locs,
                                     const Projection& proj) {
  if (!proj.active) return locs;
  Matrix c = locs.coords;
  for (int i = 0; i < c.rows(); ++i) c(i, 0) = proj.apply_x(c(i, 0));
  return make_location_set(std::move(c), locs.ids);
}

// Location file with header columns x, y (prediction targets, unprojected).
inline LocationSet read_locations(std::istream& in, char delim) {
  std::string line;
  int lineno = 0;
  do {
    if (!std::getline(in, line))
      throw validation_error("empty location file");
    ++lineno;
  } while (ioutil::trim(line).empty() || ioutil::trim(line)[0] == '#');
  std::vector<std::string> header = ioutil::split(line, delim);
  for (std::string& h : header)
    std::transform(h.begin(), h.end(), h.begin(),
                   [](unsigned char c) { return std::tolower(c); });
  int cx = -1, cy = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "x")
      cx = static_cast<int>(i);
    else if (header[i] == "y")
      cy = static_cast<int>(i);
    else
      throw validation_error("unknown column '" + header[i] + "'");
  }
  if (cx < 0) throw validation_error("missing column 'x'");
  if (cy < 0) throw validation_error("missing column 'y'");
  std::vector<std::pair<double, double>> pts;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string probe = ioutil::trim(line);
    if (probe.empty() || probe[0] == '#') continue;
    const std::vector<std::string> cells = ioutil::split(line, delim);
    if (cells.size() != header.size())
      throw validation_error("wrong cell count at row " +
                             std::to_string(lineno));
    const std::string where = "at row " + std::to_string(lineno);
    const double x =
        ioutil::parse_double(cells[cx], "for column 'x' " + where);
    const double y =
        ioutil::parse_double(cells[cy], "for column 'y' " + where);
    if (!std::isfinite(x) || !std::isfinite(y))
      throw validation_error("non-finite coordinate " + where);
    pts.emplace_back(x, y);
  }
  if (pts.empty()) throw validation_error("empty location file");
  Matrix coords(static_cast<int>(pts.size()), 2);
  for (size_t i = 0; i < pts.size(); ++i) {
    coords(static_cast<int>(i), 0) = pts[i].first;
    coords(static_cast<int>(i), 1) = pts[i].second;
  }
  return make_location_set(std::move(coords));
}

// Pixel grid specification "NXxNY" or "NXxNY:x0,x1,y0,y1"; cell centers.
inline LocationSet parse_grid_spec(const std::string& spec) {
  const std::string bad = "invalid grid spec (expected NXxNY[:x0,x1,y0,y1])";
  std::string dims = spec, bounds;
  if (const size_t colon = spec.find(':'); colon != std::string::npos) {
    dims = spec.substr(0, colon);
    bounds = spec.substr(colon + 1);
  }
  const size_t xpos = dims.find('x');
  if (xpos == std::string::npos) throw validation_error(bad);
  const long long nx = ioutil::parse_int(dims.substr(0, xpos), "in grid spec");
  const long long ny =
      ioutil::parse_int(dims.substr(xpos + 1), "in grid spec");
  if (nx < 1 || ny < 1 || nx * ny > 2000000) throw validation_error(bad);
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (!bounds.empty()) {
    const std::vector<std::string> b = ioutil::split(bounds, ',');
    if (b.size() != 4) throw validation_error(bad);
    x0 = ioutil::parse_double(b[0], "in grid spec");
    x1 = ioutil::parse_double(b[1], "in grid spec");
    y0 = ioutil::parse_double(b[2], "in grid spec");
    y1 = ioutil::parse_double(b[3], "in grid spec");
    if (!(x1 > x0) || !(y1 > y0)) throw validation_error(bad);
  }
  Matrix coords(static_cast<int>(nx * ny), 2);
  int r = 0;
  for (long long i = 0; i < nx; ++i)
    for (long long j = 0; j < ny; ++j, ++r) {
      coords(r, 0) = x0 + (x1 - x0) * (i + 0.5) / static_cast<double>(nx);
      coords(r, 1) = y0 + (y1 - y0) * (j + 0.5) / static_cast<double>(ny);
    }
  return make_location_set(std::move(coords));
}

// ---------------------------------------------------------------------------
// artifact writers
// ---------------------------------------------------------------------------

inline std::string artifact_stamp(const RunConfig& cfg, std::uint64_t seed) {
  return "# config=" + config_hash(cfg) + " seed=" + std::to_string(seed);
}

inline void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw validation_error("cannot write file: " + path);
  out << body;
  if (!out) throw validation_error("cannot write file: " + path);
}

inline void write_simulation(const std::string& dir, const SimResult& sim,
                             const RunConfig& cfg, std::uint64_t seed) {
  std::ostringstream data;
  data << artifact_stamp(cfg, seed) << "\n";
  data << "x,y,value,level\n";
  for (const FidelityDataset& ds : sim.train)
    for (int i = 0; i < ds.n(); ++i)
      data << ioutil::fmt(ds.locs.coords(i, 0)) << ","
           << ioutil::fmt(ds.locs.coords(i, 1)) << "," << ioutil::fmt(ds.z[i])
           << "," << ds.level << "\n";
  write_text(dir + "/data.csv", data.str());

  std::ostringstream truth;
  truth << artifact_stamp(cfg, seed) << "\n";
  truth << "x,y,truth,value\n";
  for (int i = 0; i < sim.test_locs.n(); ++i)
    truth << ioutil::fmt(sim.test_locs.coords(i, 0)) << ","
          << ioutil::fmt(sim.test_locs.coords(i, 1)) << ","
          << ioutil::fmt(sim.test_truth[i]) << ","
          << ioutil::fmt(sim.test_z[i]) << "\n";
  write_text(dir + "/truth.csv", truth.str());

  write_text(dir + "/config.txt",
             artifact_stamp(cfg, seed) + "\n" + serialize_config(cfg));
}

inline void write_conjugate_fit(const std::string& dir,
                                const ConjugateFit& fit, const RunConfig& cfg,
                                std::uint64_t seed) {
  const std::string stamp = artifact_stamp(cfg, seed);

  std::ostringstream hyper;
  hyper << stamp << "\n";
  hyper << "level,kappa,range,tau2_rel,sigma2_hat,tau2_hat,a_star,b_star\n";
  for (size_t t = 0; t < fit.posteriors.size(); ++t) {
    const LevelPosterior& p = fit.posteriors[t];
    hyper << t + 1 << "," << ioutil::fmt(p.kappa) << ","
          << ioutil::fmt(1.0 / p.kappa) << "," << ioutil::fmt(p.tau2_rel)
          << "," << ioutil::fmt(p.sigma2_hat) << ","
          << ioutil::fmt(p.tau2_hat()) << "," << ioutil::fmt(p.a_star) << ","
          << ioutil::fmt(p.b_star) << "\n";
  }
  write_text(dir + "/hyperparameters.csv", hyper.str());

  std::ostringstream coef;
  coef << stamp << "\n";
  coef << "level,name,estimate,sd\n";
  for (size_t t = 0; t < fit.posteriors.size(); ++t) {
    const LevelPosterior& p = fit.posteriors[t];
    for (int j = 0; j < p.beta_hat.size(); ++j)
      coef << t + 1 << ",beta" << j << "," << ioutil::fmt(p.beta_hat[j])
           << "," << ioutil::fmt(std::sqrt(p.beta_cov(j, j))) << "\n";
    for (int j = 0; j < p.gamma_hat.size(); ++j)
      coef << t + 1 << ",gamma" << j << "," << ioutil::fmt(p.gamma_hat[j])
           << "," << ioutil::fmt(std::sqrt(p.gamma_cov(j, j))) << "\n";
  }
  write_text(dir + "/coefficients.csv", coef.str());

  std::ostringstream cv;
  cv << stamp << "\n";
  cv << "level,kappa,tau2_rel,rmspe\n";
  for (size_t t = 0; t < fit.posteriors.size(); ++t) {
    const Matrix& tbl = fit.posteriors[t].cv_table;
    for (int r = 0; r < tbl.rows(); ++r)
      cv << t + 1 << "," << ioutil::fmt(tbl(r, 0)) << ","
         << ioutil::fmt(tbl(r, 1)) << "," << ioutil::fmt(tbl(r, 2)) << "\n";
  }
  write_text(dir + "/cv_table.csv", cv.str());

  std::ostringstream knots;
  knots << stamp << "\n";
  knots << "level,x,y,mean,var\n";
  for (size_t t = 0; t < fit.fields.size(); ++t) {
    const ImputedField& f = fit.fields[t];
    for (int i = 0; i < f.at.n(); ++i)
      knots << t + 1 << "," << ioutil::fmt(f.at.coords(i, 0)) << ","
            << ioutil::fmt(f.at.coords(i, 1)) << "," << ioutil::fmt(f.mean[i])
            << "," << ioutil::fmt(f.var[i]) << "\n";
  }
  write_text(dir + "/knots.csv", knots.str());
}

inline void write_chain(const std::string& dir, const ChainResult& chain,
                        const RunConfig& cfg, std::uint64_t seed) {
  const std::string stamp = artifact_stamp(cfg, seed);

  std::ostringstream sum;
  sum << stamp << "\n";
  sum << "level,name,mean,lo95,hi95\n";
  for (const LevelDraws& ld : chain.levels)
    for (const ParamSummary& p : ld.summary)
      sum << ld.level << "," << p.name << "," << ioutil::fmt(p.mean) << ","
          << ioutil::fmt(p.lo95) << "," << ioutil::fmt(p.hi95) << "\n";
  write_text(dir + "/summary.csv", sum.str());

  std::ostringstream acc;
  acc << stamp << "\n";
  acc << "level,accept_rate\n";
  for (const LevelDraws& ld : chain.levels)
    acc << ld.level << "," << ioutil::fmt(ld.accept_rate) << "\n";
  write_text(dir + "/accept.csv", acc.str());

  for (const LevelDraws& ld : chain.levels) {
    std::ostringstream d;
    d << stamp << "\n";
    for (size_t j = 0; j < ld.names.size(); ++j) {
      if (j) d << ",";
      d << ld.names[j];
    }
    d << "\n";
    for (int r = 0; r < ld.draws.rows(); ++r) {
      for (int j = 0; j < ld.draws.cols(); ++j) {
        if (j) d << ",";
        d << ioutil::fmt(ld.draws(r, j));
      }
      d << "\n";
    }
    write_text(dir + "/draws_level" + std::to_string(ld.level) + ".csv",
               d.str());
  }
}

// Predictions for the top fidelity level, in the original (unprojected)
// coordinates supplied by the caller.
inline void write_predictions(const std::string& path,
                              const LocationSet& original_locs,
                              int level, const Vector& mean,
                              const Vector& sd, const Vector& lo,
                              const Vector& hi, const RunConfig& cfg,
                              std::uint64_t seed) {
  std::ostringstream out;
  out << artifact_stamp(cfg, seed) << "\n";
  out << "x,y,level,mean,sd,lo95,hi95\n";
  for (int i = 0; i < original_locs.n(); ++i)
    out << ioutil::fmt(original_locs.coords(i, 0)) << ","
        << ioutil::fmt(original_locs.coords(i, 1)) << "," << level << ","
        << ioutil::fmt(mean[i]) << "," << ioutil::fmt(sd[i]) << ","
        << ioutil::fmt(lo[i]) << "," << ioutil::fmt(hi[i]) << "\n";
  write_text(path, out.str());
}

inline void write_metrics(const std::string& path,
                          const std::vector<PredictionRecord>& records,
                          const RunConfig& cfg, std::uint64_t seed) {
  std::ostringstream out;
  out << artifact_stamp(cfg, seed) << "\n";
  out << "metric,value\n";
  out << "rmspe," << ioutil::fmt(rmspe(records)) << "\n";
  bool constant_obs = true;
  for (size_t i = 1; i < records.size(); ++i)
    if (records[i].obs != records[0].obs) {
      constant_obs = false;
      break;
    }
  out << "nsme,"
      << (constant_obs ? "nan" : ioutil::fmt(nsme(records))) << "\n";
  out << "cvg95," << ioutil::fmt(cvg95(records)) << "\n";
  out << "alci95," << ioutil::fmt(alci95(records)) << "\n";
  out << "crps," << ioutil::fmt(crps_gaussian(records)) << "\n";
  write_text(path, out.str());
}

// Records file with header columns obs, mean, sd and optionally lo95, hi95
// (computed from the normal quantile when absent).
inline std::vector<PredictionRecord> read_records(std::istream& in,
                                                  char delim) {
  std::string line;
  int lineno = 0;
  // skip artifact stamps and blank lines before the header
  do {
    if (!std::getline(in, line)) throw validation_error("empty records file");
    ++lineno;
    line = ioutil::trim(line);
  } while (line.empty() || line[0] == '#');
  std::vector<std::string> header = ioutil::split(line, delim);
  for (std::string& h : header)
    std::transform(h.begin(), h.end(), h.begin(),
                   [](unsigned char c) { return std::tolower(c); });
  int cobs = -1, cmean = -1, csd = -1, clo = -1, chi = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "obs")
      cobs = static_cast<int>(i);
    else if (header[i] == "mean")
      cmean = static_cast<int>(i);
    else if (header[i] == "sd")
      csd = static_cast<int>(i);
    else if (header[i] == "lo95")
      clo = static_cast<int>(i);
    else if (header[i] == "hi95")
      chi = static_cast<int>(i);
    else if (header[i] == "x" || header[i] == "y" || header[i] == "level") {
      // coordinate passthrough from a predictions file; not scored
    } else
      throw validation_error("unknown column '" + header[i] + "'");
  }
  if (cobs < 0) throw validation_error("missing column 'obs'");
  if (cmean < 0) throw validation_error("missing column 'mean'");
  if (csd < 0) throw validation_error("missing column 'sd'");
  if ((clo < 0) != (chi < 0))
    throw validation_error("lo95 and hi95 must appear together");

  std::vector<PredictionRecord> out;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string probe = ioutil::trim(line);
    if (probe.empty() || probe[0] == '#') continue;
    const std::vector<std::string> cells = ioutil::split(line, delim);
    if (cells.size() != header.size())
      throw validation_error("wrong cell count at row " +
                             std::to_string(lineno));
    const std::string where = "at row " + std::to_string(lineno);
    PredictionRecord r;
    r.obs = ioutil::parse_double(cells[cobs], "for column 'obs' " + where);
    r.mean = ioutil::parse_double(cells[cmean], "for column 'mean' " + where);
    r.sd = ioutil::parse_double(cells[csd], "for column 'sd' " + where);
    if (clo >= 0) {
      r.lo95 = ioutil::parse_double(cells[clo], "for column 'lo95' " + where);
      r.hi95 = ioutil::parse_double(cells[chi], "for column 'hi95' " + where);
    } else {
      r.lo95 = r.mean - kZ975 * r.sd;
      r.hi95 = r.mean + kZ975 * r.sd;
    }
    r.validate();
    out.push_back(r);
  }
  if (out.empty()) throw validation_error("no prediction records");
  return out;
}

}  // namespace rnnc
