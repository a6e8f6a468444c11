#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "conjugate_reference.hpp"
#include "dense_reference.hpp"
#include "rnnc/conjugate.hpp"

namespace {

using rnnc::CandidateGrid;
using rnnc::CollapsedSolver;
using rnnc::ConjugatePriors;
using rnnc::FidelityDataset;
using rnnc::InverseGammaPrior;
using rnnc::KfoldOptions;
using rnnc::Matrix;
using rnnc::NormalPrior;
using rnnc::OrderingStrategy;
using rnnc::Vector;
using rnnc::validation_error;

FidelityDataset make_level(int level, int n, unsigned seed) {
  FidelityDataset ds;
  ds.level = level;
  ds.locs = dense_ref::random_points(n, seed);
  ds.z = (0.3 + 1.5 * dense_ref::random_vector(n, seed + 1000).array()).matrix();
  ds.H = Matrix(n, 2);
  ds.H.col(0).setOnes();
  ds.H.col(1) = ds.locs.coords.col(0);
  if (level >= 2) {
    ds.G = Matrix(n, 2);
    ds.G.col(0).setOnes();
    ds.G.col(1) = ds.locs.coords.col(1);
  }
  return ds;
}

Vector smooth_field(const rnnc::LocationSet& locs) {
  Vector v(locs.n());
  for (int i = 0; i < locs.n(); ++i)
    v[i] = 1.0 + std::sin(3.0 * locs.coords(i, 0)) *
                     std::cos(2.0 * locs.coords(i, 1));
  return v;
}

ConjugatePriors informative_priors() {
  ConjugatePriors pr;
  pr.beta.mu = Vector(2);
  pr.beta.mu << 0.4, -0.2;
  pr.beta.V = Matrix(2, 2);
  pr.beta.V << 2.0, 0.4, 0.4, 1.5;
  pr.gamma.mu = Vector(2);
  pr.gamma.mu << 0.8, 0.1;
  pr.gamma.V = Matrix(2, 2);
  pr.gamma.V << 1.0, -0.2, -0.2, 0.7;
  pr.sigma2 = {2.5, 1.3};
  return pr;
}

// Factors of the correlation-scale field; m < 0 saturates the budget.
rnnc::NNGPFactors corr_factors(const rnnc::LocationSet& locs, double kappa,
                               int m = -1) {
  auto ord = rnnc::order_locations(locs, OrderingStrategy::CoordSort);
  auto nbr =
      rnnc::build_neighbor_index(locs, ord, m < 0 ? locs.n() - 1 : m);
  return rnnc::compute_factors(locs, ord, nbr, rnnc::iso_params(1.0, kappa));
}

Matrix scale_design(const FidelityDataset& ds, const Vector& yprev) {
  return (ds.G.array().colwise() * yprev.array()).matrix();
}

}  // namespace

TEST_CASE("scale posterior with a zero previous field reduces to the prior") {
  auto ds = make_level(2, 12, 41);
  ConjugatePriors pr = informative_priors();
  auto f = corr_factors(ds.locs, 1.6);
  CollapsedSolver S;
  S.factorize(f, 0.2);
  Matrix W = Matrix::Zero(12, 2);

  auto gp = rnnc::posterior_gamma(S, ds.z, ds.H, pr.beta.mu, W, pr.gamma);
  REQUIRE((gp.mean() - pr.gamma.mu).cwiseAbs().maxCoeff() < 1e-10);
  REQUIRE((gp.V_tilde - pr.gamma.V).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("trend posterior matches a hand-built update on a tiny level") {
  auto ds = make_level(1, 3, 7);
  ds.H = Matrix::Ones(3, 1);
  const double kappa = 1.7, tau2 = 0.25;
  NormalPrior prior;
  prior.mu = Vector::Constant(1, 0.6);
  prior.V = Matrix::Constant(1, 1, 2.5);

  auto f = corr_factors(ds.locs, kappa);
  CollapsedSolver S;
  S.factorize(f, tau2);
  auto bp = rnnc::posterior_beta(S, ds.z, ds.H, Matrix(3, 0), prior,
                                 NormalPrior{});

  Matrix Sinv = conj_ref::dense_sigma(ds.locs, kappa, tau2).inverse();
  const double vt =
      1.0 / (1.0 / 2.5 + (ds.H.transpose() * Sinv * ds.H)(0, 0));
  const double mt = 0.6 / 2.5 + (ds.H.transpose() * Sinv * ds.z)(0);
  REQUIRE(bp.V_tilde(0, 0) == Catch::Approx(vt).epsilon(1e-8));
  REQUIRE(bp.mean()(0) == Catch::Approx(vt * mt).epsilon(1e-8));
}

TEST_CASE("a tight scale prior pins the scale coefficients") {
  auto ds = make_level(2, 15, 55);
  Vector yp = smooth_field(ds.locs);
  Matrix W = scale_design(ds, yp);
  ConjugatePriors pr = informative_priors();
  pr.gamma.mu << 0.9, -0.3;
  pr.gamma.V = 1e-12 * Matrix::Identity(2, 2);

  auto f = corr_factors(ds.locs, 2.1);
  CollapsedSolver S;
  S.factorize(f, 0.15);
  auto est = rnnc::estimate_level(S, ds.z, ds.H, W, pr);
  REQUIRE((est.gamma_hat - pr.gamma.mu).cwiseAbs().maxCoeff() < 1e-5);

  // With gamma pinned, beta should match the reduced model on z - W mu_g.
  Matrix Sinv = conj_ref::dense_sigma(ds.locs, 2.1, 0.15).inverse();
  Vector zr = ds.z - W * pr.gamma.mu;
  Matrix prec = pr.beta.V.inverse() + ds.H.transpose() * Sinv * ds.H;
  Vector mu = pr.beta.V.inverse() * pr.beta.mu +
              ds.H.transpose() * (Sinv * zr);
  Vector beta_red = prec.inverse() * mu;
  REQUIRE((est.beta_hat - beta_red).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("a flat trend prior recovers generalized least squares") {
  auto ds = make_level(1, 30, 63);
  ConjugatePriors pr = informative_priors();
  pr.beta.mu.setZero();
  pr.beta.V = 1e8 * Matrix::Identity(2, 2);

  auto f = corr_factors(ds.locs, 1.2);
  CollapsedSolver S;
  S.factorize(f, 0.2);
  auto bp = rnnc::posterior_beta(S, ds.z, ds.H, Matrix(30, 0), pr.beta,
                                 NormalPrior{});

  Matrix Sinv = conj_ref::dense_sigma(ds.locs, 1.2, 0.2).inverse();
  Vector gls = (ds.H.transpose() * Sinv * ds.H)
                   .ldlt()
                   .solve(ds.H.transpose() * (Sinv * ds.z));
  REQUIRE((bp.mean() - gls).cwiseAbs().maxCoeff() <
          1e-6 * (1.0 + gls.cwiseAbs().maxCoeff()));
}

TEST_CASE("empty data returns the prior posteriors") {
  ConjugatePriors pr = informative_priors();
  CollapsedSolver S;  // never factorized; must not be touched
  Vector z0;
  Matrix H0(0, 2), W0(0, 2);

  auto est = rnnc::estimate_level(S, z0, H0, W0, pr);
  REQUIRE((est.beta_hat - pr.beta.mu).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE((est.gamma_hat - pr.gamma.mu).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(est.a_star == Catch::Approx(pr.sigma2.a));
  REQUIRE(est.b_star == Catch::Approx(pr.sigma2.b));
  REQUIRE(est.sigma2_hat ==
          Catch::Approx(pr.sigma2.b / (pr.sigma2.a - 1.0)));
}

TEST_CASE("variance point estimate needs a heavy enough posterior tail") {
  rnnc::Sigma2Posterior flat{0.5, 1.0};
  REQUIRE_THROWS_AS(flat.mean(), validation_error);
  rnnc::Sigma2Posterior edge{1.0, 1.0};
  REQUIRE_THROWS_AS(edge.mean(), validation_error);
  rnnc::Sigma2Posterior ok{1.5, 1.0};
  REQUIRE(ok.mean() == Catch::Approx(2.0));
}

TEST_CASE("priors validate their shapes and definiteness") {
  NormalPrior bad;
  bad.mu = Vector::Zero(2);
  bad.V = Matrix::Zero(2, 3);
  REQUIRE_THROWS_WITH(bad.validate(), "prior covariance shape mismatch");
  bad.V = Matrix::Zero(2, 2);  // singular
  REQUIRE_THROWS_WITH(bad.validate(),
                      "prior covariance not positive definite");
  InverseGammaPrior ig{0.0, 1.0};
  REQUIRE_THROWS_AS(ig.validate(), validation_error);

  // A gamma posterior needs an actual scale basis to condition.
  auto ds = make_level(1, 5, 3);
  auto f = corr_factors(ds.locs, 1.0);
  CollapsedSolver S;
  S.factorize(f, 0.1);
  REQUIRE_THROWS_WITH(
      rnnc::posterior_gamma(S, ds.z, ds.H, Vector::Zero(2), Matrix(5, 0),
                            NormalPrior{}),
      "scale posterior requires a scale basis");
}

TEST_CASE("process variance estimate matches numerical integration") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    const int level = (seed % 2 == 0) ? 2 : 1;
    auto ds = make_level(level, 5, 100 + seed);
    ConjugatePriors pr = informative_priors();
    Vector yp;
    Matrix W(5, 0);
    if (level == 2) {
      yp = smooth_field(ds.locs);
      W = scale_design(ds, yp);
    }
    const double kappa = 1.8, tau2 = 0.3;
    auto f = corr_factors(ds.locs, kappa);
    CollapsedSolver S;
    S.factorize(f, tau2);
    auto s2 = rnnc::posterior_sigma2(S, ds.z, ds.H, W, pr);
    REQUIRE(s2.a_star == Catch::Approx(pr.sigma2.a + 2.5));

    Matrix Sigma = conj_ref::dense_sigma(ds.locs, kappa, tau2);
    Matrix M = Sigma + ds.H * pr.beta.V * ds.H.transpose();
    Vector r = ds.z - ds.H * pr.beta.mu;
    if (level == 2) {
      M += W * pr.gamma.V * W.transpose();
      r -= W * pr.gamma.mu;
    }
    const double quad =
        conj_ref::quad_sigma2_mean(M, r, pr.sigma2.a, pr.sigma2.b);
    INFO("seed " << seed << " level " << level);
    REQUIRE(s2.mean() == Catch::Approx(quad).epsilon(1e-6));
  }
}

TEST_CASE("collapsed variance posterior matches the dense reduction") {
  for (unsigned seed : {11u, 12u, 13u}) {
    for (int level : {1, 2}) {
      auto ds = make_level(level, 25, seed);
      ConjugatePriors pr = informative_priors();
      Matrix W(25, 0);
      if (level == 2) W = scale_design(ds, smooth_field(ds.locs));
      auto f = corr_factors(ds.locs, 2.4);
      CollapsedSolver S;
      S.factorize(f, 0.12);
      auto s2 = rnnc::posterior_sigma2(S, ds.z, ds.H, W, pr);

      Matrix Sigma = conj_ref::dense_sigma(ds.locs, 2.4, 0.12);
      const double oracle =
          conj_ref::marginal_b_star(Sigma, ds.z, ds.H, W, pr);
      INFO("seed " << seed << " level " << level);
      REQUIRE(s2.a_star == Catch::Approx(pr.sigma2.a + 12.5));
      REQUIRE(s2.b_star == Catch::Approx(oracle).epsilon(1e-8));
    }
  }
}

TEST_CASE("posteriors agree with dense algebra under a saturated budget") {
  auto ds = make_level(2, 40, 29);
  Vector yp = smooth_field(ds.locs);
  Matrix W = scale_design(ds, yp);
  ConjugatePriors pr = informative_priors();
  auto f = corr_factors(ds.locs, 3.0);
  CollapsedSolver S;
  S.factorize(f, 0.08);
  auto est = rnnc::estimate_level(S, ds.z, ds.H, W, pr);

  Matrix Sigma = conj_ref::dense_sigma(ds.locs, 3.0, 0.08);
  auto ref = conj_ref::dense_estimate(Sigma, ds.z, ds.H, W, pr);
  REQUIRE((est.beta_hat - ref.beta_hat).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((est.beta_cov_unit - ref.beta_cov_unit).cwiseAbs().maxCoeff() <
          1e-8);
  REQUIRE((est.gamma_hat - ref.gamma_hat).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((est.gamma_cov_unit - ref.gamma_cov_unit).cwiseAbs().maxCoeff() <
          1e-8);
  REQUIRE(est.b_star == Catch::Approx(ref.b_star).epsilon(1e-8));
  REQUIRE(est.sigma2_hat == Catch::Approx(ref.sigma2_hat).epsilon(1e-8));
}

TEST_CASE("posterior estimates scale quadratically with the data") {
  auto ds = make_level(1, 30, 91);
  ConjugatePriors pr = informative_priors();
  pr.beta.mu.setZero();
  pr.sigma2 = {2.0, 1.0};
  auto f = corr_factors(ds.locs, 1.5, 6);  // modest budget on purpose
  CollapsedSolver S;
  S.factorize(f, 0.2);
  Matrix W(30, 0);
  auto base = rnnc::estimate_level(S, ds.z, ds.H, W, pr);

  const double c = 3.0;
  ConjugatePriors prc = pr;
  prc.sigma2.b = c * c * pr.sigma2.b;
  auto scaled = rnnc::estimate_level(S, Vector(c * ds.z), ds.H, W, prc);
  REQUIRE(scaled.sigma2_hat ==
          Catch::Approx(c * c * base.sigma2_hat).epsilon(1e-10));
  REQUIRE((scaled.beta_hat - c * base.beta_hat).cwiseAbs().maxCoeff() <
          1e-10 * (1.0 + base.beta_hat.cwiseAbs().maxCoeff()));
}

TEST_CASE("fold shuffling is a deterministic permutation") {
  auto idx = rnnc::detail::shuffled_indices(100, 777);
  auto again = rnnc::detail::shuffled_indices(100, 777);
  REQUIRE(idx == again);
  auto other = rnnc::detail::shuffled_indices(100, 778);
  REQUIRE(idx != other);
  std::sort(idx.begin(), idx.end());
  std::vector<int> iota(100);
  std::iota(iota.begin(), iota.end(), 0);
  REQUIRE(idx == iota);
}

TEST_CASE("log-spaced grid covers the requested ranges") {
  CandidateGrid g = rnnc::log_grid();
  REQUIRE(g.entries.size() == 200);
  REQUIRE(g.entries.front().first == Catch::Approx(0.1));
  REQUIRE(g.entries.front().second == Catch::Approx(5e-4));
  REQUIRE(g.entries.back().first == Catch::Approx(25.0));
  REQUIRE(g.entries.back().second == Catch::Approx(0.4));
  // kappa-major layout: the first ten entries share the smallest kappa
  for (int i = 0; i < 10; ++i)
    REQUIRE(g.entries[i].first == Catch::Approx(0.1));
  REQUIRE(g.entries[9].second == Catch::Approx(0.4));
  for (const auto& e : g.entries) {
    REQUIRE(e.first > 0.0);
    REQUIRE(e.second > 0.0);
  }
  CandidateGrid single = rnnc::log_grid(2.0, 2.0, 1, 0.1, 0.1, 1);
  REQUIRE(single.entries.size() == 1);
  REQUIRE(single.entries[0].first == Catch::Approx(2.0));
  REQUIRE_THROWS_AS(rnnc::log_grid(0.0, 1.0, 3, 0.1, 0.2, 2),
                    validation_error);
  REQUIRE_THROWS_AS(rnnc::log_grid(2.0, 1.0, 3, 0.1, 0.2, 2),
                    validation_error);
  CandidateGrid empty;
  REQUIRE_THROWS_WITH(empty.validate(), "empty candidate grid");
}

TEST_CASE("cross-validation selection validates its inputs") {
  auto ds = make_level(1, 12, 17);
  ConjugatePriors pr = informative_priors();
  CandidateGrid grid;
  grid.entries = {{1.5, 0.1}};
  KfoldOptions opts;
  opts.K = 1;
  REQUIRE_THROWS_WITH(rnnc::kfold_select(ds, nullptr, grid, pr, opts),
                      "fold count must be between 2 and the level size");
  opts.K = 13;
  REQUIRE_THROWS_AS(rnnc::kfold_select(ds, nullptr, grid, pr, opts),
                    validation_error);
  opts.K = 3;
  opts.m = 0;
  REQUIRE_THROWS_WITH(rnnc::kfold_select(ds, nullptr, grid, pr, opts),
                      "neighbor count must be >= 1");
  opts.m = 5;

  auto ds2 = make_level(2, 12, 18);
  REQUIRE_THROWS_WITH(rnnc::kfold_select(ds2, nullptr, grid, pr, opts),
                      "missing previous-level field at level 2");
  Vector short_field = Vector::Ones(5);
  REQUIRE_THROWS_WITH(rnnc::kfold_select(ds2, &short_field, grid, pr, opts),
                      "previous-level field length mismatch");

  // leave-one-out is the largest legal fold count
  opts.K = 12;
  auto sel = rnnc::kfold_select(ds, nullptr, grid, pr, opts);
  REQUIRE(sel.index == 0);
  REQUIRE(sel.kappa == Catch::Approx(1.5));
  REQUIRE(sel.tau2_rel == Catch::Approx(0.1));
  REQUIRE(sel.cv_table.rows() == 1);
  REQUIRE(std::isfinite(sel.cv_table(0, 2)));
  REQUIRE(sel.cv_table(0, 2) >= 0.0);

  // repeated runs reproduce the same table bit for bit
  auto sel2 = rnnc::kfold_select(ds, nullptr, grid, pr, opts);
  REQUIRE((sel.cv_table - sel2.cv_table).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("candidate scoring is invariant to thread count") {
  auto ds = make_level(2, 30, 21);
  Vector yp = smooth_field(ds.locs);
  ConjugatePriors pr = informative_priors();
  CandidateGrid grid;
  grid.entries = {{0.8, 0.05}, {2.0, 0.05}, {0.8, 0.2}, {2.0, 0.2}};
  KfoldOptions opts;
  opts.K = 3;
  opts.m = 8;
  opts.seed = 5;
  opts.threads = 1;
  auto serial = rnnc::kfold_select(ds, &yp, grid, pr, opts);
  opts.threads = 4;
  auto parallel = rnnc::kfold_select(ds, &yp, grid, pr, opts);
  REQUIRE((serial.cv_table - parallel.cv_table).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(serial.index == parallel.index);
}

TEST_CASE("grid search matches an exhaustive dense search", "[slow]") {
  const int n = 40, K = 3;
  auto ds = make_level(2, n, 33);
  Vector yp = smooth_field(ds.locs);
  Matrix W = scale_design(ds, yp);
  ConjugatePriors pr = informative_priors();
  CandidateGrid grid;
  grid.entries = {{0.5, 0.01}, {0.5, 0.1},  {2.0, 0.01},
                  {2.0, 0.1},  {8.0, 0.01}, {8.0, 0.1}};
  KfoldOptions opts;
  opts.K = K;
  opts.m = 64;  // saturates every training fold
  opts.seed = 7;
  opts.threads = 2;
  auto sel = rnnc::kfold_select(ds, &yp, grid, pr, opts);

  // Rebuild the same partition and score every candidate densely.
  std::vector<int> fold(n);
  {
    auto perm = rnnc::detail::shuffled_indices(
        n, rnnc::stream_key(opts.seed, 2, 0xF01DULL));
    for (int i = 0; i < n; ++i) fold[perm[i]] = i % K;
  }
  for (size_t c = 0; c < grid.entries.size(); ++c) {
    const double kappa = grid.entries[c].first;
    const double tau2 = grid.entries[c].second;
    double mse_sum = 0.0;
    for (int k = 0; k < K; ++k) {
      std::vector<int> train, held;
      for (int r = 0; r < n; ++r)
        (fold[r] == k ? held : train).push_back(r);
      const int ntr = static_cast<int>(train.size());
      Matrix coords(ntr, 2), Htr(ntr, 2), Wtr(ntr, 2);
      Vector ztr(ntr);
      for (int i = 0; i < ntr; ++i) {
        coords.row(i) = ds.locs.coords.row(train[i]);
        Htr.row(i) = ds.H.row(train[i]);
        Wtr.row(i) = W.row(train[i]);
        ztr[i] = ds.z[train[i]];
      }
      auto tr_locs = rnnc::make_location_set(coords);
      Matrix Sigma = conj_ref::dense_sigma(tr_locs, kappa, tau2);
      auto est = conj_ref::dense_estimate(Sigma, ztr, Htr, Wtr, pr);
      Vector resid = ztr - Htr * est.beta_hat - Wtr * est.gamma_hat;
      double mse = 0.0;
      for (int r : held) {
        Vector s = ds.locs.coords.row(r).transpose();
        auto kr = dense_ref::krige(s, tr_locs, resid,
                                   rnnc::iso_params(1.0, kappa), tau2);
        const double zhat = ds.H.row(r).dot(est.beta_hat) +
                            ds.G.row(r).dot(est.gamma_hat) * yp[r] +
                            kr.mean;
        mse += (ds.z[r] - zhat) * (ds.z[r] - zhat);
      }
      mse_sum += mse / static_cast<double>(held.size());
    }
    const double rmspe = std::sqrt(mse_sum / K);
    INFO("candidate " << c);
    REQUIRE(sel.cv_table(static_cast<int>(c), 2) ==
            Catch::Approx(rmspe).epsilon(1e-8));
  }
  // and the arg-min agrees with a dense scan of the finished table
  int best = 0;
  for (int c = 1; c < sel.cv_table.rows(); ++c)
    if (sel.cv_table(c, 2) < sel.cv_table(best, 2)) best = c;
  REQUIRE(sel.index == best);
}

TEST_CASE("ties prefer the smaller nugget and then the smaller decay") {
  Matrix table(4, 3);
  table << 2.0, 0.2, 1.5,  //
      1.0, 0.2, 1.5,       //
      1.0, 0.1, 1.5,       //
      3.0, 0.3, 2.0;
  REQUIRE(rnnc::select_candidate(table) == 2);  // tie -> smaller nugget

  Matrix pair(2, 3);
  pair << 2.0, 0.1, 1.0,  //
      1.0, 0.1, 1.0;
  REQUIRE(rnnc::select_candidate(pair) == 1);  // full tie -> smaller decay

  Matrix strict(3, 3);
  strict << 0.5, 0.4, 0.9,  //
      9.0, 0.3, 0.7,        //
      1.0, 0.001, 0.8;
  REQUIRE(rnnc::select_candidate(strict) == 1);  // score dominates

  REQUIRE_THROWS_AS(rnnc::select_candidate(Matrix(0, 3)), validation_error);
  REQUIRE_THROWS_AS(rnnc::select_candidate(Matrix(2, 2)), validation_error);

  // Through the CV path: an exactly duplicated winning candidate keeps the
  // first listing, so repeated entries cannot flip a selection.
  auto ds = make_level(1, 14, 44);
  ConjugatePriors pr = informative_priors();
  CandidateGrid grid;
  grid.entries = {{2.0, 0.1}, {1.0, 0.1}, {1.0, 0.05}, {2.0, 0.05}};
  KfoldOptions opts;
  opts.K = 2;
  opts.m = 6;
  auto sel = rnnc::kfold_select(ds, nullptr, grid, pr, opts);
  CandidateGrid dup;
  dup.entries = {{sel.kappa, sel.tau2_rel}, {sel.kappa, sel.tau2_rel}};
  auto sel2 = rnnc::kfold_select(ds, nullptr, dup, pr, opts);
  REQUIRE(sel2.index == 0);
}

TEST_CASE("level fit refits the selected candidate on the full data") {
  auto ds = make_level(1, 35, 52);
  ConjugatePriors pr = informative_priors();
  CandidateGrid grid;
  grid.entries = {{1.0, 0.05}, {3.0, 0.2}};
  KfoldOptions opts;
  opts.K = 5;
  opts.m = 10;
  opts.seed = 9;
  auto post = rnnc::fit_level(ds, nullptr, grid, pr, opts);

  REQUIRE(post.cv_table.rows() == 2);
  const bool in_grid =
      (post.kappa == 1.0 && post.tau2_rel == 0.05) ||
      (post.kappa == 3.0 && post.tau2_rel == 0.2);
  REQUIRE(in_grid);
  REQUIRE(post.sigma2_hat > 0.0);
  REQUIRE(post.tau2_hat() ==
          Catch::Approx(post.sigma2_hat * post.tau2_rel));
  REQUIRE(post.beta_hat.size() == 2);
  REQUIRE(post.gamma_hat.size() == 0);
  REQUIRE(post.factors.sigma2 == Catch::Approx(1.0));
  REQUIRE(post.beta_cov.rows() == 2);
  REQUIRE(post.beta_cov(0, 1) == Catch::Approx(post.beta_cov(1, 0)));

  // The refit must equal a by-hand estimate at the selected candidate.
  auto f = corr_factors(ds.locs, post.kappa, opts.m);
  CollapsedSolver S;
  S.factorize(f, post.tau2_rel);
  auto est = rnnc::estimate_level(S, ds.z, ds.H, Matrix(35, 0), pr);
  REQUIRE((post.beta_hat - est.beta_hat).cwiseAbs().maxCoeff() < 1e-13);
  REQUIRE(post.sigma2_hat == Catch::Approx(est.sigma2_hat).epsilon(1e-13));
}

TEST_CASE("full stack fit carries fields and posteriors for every level") {
  // Nested two-level design: the high-fidelity sites are a subset of the
  // low-fidelity ones, so the shortcut copies data into the knot field.
  const int n1 = 30, n2 = 12;
  auto locs1 = dense_ref::random_points(n1, 71);
  Matrix c2 = locs1.coords.topRows(n2);
  auto locs2 = rnnc::make_location_set(c2);

  FidelityDataset d1;
  d1.level = 1;
  d1.locs = locs1;
  d1.z = (10.0 + 2.0 * dense_ref::random_vector(n1, 72).array()).matrix();
  d1.H = Matrix::Ones(n1, 1);

  FidelityDataset d2;
  d2.level = 2;
  d2.locs = locs2;
  d2.z = (0.9 * d1.z.head(n2).array() + 1.0 +
          0.1 * dense_ref::random_vector(n2, 73).array())
             .matrix();
  d2.H = Matrix::Ones(n2, 1);
  d2.G = Matrix::Ones(n2, 1);

  auto const_basis = [](const Vector&) { return Vector::Ones(1); };
  std::vector<rnnc::BasisFn> h_fns = {const_basis, const_basis};
  std::vector<rnnc::BasisFn> g_fns = {const_basis};

  ConjugatePriors pr;
  pr.beta.mu = Vector::Zero(1);
  pr.beta.V = Matrix::Constant(1, 1, 100.0);
  pr.gamma.mu = Vector::Ones(1);
  pr.gamma.V = Matrix::Constant(1, 1, 1.0);
  pr.sigma2 = {2.0, 1.0};
  std::vector<ConjugatePriors> priors = {pr, pr};

  CandidateGrid grid;
  grid.entries = {{1.0, 0.05}, {4.0, 0.05}, {1.0, 0.2}, {4.0, 0.2}};
  KfoldOptions opts;
  opts.K = 4;
  opts.m = 8;
  opts.seed = 3;

  auto fit = rnnc::fit_all({d1, d2}, h_fns, g_fns, grid, priors, opts);
  REQUIRE(fit.posteriors.size() == 2);
  REQUIRE(fit.stack.size() == 2);
  REQUIRE(fit.fields.size() == 2);

  // Level-1 field lives exactly on the level-2 sites and copies the data.
  REQUIRE(fit.fields[0].at.n() == n2);
  for (int i = 0; i < n2; ++i) {
    REQUIRE(fit.fields[0].mean[i] == Catch::Approx(d1.z[i]).epsilon(1e-12));
    REQUIRE(fit.fields[0].var[i] ==
            Catch::Approx(fit.posteriors[0].tau2_hat()).epsilon(1e-12));
  }
  REQUIRE(fit.fields[1].at.n() == 0);

  // The level-2 fit consumed that field, aligned with its own sites.
  REQUIRE(fit.stack[1].yprev.mean.size() == n2);
  REQUIRE((fit.stack[1].yprev.mean - d1.z.head(n2)).cwiseAbs().maxCoeff() <
          1e-12);
  REQUIRE(fit.posteriors[1].gamma_hat.size() == 1);
  REQUIRE(fit.stack[1].params.tau2 ==
          Catch::Approx(fit.posteriors[1].tau2_hat()));

  // The stack is ready for recursive prediction.
  auto targets = dense_ref::random_points(5, 74);
  rnnc::PredictOptions popt;
  popt.m = 8;
  auto pred = rnnc::predict_recursive(fit.stack, targets, popt);
  REQUIRE(pred.levels() == 2);
  for (int i = 0; i < 5; ++i) {
    REQUIRE(std::isfinite(pred.mean(i, 1)));
    REQUIRE(pred.var(i, 1) > 0.0);
    REQUIRE(pred.lo95(i, 1) < pred.hi95(i, 1));
  }
}

TEST_CASE("full stack fit validates its configuration") {
  auto d1 = make_level(1, 10, 81);
  auto d2 = make_level(2, 8, 82);
  auto const_basis = [](const Vector&) { return Vector::Ones(1); };
  auto two_basis = [](const Vector& s) {
    Vector v(2);
    v << 1.0, s[0];
    return v;
  };
  std::vector<rnnc::BasisFn> h_fns = {two_basis, two_basis};
  std::vector<rnnc::BasisFn> g_fns = {two_basis};
  ConjugatePriors pr = informative_priors();
  std::vector<ConjugatePriors> priors = {pr, pr};
  CandidateGrid grid;
  grid.entries = {{1.0, 0.1}};
  KfoldOptions opts;
  opts.K = 3;
  opts.m = 5;

  REQUIRE_THROWS_WITH(
      rnnc::fit_all({}, h_fns, g_fns, grid, priors, opts),
      "no fidelity levels");
  REQUIRE_THROWS_WITH(
      rnnc::fit_all({d1, d2}, {const_basis}, g_fns, grid, priors, opts),
      "one trend basis per level required");
  REQUIRE_THROWS_WITH(
      rnnc::fit_all({d1, d2}, h_fns, {}, grid, priors, opts),
      "one scale basis per level link required");
  REQUIRE_THROWS_WITH(
      rnnc::fit_all({d1, d2}, h_fns, g_fns, grid, {pr}, opts),
      "one prior set per level required");
  REQUIRE_THROWS_WITH(
      rnnc::fit_all({d2, d1}, h_fns, g_fns, grid, priors, opts),
      "datasets must be ordered by level");
}

TEST_CASE("union of higher-level sites deduplicates in first-seen order") {
  Matrix a(3, 2), b(2, 2), c(2, 2);
  a << 0, 0, 1, 0, 2, 0;
  b << 1, 0, 3, 0;  // shares (1,0) with level 1
  c << 3, 0, 4, 0;  // shares (3,0) with level 2
  FidelityDataset d1, d2, d3;
  d1.level = 1;
  d1.locs = rnnc::make_location_set(a);
  d1.z = Vector::Zero(3);
  d1.H = Matrix::Ones(3, 1);
  d2.level = 2;
  d2.locs = rnnc::make_location_set(b);
  d2.z = Vector::Zero(2);
  d2.H = Matrix::Ones(2, 1);
  d2.G = Matrix::Ones(2, 1);
  d3.level = 3;
  d3.locs = rnnc::make_location_set(c);
  d3.z = Vector::Zero(2);
  d3.H = Matrix::Ones(2, 1);
  d3.G = Matrix::Ones(2, 1);
  std::vector<FidelityDataset> levels = {d1, d2, d3};

  auto u1 = rnnc::location_union_above(levels, 1);
  REQUIRE(u1.n() == 3);  // (1,0), (3,0), (4,0)
  REQUIRE(u1.coords(0, 0) == Catch::Approx(1.0));
  REQUIRE(u1.coords(1, 0) == Catch::Approx(3.0));
  REQUIRE(u1.coords(2, 0) == Catch::Approx(4.0));
  auto u2 = rnnc::location_union_above(levels, 2);
  REQUIRE(u2.n() == 2);
  auto u3 = rnnc::location_union_above(levels, 3);
  REQUIRE(u3.n() == 0);
  REQUIRE_THROWS_AS(rnnc::location_union_above(levels, 0),
                    validation_error);
  REQUIRE_THROWS_AS(rnnc::location_union_above(levels, 4),
                    validation_error);
}
