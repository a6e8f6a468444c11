// Minimal end-to-end walkthrough of the library: simulate a two-level
// multi-fidelity field, fit the recursive co-kriging model with the
// closed-form path, predict at the held-out sites, and score the result.

#include <iostream>
#include <vector>

#include "rnnc/conjugate.hpp"
#include "rnnc/io.hpp"
#include "rnnc/metrics.hpp"
#include "rnnc/simulate.hpp"

int main() {
  using namespace rnnc;

  // ---- simulate: cheap level 1 (n=400) and accurate level 2 (n=200) ----
  SimSpec spec;
  spec.levels = {{400, 10.0, 4.0, 10.0, 0.1},   // n, trend, var, decay, noise
                 {200, 1.0, 1.0, 10.0, 0.05}};
  spec.gamma = {1.0};  // level-2 field = 1.0 * level-1 field + trend + local
  spec.design = SimDesign::NestedGrid;
  spec.seed = 42;
  const SimResult sim = simulate(spec);
  std::cout << "training sites: level 1 n=" << sim.train[0].n()
            << ", level 2 n=" << sim.train[1].n()
            << "; held out n=" << sim.test_locs.n() << "\n";

  // ---- fit: constant bases, weak priors, small hyperparameter grid ----
  const BasisFn one = make_basis(BasisKind::Constant);
  NormalPrior flat;
  flat.mu = Vector::Zero(1);
  flat.V = Matrix::Identity(1, 1) * 1000.0;
  ConjugatePriors priors{flat, flat, InverseGammaPrior{2.0, 1.0}};

  KfoldOptions opts;
  opts.K = 5;
  opts.m = 10;
  opts.seed = 42;
  const ConjugateFit fit =
      fit_all(sim.train, {one, one}, {one},
              log_grid(0.5, 25.0, 8, 1e-3, 0.3, 5), {priors, priors}, opts);

  for (size_t t = 0; t < fit.posteriors.size(); ++t) {
    const LevelPosterior& p = fit.posteriors[t];
    std::cout << "level " << t + 1 << ": decay=" << p.kappa
              << " sigma2=" << p.sigma2_hat << " tau2=" << p.tau2_hat()
              << " trend=" << p.beta_hat[0];
    if (p.gamma_hat.size() > 0) std::cout << " scale=" << p.gamma_hat[0];
    std::cout << "\n";
  }

  // ---- predict the accurate field at the held-out sites ----
  const RecursivePrediction pred =
      predict_recursive(fit.stack, sim.test_locs, PredictOptions{});
  const int top = pred.levels() - 1;
  const double tau2 = fit.posteriors.back().tau2_hat();
  const Vector sd = (pred.var.col(top).array() + tau2).sqrt().matrix();

  // ---- score against the held-out noisy observations ----
  std::vector<PredictionRecord> recs;
  for (int i = 0; i < sim.test_locs.n(); ++i) {
    PredictionRecord r;
    r.obs = sim.test_z[i];
    r.mean = pred.mean(i, top);
    r.sd = sd[i];
    r.lo95 = pred.lo95(i, top);
    r.hi95 = pred.hi95(i, top);
    recs.push_back(r);
  }
  std::cout << "held-out rmspe=" << rmspe(recs) << " nsme=" << nsme(recs)
            << " cvg95=" << cvg95(recs) << " crps=" << crps_gaussian(recs)
            << "\n";
  return 0;
}
