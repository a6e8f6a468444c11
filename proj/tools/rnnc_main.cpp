// Command line front end: simulate multi-fidelity data, fit the recursive
// co-kriging model (closed form or MCMC), predict at new locations, and
// score predictions against held-out observations.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rnnc/io.hpp"

namespace fs = std::filesystem;

namespace {

const char* kUsage = R"(usage: rnnc <command> [flags]

commands:
  simulate       draw a synthetic multi-fidelity dataset
  fit-conjugate  closed-form fit with K-fold cross-validated hyperparameters
  fit-mcmc       collapsed Metropolis-within-Gibbs posterior sampling
  predict        fit, then predict the top-level field at new locations
  evaluate       score a records file (obs,mean,sd[,lo95,hi95]) with
                 RMSPE, NSME, 95% coverage, interval width, and CRPS

flags:
  --config FILE   key = value run configuration (defaults applied when absent)
  --data FILE     observations (x,y,value,level) or records to score
  --out DIR       output directory for artifacts
  --seed N        random seed, also stamped into artifacts (default 0)
  --threads N     worker threads for cross-validation and prediction
  --locations F   predict: location file with columns x,y
  --grid-out SPEC predict: pixel grid NXxNY[:x0,x1,y0,y1] of cell centers

exit codes: 0 success, 2 invalid input or usage, 1 numeric failure
)";

struct CliArgs {
  std::string command;
  std::map<std::string, std::string> flags;

  const std::string& at(const std::string& name) const {
    return flags.at(name);
  }
  bool has(const std::string& name) const { return flags.count(name) > 0; }
};

CliArgs parse_cli(int argc, char** argv) {
  if (argc < 2)
    throw rnnc::validation_error("missing command (try rnnc --help)");
  CliArgs a;
  a.command = argv[1];
  for (int i = 2; i < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag.rfind("--", 0) != 0)
      throw rnnc::validation_error("unexpected argument: " + flag);
    if (i + 1 >= argc)
      throw rnnc::validation_error("flag " + flag + " needs a value");
    const std::string name = flag.substr(2);
    if (!a.flags.emplace(name, argv[i + 1]).second)
      throw rnnc::validation_error("duplicate flag --" + name);
  }
  return a;
}

void check_flags(const CliArgs& a, const std::set<std::string>& allowed,
                 const std::vector<std::string>& required) {
  for (const auto& [k, v] : a.flags)
    if (!allowed.count(k))
      throw rnnc::validation_error("unknown flag --" + k + " for " +
                                   a.command);
  for (const std::string& r : required)
    if (!a.has(r))
      throw rnnc::validation_error("missing required flag --" + r);
}

rnnc::RunConfig load_config(const CliArgs& a) {
  if (!a.has("config")) return rnnc::RunConfig{};
  return rnnc::parse_config_file(a.at("config"));
}

std::uint64_t load_seed(const CliArgs& a) {
  if (!a.has("seed")) return 0;
  const long long s = rnnc::ioutil::parse_int(a.at("seed"), "for --seed");
  if (s < 0) throw rnnc::validation_error("--seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

int load_threads(const CliArgs& a) {
  if (!a.has("threads")) return 1;
  const long long t = rnnc::ioutil::parse_int(a.at("threads"), "for --threads");
  if (t < 1) throw rnnc::validation_error("--threads must be >= 1");
  return static_cast<int>(t);
}

std::string make_out_dir(const CliArgs& a) {
  const std::string out = a.at("out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec)
    throw rnnc::validation_error("cannot create output directory: " + out);
  return out;
}

rnnc::NormalPrior iso_normal(int dim, double mean, double var) {
  rnnc::NormalPrior p;
  p.mu = rnnc::Vector::Constant(dim, mean);
  p.V = var * rnnc::Matrix::Identity(dim, dim);
  return p;
}

std::vector<rnnc::BasisFn> trend_bases(const rnnc::RunConfig& cfg) {
  return std::vector<rnnc::BasisFn>(static_cast<size_t>(cfg.levels),
                                    rnnc::make_basis(cfg.trend_basis));
}

std::vector<rnnc::BasisFn> scale_bases(const rnnc::RunConfig& cfg) {
  return std::vector<rnnc::BasisFn>(
      static_cast<size_t>(std::max(cfg.levels - 1, 0)),
      rnnc::make_basis(cfg.scale_basis));
}

rnnc::ConjugateFit fit_conjugate_model(const rnnc::IngestResult& ing,
                                       const rnnc::RunConfig& cfg,
                                       std::uint64_t seed, int threads) {
  const rnnc::CandidateGrid grid =
      rnnc::log_grid(cfg.kappa_lo, cfg.kappa_hi, cfg.kappa_count, cfg.tau2_lo,
                     cfg.tau2_hi, cfg.tau2_count);
  const int p = rnnc::basis_dim(cfg.trend_basis);
  const int q = rnnc::basis_dim(cfg.scale_basis);
  std::vector<rnnc::ConjugatePriors> priors;
  for (int t = 0; t < cfg.levels; ++t) {
    rnnc::ConjugatePriors pr;
    pr.beta = iso_normal(p, cfg.beta_mean, cfg.beta_var);
    pr.gamma = iso_normal(q, cfg.gamma_mean, cfg.gamma_var);
    pr.sigma2 = rnnc::InverseGammaPrior{cfg.sigma2_a, cfg.sigma2_b};
    priors.push_back(std::move(pr));
  }
  rnnc::KfoldOptions opts;
  opts.K = cfg.folds;
  opts.m = cfg.m;
  opts.seed = seed;
  opts.threads = threads;
  return rnnc::fit_all(ing.levels, trend_bases(cfg), scale_bases(cfg), grid,
                       priors, opts);
}

int cmd_simulate(const CliArgs& a) {
  check_flags(a, {"config", "out", "seed"}, {"out"});
  const rnnc::RunConfig cfg = load_config(a);
  const std::uint64_t seed = load_seed(a);
  const std::string out = make_out_dir(a);

  rnnc::SimSpec spec;
  spec.levels = cfg.sim_levels;
  spec.gamma = cfg.sim_gamma;
  spec.design = cfg.sim_design;
  if (!cfg.sim_holdout) spec.holdout.clear();
  spec.seed = seed;
  const rnnc::SimResult sim = rnnc::simulate(spec);
  rnnc::write_simulation(out, sim, cfg, seed);

  std::cout << "simulated " << cfg.levels << " fidelity levels";
  if (sim.test_locs.n() > 0)
    std::cout << "; held out " << sim.test_locs.n() << " top-level sites";
  std::cout << "\n";
  std::cout << "wrote " << out << "/data.csv, " << out << "/truth.csv, "
            << out << "/config.txt\n";
  return 0;
}

int cmd_fit_conjugate(const CliArgs& a) {
  check_flags(a, {"config", "data", "out", "seed", "threads"},
              {"data", "out"});
  const rnnc::RunConfig cfg = load_config(a);
  const std::uint64_t seed = load_seed(a);
  const int threads = load_threads(a);
  const std::string out = make_out_dir(a);

  const rnnc::IngestResult ing = rnnc::ingest_file(a.at("data"), cfg);
  std::cout << "data: " << ing.nested.diagnosis() << "\n";

  const rnnc::ConjugateFit fit = fit_conjugate_model(ing, cfg, seed, threads);
  rnnc::write_conjugate_fit(out, fit, cfg, seed);

  for (size_t t = 0; t < fit.posteriors.size(); ++t) {
    const rnnc::LevelPosterior& p = fit.posteriors[t];
    std::cout << "level " << t + 1 << ": kappa=" << rnnc::ioutil::fmt(p.kappa)
              << " tau2_rel=" << rnnc::ioutil::fmt(p.tau2_rel)
              << " sigma2_hat=" << rnnc::ioutil::fmt(p.sigma2_hat) << "\n";
  }
  std::cout << "wrote " << out << "/hyperparameters.csv, coefficients.csv, "
            << "cv_table.csv, knots.csv\n";
  return 0;
}

int cmd_fit_mcmc(const CliArgs& a) {
  check_flags(a, {"config", "data", "out", "seed", "threads"},
              {"data", "out"});
  const rnnc::RunConfig cfg = load_config(a);
  const std::uint64_t seed = load_seed(a);
  const std::string out = make_out_dir(a);

  const rnnc::IngestResult ing = rnnc::ingest_file(a.at("data"), cfg);
  std::cout << "data: " << ing.nested.diagnosis() << "\n";

  const int p = rnnc::basis_dim(cfg.trend_basis);
  const int q = rnnc::basis_dim(cfg.scale_basis);
  std::vector<rnnc::McmcPriors> priors;
  for (int t = 0; t < cfg.levels; ++t) {
    rnnc::McmcPriors pr;
    pr.beta = iso_normal(p, cfg.beta_mean, cfg.beta_var);
    pr.gamma = iso_normal(q, cfg.gamma_mean, cfg.gamma_var);
    pr.sigma2 = rnnc::InverseGammaPrior{cfg.sigma2_a, cfg.sigma2_b};
    pr.tau2 = rnnc::InverseGammaPrior{cfg.tau2_a, cfg.tau2_b};
    priors.push_back(std::move(pr));
  }
  rnnc::ChainConfig cc;
  cc.iterations = cfg.mcmc_iterations;
  cc.burn_in = cfg.mcmc_burn_in;
  cc.thin = cfg.mcmc_thin;
  cc.scales = rnnc::ProposalScales{cfg.scale_sigma2, cfg.scale_kappa,
                                   cfg.scale_tau2};
  cc.adapt = cfg.mcmc_adapt;
  cc.target_accept = cfg.target_accept;
  cc.kappa_max = cfg.kappa_max;
  cc.seed = seed;

  const rnnc::ChainResult chain = rnnc::run_chain(
      ing.levels, trend_bases(cfg), scale_bases(cfg), priors, cc, cfg.m);
  rnnc::write_chain(out, chain, cfg, seed);

  for (const rnnc::LevelDraws& ld : chain.levels)
    std::cout << "level " << ld.level << ": kept " << chain.kept
              << " draws, accept_rate=" << rnnc::ioutil::fmt(ld.accept_rate)
              << "\n";
  std::cout << "wrote " << out << "/summary.csv, accept.csv, "
            << "draws_level<t>.csv\n";
  return 0;
}

int cmd_predict(const CliArgs& a) {
  check_flags(a, {"config", "data", "out", "seed", "threads", "locations",
                  "grid-out"},
              {"data", "out"});
  if (a.has("locations") == a.has("grid-out"))
    throw rnnc::validation_error(
        "predict needs exactly one of --locations or --grid-out");
  const rnnc::RunConfig cfg = load_config(a);
  const std::uint64_t seed = load_seed(a);
  const int threads = load_threads(a);
  const std::string out = make_out_dir(a);

  const rnnc::IngestResult ing = rnnc::ingest_file(a.at("data"), cfg);
  const rnnc::ConjugateFit fit = fit_conjugate_model(ing, cfg, seed, threads);

  rnnc::LocationSet original;
  if (a.has("grid-out")) {
    original = rnnc::parse_grid_spec(a.at("grid-out"));
  } else {
    std::ifstream in(a.at("locations"));
    if (!in)
      throw rnnc::validation_error("cannot open location file: " +
                                   a.at("locations"));
    original = rnnc::read_locations(in, cfg.delimiter);
  }
  const rnnc::LocationSet targets =
      rnnc::project_locations(original, ing.projection);

  rnnc::PredictOptions popts;
  popts.m = cfg.m;
  popts.threads = threads;
  popts.observation_interval = true;
  const rnnc::RecursivePrediction pred =
      rnnc::predict_recursive(fit.stack, targets, popts);

  const int top = cfg.levels - 1;
  const rnnc::Vector mean = pred.mean.col(top);
  const double tau2 = fit.posteriors.back().tau2_hat();
  const rnnc::Vector sd =
      (pred.var.col(top).array() + tau2).sqrt().matrix();
  const rnnc::Vector lo = pred.lo95.col(top);
  const rnnc::Vector hi = pred.hi95.col(top);
  rnnc::write_predictions(out + "/predictions.csv", original, cfg.levels,
                          mean, sd, lo, hi, cfg, seed);
  std::cout << "wrote " << out << "/predictions.csv (" << original.n()
            << " rows)\n";
  return 0;
}

int cmd_evaluate(const CliArgs& a) {
  check_flags(a, {"config", "data", "out", "seed"}, {"data", "out"});
  const rnnc::RunConfig cfg = load_config(a);
  const std::uint64_t seed = load_seed(a);
  const std::string out = make_out_dir(a);

  std::ifstream in(a.at("data"));
  if (!in)
    throw rnnc::validation_error("cannot open data file: " + a.at("data"));
  const std::vector<rnnc::PredictionRecord> records =
      rnnc::read_records(in, cfg.delimiter);
  rnnc::write_metrics(out + "/metrics.csv", records, cfg, seed);

  std::cout << "rmspe " << rnnc::ioutil::fmt(rnnc::rmspe(records)) << "\n";
  std::cout << "nsme " << rnnc::ioutil::fmt(rnnc::nsme(records)) << "\n";
  std::cout << "cvg95 " << rnnc::ioutil::fmt(rnnc::cvg95(records)) << "\n";
  std::cout << "alci95 " << rnnc::ioutil::fmt(rnnc::alci95(records)) << "\n";
  std::cout << "crps " << rnnc::ioutil::fmt(rnnc::crps_gaussian(records))
            << "\n";
  std::cout << "wrote " << out << "/metrics.csv\n";
  return 0;
}

int run(int argc, char** argv) {
  if (argc >= 2) {
    const std::string first = argv[1];
    if (first == "--help" || first == "-h" || first == "help") {
      std::cout << kUsage;
      return 0;
    }
  }
  const CliArgs a = parse_cli(argc, argv);
  if (a.command == "simulate") return cmd_simulate(a);
  if (a.command == "fit-conjugate") return cmd_fit_conjugate(a);
  if (a.command == "fit-mcmc") return cmd_fit_mcmc(a);
  if (a.command == "predict") return cmd_predict(a);
  if (a.command == "evaluate") return cmd_evaluate(a);
  throw rnnc::validation_error("unknown command: " + a.command);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rnnc::validation_error& e) {
    std::cerr << "error: validation: " << e.what() << "\n";
    return 2;
  } catch (const rnnc::numeric_error& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  }
}
