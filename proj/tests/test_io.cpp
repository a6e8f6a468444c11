// Configuration parsing, observation ingestion, artifact writing, and the
// prediction-records reader.

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rnnc/io.hpp"

using namespace rnnc;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

RunConfig config_from(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

IngestResult ingest_text(const std::string& text, const RunConfig& cfg) {
  std::istringstream in(text);
  return ingest(in, cfg);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("configuration defaults cover model, grid, priors, and sampler") {
  const RunConfig c;
  CHECK(c.levels == 2);
  CHECK(c.m == 10);
  CHECK(c.trend_basis == BasisKind::Constant);
  CHECK(c.kappa_lo == 0.1);
  CHECK(c.kappa_hi == 25.0);
  CHECK(c.kappa_count == 20);
  CHECK(c.tau2_lo == 5e-4);
  CHECK(c.tau2_hi == 0.4);
  CHECK(c.tau2_count == 10);
  CHECK(c.folds == 5);
  CHECK(c.beta_var == 1000.0);
  CHECK(c.sigma2_a == 2.0);
  CHECK(c.sigma2_b == 1.0);
  CHECK(c.mcmc_iterations == 10000);
  CHECK(c.mcmc_burn_in == 2000);
  CHECK(c.kappa_max == 25.0);
  CHECK(c.delimiter == ',');
  CHECK_FALSE(c.equirectangular);
  REQUIRE(c.sim_levels.size() == 2);
  CHECK(c.sim_levels[0].n == 500);
  CHECK(c.sim_levels[0].beta == 10.0);
  CHECK(c.sim_levels[0].sigma2 == 4.0);
  CHECK(c.sim_levels[0].kappa == 10.0);
  CHECK(c.sim_levels[0].tau2 == 0.1);
  CHECK(c.sim_levels[1].beta == 1.0);
  CHECK(c.sim_gamma == std::vector<double>{1.0});
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("configuration parser applies overrides") {
  const RunConfig c = config_from(
      "# comment\n"
      "model.m = 5\n"
      "model.trend_basis = linear\n"
      "grid.folds = 3\n"
      "priors.gamma_mean = 1.5   # inline comment\n"
      "mcmc.adapt = false\n"
      "data.delimiter = tab\n"
      "data.projection = equirectangular\n"
      "sim.design = non-nested-uniform\n"
      "sim.holdout = none\n"
      "sim.kappa.2 = 7.5\n");
  CHECK(c.m == 5);
  CHECK(c.trend_basis == BasisKind::Linear);
  CHECK(c.scale_basis == BasisKind::Constant);
  CHECK(c.folds == 3);
  CHECK(c.gamma_mean == 1.5);
  CHECK_FALSE(c.mcmc_adapt);
  CHECK(c.delimiter == '\t');
  CHECK(c.equirectangular);
  CHECK(c.sim_design == SimDesign::NonNestedUniform);
  CHECK_FALSE(c.sim_holdout);
  CHECK(c.sim_levels[1].kappa == 7.5);
  CHECK(c.sim_levels[0].kappa == 10.0);  // untouched default
}

TEST_CASE("configuration parser rejects malformed input") {
  CHECK_THROWS_WITH(config_from("nonsense.key = 1\n"),
                    "unknown config key: nonsense.key");
  CHECK_THROWS_WITH(config_from("model.m = 5\nmodel.m = 6\n"),
                    "duplicate config key: model.m");
  CHECK_THROWS_WITH(config_from("model.m\n"),
                    "config line 1 is not of the form key = value");
  CHECK_THROWS_WITH(config_from("model.m = \n"),
                    "config line 1 is not of the form key = value");
  CHECK_THROWS_WITH(config_from("model.m = ten\n"),
                    "non-integer value for model.m");
  CHECK_THROWS_WITH(config_from("mcmc.adapt = yes\n"),
                    "invalid value for mcmc.adapt (expected true or false)");
  CHECK_THROWS_WITH(config_from("data.delimiter = pipe\n"),
                    "invalid value for data.delimiter (expected comma or tab)");
  CHECK_THROWS_WITH(config_from("model.levels = 0\n"),
                    "model.levels must be >= 1");
  CHECK_THROWS_WITH(config_from("grid.folds = 1\n"),
                    "grid.folds must be >= 2");
  CHECK_THROWS_WITH(config_from("grid.kappa_lo = -1\n"),
                    "invalid grid specification");
}

TEST_CASE("per-level simulation keys follow the configured depth") {
  const RunConfig c = config_from(
      "model.levels = 3\n"
      "sim.n.3 = 42\n"
      "sim.sigma2.3 = 0.25\n"
      "sim.gamma.2 = 1.1\n");
  REQUIRE(c.levels == 3);
  REQUIRE(c.sim_levels.size() == 3);
  CHECK(c.sim_levels[2].n == 42);
  CHECK(c.sim_levels[2].sigma2 == 0.25);
  REQUIRE(c.sim_gamma.size() == 2);
  CHECK(c.sim_gamma[1] == 1.1);
  CHECK(c.sim_gamma[0] == 1.0);

  // keys beyond the configured depth are unknown
  CHECK_THROWS_WITH(config_from("sim.n.3 = 42\n"),
                    "unknown config key: sim.n.3");
}

TEST_CASE("configuration hash is stable under round trips") {
  const RunConfig base;
  std::istringstream in(serialize_config(base));
  const RunConfig round = parse_config(in);
  CHECK(serialize_config(round) == serialize_config(base));
  CHECK(config_hash(round) == config_hash(base));

  const RunConfig other = config_from("model.m = 11\n");
  CHECK(config_hash(other) != config_hash(base));
}

TEST_CASE("observation ingestion builds per-level datasets") {
  const std::string csv =
      "x,y,value,level\n"
      "0.1,0.2,3.5,1\n"
      "0.4,0.9,2.0,1\n"
      "0.1,0.2,4.25,2\n"
      "0.7,0.7,1.0,2\n";
  const IngestResult r = ingest_text(csv, RunConfig{});
  REQUIRE(r.levels.size() == 2);
  CHECK(r.levels[0].level == 1);
  CHECK(r.levels[0].n() == 2);
  CHECK(r.levels[1].n() == 2);
  CHECK(r.levels[0].z[0] == 3.5);
  CHECK(r.levels[1].z[1] == 1.0);
  CHECK(r.levels[0].locs.coords(1, 0) == 0.4);
  // constant bases by default
  CHECK(r.levels[0].H.cols() == 1);
  CHECK(r.levels[0].H(0, 0) == 1.0);
  CHECK(r.levels[0].G.size() == 0);
  REQUIRE(r.levels[1].G.cols() == 1);
  CHECK(r.levels[1].G(1, 0) == 1.0);
  // one of two level-2 sites matches level 1
  REQUIRE(r.nested.shared.size() == 1);
  CHECK(r.nested.shared[0] == 1);
  CHECK(r.nested.total[0] == 2);
  CHECK(r.nested.diagnosis() ==
        "partially nested (level 2: 1/2 shared)");
}

TEST_CASE("nestedness diagnosis distinguishes designs") {
  const std::string nested =
      "x,y,value,level\n"
      "0.1,0.2,1,1\n0.3,0.4,2,1\n0.1,0.2,3,2\n";
  CHECK(ingest_text(nested, RunConfig{}).nested.diagnosis() ==
        "fully nested");
  const std::string disjoint =
      "x,y,value,level\n"
      "0.1,0.2,1,1\n0.3,0.4,2,1\n0.5,0.6,3,2\n";
  CHECK(ingest_text(disjoint, RunConfig{}).nested.diagnosis() ==
        "non-nested");
  const RunConfig one = config_from("model.levels = 1\n");
  CHECK(ingest_text("x,y,value,level\n0.1,0.2,1,1\n", one)
            .nested.diagnosis() == "single level");
}

TEST_CASE("ingestion names the offending row in errors") {
  const RunConfig cfg;
  CHECK_THROWS_WITH(
      ingest_text("x,y,value,level\n0.1,0.2,1,1\n0.1,0.2,2,1\n"
                  "0.5,0.5,3,2\n",
                  cfg),
      "duplicate coordinates at rows 2 and 3 (level 1)");
  CHECK_THROWS_WITH(
      ingest_text("x,y,value,level\n0.1,0.2,oops,1\n", cfg),
      "non-numeric value for column 'value' at row 2");
  CHECK_THROWS_WITH(
      ingest_text("x,y,value,level\n0.1,0.2,1,9\n", cfg),
      "level out of range at row 2");
  CHECK_THROWS_WITH(
      ingest_text("x,y,value,level\n0.1,0.2,1,1.5\n", cfg),
      "non-integer value for column 'level' at row 2");
  CHECK_THROWS_WITH(
      ingest_text("x,y,value,level\n0.1,0.2,1,1\n0.3,0.4,2\n", cfg),
      "wrong cell count at row 3");
  CHECK_THROWS_WITH(ingest_text("x,y,value,level\n0.1,0.2,1,1\n", cfg),
                    "no rows for level 2");
  CHECK_THROWS_WITH(ingest_text("x,y,value\n0.1,0.2,1\n", cfg),
                    "missing column 'level'");
  CHECK_THROWS_WITH(ingest_text("x,y,value,level,extra\n", cfg),
                    "unknown column 'extra'");
  CHECK_THROWS_WITH(ingest_text("", cfg), "empty observation file");
}

TEST_CASE("ingestion skips stamp lines and tolerates blank rows") {
  const std::string csv =
      "# config=0123 seed=5\n"
      "\n"
      "x,y,value,level\n"
      "0.1,0.2,3.5,1\n"
      "\n"
      "0.4,0.9,2.0,2\n";
  const IngestResult r = ingest_text(csv, RunConfig{});
  CHECK(r.levels[0].n() == 1);
  CHECK(r.levels[1].n() == 1);
}

TEST_CASE("linear bases carry coordinates into the design matrices") {
  const RunConfig cfg = config_from(
      "model.trend_basis = linear\n"
      "model.scale_basis = linear\n");
  const IngestResult r = ingest_text(
      "x,y,value,level\n"
      "0.1,0.2,1,1\n0.3,0.4,2,1\n0.9,0.1,3,1\n0.2,0.8,4,1\n"
      "0.5,0.6,5,2\n0.3,0.4,6,2\n0.8,0.9,7,2\n0.1,0.1,8,2\n",
      cfg);
  REQUIRE(r.levels[0].H.cols() == 3);
  CHECK(r.levels[0].H(1, 0) == 1.0);
  CHECK(r.levels[0].H(1, 1) == 0.3);
  CHECK(r.levels[0].H(1, 2) == 0.4);
  REQUIRE(r.levels[1].G.cols() == 3);
  CHECK(r.levels[1].G(0, 1) == 0.5);
  CHECK(r.levels[1].G(0, 2) == 0.6);
}

TEST_CASE("equirectangular projection compresses longitude") {
  const RunConfig cfg = config_from("data.projection = equirectangular\n");
  // all latitudes 60 degrees: cos(60) = 0.5 exactly halves x
  const IngestResult r = ingest_text(
      "x,y,value,level\n10,60,1,1\n30,60,2,1\n10,60,3,2\n", cfg);
  CHECK(r.projection.active);
  CHECK(r.projection.cos_lat == Approx(0.5).epsilon(1e-12));
  CHECK(r.levels[0].locs.coords(0, 0) == Approx(5.0).epsilon(1e-9));
  CHECK(r.levels[0].locs.coords(1, 0) == Approx(15.0).epsilon(1e-9));
  CHECK(r.levels[0].locs.coords(0, 1) == 60.0);
  // projected shared site still registers as nested
  CHECK(r.nested.diagnosis() == "fully nested");

  // helper applies the same map to prediction targets
  Matrix pts(1, 2);
  pts << 10.0, 60.0;
  const LocationSet orig = make_location_set(pts);
  const LocationSet proj = project_locations(orig, r.projection);
  CHECK(proj.coords(0, 0) == Approx(5.0).epsilon(1e-9));
  CHECK(proj.coords(0, 1) == 60.0);
}

TEST_CASE("location reader accepts x,y files and rejects extras") {
  auto read = [](const std::string& text) {
    std::istringstream in(text);
    return read_locations(in, ',');
  };
  const LocationSet locs = read("x,y\n0.25,0.5\n0.75,0.5\n");
  REQUIRE(locs.n() == 2);
  CHECK(locs.coords(1, 0) == 0.75);
  CHECK_THROWS_WITH(read("x,y,z\n"), "unknown column 'z'");
  CHECK_THROWS_WITH(read("x\n0.1\n"), "missing column 'y'");
  CHECK_THROWS_WITH(read("x,y\n"), "empty location file");
  CHECK_THROWS_WITH(read("x,y\n0.1,oops\n"),
                    "non-numeric value for column 'y' at row 2");
}

TEST_CASE("grid specs generate cell-center locations") {
  const LocationSet g = parse_grid_spec("2x2");
  REQUIRE(g.n() == 4);
  CHECK(g.coords(0, 0) == 0.25);
  CHECK(g.coords(0, 1) == 0.25);
  CHECK(g.coords(3, 0) == 0.75);
  CHECK(g.coords(3, 1) == 0.75);

  const LocationSet b = parse_grid_spec("1x2:0,10,0,4");
  REQUIRE(b.n() == 2);
  CHECK(b.coords(0, 0) == 5.0);
  CHECK(b.coords(0, 1) == 1.0);
  CHECK(b.coords(1, 1) == 3.0);

  CHECK_THROWS_AS(parse_grid_spec("axb"), validation_error);
  CHECK_THROWS_AS(parse_grid_spec("44"), validation_error);
  CHECK_THROWS_AS(parse_grid_spec("0x3"), validation_error);
  CHECK_THROWS_AS(parse_grid_spec("2x2:1,0,0,1"), validation_error);
}

TEST_CASE("records reader scores files with and without interval columns") {
  auto read = [](const std::string& text) {
    std::istringstream in(text);
    return read_records(in, ',');
  };
  const std::vector<PredictionRecord> full = read(
      "# config=aa seed=1\n"
      "x,y,level,obs,mean,sd,lo95,hi95\n"
      "0.1,0.2,2,1.5,1.0,0.5,0.02,1.98\n");
  REQUIRE(full.size() == 1);
  CHECK(full[0].obs == 1.5);
  CHECK(full[0].lo95 == 0.02);

  const std::vector<PredictionRecord> bare =
      read("obs,mean,sd\n1.5,1.0,0.5\n");
  CHECK(bare[0].lo95 == Approx(1.0 - kZ975 * 0.5).epsilon(1e-15));
  CHECK(bare[0].hi95 == Approx(1.0 + kZ975 * 0.5).epsilon(1e-15));

  CHECK_THROWS_WITH(read("obs,mean,sd,lo95\n"),
                    "lo95 and hi95 must appear together");
  CHECK_THROWS_WITH(read("obs,mean\n"), "missing column 'sd'");
  CHECK_THROWS_WITH(read("obs,mean,sd\n"), "no prediction records");
  CHECK_THROWS_WITH(read("obs,mean,sd\n1,1,-0.5\n"),
                    "predictive standard deviation must be >= 0");
}

TEST_CASE("artifact writers stamp the configuration hash and seed") {
  const fs::path dir = fresh_dir("rnnc_io_writer_test");
  const RunConfig cfg;
  std::vector<PredictionRecord> recs;
  PredictionRecord r;
  r.obs = 1.0;
  r.mean = 1.0;
  r.sd = 0.5;
  r.lo95 = 0.0;
  r.hi95 = 2.0;
  recs.push_back(r);
  write_metrics((dir / "metrics.csv").string(), recs, cfg, 9);

  const std::string body = slurp(dir / "metrics.csv");
  const std::string stamp = "# config=" + config_hash(cfg) + " seed=9\n";
  CHECK(body.rfind(stamp, 0) == 0);
  CHECK(body.find("metric,value\n") != std::string::npos);
  CHECK(body.find("rmspe,0\n") != std::string::npos);
  CHECK(body.find("cvg95,1\n") != std::string::npos);

  // a file the process cannot create is reported as a validation problem
  CHECK_THROWS_AS(write_metrics((dir / "no_such" / "m.csv").string(), recs,
                                cfg, 9),
                  validation_error);
  fs::remove_all(dir);
}

TEST_CASE("simulation writer round trips through ingestion") {
  const fs::path dir = fresh_dir("rnnc_io_roundtrip_test");
  RunConfig cfg = config_from(
      "sim.n.1 = 40\n"
      "sim.n.2 = 20\n");
  SimSpec spec;
  spec.levels = cfg.sim_levels;
  spec.gamma = cfg.sim_gamma;
  spec.design = cfg.sim_design;
  spec.seed = 11;
  const SimResult sim = simulate(spec);
  write_simulation(dir.string(), sim, cfg, 11);

  std::ifstream in(dir / "data.csv");
  REQUIRE(in.good());
  const IngestResult back = ingest(in, cfg);
  REQUIRE(back.levels.size() == 2);
  CHECK(back.levels[0].n() == sim.train[0].n());
  CHECK(back.levels[1].n() == sim.train[1].n());
  // %.17g output reproduces canonical coordinates and values exactly
  CHECK((back.levels[0].locs.coords - sim.train[0].locs.coords)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((back.levels[0].z - sim.train[0].z).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.levels[1].z - sim.train[1].z).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.nested.diagnosis() == "fully nested");
  fs::remove_all(dir);
}
