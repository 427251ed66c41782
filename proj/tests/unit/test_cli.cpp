#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "fvnce/experiment.hpp"

using namespace fvnce;
using namespace fvnce::cli;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  [[nodiscard]] std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunConfig small(const std::string& loss = "vae") {
  RunConfig c;
  c.loss = loss;
  c.dataset.dim = 16;
  c.dataset.clusters = 2;
  c.dataset.train = 256;
  c.dataset.validation = 64;
  c.dataset.test = 64;
  c.latent_dim = 2;
  c.hidden = {16};
  c.epochs = 3;
  c.batch_size = 32;
  c.eval_rows = 64;
  c.noise_centers = 64;
  c.out_dir = "";
  return c;
}

}  // namespace

TEST_CASE("config json round trip") {
  RunConfig c = small("fvnce");
  c.alpha = 0.25;
  c.mix_weight = 0.9;
  c.variants = {"ae", "alpha:0.5"};
  c.sweep_seeds = {4, 5};
  c.seed = 123456789012345ULL;
  const RunConfig back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.alpha == 0.25);
  CHECK(back.dataset.train == 256);
  CHECK(back.seed == 123456789012345ULL);

  const RunConfig partial = config_from_json(nlohmann::json{{"alpha", 0.5}});
  CHECK(partial.alpha == 0.5);
  CHECK(partial.epochs == RunConfig{}.epochs);

  CHECK_THROWS_AS((void)config_from_json(nlohmann::json{{"alpah", 0.5}}), std::invalid_argument);
  CHECK_THROWS((void)config_from_json(nlohmann::json{{"alpha", "x"}}));
  CHECK_THROWS((void)config_from_json(nlohmann::json{{"alpha", {{"nested", 1}}}}));

  TempDir dir("fvnce_cfg_test");
  {
    std::ofstream os(dir.sub("c.json"));
    os << to_json(c).dump();
  }
  CHECK(to_json(load_config(dir.sub("c.json"))) == to_json(c));
  CHECK_THROWS((void)load_config(dir.sub("missing.json")));
}

TEST_CASE("config validation") {
  RunConfig c = small();
  c.epochs = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small();
  c.loss = "nope";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small();
  c.alpha = 2.0;
  c.loss = "fvnce";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small();
  c.threads = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("variants") {
  const RunConfig a = apply_variant(small(), "alpha:0.015625");
  CHECK(a.loss == "fvnce");
  CHECK(a.alpha == 0.015625);
  CHECK(a.mix_weight == doctest::Approx(0.9));
  for (double r : {0.1, 1.0, 30.0}) {
    CHECK(psr::eval_f0(make_loss(a).pair, r) ==
          doctest::Approx(psr::eval_f0(psr::stabilized_pair(0.015625), r)).epsilon(1e-14));
  }
  CHECK(apply_variant(small(), "ae").loss == "ae");
  CHECK(apply_variant(small(), "loss:rvae").loss == "rvae");
  const RunConfig j = apply_variant(small(), "j01");
  CHECK(j.beta == 1.0);
  CHECK(j.alpha == 0.0);
  CHECK_THROWS((void)apply_variant(small(), "alpha:x"));
}

TEST_CASE("zero epochs gives initial metrics only") {
  RunConfig c = small();
  c.epochs = 0;
  const Experiment ex = prepare(c);
  const TrainResult r = train(ex);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].epoch == 0);
  CHECK(r.params.hash() == r.initial_hash);
  CHECK(std::isfinite(r.rows[0].difference));
  CHECK(r.rows[0].difference == doctest::Approx(r.rows[0].data_loglik - r.rows[0].noise_loglik));
}

TEST_CASE("training is deterministic") {
  TempDir dir("fvnce_det_test");
  RunConfig c = apply_variant(small(), "alpha:0.0625");
  c.write_checkpoint = false;
  c.out_dir = dir.sub("a");
  (void)run_train(c);
  c.out_dir = dir.sub("b");
  (void)run_train(c);
  c.out_dir = dir.sub("c");
  c.threads = 3;
  (void)run_train(c);
  const std::string a = slurp(dir.sub("a/metrics.csv"));
  CHECK_FALSE(a.empty());
  CHECK(a == slurp(dir.sub("b/metrics.csv")));
  CHECK(a == slurp(dir.sub("c/metrics.csv")));
  c.seed = 1;
  c.out_dir = dir.sub("d");
  (void)run_train(c);
  CHECK(a != slurp(dir.sub("d/metrics.csv")));
  CHECK(std::filesystem::exists(dir.sub("a/timing.csv")));
  CHECK(std::filesystem::exists(dir.sub("a/config.json")));
}

TEST_CASE("vae improves the data likelihood early on") {
  RunConfig c = small();
  c.epochs = 10;
  const TrainResult r = train(prepare(c));
  REQUIRE(r.rows.size() == 11);
  CHECK(r.rows.back().data_loglik > r.rows.front().data_loglik);
}

TEST_CASE("sweeps") {
  TempDir dir("fvnce_sweep_test");
  RunConfig c = small();
  c.epochs = 1;
  c.variants = {"ae"};
  c.sweep_seeds = {0};
  c.out_dir = dir.sub("one");
  std::vector<SweepSummary> table;
  const auto rows = run_sweep(c, &table);
  CHECK(rows.size() == 1);
  CHECK(table.size() == 1);
  CHECK(table[0].variant == "ae");
  CHECK(std::filesystem::exists(dir.sub("one/sweep_table.csv")));

  c.variants = {"ae", "vae", "alpha:0.0625", "loss:rvae"};
  c.sweep_seeds = {0, 1};
  c.out_dir = "";
  const auto many = run_sweep(c);
  REQUIRE(many.size() == 8);
  for (const auto& r : many) {
    const auto& first = r.seed == 0 ? many[0] : many[4];
    CHECK(r.initial_hash == first.initial_hash);
  }
  CHECK(many[0].initial_hash != many[4].initial_hash);

  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("nonfinite training aborts with a diagnostic") {
  // Squared norms of these rows overflow, so the first batch is not finite.
  RunConfig c = small("fvnce");
  c.dataset.noise = 1e160;
  c.epochs = 1;
  try {
    (void)train(prepare(c));
    FAIL("training did not abort");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("delta") != std::string::npos);
  }
}

TEST_CASE("overfitting one point reconstructs it") {
  TempDir dir("fvnce_overfit_test");
  RunConfig c = small("ae");
  c.dataset.dim = 4;
  c.dataset.train = 1;
  c.dataset.validation = 1;
  c.dataset.test = 1;
  c.hidden = {8};
  c.latent_dim = 2;
  c.batch_size = 1;
  c.epochs = 1500;
  c.lr = 1e-2;
  c.eval_rows = 1;
  c.out_dir = dir.sub("run");
  const TrainResult r = run_train(c);
  const Experiment ex = prepare(c);
  CHECK(reconstruction_mse(r.net, r.params, ex.dataset.train)(0) < 1e-4);

  {
    std::ofstream os(dir.sub("in.csv"));
    os << "0.1,0.2,0.3,0.4\n0.5,0.5,0.5,0.5\n";
  }
  RunConfig rc;
  rc.out_dir = dir.sub("rec");
  rc.checkpoint = dir.sub("run/checkpoint.bin");
  rc.reconstruct_input = dir.sub("in.csv");
  run_reconstruct(rc);
  const std::string csv = slurp(dir.sub("rec/reconstruct.csv"));
  CHECK(csv.rfind("set,index,label,loglik,mse\n", 0) == 0);
  CHECK(csv.find("data,1,-1,") != std::string::npos);
  const std::string pgm = slurp(dir.sub("rec/recon_data.pgm"));
  // Four 2x2 patches (2 inputs, 2 reconstructions) on an 8-wide grid.
  CHECK(pgm.rfind("P5\n16 2\n255\n", 0) == 0);
  CHECK(pgm.size() == std::string("P5\n16 2\n255\n").size() + 32);

  {
    std::ofstream os(dir.sub("wide.csv"));
    os << "1,2,3\n";
  }
  rc.reconstruct_input = dir.sub("wide.csv");
  CHECK_THROWS_AS(run_reconstruct(rc), std::invalid_argument);
}

TEST_CASE("curves") {
  TempDir dir("fvnce_curves_test");
  const std::string path = dir.sub("c.csv");
  write_curves(path, psr::ScoringPair(0, 1, true), 10.0, {0.5, 1.0, 2.0});
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "r,f1,f0,S1,S0,loss1,loss0");
  int rows = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("1,", 0) == 0) CHECK(line.substr(0, 6) == "1,0,0,");
    ++rows;
  }
  CHECK(rows == 3);
}
