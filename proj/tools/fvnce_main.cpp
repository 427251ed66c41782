// fvnce: command-line driver.
//
//   fvnce verify       oracle suite -> OUT/report.json
//   fvnce curves       scoring-rule curves -> CSV
//   fvnce train        OUT/metrics.csv, timing.csv, config.json, checkpoint.bin
//   fvnce sweep        OUT/sweep_runs.csv, sweep_table.csv
//   fvnce reconstruct  OUT/recon_*.pgm, reconstruct.csv

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fvnce/experiment.hpp"
#include "fvnce/oracle.hpp"
#include "fvnce/psr.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Flat JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--threads", c.threads, "Worker threads for batch evaluation")
      ->check(CLI::PositiveNumber);
}

fvnce::cli::RunConfig resolve(const Common& c) {
  fvnce::cli::RunConfig cfg = c.config.empty() ? fvnce::cli::RunConfig{} : fvnce::cli::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.out_dir = *c.out;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  return cfg;
}

int run_verify(const Common& c) {
  const std::string out = c.out.value_or("out");
  std::filesystem::create_directories(out);
  const nlohmann::json report = fvnce::oracle::verify_report();
  const std::string path = (std::filesystem::path(out) / "report.json").string();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << report.dump(2) << '\n';
  std::size_t total = 0;
  std::size_t failed = 0;
  for (const char* group : {"scoring_rules", "inequalities", "identities"}) {
    for (const auto& check : report.at(group)) {
      ++total;
      if (!check.at("passed").get<bool>()) {
        ++failed;
        std::cerr << "FAIL " << check.at("name").get<std::string>() << " residual "
                  << check.at("residual").get<double>() << '\n';
      }
    }
  }
  std::cout << (total - failed) << "/" << total << " checks passed; report in " << path << '\n';
  return failed == 0 ? 0 : 1;
}

void print_table(const std::vector<fvnce::cli::SweepSummary>& table) {
  std::printf("%-20s %14s %14s %14s\n", "variant", "data", "noise", "difference");
  for (const auto& s : table) {
    std::printf("%-20s %14.3f %14.3f %14.3f\n", s.variant.c_str(), s.data_loglik, s.noise_loglik,
                s.difference);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational noise-contrastive estimation toolkit"};
  app.require_subcommand(1);

  Common common;
  CLI::App* verify = app.add_subcommand("verify", "Run the exact oracle suite");
  add_common(verify, common);

  CLI::App* curves = app.add_subcommand("curves", "Write scoring-rule curves as CSV");
  double alpha = 0.0;
  double beta = 0.0;
  bool raw = false;
  double threshold = fvnce::psr::kDefaultClip;
  std::string curves_out;
  curves->add_option("--alpha", alpha, "Atom alpha in [0, 1]")->required();
  curves->add_option("--beta", beta, "Atom beta >= 0")->required();
  curves->add_option("--out", curves_out, "Output CSV file")->required();
  curves->add_flag("--raw", raw, "Use the raw rather than the normalized parametrization");
  curves->add_option("--threshold", threshold, "Clipped-exponential threshold for loss columns");

  CLI::App* train = app.add_subcommand("train", "Train one configuration");
  add_common(train, common);
  CLI::App* sweep = app.add_subcommand("sweep", "Train every variant over the sweep seeds");
  add_common(sweep, common);
  CLI::App* reconstruct = app.add_subcommand("reconstruct", "Reconstruct inputs from a checkpoint");
  add_common(reconstruct, common);
  std::string checkpoint;
  std::string inputs;
  reconstruct->add_option("--checkpoint", checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
  reconstruct->add_option("--inputs", inputs, "CSV of input rows")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*verify) return run_verify(common);

    if (*curves) {
      const fvnce::psr::ScoringPair pair(alpha, beta, !raw);
      fvnce::cli::write_curves(curves_out, pair, threshold, fvnce::oracle::grid_ratios());
      return 0;
    }

    fvnce::cli::RunConfig cfg = resolve(common);
    if (*train) {
      const auto res = fvnce::cli::run_train(cfg);
      const auto& last = res.rows.back();
      std::printf("epoch %d  data %.4f  noise %.4f  difference %.4f\n", last.epoch,
                  last.data_loglik, last.noise_loglik, last.difference);
      return 0;
    }
    if (*sweep) {
      std::vector<fvnce::cli::SweepSummary> table;
      (void)fvnce::cli::run_sweep(cfg, &table);
      print_table(table);
      return 0;
    }
    if (*reconstruct) {
      if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
      if (!inputs.empty()) cfg.reconstruct_input = inputs;
      fvnce::cli::run_reconstruct(cfg);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "fvnce: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
