#pragma once

// Run configuration and the training, sweep, reconstruction and curve drivers
// behind the command-line tool.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fvnce/data.hpp"
#include "fvnce/dist.hpp"
#include "fvnce/losses.hpp"
#include "fvnce/nnmodel.hpp"
#include "fvnce/tape.hpp"

namespace fvnce::cli {

using diff::Index;
using diff::Matrix;
using diff::Vector;

/// Flat JSON configuration. Unknown keys are rejected.
struct RunConfig {
  // Objective.
  std::string loss = "vae";
  double alpha = 0.0;
  double beta = 0.0;
  bool normalized = true;
  /// Weight of the (alpha, beta) atom; the remainder goes to (0, 0).
  double mix_weight = 1.0;
  bool drop_constant_term = true;
  int mc_samples = 1;
  double clip_threshold = 10.0;
  bool stochastic_data_encoder = false;

  // Model.
  Index latent_dim = 8;
  std::vector<Index> hidden{32};
  std::string activation = "relu";
  double sigma_dec = 0.125;
  /// Noise bandwidth; 0 selects 2 * sigma_dec.
  double sigma_kde = 0.0;

  // Noise: KDE over "validation", "train" or "csv" rows.
  std::string noise_source = "validation";
  int noise_label = -1;
  Index noise_centers = 1000;
  std::string noise_csv;

  data::DatasetSpec dataset;

  // Optimization.
  int epochs = 100;
  Index batch_size = 128;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Rows per gradient chunk; fixed so results do not depend on threads.
  Index chunk_rows = 32;
  /// Rows of test data and of noise samples used for metrics.
  Index eval_rows = 1000;

  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = "out";
  bool write_checkpoint = true;

  // Sweep.
  std::vector<std::string> variants{"ae", "vae", "alpha:0.00390625", "alpha:0.015625",
                                    "alpha:0.0625", "j01"};
  std::vector<std::uint64_t> sweep_seeds{0, 1, 2};

  // Reconstruction.
  std::string checkpoint;
  std::string reconstruct_input;
  Index grid_count = 32;

  [[nodiscard]] double kde_bandwidth() const { return sigma_kde > 0.0 ? sigma_kde : 2.0 * sigma_dec; }
  void validate() const;
};

[[nodiscard]] nlohmann::json to_json(const RunConfig& cfg);
[[nodiscard]] RunConfig config_from_json(const nlohmann::json& j);
[[nodiscard]] RunConfig load_config(const std::string& path);

[[nodiscard]] losses::LossConfig make_loss(const RunConfig& cfg);
[[nodiscard]] nn::Architecture make_architecture(const RunConfig& cfg, Index data_dim);
/// Applies a sweep variant name: "alpha:A" (0.9 (A, 0) + 0.1 (0, 0)), "j01"
/// (0.9 (0, 1) + 0.1 (0, 0)), "loss:NAME", or a bare loss name.
[[nodiscard]] RunConfig apply_variant(RunConfig cfg, const std::string& variant);

/// Dataset, noise density and fixed evaluation sets for one configuration.
struct Experiment {
  RunConfig config;
  data::Dataset dataset;
  std::shared_ptr<dist::GaussianKde> noise;
  /// log p_n of every training row.
  Vector train_log_pn;
  Matrix eval_data;
  std::vector<int> eval_labels;
  Matrix eval_noise;
};

[[nodiscard]] Experiment prepare(const RunConfig& cfg);

struct MetricsRow {
  int epoch = 0;
  double loss = 0.0;
  double data_loglik = 0.0;
  double noise_loglik = 0.0;
  double difference = 0.0;
  std::size_t clip_count = 0;
  double mean_delta_data = 0.0;
  double mean_delta_noise = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  nn::LatentNet net;
  diff::ParamVector params;
  std::uint64_t initial_hash = 0;
  std::vector<MetricsRow> rows;
};

/// Mean log p(x | g(x)) on the evaluation data and noise sets.
[[nodiscard]] MetricsRow evaluate(const nn::LatentNet& net, const diff::ParamVector& params,
                                  const Experiment& ex);

/// Initial parameters for a configuration; shared by every variant of a seed.
[[nodiscard]] TrainResult initialize(const RunConfig& cfg, Index data_dim);

/// Trains in memory. Throws std::runtime_error when the objective or its
/// gradient stops being finite.
[[nodiscard]] TrainResult train(const Experiment& ex);

/// metrics.csv without wall time, so equal seeds give equal bytes.
void write_metrics(const std::string& path, const std::vector<MetricsRow>& rows);
void write_timing(const std::string& path, const std::vector<MetricsRow>& rows);

/// prepare + train + write metrics.csv, timing.csv, config.json, checkpoint.bin.
TrainResult run_train(const RunConfig& cfg);

struct SweepRow {
  std::uint64_t seed = 0;
  std::string variant;
  MetricsRow final;
  std::uint64_t initial_hash = 0;
};

struct SweepSummary {
  std::string variant;
  double data_loglik = 0.0;
  double noise_loglik = 0.0;
  double difference = 0.0;
};

/// Trains every variant for every sweep seed; writes sweep_runs.csv and
/// sweep_table.csv (per-variant medians) when out_dir is non-empty.
std::vector<SweepRow> run_sweep(const RunConfig& cfg, std::vector<SweepSummary>* summary = nullptr);

[[nodiscard]] double median(std::vector<double> v);

/// Mean squared reconstruction error per row through g(x).
[[nodiscard]] Vector reconstruction_mse(const nn::LatentNet& net, const diff::ParamVector& params,
                                        const Matrix& x);
/// Mean of reconstruction_mse per label in [0, clusters).
[[nodiscard]] std::vector<double> cluster_mse(const nn::LatentNet& net,
                                              const diff::ParamVector& params, const Matrix& x,
                                              const std::vector<int>& labels, int clusters);

/// Loads a checkpoint (cfg.checkpoint, else out_dir/checkpoint.bin) and writes
/// recon_data.pgm, recon_noise.pgm and reconstruct.csv into out_dir.
void run_reconstruct(const RunConfig& cfg);

/// Curve table over a log-spaced ratio grid.
void write_curves(const std::string& path, const psr::ScoringPair& pair, double threshold,
                  const std::vector<double>& ratios);

}  // namespace fvnce::cli
