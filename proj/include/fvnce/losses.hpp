#pragma once

// Training objectives as Monte-Carlo estimators.
//
// Every objective is returned as the quantity to maximize; trainers minimize
// its negation. Ratios enter only through the logit
//   delta(x, z) = log p(x, z) - log p_n(x) - log q(z | x).

#include <cstddef>
#include <string>
#include <vector>

#include "fvnce/dist.hpp"
#include "fvnce/nnmodel.hpp"
#include "fvnce/psr.hpp"
#include "fvnce/rng.hpp"
#include "fvnce/tape.hpp"

namespace fvnce::losses {

using diff::Index;
using diff::Matrix;
using diff::Tape;
using diff::Var;
using diff::Vector;

enum class LossKind { nce, snce, fvnce, vae, ae, vae_det, rvae, j01, j10, mixed };

[[nodiscard]] LossKind parse_loss_kind(const std::string& name);
[[nodiscard]] std::string to_string(LossKind kind);

struct MixComponent;

struct LossConfig {
  LossKind kind = LossKind::fvnce;
  psr::ScoringPair pair{0.0, 0.0, true};
  /// q0 = q1. Untied encoders exist only for the tabular estimators.
  bool tie_encoders = true;
  /// Replace the sampled linear -r part of alpha = 0 atoms by its mean.
  bool drop_constant_term = true;
  int mc_samples = 1;
  double clip_threshold = psr::kDefaultClip;
  /// rvae only: stochastic q1 on data instead of the deterministic map.
  bool stochastic_data_encoder = false;
  std::vector<MixComponent> mix;

  void validate() const;
};

struct MixComponent {
  LossConfig config;
  double weight = 1.0;
};

/// One evaluation batch. Data and noise have equal row counts. With
/// mc_samples = k every input row is stored k times in a row, each copy with
/// its own encoder noise.
struct Batch {
  Matrix data_x;
  Matrix noise_x;
  Vector data_log_pn;
  Vector noise_log_pn;
  Matrix data_eps;
  Matrix noise_eps;
  Matrix prior_eps;
  int mc_samples = 1;
};

/// Which of the two log p_n columns an objective reads.
struct DensityUse {
  bool data = true;
  bool noise = true;
};

[[nodiscard]] DensityUse density_use(const LossConfig& config);

/// Draws encoder and prior noise for the given rows and evaluates log p_n
/// where `use` asks for it (other entries are NaN). `data_log_pn`, if given,
/// replaces the evaluation on the data rows.
[[nodiscard]] Batch make_batch(Matrix data_x, Matrix noise_x, const dist::Density& noise,
                               Index latent_dim, int mc_samples, Rng& rng, DensityUse use = {},
                               const Vector* data_log_pn = nullptr);

/// Sums, so that per-chunk diagnostics can be merged exactly.
struct Diagnostics {
  double delta_data_sum = 0.0;
  double delta_noise_sum = 0.0;
  std::size_t data_count = 0;
  std::size_t noise_count = 0;
  psr::ClipStats clip;

  [[nodiscard]] double mean_delta_data() const;
  [[nodiscard]] double mean_delta_noise() const;
  Diagnostics& operator+=(const Diagnostics& other);
};

/// Objective on a batch as a 1x1 tape node (mean over the batch rows).
[[nodiscard]] Var objective(Tape& tape, const nn::LatentNet& net, const LossConfig& config,
                            const Batch& batch, Diagnostics* diag = nullptr);

// Individual objectives on network models.
[[nodiscard]] Var fvnce_loss(Tape& tape, const nn::LatentNet& net, const psr::ScoringPair& pair,
                             const Batch& batch, const LossConfig& config, Diagnostics* diag);
[[nodiscard]] Var vae_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch);
[[nodiscard]] Var ae_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch);
/// J_AE + E[log p_Z(g(x))] - max_z log p_Z(z).
[[nodiscard]] Var vae_det_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch);
/// Noise penalty E_{x ~ p_n}[p(x, g(x)) / p_n(x)] with the clipped exponential.
[[nodiscard]] Var rvae_penalty(Tape& tape, const nn::LatentNet& net, const Batch& batch,
                               double threshold, Diagnostics* diag);
[[nodiscard]] Var rvae_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch,
                            const LossConfig& config, Diagnostics* diag);
[[nodiscard]] Var j01_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch,
                           const LossConfig& config, Diagnostics* diag);
[[nodiscard]] Var j10_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch,
                           const LossConfig& config, Diagnostics* diag);

// ---------------------------------------------------------------------------
// Sample estimators on tabular models. Supports are the indices 0..n-1 of
// the tabular distributions.

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// Logistic NCE: E_d[log p/(p + p_n)] + E_n[log p_n/(p + p_n)].
[[nodiscard]] Estimate nce_estimate(const nn::TabularJointModel& model,
                                    const dist::TabularDistribution& data,
                                    const dist::TabularDistribution& noise, Rng& rng,
                                    std::size_t n);

[[nodiscard]] Estimate snce_estimate(const nn::TabularJointModel& model,
                                     const dist::TabularDistribution& data,
                                     const dist::TabularDistribution& noise,
                                     const psr::ScoringPair& pair, Rng& rng, std::size_t n);

[[nodiscard]] Estimate fvnce_estimate(const nn::TabularJointModel& model,
                                      const dist::TabularDistribution& data,
                                      const dist::TabularDistribution& noise,
                                      const nn::TabularEncoder& q1, const nn::TabularEncoder& q0,
                                      const psr::ScoringPair& pair, Rng& rng, std::size_t n,
                                      double threshold = psr::kNoClip);

/// Importance estimate of sum_{x,z: p_n q0 > 0} p(x, z) from x ~ p_n, z ~ q0.
[[nodiscard]] Estimate restricted_mass_estimate(const nn::TabularJointModel& model,
                                                const dist::TabularDistribution& noise,
                                                const nn::TabularEncoder& q0, Rng& rng,
                                                std::size_t n);

}  // namespace fvnce::losses
