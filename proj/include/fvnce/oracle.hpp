#pragma once

// Exact evaluation of objectives on finite models by full enumeration over
// x_support x z_support, plus the identity and inequality checks built on it.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fvnce/dist.hpp"
#include "fvnce/nnmodel.hpp"
#include "fvnce/psr.hpp"

namespace fvnce::oracle {

using diff::Index;
using diff::Matrix;
using diff::Vector;

struct TabularInstance {
  dist::TabularDistribution data;
  dist::TabularDistribution noise;
  nn::TabularJointModel model;
  nn::TabularEncoder q1;
  nn::TabularEncoder q0;
};

struct InstanceShape {
  Index min_x = 3;
  Index max_x = 8;
  Index min_z = 2;
  Index max_z = 4;
};

/// Dirichlet(1) data, noise, prior and encoder rows; Gaussian theta.
[[nodiscard]] TabularInstance random_instance(std::uint64_t seed, const InstanceShape& shape = {});

/// The same instance with both encoders replaced by the exact posterior.
[[nodiscard]] TabularInstance with_exact_posterior(const TabularInstance& inst);

enum class ObjectiveKind {
  nce,    // logistic scores log(r / (1 + r)), -log(1 + r); pair ignored
  fvnce,  // the given pair
  j00,    // raw (0, 0)
  j01,    // raw (0, 1)
  j10,    // raw (1, 0)
};

struct ExactReport {
  double snce_value = 0.0;   // marginal-ratio objective
  double fvnce_value = 0.0;  // variational objective with the instance encoders
  double gap = 0.0;          // snce_value - fvnce_value
  double snce_data = 0.0;
  double snce_noise = 0.0;
  double fvnce_data = 0.0;
  double fvnce_noise = 0.0;
  /// p_n(x) > 0 wherever p_d(x) > 0.
  bool noise_covers_data = true;
  /// p_n(x) q0(z | x) > 0 wherever p(x, z) > 0.
  bool noise_covers_model = true;
};

[[nodiscard]] ExactReport exact_expectation(ObjectiveKind kind, const TabularInstance& inst,
                                            const psr::ScoringPair& pair = psr::ScoringPair(0, 0));

/// sum_x p_d(x) sum_z q1(z | x) [log p(x, z) - log q1(z | x)].
[[nodiscard]] double exact_vae(const TabularInstance& inst);

/// sum over {p_n(x) q0(z | x) > 0} of p(x, z).
[[nodiscard]] double mass_check(const nn::TabularJointModel& model,
                                const dist::TabularDistribution& noise,
                                const nn::TabularEncoder& q0);

/// 1/2 sum_{x,z} (p(x, z) - p_d(x) q0(z | x))^2 / (p_n(x) q0(z | x)).
[[nodiscard]] double weighted_squared_distance(const TabularInstance& inst);

/// Raw (0, 1) objective written with the marginal ratio p(x) / p_n(x).
[[nodiscard]] double j01_marginal_form(const TabularInstance& inst);

struct CheckResult {
  std::string name;
  bool passed = false;
  double residual = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// The scoring-pair test grid: alpha x beta values and 33 log-spaced ratios.
[[nodiscard]] std::vector<double> grid_alphas();
[[nodiscard]] std::vector<double> grid_betas();
[[nodiscard]] std::vector<double> grid_ratios();

/// Closed-form properties of every grid pair (raw and normalized).
[[nodiscard]] std::vector<CheckResult> psr_checks();
/// Bound, tightness and mass checks over seeds [0, seeds).
[[nodiscard]] std::vector<CheckResult> inequality_checks(std::uint64_t seeds = 50);
/// Theta-independence identities and the posterior simplification.
[[nodiscard]] std::vector<CheckResult> identity_checks(std::uint64_t seeds = 50);

[[nodiscard]] nlohmann::json to_json(const std::vector<CheckResult>& checks);
/// All of the above as one report; "passed" is true when every check passed.
[[nodiscard]] nlohmann::json verify_report();

}  // namespace fvnce::oracle
