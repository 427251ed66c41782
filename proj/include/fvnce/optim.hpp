#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace fvnce::diff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;
};

struct AdamUpdate {
  Eigen::VectorXd params;
  AdamState state;
};

/// One bias-corrected adaptive-moment step. Pure: inputs are not modified.
/// Empty moment vectors in `state` are treated as zeros.
[[nodiscard]] AdamUpdate adam_step(const Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                                   const AdamState& state, const AdamConfig& config = {});

}  // namespace fvnce::diff
