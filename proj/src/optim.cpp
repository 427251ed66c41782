#include "fvnce/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fvnce::diff {

AdamUpdate adam_step(const Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                     const AdamState& state, const AdamConfig& config) {
  const Eigen::Index n = params.size();
  if (grad.size() != n) throw std::invalid_argument("adam_step: gradient length mismatch");
  const bool fresh = state.m.size() == 0 && state.v.size() == 0;
  if (!fresh && (state.m.size() != n || state.v.size() != n)) {
    throw std::invalid_argument("adam_step: moment length mismatch");
  }

  AdamUpdate out;
  out.state.step = state.step + 1;
  const Eigen::VectorXd m0 = fresh ? Eigen::VectorXd::Zero(n) : state.m;
  const Eigen::VectorXd v0 = fresh ? Eigen::VectorXd::Zero(n) : state.v;
  out.state.m = config.beta1 * m0 + (1.0 - config.beta1) * grad;
  out.state.v = config.beta2 * v0 + (1.0 - config.beta2) * grad.cwiseAbs2();

  const auto t = static_cast<double>(out.state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const Eigen::ArrayXd m_hat = out.state.m.array() / c1;
  const Eigen::ArrayXd v_hat = out.state.v.array() / c2;
  out.params = params.array() - config.lr * m_hat / (v_hat.sqrt() + config.eps);
  return out;
}

}  // namespace fvnce::diff
