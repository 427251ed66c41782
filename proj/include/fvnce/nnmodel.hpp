#pragma once

// Latent-variable models and encoders.
//
// Network models store only slice ids into a diff::ParamVector, so a model
// description can be paired with any parameter vector of the same layout.
// Rows of every matrix are samples.

#include <Eigen/Core>

#include <string>
#include <vector>

#include "fvnce/rng.hpp"
#include "fvnce/tape.hpp"

namespace fvnce::nn {

using diff::Index;
using diff::Matrix;
using diff::ParamVector;
using diff::Tape;
using diff::Var;
using diff::Vector;

inline constexpr double kLog2Pi = 1.8378770664093454836;

enum class Activation { tanh, relu };

[[nodiscard]] Activation parse_activation(const std::string& name);
[[nodiscard]] std::string to_string(Activation a);

/// Fully connected network; hidden layers use the activation, the output
/// layer is affine. Weights are stored (fan_in x fan_out).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamVector& params, const std::string& prefix, std::vector<Index> sizes,
      Activation activation);

  /// Symmetric uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  void init(ParamVector& params, Rng& rng) const;

  [[nodiscard]] Var forward(Tape& tape, Var x) const;
  [[nodiscard]] Index in_dim() const { return sizes_.front(); }
  [[nodiscard]] Index out_dim() const { return sizes_.back(); }
  [[nodiscard]] const std::vector<Index>& sizes() const noexcept { return sizes_; }

 private:
  struct Layer {
    std::size_t weight = 0;
    std::size_t bias = 0;
  };
  std::vector<Index> sizes_;
  std::vector<Layer> layers_;
  Activation activation_ = Activation::tanh;
};

/// p(x, z) = N(x; decoder(z), sigma_dec^2 I) N(z; 0, I).
class GaussianLatentModel {
 public:
  GaussianLatentModel() = default;
  GaussianLatentModel(Mlp decoder, double sigma_dec);

  [[nodiscard]] Index latent_dim() const { return decoder_.in_dim(); }
  [[nodiscard]] Index data_dim() const { return decoder_.out_dim(); }
  [[nodiscard]] double sigma_dec() const noexcept { return sigma_dec_; }
  [[nodiscard]] const Mlp& decoder() const noexcept { return decoder_; }

  [[nodiscard]] Var decode(Tape& tape, Var z) const;
  /// log p(x | z) per row, n x 1.
  [[nodiscard]] Var log_likelihood(Tape& tape, Var z, Var x) const;
  /// log p_Z(z) per row, n x 1.
  [[nodiscard]] Var log_prior(Tape& tape, Var z) const;
  /// log p(x | z) + log p_Z(z) per row, n x 1.
  [[nodiscard]] Var log_joint(Tape& tape, Var z, Var x) const;
  /// max_z log p_Z(z) = -(d_z / 2) log 2 pi.
  [[nodiscard]] double log_prior_max() const;

 private:
  Mlp decoder_;
  double sigma_dec_ = 1.0;
};

/// Deterministic code map g(x): the first `latent` outputs of a network.
class DeterministicEncoder {
 public:
  DeterministicEncoder() = default;
  DeterministicEncoder(Mlp net, Index latent);

  [[nodiscard]] Var encode(Tape& tape, Var x) const;
  [[nodiscard]] Index latent_dim() const noexcept { return latent_; }
  [[nodiscard]] Index data_dim() const { return net_.in_dim(); }

 private:
  Mlp net_;
  Index latent_ = 0;
};

/// q(z | x) = N(z; m(x), diag exp(v(x))) with (m, v) = net(x).
class StochasticEncoder {
 public:
  struct Moments {
    Var mean;
    Var log_var;
  };
  struct Sample {
    Var z;
    Var log_q;  // n x 1
  };

  StochasticEncoder() = default;
  explicit StochasticEncoder(Mlp net);

  [[nodiscard]] Index latent_dim() const { return net_.out_dim() / 2; }
  [[nodiscard]] Index data_dim() const { return net_.in_dim(); }
  [[nodiscard]] const Mlp& net() const noexcept { return net_; }

  [[nodiscard]] Moments moments(Tape& tape, Var x) const;
  /// Reparametrized draw z = m + exp(v / 2) * eps and log q(z | x) at it.
  [[nodiscard]] Sample sample(Tape& tape, Var x, const Matrix& eps) const;
  [[nodiscard]] Var log_density(Tape& tape, Var z, Var x) const;
  /// Posterior-mean map sharing this network.
  [[nodiscard]] DeterministicEncoder mean_map() const;

 private:
  Mlp net_;
};

struct Architecture {
  Index data_dim = 64;
  Index latent_dim = 8;
  std::vector<Index> hidden{32};
  Activation activation = Activation::relu;
  double sigma_dec = 0.125;
};

/// Decoder plus encoder over one parameter vector.
struct LatentNet {
  Architecture arch;
  GaussianLatentModel model;
  StochasticEncoder encoder;

  [[nodiscard]] DeterministicEncoder deterministic() const { return encoder.mean_map(); }
};

/// Builds the layout into `params` (which must be empty) and initializes it.
[[nodiscard]] LatentNet build_latent_net(const Architecture& arch, ParamVector& params, Rng& rng);
/// Rebuilds the layout description for an existing parameter vector.
[[nodiscard]] LatentNet describe_latent_net(const Architecture& arch);

/// Tape-free helpers for evaluation.
[[nodiscard]] Matrix encode_mean(const LatentNet& net, const ParamVector& params, const Matrix& x);
[[nodiscard]] Matrix decode_mean(const LatentNet& net, const ParamVector& params, const Matrix& z);
/// log p(x | g(x)) per row with g the posterior-mean map.
[[nodiscard]] Vector reconstruction_log_likelihood(const LatentNet& net, const ParamVector& params,
                                                   const Matrix& x);

// ---------------------------------------------------------------------------
// Tabular models.

/// p(x, z) = p_Z(z) softmax_x(theta[z, :]) over finite supports
/// {0..nx-1} x {0..nz-1}. Every theta gives a normalized joint.
class TabularJointModel {
 public:
  TabularJointModel(Vector log_prior, Matrix theta);
  static TabularJointModel random(Index nx, Index nz, Rng& rng, double spread = 1.0);
  /// Joint equal to a given table (nx x nz, masses summing to 1).
  static TabularJointModel from_joint(const Matrix& joint);

  [[nodiscard]] Index x_size() const noexcept { return theta_.cols(); }
  [[nodiscard]] Index z_size() const noexcept { return theta_.rows(); }
  [[nodiscard]] const Matrix& theta() const noexcept { return theta_; }
  [[nodiscard]] const Vector& log_prior() const noexcept { return log_prior_; }
  void set_theta(Matrix theta);

  /// log p(x, z), nx x nz.
  [[nodiscard]] const Matrix& log_joint_table() const noexcept { return log_joint_; }
  [[nodiscard]] double log_joint(Index x, Index z) const { return log_joint_(x, z); }
  /// log p(x | z), nx x nz.
  [[nodiscard]] Matrix log_conditional() const;
  /// log p(x) = log sum_z p(x, z).
  [[nodiscard]] Vector log_marginal() const;

 private:
  void refresh();
  Vector log_prior_;
  Matrix theta_;
  Matrix log_joint_;
};

/// q(z | x) as an nx x nz table of log masses with rows summing to one.
/// A deterministic encoder has exactly one zero per row and -inf elsewhere.
class TabularEncoder {
 public:
  explicit TabularEncoder(Matrix log_q);
  static TabularEncoder dirichlet(Index nx, Index nz, Rng& rng);
  static TabularEncoder deterministic(const std::vector<Index>& code, Index nz);

  [[nodiscard]] const Matrix& log_q() const noexcept { return log_q_; }
  [[nodiscard]] Index x_size() const noexcept { return log_q_.rows(); }
  [[nodiscard]] Index z_size() const noexcept { return log_q_.cols(); }
  [[nodiscard]] Index sample(Index x, Rng& rng) const;
  /// argmax_z q(z | x); the code for deterministic encoders.
  [[nodiscard]] Index mode(Index x) const;

 private:
  Matrix log_q_;
};

/// q(z | x) = p(x, z) / sum_z' p(x, z'); throws when some p(x) is zero.
[[nodiscard]] TabularEncoder exact_posterior(const TabularJointModel& model);

/// Symmetric Dirichlet(1) draw of length n.
[[nodiscard]] Vector dirichlet_one(Index n, Rng& rng);

}  // namespace fvnce::nn
