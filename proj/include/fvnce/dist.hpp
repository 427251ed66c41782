#pragma once

// Densities used as data, noise, prior and likelihood. All values are kept in
// the log domain. Samples are returned as rows of a matrix.

#include <Eigen/Core>

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fvnce/rng.hpp"

namespace fvnce::dist {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kLog2Pi = 1.8378770664093454836;

class Density {
 public:
  Density() = default;
  Density(const Density&) = default;
  Density& operator=(const Density&) = default;
  Density(Density&&) = default;
  Density& operator=(Density&&) = default;
  virtual ~Density() = default;

  [[nodiscard]] virtual Index dim() const noexcept = 0;
  [[nodiscard]] virtual double log_pdf(const Eigen::Ref<const Vector>& x) const = 0;
  /// log_pdf of every row of xs.
  [[nodiscard]] virtual Vector log_pdf_rows(const Matrix& xs) const;
  [[nodiscard]] virtual Matrix sample(Rng& rng, Index n) const = 0;

 protected:
  void check_dim(Index got) const;
};

class DiagonalGaussian final : public Density {
 public:
  DiagonalGaussian(Vector mean, Vector log_var);
  static DiagonalGaussian standard(Index dim);

  [[nodiscard]] Index dim() const noexcept override { return mean_.size(); }
  [[nodiscard]] double log_pdf(const Eigen::Ref<const Vector>& x) const override;
  [[nodiscard]] Matrix sample(Rng& rng, Index n) const override;

  [[nodiscard]] const Vector& mean() const noexcept { return mean_; }
  [[nodiscard]] const Vector& log_var() const noexcept { return log_var_; }

 private:
  Vector mean_;
  Vector log_var_;
};

/// Mixture of isotropic Gaussians N(c_j, bandwidth^2 I) with equal weights.
class GaussianKde final : public Density {
 public:
  GaussianKde(Matrix centers, double bandwidth);

  [[nodiscard]] Index dim() const noexcept override { return centers_.cols(); }
  [[nodiscard]] double log_pdf(const Eigen::Ref<const Vector>& x) const override;
  [[nodiscard]] Vector log_pdf_rows(const Matrix& xs) const override;
  [[nodiscard]] Matrix sample(Rng& rng, Index n) const override;

  [[nodiscard]] const Matrix& centers() const noexcept { return centers_; }
  [[nodiscard]] double bandwidth() const noexcept { return bandwidth_; }

 private:
  Matrix centers_;
  double bandwidth_;
  Vector center_norms_;
};

/// Finite distribution over explicit support points (rows of `support`).
class TabularDistribution final : public Density {
 public:
  TabularDistribution(Matrix support, Vector log_mass);
  /// Support {0, 1, ..., n-1} on the real line with the given masses.
  static TabularDistribution over_indices(const Vector& mass);
  static TabularDistribution uniform(Matrix support);
  static TabularDistribution from_json(const nlohmann::json& j);

  [[nodiscard]] Index dim() const noexcept override { return support_.cols(); }
  [[nodiscard]] Index size() const noexcept { return support_.rows(); }
  [[nodiscard]] double log_pdf(const Eigen::Ref<const Vector>& x) const override;
  [[nodiscard]] Matrix sample(Rng& rng, Index n) const override;
  /// Support indices drawn by inverse CDF.
  [[nodiscard]] std::vector<Index> sample_indices(Rng& rng, Index n) const;

  [[nodiscard]] const Matrix& support() const noexcept { return support_; }
  [[nodiscard]] const Vector& log_mass() const noexcept { return log_mass_; }
  [[nodiscard]] Vector mass() const { return log_mass_.array().exp().matrix(); }
  [[nodiscard]] nlohmann::json to_json() const;

 private:
  Matrix support_;
  Vector log_mass_;
  Vector cdf_;
};

/// (point, mass) pairs of a tabular distribution; throws for continuous ones.
[[nodiscard]] std::vector<std::pair<Vector, double>> enumerate(const Density& d);

/// Numerically stable log(sum(exp(v))).
[[nodiscard]] double log_sum_exp(const Eigen::Ref<const Vector>& v);

}  // namespace fvnce::dist
