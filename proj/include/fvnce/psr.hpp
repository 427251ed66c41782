#pragma once

// Double-ELBO scoring rules for binary outcomes.
//
// A scoring pair (f1, f0) is a non-negative combination of atoms indexed by
// (alpha, beta). Every atom satisfies f0'(r) = -r f1'(r), both functions are
// concave in the density ratio r, and the induced generator
//   G(mu) = mu f1(mu/(1-mu)) + (1-mu) f0(mu/(1-mu))
// is strictly convex on (0, 1).
//
// Raw atoms:
//   alpha = 0:  f1 = log(r + beta)         f0 = beta log(r + beta) - r
//   alpha > 0:  f1 = (r + beta)^alpha / alpha
//               f0 = -(alpha r - beta) (r + beta)^alpha / (alpha (alpha + 1))
// Normalized atoms are the affine rescaling with f1(1) = f0(1) = 0 and
// f1'(1) = 1.

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace fvnce::psr {

/// Floor applied to r inside log r for (0,0) atoms.
inline constexpr double kRatioFloor = 1e-30;
/// Open-interval guard for posterior arguments of G.
inline constexpr double kPosteriorGuard = 1e-9;
/// Default threshold of the clipped exponential.
inline constexpr double kDefaultClip = 10.0;
/// Threshold value that disables clipping.
inline constexpr double kNoClip = std::numeric_limits<double>::infinity();

struct Atom {
  double alpha = 0.0;
  double beta = 0.0;
  double weight = 1.0;

  friend bool operator==(const Atom&, const Atom&) = default;
};

class ScoringPair {
 public:
  ScoringPair(double alpha, double beta, bool normalized = false);
  explicit ScoringPair(std::vector<Atom> atoms, bool normalized = false);

  [[nodiscard]] const std::vector<Atom>& atoms() const noexcept { return atoms_; }
  [[nodiscard]] bool normalized() const noexcept { return normalized_; }
  [[nodiscard]] ScoringPair as_normalized(bool normalized) const;

  /// True when every atom has alpha = beta = 0.
  [[nodiscard]] bool is_log_ratio() const noexcept;
  [[nodiscard]] double total_weight() const noexcept;
  [[nodiscard]] std::string describe() const;

  friend bool operator==(const ScoringPair&, const ScoringPair&) = default;

 private:
  std::vector<Atom> atoms_;
  bool normalized_ = false;
};

/// Equivalent views of one binary-classifier operating point.
struct RatioPoint {
  double r = 1.0;      // density ratio p_model / p_noise
  double mu = 0.5;     // posterior r / (1 + r)
  double delta = 0.0;  // logit log r

  static RatioPoint from_ratio(double r);
  static RatioPoint from_posterior(double mu);
  static RatioPoint from_logit(double delta);
};

enum class Outcome : int { noise = 0, data = 1 };

/// Counters filled by evaluations that may clip or floor their arguments.
struct ClipStats {
  std::size_t evaluations = 0;
  std::size_t clipped = 0;
  std::size_t floored = 0;

  ClipStats& operator+=(const ClipStats& other) noexcept {
    evaluations += other.evaluations;
    clipped += other.clipped;
    floored += other.floored;
    return *this;
  }
};

/// exp(u) for u <= threshold, else the tangent line e^T (u - T + 1).
[[nodiscard]] double exp_clipped(double u, double threshold = kDefaultClip) noexcept;
[[nodiscard]] double exp_clipped_grad(double u, double threshold = kDefaultClip) noexcept;

[[nodiscard]] double eval_f1(const ScoringPair& pair, double r, ClipStats* stats = nullptr);
[[nodiscard]] double eval_f0(const ScoringPair& pair, double r, ClipStats* stats = nullptr);
[[nodiscard]] double grad_f1(const ScoringPair& pair, double r);
[[nodiscard]] double grad_f0(const ScoringPair& pair, double r);

[[nodiscard]] double eval_G(const ScoringPair& pair, double mu);
/// G'(mu) = f1(r) - f0(r) for compatible pairs.
[[nodiscard]] double eval_G_prime(const ScoringPair& pair, double mu);
/// G''(mu) = f1'(r) / (1 - mu)^3.
[[nodiscard]] double eval_G_second(const ScoringPair& pair, double mu);

/// S(1, mu) = f1(r) for outcome data, S(0, 1 - mu) = f0(r) for outcome noise,
/// with r = mu / (1 - mu).
[[nodiscard]] double score(const ScoringPair& pair, Outcome outcome, double mu);

[[nodiscard]] double bregman(const ScoringPair& pair, double mu, double nu);

/// Value and delta-derivative of the classification loss -S in logit form.
struct LogitLoss {
  double value = 0.0;
  double grad = 0.0;
  bool clipped = false;
};

[[nodiscard]] LogitLoss logit_loss_eval(const ScoringPair& pair, Outcome outcome, double delta,
                                        double threshold = kDefaultClip,
                                        ClipStats* stats = nullptr);

[[nodiscard]] double logit_loss(const ScoringPair& pair, Outcome outcome, double delta,
                                double threshold = kDefaultClip, ClipStats* stats = nullptr);

/// Noise-branch loss with the linear -r part of every alpha = 0 atom removed.
/// When the model is supported inside the noise that part has expectation
/// dropped_linear_mean(pair), so the sampled term can be replaced by it.
[[nodiscard]] LogitLoss noise_loss_without_linear(const ScoringPair& pair, double delta,
                                                  double threshold = kDefaultClip,
                                                  ClipStats* stats = nullptr);
[[nodiscard]] double dropped_linear_mean(const ScoringPair& pair) noexcept;

/// Cone combination; all inputs must share the normalization flag.
[[nodiscard]] ScoringPair combine(std::span<const ScoringPair> pairs,
                                  std::span<const double> weights);

/// The training pair 0.9 * (alpha, 0) + 0.1 * (0, 0).
[[nodiscard]] ScoringPair stabilized_pair(double alpha, bool normalized = true);

/// Geometric grid of n points on [lo, hi].
[[nodiscard]] std::vector<double> log_grid(double lo, double hi, std::size_t n);

}  // namespace fvnce::psr
