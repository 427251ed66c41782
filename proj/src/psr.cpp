#include "fvnce/psr.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace fvnce::psr {

namespace {

struct ExpTerm {
  double value;
  double grad;
  bool clipped;
};

ExpTerm exp_term(double u, double threshold) {
  if (u <= threshold) {
    const double e = std::exp(u);
    return {e, e, false};
  }
  const double et = std::exp(threshold);
  return {et * (u - threshold + 1.0), et, true};
}

double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a + std::log1p(std::exp(b - a));
}

// f1, f0 of one weight-1 atom and their derivatives with respect to
// delta = log r. Exponentials of log(r + beta) multiples go through the
// clipped exponential; threshold = +inf gives the exact functions.
struct AtomTerms {
  double f1 = 0.0;
  double f0 = 0.0;
  double df1 = 0.0;
  double df0 = 0.0;
  bool clipped1 = false;  // an exponential inside f1 was clipped
  bool clipped0 = false;  // an exponential inside f0 was clipped
};

AtomTerms atom_terms(const Atom& atom, bool normalized, double delta, double threshold) {
  const double alpha = atom.alpha;
  const double beta = atom.beta;

  // L = log(r + beta), dL = dL/d(delta) = r / (r + beta)
  double big_l = delta;
  double dl = 1.0;
  if (beta > 0.0) {
    const double log_beta = std::log(beta);
    big_l = log_add_exp(delta, log_beta);
    dl = 1.0 / (1.0 + std::exp(log_beta - delta));
  }
  const double l1 = std::log1p(beta);
  const double scale = normalized ? std::exp((1.0 - alpha) * l1) : 1.0;

  AtomTerms t;
  if (alpha == 0.0) {
    const ExpTerm r = exp_term(delta, threshold);
    if (normalized) {
      t.f1 = scale * (big_l - l1);
      t.f0 = scale * (beta * (big_l - l1) - (r.value - 1.0));
    } else {
      t.f1 = big_l;
      t.f0 = beta * big_l - r.value;
    }
    t.df1 = scale * dl;
    t.df0 = scale * (beta * dl - r.grad);
    t.clipped0 = r.clipped;
    return t;
  }

  const ExpTerm pa = exp_term(alpha * big_l, threshold);          // (r + beta)^alpha
  const ExpTerm pb = exp_term((alpha + 1.0) * big_l, threshold);  // (r + beta)^(alpha + 1)
  if (normalized) {
    // Differences against the r = 1 anchor; expm1 keeps small alpha accurate.
    const double at_one_a = std::exp(alpha * l1);
    const double at_one_b = std::exp((alpha + 1.0) * l1);
    const double diff_a = pa.clipped ? (pa.value - at_one_a) / alpha
                                     : at_one_a * std::expm1(alpha * (big_l - l1)) / alpha;
    const double diff_b = pb.clipped
                              ? (pb.value - at_one_b) / (alpha + 1.0)
                              : at_one_b * std::expm1((alpha + 1.0) * (big_l - l1)) / (alpha + 1.0);
    t.f1 = scale * diff_a;
    t.f0 = scale * (beta * diff_a - diff_b);
  } else {
    t.f1 = pa.value / alpha;
    t.f0 = beta * pa.value / alpha - pb.value / (alpha + 1.0);
  }
  t.df1 = scale * pa.grad * dl;
  t.df0 = scale * (beta * pa.grad - pb.grad) * dl;
  t.clipped1 = pa.clipped;
  t.clipped0 = pa.clipped || pb.clipped;
  return t;
}

void require_positive_ratio(double r) {
  if (!(r > 0.0) || !std::isfinite(r)) {
    throw std::domain_error("density ratio must be positive and finite, got " +
                            std::to_string(r));
  }
}

void require_open_posterior(double mu) {
  if (!(mu > kPosteriorGuard && mu < 1.0 - kPosteriorGuard)) {
    throw std::domain_error("posterior must lie in the open unit interval, got " +
                            std::to_string(mu));
  }
}

bool is_log_atom(const Atom& a) { return a.alpha == 0.0 && a.beta == 0.0; }

// Exact (unclipped) pair values at ratio r.
AtomTerms pair_terms(const ScoringPair& pair, double r, ClipStats* stats) {
  require_positive_ratio(r);
  const double delta = std::log(r);
  const double floored = std::log(kRatioFloor);
  AtomTerms sum;
  bool was_floored = false;
  for (const Atom& a : pair.atoms()) {
    double d = delta;
    if (is_log_atom(a) && d < floored) {
      d = floored;
      was_floored = true;
    }
    const AtomTerms t = atom_terms(a, pair.normalized(), d, kNoClip);
    sum.f1 += a.weight * t.f1;
    sum.f0 += a.weight * t.f0;
  }
  if (stats) {
    ++stats->evaluations;
    if (was_floored) ++stats->floored;
  }
  return sum;
}

// f1'(r) / weight for one atom.
double atom_grad_f1(const Atom& a, bool normalized, double r) {
  const double scale = normalized ? std::pow(1.0 + a.beta, 1.0 - a.alpha) : 1.0;
  if (a.alpha == 0.0) return scale / (r + a.beta);
  return scale * std::pow(r + a.beta, a.alpha - 1.0);
}

}  // namespace

ScoringPair::ScoringPair(double alpha, double beta, bool normalized)
    : ScoringPair(std::vector<Atom>{Atom{alpha, beta, 1.0}}, normalized) {}

ScoringPair::ScoringPair(std::vector<Atom> atoms, bool normalized)
    : atoms_(std::move(atoms)), normalized_(normalized) {
  if (atoms_.empty()) throw std::invalid_argument("scoring pair needs at least one atom");
  for (const Atom& a : atoms_) {
    if (!(a.alpha >= 0.0 && a.alpha <= 1.0)) {
      throw std::invalid_argument("atom alpha must lie in [0, 1], got " + std::to_string(a.alpha));
    }
    if (!(a.beta >= 0.0) || !std::isfinite(a.beta)) {
      throw std::invalid_argument("atom beta must be finite and >= 0, got " +
                                  std::to_string(a.beta));
    }
    if (!(a.weight > 0.0) || !std::isfinite(a.weight)) {
      throw std::invalid_argument("atom weight must be finite and > 0, got " +
                                  std::to_string(a.weight));
    }
  }
}

ScoringPair ScoringPair::as_normalized(bool normalized) const {
  return ScoringPair(atoms_, normalized);
}

bool ScoringPair::is_log_ratio() const noexcept {
  for (const Atom& a : atoms_) {
    if (!is_log_atom(a)) return false;
  }
  return true;
}

double ScoringPair::total_weight() const noexcept {
  double w = 0.0;
  for (const Atom& a : atoms_) w += a.weight;
  return w;
}

std::string ScoringPair::describe() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < atoms_.size(); ++i) {
    if (i) os << " + ";
    if (atoms_.size() > 1 || atoms_[i].weight != 1.0) os << atoms_[i].weight << "*";
    os << "(" << atoms_[i].alpha << "," << atoms_[i].beta << ")";
  }
  if (normalized_) os << " normalized";
  return os.str();
}

RatioPoint RatioPoint::from_ratio(double r) {
  require_positive_ratio(r);
  return {r, r / (1.0 + r), std::log(r)};
}

RatioPoint RatioPoint::from_posterior(double mu) {
  if (!(mu > 0.0 && mu < 1.0)) {
    throw std::domain_error("posterior must lie in (0, 1), got " + std::to_string(mu));
  }
  return {mu / (1.0 - mu), mu, std::log(mu) - std::log1p(-mu)};
}

RatioPoint RatioPoint::from_logit(double delta) {
  if (!std::isfinite(delta)) throw std::domain_error("logit must be finite");
  const double mu = delta >= 0.0 ? 1.0 / (1.0 + std::exp(-delta))
                                 : std::exp(delta) / (1.0 + std::exp(delta));
  return {std::exp(delta), mu, delta};
}

double exp_clipped(double u, double threshold) noexcept { return exp_term(u, threshold).value; }

double exp_clipped_grad(double u, double threshold) noexcept {
  return exp_term(u, threshold).grad;
}

double eval_f1(const ScoringPair& pair, double r, ClipStats* stats) {
  return pair_terms(pair, r, stats).f1;
}

double eval_f0(const ScoringPair& pair, double r, ClipStats* stats) {
  return pair_terms(pair, r, stats).f0;
}

double grad_f1(const ScoringPair& pair, double r) {
  require_positive_ratio(r);
  double g = 0.0;
  for (const Atom& a : pair.atoms()) g += a.weight * atom_grad_f1(a, pair.normalized(), r);
  return g;
}

double grad_f0(const ScoringPair& pair, double r) {
  require_positive_ratio(r);
  double g = 0.0;
  for (const Atom& a : pair.atoms()) g -= a.weight * r * atom_grad_f1(a, pair.normalized(), r);
  return g;
}

double eval_G(const ScoringPair& pair, double mu) {
  require_open_posterior(mu);
  const AtomTerms t = pair_terms(pair, mu / (1.0 - mu), nullptr);
  return mu * t.f1 + (1.0 - mu) * t.f0;
}

double eval_G_prime(const ScoringPair& pair, double mu) {
  require_open_posterior(mu);
  const AtomTerms t = pair_terms(pair, mu / (1.0 - mu), nullptr);
  return t.f1 - t.f0;
}

double eval_G_second(const ScoringPair& pair, double mu) {
  require_open_posterior(mu);
  const double q = 1.0 - mu;
  return grad_f1(pair, mu / q) / (q * q * q);
}

double score(const ScoringPair& pair, Outcome outcome, double mu) {
  require_open_posterior(mu);
  const AtomTerms t = pair_terms(pair, mu / (1.0 - mu), nullptr);
  return outcome == Outcome::data ? t.f1 : t.f0;
}

double bregman(const ScoringPair& pair, double mu, double nu) {
  return eval_G(pair, mu) - eval_G(pair, nu) - (mu - nu) * eval_G_prime(pair, nu);
}

LogitLoss logit_loss_eval(const ScoringPair& pair, Outcome outcome, double delta,
                          double threshold, ClipStats* stats) {
  LogitLoss out;
  for (const Atom& a : pair.atoms()) {
    const AtomTerms t = atom_terms(a, pair.normalized(), delta, threshold);
    if (outcome == Outcome::data) {
      out.value -= a.weight * t.f1;
      out.grad -= a.weight * t.df1;
      out.clipped = out.clipped || t.clipped1;
    } else {
      out.value -= a.weight * t.f0;
      out.grad -= a.weight * t.df0;
      out.clipped = out.clipped || t.clipped0;
    }
  }
  if (stats) {
    ++stats->evaluations;
    if (out.clipped) ++stats->clipped;
  }
  return out;
}

double logit_loss(const ScoringPair& pair, Outcome outcome, double delta, double threshold,
                  ClipStats* stats) {
  return logit_loss_eval(pair, outcome, delta, threshold, stats).value;
}

LogitLoss noise_loss_without_linear(const ScoringPair& pair, double delta, double threshold,
                                    ClipStats* stats) {
  LogitLoss out;
  for (const Atom& a : pair.atoms()) {
    AtomTerms t = atom_terms(a, pair.normalized(), delta, threshold);
    if (a.alpha == 0.0) {
      const double scale = pair.normalized() ? 1.0 + a.beta : 1.0;
      const ExpTerm r = exp_term(delta, threshold);
      t.f0 += scale * (pair.normalized() ? r.value - 1.0 : r.value);
      t.df0 += scale * r.grad;
      t.clipped0 = false;
    }
    out.value -= a.weight * t.f0;
    out.grad -= a.weight * t.df0;
    out.clipped = out.clipped || t.clipped0;
  }
  if (stats) {
    ++stats->evaluations;
    if (out.clipped) ++stats->clipped;
  }
  return out;
}

double dropped_linear_mean(const ScoringPair& pair) noexcept {
  if (pair.normalized()) return 0.0;
  double m = 0.0;
  for (const Atom& a : pair.atoms()) {
    if (a.alpha == 0.0) m -= a.weight;
  }
  return m;
}

ScoringPair combine(std::span<const ScoringPair> pairs, std::span<const double> weights) {
  if (pairs.size() != weights.size()) {
    throw std::invalid_argument("combine: pairs and weights differ in length");
  }
  if (pairs.empty()) throw std::invalid_argument("combine: nothing to combine");
  const bool normalized = pairs.front().normalized();
  std::vector<Atom> atoms;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
      throw std::invalid_argument("combine: weights must be positive");
    }
    if (pairs[i].normalized() != normalized) {
      throw std::invalid_argument("combine: mixed normalization flags");
    }
    for (Atom a : pairs[i].atoms()) {
      a.weight *= weights[i];
      atoms.push_back(a);
    }
  }
  return ScoringPair(std::move(atoms), normalized);
}

ScoringPair stabilized_pair(double alpha, bool normalized) {
  const ScoringPair parts[] = {ScoringPair(alpha, 0.0, normalized),
                               ScoringPair(0.0, 0.0, normalized)};
  const double w[] = {0.9, 0.1};
  return combine(parts, w);
}

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0 && hi > lo) || n < 2) throw std::invalid_argument("log_grid: bad range");
  std::vector<double> out(n);
  const double step = std::log(hi / lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) out[i] = lo * std::exp(step * static_cast<double>(i));
  out.back() = hi;
  return out;
}

}  // namespace fvnce::psr
