#include "fvnce/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fvnce/rng.hpp"

namespace fvnce::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double softplus(double u) {
  if (u == kInf) return kInf;
  return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
}

struct Scorer {
  ObjectiveKind kind;
  psr::ScoringPair pair;

  [[nodiscard]] double f1(double delta) const {
    if (kind == ObjectiveKind::nce) return -softplus(-delta);
    return -psr::logit_loss(pair, psr::Outcome::data, delta, psr::kNoClip);
  }
  [[nodiscard]] double f0(double delta) const {
    if (kind == ObjectiveKind::nce) return -softplus(delta);
    return -psr::logit_loss(pair, psr::Outcome::noise, delta, psr::kNoClip);
  }
};

Scorer make_scorer(ObjectiveKind kind, const psr::ScoringPair& pair) {
  switch (kind) {
    case ObjectiveKind::j00: return {kind, psr::ScoringPair(0.0, 0.0)};
    case ObjectiveKind::j01: return {kind, psr::ScoringPair(0.0, 1.0)};
    case ObjectiveKind::j10: return {kind, psr::ScoringPair(1.0, 0.0)};
    default: return {kind, pair};
  }
}

void check_supports(const TabularInstance& inst) {
  const Index nx = inst.model.x_size();
  const Index nz = inst.model.z_size();
  if (inst.data.size() != nx || inst.noise.size() != nx) {
    throw std::invalid_argument("oracle: data/noise support differs from the model");
  }
  for (const auto* q : {&inst.q1, &inst.q0}) {
    if (q->x_size() != nx || q->z_size() != nz) {
      throw std::invalid_argument("oracle: encoder support differs from the model");
    }
  }
}

double spread(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

CheckResult make_check(std::string name, double residual, double tolerance, bool passed,
                       std::string detail = {}) {
  return {std::move(name), passed, residual, tolerance, std::move(detail)};
}

std::vector<psr::ScoringPair> grid_pairs(bool normalized) {
  std::vector<psr::ScoringPair> out;
  for (double a : grid_alphas()) {
    for (double b : grid_betas()) out.emplace_back(a, b, normalized);
  }
  // Cone members.
  for (double a : {1.0 / 256, 1.0 / 64, 1.0 / 16}) out.push_back(psr::stabilized_pair(a, normalized));
  out.push_back(psr::ScoringPair({{0.0, 1.0, 0.3}, {0.5, 2.0, 1.7}, {1.0, 0.0, 0.25}}, normalized));
  return out;
}

// Richardson-extrapolated central difference of G'. Differencing G twice
// loses about eps / h^2 to rounding near the ends of (0, 1).
double second_difference(const psr::ScoringPair& p, double mu) {
  const double h = 1e-3 * std::min(mu, 1.0 - mu);
  auto d1 = [&](double s) {
    return (psr::eval_G_prime(p, mu + s) - psr::eval_G_prime(p, mu - s)) / (2.0 * s);
  };
  return (4.0 * d1(0.5 * h) - d1(h)) / 3.0;
}

TabularInstance rebuild(const TabularInstance& inst, const nn::TabularJointModel& model) {
  return {inst.data, inst.noise, model, inst.q1, inst.q0};
}

}  // namespace

TabularInstance random_instance(std::uint64_t seed, const InstanceShape& shape) {
  if (shape.min_x < 1 || shape.max_x < shape.min_x || shape.min_z < 1 ||
      shape.max_z < shape.min_z) {
    throw std::invalid_argument("random_instance: bad shape");
  }
  Rng rng(seed, 0x6f7261636c65ULL);
  const Index nx = shape.min_x + static_cast<Index>(rng.index(
                                     static_cast<std::uint64_t>(shape.max_x - shape.min_x + 1)));
  const Index nz = shape.min_z + static_cast<Index>(rng.index(
                                     static_cast<std::uint64_t>(shape.max_z - shape.min_z + 1)));
  auto data = dist::TabularDistribution::over_indices(nn::dirichlet_one(nx, rng));
  auto noise = dist::TabularDistribution::over_indices(nn::dirichlet_one(nx, rng));
  auto model = nn::TabularJointModel::random(nx, nz, rng);
  auto q1 = nn::TabularEncoder::dirichlet(nx, nz, rng);
  auto q0 = nn::TabularEncoder::dirichlet(nx, nz, rng);
  return {std::move(data), std::move(noise), std::move(model), std::move(q1), std::move(q0)};
}

TabularInstance with_exact_posterior(const TabularInstance& inst) {
  const nn::TabularEncoder post = nn::exact_posterior(inst.model);
  return {inst.data, inst.noise, inst.model, post, post};
}

ExactReport exact_expectation(ObjectiveKind kind, const TabularInstance& inst,
                              const psr::ScoringPair& pair) {
  check_supports(inst);
  const Scorer s = make_scorer(kind, pair);
  const Vector lm = inst.model.log_marginal();
  const Vector& ln = inst.noise.log_mass();
  const Vector& ld = inst.data.log_mass();
  const Matrix& lj = inst.model.log_joint_table();
  const Matrix& lq1 = inst.q1.log_q();
  const Matrix& lq0 = inst.q0.log_q();

  ExactReport rep;
  for (Index x = 0; x < lm.size(); ++x) {
    const double pd = std::exp(ld(x));
    const double pn = std::exp(ln(x));
    if (pd > 0.0 && pn == 0.0) rep.noise_covers_data = false;
    if (pd > 0.0) {
      rep.snce_data += pd * s.f1(lm(x) - ln(x));
      for (Index z = 0; z < lj.cols(); ++z) {
        const double q = std::exp(lq1(x, z));
        if (q > 0.0) rep.fvnce_data += pd * q * s.f1(lj(x, z) - ln(x) - lq1(x, z));
      }
    }
    for (Index z = 0; z < lj.cols(); ++z) {
      const double q = std::exp(lq0(x, z));
      if (std::exp(lj(x, z)) > 0.0 && (pn == 0.0 || q == 0.0)) rep.noise_covers_model = false;
    }
    if (pn > 0.0) {
      rep.snce_noise += pn * s.f0(lm(x) - ln(x));
      for (Index z = 0; z < lj.cols(); ++z) {
        const double q = std::exp(lq0(x, z));
        if (q > 0.0) rep.fvnce_noise += pn * q * s.f0(lj(x, z) - ln(x) - lq0(x, z));
      }
    }
  }
  rep.snce_value = rep.snce_data + rep.snce_noise;
  rep.fvnce_value = rep.fvnce_data + rep.fvnce_noise;
  rep.gap = rep.snce_value - rep.fvnce_value;
  return rep;
}

double exact_vae(const TabularInstance& inst) {
  check_supports(inst);
  const Matrix& lj = inst.model.log_joint_table();
  const Matrix& lq = inst.q1.log_q();
  double total = 0.0;
  for (Index x = 0; x < lj.rows(); ++x) {
    const double pd = std::exp(inst.data.log_mass()(x));
    if (pd == 0.0) continue;
    for (Index z = 0; z < lj.cols(); ++z) {
      const double q = std::exp(lq(x, z));
      if (q > 0.0) total += pd * q * (lj(x, z) - lq(x, z));
    }
  }
  return total;
}

double mass_check(const nn::TabularJointModel& model, const dist::TabularDistribution& noise,
                  const nn::TabularEncoder& q0) {
  if (noise.size() != model.x_size() || q0.x_size() != model.x_size() ||
      q0.z_size() != model.z_size()) {
    throw std::invalid_argument("mass_check: support mismatch");
  }
  double mass = 0.0;
  for (Index x = 0; x < model.x_size(); ++x) {
    if (std::exp(noise.log_mass()(x)) == 0.0) continue;
    for (Index z = 0; z < model.z_size(); ++z) {
      if (std::exp(q0.log_q()(x, z)) > 0.0) mass += std::exp(model.log_joint(x, z));
    }
  }
  return mass;
}

double weighted_squared_distance(const TabularInstance& inst) {
  check_supports(inst);
  double total = 0.0;
  for (Index x = 0; x < inst.model.x_size(); ++x) {
    const double pd = std::exp(inst.data.log_mass()(x));
    const double pn = std::exp(inst.noise.log_mass()(x));
    for (Index z = 0; z < inst.model.z_size(); ++z) {
      const double q = std::exp(inst.q0.log_q()(x, z));
      const double diff = std::exp(inst.model.log_joint(x, z)) - pd * q;
      total += 0.5 * diff * diff / (pn * q);
    }
  }
  return total;
}

double j01_marginal_form(const TabularInstance& inst) {
  check_supports(inst);
  const Vector lm = inst.model.log_marginal();
  double total = 0.0;
  for (Index x = 0; x < lm.size(); ++x) {
    const double pd = std::exp(inst.data.log_mass()(x));
    const double pn = std::exp(inst.noise.log_mass()(x));
    const double r = std::exp(lm(x)) / pn;
    total += pd * std::log1p(r) + pn * (std::log1p(r) - r);
  }
  return total;
}

std::vector<double> grid_alphas() { return {0.0, 1.0 / 256, 1.0 / 64, 1.0 / 16, 0.25, 0.5, 1.0}; }
std::vector<double> grid_betas() { return {0.0, 0.5, 1.0, 2.0}; }
std::vector<double> grid_ratios() { return psr::log_grid(1e-2, 1e2, 33); }

std::vector<CheckResult> psr_checks() {
  const std::vector<double> rs = grid_ratios();
  std::vector<double> mus;
  for (int i = 1; i <= 99; ++i) mus.push_back(0.01 * i);

  double compat = 0.0;
  double deriv = 0.0;
  double concav = -kInf;
  std::size_t mono_violations = 0;
  double g2_min = kInf;
  double g2_fd = 0.0;
  double lemma2 = 0.0;
  double breg_min = kInf;
  double breg_diag = 0.0;
  double breg_brute = 0.0;
  std::size_t symmetric_pairs = 0;

  for (bool normalized : {false, true}) {
    for (const psr::ScoringPair& p : grid_pairs(normalized)) {
      double prev1 = -kInf;
      double prev0 = kInf;
      for (double r : rs) {
        const double g1 = psr::grad_f1(p, r);
        const double g0 = psr::grad_f0(p, r);
        compat = std::max(compat, std::abs(g0 + r * g1));

        const double h = 1e-5 * std::max(1.0, r);
        const double fd1 = (psr::eval_f1(p, r + h) - psr::eval_f1(p, r - h)) / (2.0 * h);
        const double fd0 = (psr::eval_f0(p, r + h) - psr::eval_f0(p, r - h)) / (2.0 * h);
        deriv = std::max(deriv, std::abs(fd1 - g1) / std::max(1.0, std::abs(g1)));
        deriv = std::max(deriv, std::abs(fd0 - g0) / std::max(1.0, std::abs(g0)));

        // Second differences of a concave function are <= 0 for any step; a
        // wide step keeps rounding (eps |f| / k^2) well below the tolerance.
        const double k = 0.1 * r;
        const double f1 = psr::eval_f1(p, r);
        const double f0 = psr::eval_f0(p, r);
        concav = std::max(concav, (psr::eval_f1(p, r + k) - 2.0 * f1 + psr::eval_f1(p, r - k)) / (k * k));
        concav = std::max(concav, (psr::eval_f0(p, r + k) - 2.0 * f0 + psr::eval_f0(p, r - k)) / (k * k));

        if (!(f1 > prev1) || !(f0 < prev0)) ++mono_violations;
        prev1 = f1;
        prev0 = f0;
      }

      bool asymmetric = false;
      for (double mu : mus) {
        const double g2 = psr::eval_G_second(p, mu);
        g2_min = std::min(g2_min, g2);
        g2_fd = std::max(g2_fd, std::abs(second_difference(p, mu) - g2) / g2);
        if (p.atoms().size() == 1 && p.atoms()[0].alpha == 0.0 && !normalized) {
          const double b = p.atoms()[0].beta;
          const double closed = 1.0 / ((1.0 - mu) * (1.0 - mu) * (mu + b * (1.0 - mu)));
          lemma2 = std::max(lemma2, std::abs(g2 - closed) / closed);
        }
        // A symmetric rule would score outcome 1 reported at mu like outcome 0
        // reported at mu.
        const double s1 = psr::score(p, psr::Outcome::data, mu);
        const double s0 = psr::score(p, psr::Outcome::noise, 1.0 - mu);
        if (std::abs(s1 - s0) > 1e-3) asymmetric = true;
      }
      if (!asymmetric) ++symmetric_pairs;

      for (int i = 1; i <= 9; ++i) {
        for (int j = 1; j <= 9; ++j) {
          const double mu = 0.1 * i;
          const double nu = 0.1 * j;
          const double d = psr::bregman(p, mu, nu);
          breg_min = std::min(breg_min, d);
          if (i == j) breg_diag = std::max(breg_diag, std::abs(d));
          // Expected-score gap under Bernoulli(mu) between reporting mu and nu.
          auto expected = [&](double report) {
            return mu * psr::score(p, psr::Outcome::data, report) +
                   (1.0 - mu) * psr::score(p, psr::Outcome::noise, report);
          };
          const double brute = expected(mu) - expected(nu);
          breg_brute = std::max(breg_brute, std::abs(d - brute) / std::max(1.0, std::abs(brute)));
        }
      }
    }
  }

  double limit1 = 0.0;
  double limit0 = 0.0;
  for (double b : grid_betas()) {
    const psr::ScoringPair small(1e-6, b, true);
    const psr::ScoringPair zero(0.0, b, true);
    for (double r : rs) {
      limit1 = std::max(limit1, std::abs(psr::eval_f1(small, r) - psr::eval_f1(zero, r)));
      const double f0 = psr::eval_f0(zero, r);
      limit0 = std::max(limit0, std::abs(psr::eval_f0(small, r) - f0) / std::max(1.0, std::abs(f0)));
    }
  }

  std::vector<CheckResult> out;
  out.push_back(make_check("compatibility", compat, 1e-10, compat <= 1e-10));
  out.push_back(make_check("derivative_consistency", deriv, 1e-5, deriv <= 1e-5));
  out.push_back(make_check("concavity", concav, 1e-8, concav <= 1e-8,
                           "max second difference, step 0.1 r"));
  out.push_back(make_check("monotonicity", static_cast<double>(mono_violations), 0.0,
                           mono_violations == 0));
  out.push_back(make_check("generator_convexity", g2_min, 0.0, g2_min > 0.0, "min G'' on grid"));
  out.push_back(make_check("generator_second_derivative_fd", g2_fd, 1e-6, g2_fd <= 1e-6));
  out.push_back(make_check("generator_second_derivative_closed_form", lemma2, 1e-6, lemma2 <= 1e-6));
  out.push_back(make_check("asymmetry", static_cast<double>(symmetric_pairs), 0.0,
                           symmetric_pairs == 0, "pairs without an asymmetric point"));
  out.push_back(make_check("alpha_zero_limit_f1", limit1, 1e-4, limit1 <= 1e-4));
  out.push_back(make_check("alpha_zero_limit_f0_relative", limit0, 1e-4, limit0 <= 1e-4));
  out.push_back(make_check("bregman_nonnegative", breg_min, -1e-12, breg_min >= -1e-12));
  out.push_back(make_check("bregman_diagonal", breg_diag, 1e-12, breg_diag <= 1e-12));
  out.push_back(make_check("bregman_expected_score", breg_brute, 1e-9, breg_brute <= 1e-9));
  return out;
}

std::vector<CheckResult> inequality_checks(std::uint64_t seeds) {
  std::vector<psr::ScoringPair> pairs = grid_pairs(false);
  const auto normalized = grid_pairs(true);
  pairs.insert(pairs.end(), normalized.begin(), normalized.end());

  double min_slack = kInf;
  double max_tight = 0.0;
  double full_mass = 0.0;
  double noise_term = -kInf;
  std::size_t deficient_fail = 0;
  std::size_t monotone_fail = 0;
  double chain = kInf;

  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const TabularInstance inst = random_instance(seed);
    const TabularInstance post = with_exact_posterior(inst);
    for (const auto& p : pairs) {
      min_slack = std::min(min_slack, exact_expectation(ObjectiveKind::fvnce, inst, p).gap);
      max_tight = std::max(max_tight, std::abs(exact_expectation(ObjectiveKind::fvnce, post, p).gap));
    }
    // The logistic noise score -log(1 + r) is convex, so the bound does not
    // apply to it; tightness at the exact posterior still does.
    max_tight = std::max(max_tight, std::abs(exact_expectation(ObjectiveKind::nce, post).gap));

    const double m = mass_check(inst.model, inst.noise, inst.q0);
    full_mass = std::max(full_mass, std::abs(m - 1.0));
    noise_term = std::max(noise_term, m - 1.0);

    // Shrink the noise support one point at a time.
    Vector pn = inst.noise.mass();
    double prev = m;
    for (Index x = 0; x + 1 < pn.size(); ++x) {
      pn(x) = 0.0;
      pn /= pn.sum();
      const double shrunk =
          mass_check(inst.model, dist::TabularDistribution::over_indices(pn), inst.q0);
      if (shrunk > prev + 1e-15) ++monotone_fail;
      if (!(shrunk < 1.0)) ++deficient_fail;
      prev = shrunk;
    }

    // Deterministic tied encoder: J_AE >= J_VAE >= J00.
    std::vector<Index> code(static_cast<std::size_t>(inst.model.x_size()));
    for (Index x = 0; x < inst.model.x_size(); ++x) code[static_cast<std::size_t>(x)] = x % inst.model.z_size();
    const Matrix lc = inst.model.log_conditional();
    const Vector& lpz = inst.model.log_prior();
    const double gamma = lpz.maxCoeff();
    double j_ae = 0.0;
    double j_vae = 0.0;
    double restricted = 0.0;
    for (Index x = 0; x < inst.model.x_size(); ++x) {
      const double pd = std::exp(inst.data.log_mass()(x));
      const Index z = code[static_cast<std::size_t>(x)];
      j_ae += pd * lc(x, z);
      j_vae += pd * (lc(x, z) + lpz(z) - gamma);
      restricted += std::exp(inst.model.log_joint(x, z));
    }
    const double j00 = j_vae - restricted;
    chain = std::min({chain, j_ae - j_vae, j_vae - j00});
  }

  std::vector<CheckResult> out;
  out.push_back(make_check("double_elbo_bound", min_slack, -1e-12, min_slack >= -1e-12,
                           "min of snce - fvnce"));
  out.push_back(make_check("posterior_tightness", max_tight, 1e-10, max_tight <= 1e-10));
  out.push_back(make_check("restricted_mass_full_support", full_mass, 1e-12, full_mass <= 1e-12));
  out.push_back(make_check("restricted_mass_deficient_support",
                           static_cast<double>(deficient_fail), 0.0, deficient_fail == 0));
  out.push_back(make_check("restricted_mass_monotone", static_cast<double>(monotone_fail), 0.0,
                           monotone_fail == 0));
  out.push_back(make_check("noise_term_lower_bound", noise_term, 1e-12, noise_term <= 1e-12,
                           "max of mass - 1"));
  out.push_back(make_check("chain_ae_vae_j00", chain, 0.0, chain >= 0.0, "min consecutive gap"));
  return out;
}

std::vector<CheckResult> identity_checks(std::uint64_t seeds) {
  double vae_spread = 0.0;
  double vae_const = 0.0;
  double quad_spread = 0.0;
  double j01_post = 0.0;
  double j00_term = 0.0;
  double j10_first = 0.0;

  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const TabularInstance inst = random_instance(seed);
    Rng rng(seed, 0x7468657461ULL);
    std::vector<double> vae_diff;
    std::vector<double> quad;
    for (int k = 0; k < 5; ++k) {
      nn::TabularJointModel model = inst.model;
      Matrix theta(model.z_size(), model.x_size());
      for (Index i = 0; i < theta.size(); ++i) theta(i) = 2.0 * rng.normal();
      model.set_theta(theta);
      const TabularInstance t = rebuild(inst, model);

      const ExactReport r00 = exact_expectation(ObjectiveKind::j00, t);
      vae_diff.push_back(r00.fvnce_value - exact_vae(t));
      // Closed form of the offset: -E_d[log p_n] - 1.
      const double offset = -inst.data.mass().dot(inst.noise.log_mass()) - 1.0;
      vae_const = std::max(vae_const, std::abs(vae_diff.back() - offset));

      const ExactReport r10 = exact_expectation(ObjectiveKind::j10, t);
      quad.push_back(r10.fvnce_value + weighted_squared_distance(t));

      j00_term = std::max(j00_term, std::abs(r00.fvnce_noise + mass_check(t.model, t.noise, t.q0)));

      // Encoder-free first term: sum_x p_d(x) sum_z p_Z(z) p(x | z) / p_n(x).
      const Matrix lc = t.model.log_conditional();
      double free_form = 0.0;
      for (Index x = 0; x < lc.rows(); ++x) {
        for (Index z = 0; z < lc.cols(); ++z) {
          free_form += std::exp(t.data.log_mass()(x) + t.model.log_prior()(z) + lc(x, z) -
                                t.noise.log_mass()(x));
        }
      }
      j10_first = std::max(j10_first, std::abs(r10.fvnce_data - free_form) / std::max(1.0, free_form));

      const TabularInstance post = with_exact_posterior(t);
      const double j01 = exact_expectation(ObjectiveKind::j01, post).fvnce_value;
      j01_post = std::max(j01_post, std::abs(j01 - j01_marginal_form(post)));
    }
    vae_spread = std::max(vae_spread, spread(vae_diff));
    quad_spread = std::max(quad_spread, spread(quad) / std::max(1.0, std::abs(quad.front())));
  }

  std::vector<CheckResult> out;
  out.push_back(make_check("vae_equivalence_spread", vae_spread, 1e-10, vae_spread <= 1e-10));
  out.push_back(make_check("vae_equivalence_offset", vae_const, 1e-10, vae_const <= 1e-10,
                           "offset -E_d[log p_n] - 1"));
  out.push_back(make_check("quadratic_identity_spread", quad_spread, 1e-10, quad_spread <= 1e-10,
                           "J10 + weighted squared distance, relative to max(1, |value|)"));
  out.push_back(make_check("j00_noise_term_is_restricted_mass", j00_term, 1e-12, j00_term <= 1e-12));
  out.push_back(make_check("j10_first_term_encoder_free", j10_first, 1e-12, j10_first <= 1e-12));
  out.push_back(make_check("j01_posterior_marginal_form", j01_post, 1e-10, j01_post <= 1e-10));
  return out;
}

nlohmann::json to_json(const std::vector<CheckResult>& checks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks) {
    nlohmann::json j = {{"name", c.name},
                        {"passed", c.passed},
                        {"residual", c.residual},
                        {"tolerance", c.tolerance}};
    if (!c.detail.empty()) j["detail"] = c.detail;
    arr.push_back(std::move(j));
  }
  return arr;
}

nlohmann::json verify_report() {
  nlohmann::json rep;
  bool all = true;
  auto add = [&](const char* key, const std::vector<CheckResult>& checks) {
    for (const auto& c : checks) all = all && c.passed;
    rep[key] = to_json(checks);
  };
  add("scoring_rules", psr_checks());
  add("inequalities", inequality_checks());
  add("identities", identity_checks());
  rep["passed"] = all;
  return rep;
}

}  // namespace fvnce::oracle
