// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "fvnce/experiment.hpp"
#include "fvnce/losses.hpp"
#include "fvnce/optim.hpp"
#include "fvnce/oracle.hpp"
#include "fvnce/psr.hpp"

using namespace fvnce;
using diff::Index;
using diff::Matrix;
using diff::Vector;
using psr::ScoringPair;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::vector<ScoringPair> grid_pairs(bool normalized) {
  std::vector<ScoringPair> out;
  for (double a : oracle::grid_alphas()) {
    for (double b : oracle::grid_betas()) out.emplace_back(a, b, normalized);
  }
  return out;
}

std::string config_path(const std::string& name) {
  return (std::filesystem::path(FVNCE_SOURCE_DIR) / "configs" / name).string();
}

// 1. f0' = -r f1' pointwise, and the derivative functions integrate back to
// the value functions between neighbouring grid ratios.
Outcome compatibility() {
  using Quad = boost::math::quadrature::gauss<double, 20>;
  const auto rs = oracle::grid_ratios();
  double pointwise = 0.0;
  double integral = 0.0;
  for (bool normalized : {false, true}) {
    for (const auto& p : grid_pairs(normalized)) {
      for (std::size_t i = 0; i < rs.size(); ++i) {
        const double r = rs[i];
        pointwise = std::max(pointwise, std::abs(psr::grad_f0(p, r) + r * psr::grad_f1(p, r)));
        if (i + 1 == rs.size()) continue;
        const double a = r;
        const double b = rs[i + 1];
        const double q1 = Quad::integrate([&](double t) { return psr::grad_f1(p, t); }, a, b);
        const double q0 = Quad::integrate([&](double t) { return -t * psr::grad_f1(p, t); }, a, b);
        const double d1 = psr::eval_f1(p, b) - psr::eval_f1(p, a);
        const double d0 = psr::eval_f0(p, b) - psr::eval_f0(p, a);
        const double s1 = std::max({1.0, std::abs(psr::eval_f1(p, a)), std::abs(psr::eval_f1(p, b))});
        const double s0 = std::max({1.0, std::abs(psr::eval_f0(p, a)), std::abs(psr::eval_f0(p, b))});
        integral = std::max({integral, std::abs(q1 - d1) / s1, std::abs(q0 - d0) / s0});
      }
    }
  }
  return {pointwise <= 1e-10 && integral <= 1e-10,
          fmt("max |f0' + r f1'| %.3g, max scaled |int f' - delta f| %.3g (tol 1e-10)", pointwise, integral)};
}

// 2. G'' > 0 at 99 points; the log-ratio family's closed form against
// Richardson-extrapolated second differences of G.
Outcome convexity() {
  double g2_min = kInf;
  double closed = 0.0;
  double fd = 0.0;
  for (bool normalized : {false, true}) {
    for (const auto& p : grid_pairs(normalized)) {
      const double alpha = p.atoms()[0].alpha;
      const double beta = p.atoms()[0].beta;
      const double scale = normalized ? 1.0 + beta : 1.0;
      for (int i = 1; i <= 99; ++i) {
        const double mu = 0.01 * i;
        const double g2 = psr::eval_G_second(p, mu);
        g2_min = std::min(g2_min, g2);
        if (alpha != 0.0) continue;
        const double lemma = scale / ((1 - mu) * (1 - mu) * (mu + beta * (1 - mu)));
        closed = std::max(closed, std::abs(g2 - lemma) / lemma);
        const double h = 0.02 * std::min(mu, 1 - mu);
        auto d2 = [&](double k) {
          return (psr::eval_G(p, mu + k) - 2 * psr::eval_G(p, mu) + psr::eval_G(p, mu - k)) / (k * k);
        };
        const double rich = (4 * d2(h / 2) - d2(h)) / 3;
        fd = std::max(fd, std::abs(rich - lemma) / lemma);
      }
    }
  }
  return {g2_min > 0.0 && closed <= 1e-6 && fd <= 1e-6,
          fmt("min G'' %.3g; closed form vs implementation %.2g, vs differences %.2g (tol 1e-6)",
              g2_min, closed, fd)};
}

// 3. Exact variational objective below the marginal one; tight at the posterior.
Outcome double_elbo() {
  double slack = kInf;
  double tight = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = oracle::random_instance(seed);
    const auto post = oracle::with_exact_posterior(inst);
    for (bool normalized : {false, true}) {
      for (const auto& p : grid_pairs(normalized)) {
        slack = std::min(slack, oracle::exact_expectation(oracle::ObjectiveKind::fvnce, inst, p).gap);
        tight = std::max(tight,
                         std::abs(oracle::exact_expectation(oracle::ObjectiveKind::fvnce, post, p).gap));
      }
    }
  }
  return {slack >= -1e-12 && tight <= 1e-10,
          fmt("min slack %.3g (tol -1e-12), max posterior gap %.3g (tol 1e-10)", slack, tight)};
}

template <class F>
double theta_spread(oracle::TabularInstance inst, Rng& rng, F value) {
  double lo = kInf;
  double hi = -kInf;
  for (int k = 0; k < 5; ++k) {
    Matrix th(inst.model.z_size(), inst.model.x_size());
    for (Index i = 0; i < th.size(); ++i) th.data()[i] = 2.0 * rng.normal();
    inst.model.set_theta(th);
    const double v = value(inst);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return hi - lo;
}

// 4. J00 - J_VAE does not depend on theta; restricted mass 1 or below.
Outcome vae_equivalence() {
  double spread = 0.0;
  double mass_err = 0.0;
  double deficient = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = oracle::random_instance(seed);
    Rng rng(seed + 1000);
    spread = std::max(spread, theta_spread(inst, rng, [](const oracle::TabularInstance& t) {
      return oracle::exact_expectation(oracle::ObjectiveKind::j00, t).fvnce_value - oracle::exact_vae(t);
    }));
    mass_err = std::max(mass_err, std::abs(oracle::mass_check(inst.model, inst.noise, inst.q0) - 1.0));
    // Remove the first half of the noise support.
    Vector m = inst.noise.mass();
    m.head(m.size() / 2).setZero();
    const double dm =
        oracle::mass_check(inst.model, dist::TabularDistribution::over_indices(m / m.sum()), inst.q0);
    deficient = std::max(deficient, dm);
  }
  return {spread < 1e-10 && mass_err <= 1e-12 && deficient < 1.0,
          fmt("theta spread %.3g (tol 1e-10), |mass - 1| %.3g, max deficient mass %.4f (< 1)", spread,
              mass_err, deficient)};
}

// 5. J10 plus the weighted squared distance does not depend on theta.
Outcome quadratic_identity() {
  double spread = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed + 2000);
    spread = std::max(spread, theta_spread(oracle::random_instance(seed), rng, [](const oracle::TabularInstance& t) {
      return oracle::exact_expectation(oracle::ObjectiveKind::j10, t).fvnce_value +
             oracle::weighted_squared_distance(t);
    }));
  }
  return {spread < 1e-10, fmt("theta spread %.3g (tol 1e-10)", spread)};
}

// 6. J_AE >= J_VAE >= J00 on every batch of a 20-step training run.
Outcome chain() {
  cli::RunConfig cfg = cli::load_config(config_path("benchmark.json"));
  cfg.loss = "vae";
  cfg.out_dir = "";
  const cli::Experiment ex = cli::prepare(cfg);
  cli::TrainResult res = cli::initialize(cfg, ex.dataset.dim());
  const auto use = losses::DensityUse{true, true};
  losses::LossConfig train_loss = cli::make_loss(cfg);
  diff::AdamState state;
  Rng rng = Rng(cfg.seed).split(0xc4a1);
  double min_ae_vae = kInf;
  double min_vae_j00 = kInf;
  const Index bs = cfg.batch_size;
  for (int step = 0; step < 20; ++step) {
    Rng br = rng.split(static_cast<std::uint64_t>(step));
    Matrix x(bs, ex.dataset.dim());
    for (Index i = 0; i < bs; ++i) x.row(i) = ex.dataset.train.row(static_cast<Index>(br.index(ex.dataset.train.rows())));
    Rng nr = br.split(1);
    const Matrix y = ex.noise->sample(nr, bs);
    Rng er = br.split(2);
    const losses::Batch batch = losses::make_batch(x, y, *ex.noise, cfg.latent_dim, 1, er, use);
    auto eval = [&](losses::LossKind k) {
      losses::LossConfig c;
      c.kind = k;
      diff::Tape t(&res.params);
      return t.scalar_value(losses::objective(t, res.net, c, batch));
    };
    const double ae = eval(losses::LossKind::ae);
    const double vae = eval(losses::LossKind::vae_det);
    const double j00 = eval(losses::LossKind::rvae);
    min_ae_vae = std::min(min_ae_vae, ae - vae);
    min_vae_j00 = std::min(min_vae_j00, vae - j00);
    diff::Tape t(&res.params);
    const Vector g = t.backward(losses::objective(t, res.net, train_loss, batch));
    auto up = diff::adam_step(res.params.values(), -g, state, {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    res.params.set_values(up.params);
    state = std::move(up.state);
  }
  return {min_ae_vae >= 0.0 && min_vae_j00 >= 0.0,
          fmt("min J_AE - J_VAE %.4g, min J_VAE - J00 %.4g over 20 batches (both >= 0)", min_ae_vae,
              min_vae_j00)};
}

// 7. Analytic gradients of every loss against central differences.
Outcome gradients() {
  std::vector<losses::LossConfig> configs;
  auto add = [&](losses::LossKind k, ScoringPair p = ScoringPair(0, 0, true), bool drop = true) {
    losses::LossConfig c;
    c.kind = k;
    c.pair = p;
    c.drop_constant_term = drop;
    c.clip_threshold = psr::kNoClip;
    configs.push_back(c);
  };
  for (double a : {0.0, 1.0 / 256, 1.0 / 64, 1.0 / 16, 1.0}) add(losses::LossKind::fvnce, ScoringPair(a, 0, true));
  add(losses::LossKind::fvnce, ScoringPair(0, 1, true));
  add(losses::LossKind::fvnce, psr::stabilized_pair(1.0 / 16));
  add(losses::LossKind::fvnce, ScoringPair(0, 0, false), false);
  add(losses::LossKind::vae);
  add(losses::LossKind::ae);
  add(losses::LossKind::vae_det);
  add(losses::LossKind::rvae);
  add(losses::LossKind::j01);
  add(losses::LossKind::j01, ScoringPair(0, 0, true), false);
  add(losses::LossKind::j10, ScoringPair(0, 0, true), false);
  {
    losses::LossConfig mix;
    mix.kind = losses::LossKind::mixed;
    mix.clip_threshold = psr::kNoClip;
    mix.mix = {{configs[3], 0.9}, {configs[0], 0.1}};
    configs.push_back(mix);
  }

  double worst = 0.0;
  std::string worst_name;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    nn::Architecture arch;
    arch.data_dim = 6;
    arch.latent_dim = 2;
    arch.hidden = {5};
    arch.activation = nn::Activation::tanh;
    arch.sigma_dec = 0.5;
    diff::ParamVector params;
    const nn::LatentNet net = nn::build_latent_net(arch, params, rng);
    Matrix centers(5, 6);
    for (Index i = 0; i < centers.size(); ++i) centers.data()[i] = 0.5 * rng.normal();
    const dist::GaussianKde noise(centers, 0.7);
    Rng dr = rng.split(7);
    const Matrix x = noise.sample(dr, 4);
    const Matrix y = noise.sample(dr, 4);
    const losses::Batch batch = losses::make_batch(x, y, noise, 2, 2, dr);
    for (const auto& c : configs) {
      auto value = [&] {
        diff::Tape t(&params);
        return t.scalar_value(losses::objective(t, net, c, batch));
      };
      diff::Tape t(&params);
      const Vector g = t.backward(losses::objective(t, net, c, batch));
      for (Index i = 0; i < params.size(); ++i) {
        const double keep = params.values()(i);
        params.values()(i) = keep + 1e-5;
        const double up = value();
        params.values()(i) = keep - 1e-5;
        const double dn = value();
        params.values()(i) = keep;
        const double fd = (up - dn) / 2e-5;
        const double err = std::abs(fd - g(i)) / std::max({1.0, std::abs(fd), std::abs(g(i))});
        if (err > worst) {
          worst = err;
          worst_name = losses::to_string(c.kind) + " " + c.pair.describe();
        }
      }
    }
  }
  return {worst < 1e-4, fmt("max relative error %.3g (tol 1e-4), ", worst) + std::to_string(configs.size()) +
                            " losses x 20 instances, worst " + worst_name};
}

// 8. Sampled fvNCE within 3 standard errors of the exact value.
Outcome mc_consistency() {
  double worst = 0.0;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = oracle::random_instance(seed);
    for (const ScoringPair& p : {ScoringPair(0, 0), ScoringPair(0, 1), ScoringPair(1.0 / 16, 0), ScoringPair(1, 0)}) {
      Rng rng = Rng(seed).split(0x3c);
      const auto est = losses::fvnce_estimate(inst.model, inst.data, inst.noise, inst.q1, inst.q0, p, rng, 10000);
      const double exact = oracle::exact_expectation(oracle::ObjectiveKind::fvnce, inst, p).fvnce_value;
      worst = std::max(worst, std::abs(est.value - exact) / est.std_error);
      ++checked;
    }
  }
  return {worst <= 3.0, fmt("max |estimate - exact| / SE %.3g over %.0f cases (tol 3), n = 1e4", worst, checked)};
}

double summary_difference(const std::vector<cli::SweepSummary>& t, const std::string& v) {
  for (const auto& s : t) {
    if (s.variant == v) return s.difference;
  }
  throw std::runtime_error("missing variant " + v);
}

// 9. Ordering of the Difference column on the synthetic benchmark.
Outcome table_direction() {
  cli::RunConfig cfg = cli::load_config(config_path("benchmark.json"));
  cfg.variants = {"ae", "vae", "alpha:0.015625"};
  cfg.sweep_seeds = {0, 1, 2};
  cfg.out_dir = "";
  std::vector<cli::SweepSummary> table;
  (void)cli::run_sweep(cfg, &table);
  const double ae = summary_difference(table, "ae");
  const double vae = summary_difference(table, "vae");
  const double a = summary_difference(table, "alpha:0.015625");
  return {vae > ae && a >= vae,
          fmt("median Difference AE %.2f, VAE %.2f, alpha=1/64 %.2f (need VAE > AE, alpha >= VAE)", ae, vae, a)};
}

// 10. Noise-penalized training spoils the designated cluster only.
Outcome noise_cluster() {
  const char* override_path = std::getenv("FVNCE_NOISE_DEMO_CONFIG");
  const cli::RunConfig base = cli::load_config(override_path ? override_path : config_path("noise_demo.json"));
  if (base.variants.size() != 2) throw std::invalid_argument("noise demo needs [baseline, penalized] variants");
  const int label = base.noise_label;
  const int k = static_cast<int>(base.dataset.clusters);
  std::vector<double> noise_ratio;
  std::vector<double> rest_ratio;
  for (std::uint64_t seed : base.sweep_seeds) {
    double noise_mse[2] = {0, 0};
    double rest_mse[2] = {0, 0};
    int slot = 0;
    for (const std::string& v : base.variants) {
      cli::RunConfig cfg = cli::apply_variant(base, v);
      cfg.seed = seed;
      cfg.out_dir = "";
      const cli::Experiment ex = cli::prepare(cfg);
      const cli::TrainResult r = cli::train(ex);
      const Vector mse = cli::reconstruction_mse(r.net, r.params, ex.eval_data);
      double n_in = 0;
      double n_out = 0;
      for (Index i = 0; i < mse.size(); ++i) {
        const int lab = ex.eval_labels[static_cast<std::size_t>(i)];
        if (lab == label) {
          noise_mse[slot] += mse(i);
          n_in += 1;
        } else if (lab >= 0 && lab < k) {
          rest_mse[slot] += mse(i);
          n_out += 1;
        }
      }
      noise_mse[slot] /= n_in;
      rest_mse[slot] /= n_out;
      ++slot;
    }
    noise_ratio.push_back(noise_mse[1] / noise_mse[0]);
    rest_ratio.push_back(rest_mse[1] / rest_mse[0]);
    if (std::getenv("FVNCE_ACCEPTANCE_VERBOSE")) {
      std::printf("  seed %llu: noise cluster MSE %.5f -> %.5f; rest %.5f -> %.5f\n",
                  static_cast<unsigned long long>(seed), noise_mse[0], noise_mse[1], rest_mse[0], rest_mse[1]);
    }
  }
  const double nr = cli::median(noise_ratio);
  const double rr = cli::median(rest_ratio);
  return {nr >= 2.0 && rr <= 1.5,
          "median MSE ratio " + base.variants[1] + " / " + base.variants[0] +
              fmt(": noise cluster %.3f (>= 2), other clusters %.3f (<= 1.5)", nr, rr)};
}

// 11. Normalized atoms approach the log-ratio family as alpha -> 0.
Outcome alpha_limit() {
  double f1 = 0.0;
  double f0_abs = 0.0;
  double f0_rel = 0.0;
  for (double b : oracle::grid_betas()) {
    const ScoringPair small(1e-6, b, true);
    const ScoringPair zero(0.0, b, true);
    for (double r : oracle::grid_ratios()) {
      f1 = std::max(f1, std::abs(psr::eval_f1(small, r) - psr::eval_f1(zero, r)));
      const double d0 = std::abs(psr::eval_f0(small, r) - psr::eval_f0(zero, r));
      f0_abs = std::max(f0_abs, d0);
      f0_rel = std::max(f0_rel, d0 / std::max(1.0, std::abs(psr::eval_f0(zero, r))));
    }
  }
  return {f1 <= 1e-4 && f0_rel <= 1e-4,
          fmt("sup |f1 diff| %.3g (tol 1e-4); f0: relative %.3g (tol 1e-4), absolute %.3g", f1, f0_rel, f0_abs)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// 12. Bitwise-identical metrics for equal seeds at 1 and N threads.
Outcome determinism() {
  const auto root = std::filesystem::temp_directory_path() / "fvnce_acceptance_det";
  std::filesystem::remove_all(root);
  cli::RunConfig cfg = cli::apply_variant(cli::load_config(config_path("benchmark.json")), "alpha:0.015625");
  cfg.epochs = 3;
  cfg.write_checkpoint = false;
  std::string out[3];
  const int threads[3] = {1, 1, 4};
  for (int i = 0; i < 3; ++i) {
    cfg.threads = threads[i];
    cfg.out_dir = (root / std::to_string(i)).string();
    (void)cli::run_train(cfg);
    out[i] = slurp(root / std::to_string(i) / "metrics.csv");
  }
  std::filesystem::remove_all(root);
  const bool same1 = !out[0].empty() && out[0] == out[1];
  const bool sameN = out[0] == out[2];
  return {same1 && sameN, std::string("metrics.csv identical: 1 vs 1 thread ") + (same1 ? "yes" : "no") +
                              ", 1 vs 4 threads " + (sameN ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"compatibility identity", compatibility},
      {"generator convexity", convexity},
      {"double-ELBO bound", double_elbo},
      {"VAE equivalence", vae_equivalence},
      {"quadratic identity", quadratic_identity},
      {"chain of inequalities", chain},
      {"gradient correctness", gradients},
      {"Monte-Carlo consistency", mc_consistency},
      {"Difference ordering", table_direction},
      {"noise-cluster reconstruction", noise_cluster},
      {"alpha -> 0 continuity", alpha_limit},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.passed) ++failed;
    std::printf("%s %2d %s: %s [%.1fs]\n", o.passed ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
