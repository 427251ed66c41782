#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fvnce/psr.hpp"

using namespace fvnce::psr;

namespace {

// Composite Simpson rule, used as an independent check of closed forms.
template <class F>
double simpson(F f, double a, double b, int n = 2000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("f1 values") {
  CHECK(eval_f1(ScoringPair(0, 0), 1.0) == doctest::Approx(0.0));
  CHECK(eval_f1(ScoringPair(1, 0), 2.0) == doctest::Approx(2.0));
  // f1(3) = f1(1) + int_1^3 dr / (r + 1) with f1(1) = log 2.
  const double quad = std::log(2.0) + simpson([](double r) { return 1.0 / (r + 1.0); }, 1.0, 3.0);
  CHECK(quad == doctest::Approx(1.3862943611198906).epsilon(1e-12));
  CHECK(eval_f1(ScoringPair(0, 1), 3.0) == doctest::Approx(1.3862943611198906).epsilon(1e-14));
}

TEST_CASE("f0 values") {
  CHECK(eval_f0(ScoringPair(0, 0), 2.0) == doctest::Approx(-2.0));
  CHECK(eval_f0(ScoringPair(1, 0), 2.0) == doctest::Approx(-2.0));
  // f0(1) = f0(0+) + int_0^1 -r f1'(r) dr with f0(0+) = beta log beta = 0.
  const double quad = simpson([](double r) { return -r / (r + 1.0); }, 0.0, 1.0);
  CHECK(quad == doctest::Approx(-0.30685281944005466).epsilon(1e-12));
  CHECK(eval_f0(ScoringPair(0, 1), 1.0) == doctest::Approx(-0.30685281944005466).epsilon(1e-14));
}

TEST_CASE("alpha > 0 f0 integrates the compatibility equation") {
  for (double a : {1.0 / 16, 0.5, 1.0}) {
    for (double b : {0.0, 0.5, 2.0}) {
      const ScoringPair p(a, b);
      const double quad = simpson([&](double r) { return -r * std::pow(r + b, a - 1.0); }, 0.5, 4.0);
      CHECK(eval_f0(p, 4.0) - eval_f0(p, 0.5) == doctest::Approx(quad).epsilon(1e-10));
    }
  }
}

TEST_CASE("derivatives") {
  CHECK(grad_f1(ScoringPair(1, 0), 2.0) == doctest::Approx(1.0));
  CHECK(grad_f0(ScoringPair(1, 0), 2.0) == doctest::Approx(-2.0));
  CHECK(grad_f1(ScoringPair(0, 0), 4.0) == doctest::Approx(0.25));
  for (double a : {0.0, 1.0 / 64, 0.5, 1.0}) {
    for (double b : {0.0, 1.0, 2.0}) {
      for (bool n : {false, true}) {
        const ScoringPair p(a, b, n);
        CHECK(std::abs(grad_f0(p, 0.7) + 0.7 * grad_f1(p, 0.7)) <= 1e-14);
      }
    }
  }
}

TEST_CASE("domain errors") {
  const ScoringPair p(0, 0);
  CHECK_THROWS_AS((void)eval_f1(p, 0.0), std::domain_error);
  CHECK_THROWS_AS((void)eval_f0(p, -1.0), std::domain_error);
  CHECK_THROWS_AS((void)grad_f1(p, 0.0), std::domain_error);
  CHECK_THROWS_AS((void)eval_G(p, 0.0), std::domain_error);
  CHECK_THROWS_AS((void)eval_G(p, 1.0), std::domain_error);
  CHECK_THROWS_AS((void)eval_G_second(p, 1.5), std::domain_error);
  CHECK_THROWS_AS((void)score(p, Outcome::data, 0.0), std::domain_error);
  CHECK_THROWS_AS((void)bregman(p, 0.5, 1.0), std::domain_error);
  CHECK_THROWS_AS(ScoringPair(1.5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ScoringPair(-0.1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ScoringPair(0.5, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(ScoringPair(std::vector<Atom>{{0.0, 0.0, 0.0}}), std::invalid_argument);
}

TEST_CASE("tiny ratios are floored and counted for (0,0) atoms") {
  ClipStats stats;
  const double v = eval_f1(ScoringPair(0, 0), 1e-40, &stats);
  CHECK(v == doctest::Approx(std::log(kRatioFloor)));
  CHECK(stats.floored == 1);
}

TEST_CASE("generator values") {
  CHECK(eval_G(ScoringPair(0, 0), 0.5) == doctest::Approx(-0.5));
  CHECK(eval_G(ScoringPair(1, 0), 0.5) == doctest::Approx(0.25));
  CHECK(eval_G(ScoringPair(0, 1), 0.5) ==
        doctest::Approx(0.5 * std::log(2.0) + 0.5 * (std::log(2.0) - 1.0)));
  // Closed form mu (log(mu / (1 - mu)) - 1).
  for (double mu : {0.1, 0.3, 0.8}) {
    CHECK(eval_G(ScoringPair(0, 0), mu) == doctest::Approx(mu * (std::log(mu / (1 - mu)) - 1)));
  }
}

TEST_CASE("generator second derivative") {
  const ScoringPair p(0, 0);
  const double h = 1e-4;
  const double fd = (eval_G(p, 0.5 + h) - 2 * eval_G(p, 0.5) + eval_G(p, 0.5 - h)) / (h * h);
  CHECK(fd == doctest::Approx(8.0).epsilon(1e-3));
  CHECK(eval_G_second(p, 0.5) == doctest::Approx(8.0));
  CHECK(eval_G_second(ScoringPair(0, 1), 0.5) == doctest::Approx(4.0));
  for (double a : {0.0, 1.0 / 256, 0.25, 1.0}) {
    for (double b : {0.0, 0.5, 2.0}) {
      for (int i = 1; i <= 99; ++i) CHECK(eval_G_second(ScoringPair(a, b), 0.01 * i) > 0.0);
    }
  }
}

TEST_CASE("scores and the generator relations") {
  CHECK(score(ScoringPair(0, 0), Outcome::data, 0.5) == doctest::Approx(0.0));
  CHECK(score(ScoringPair(0, 0), Outcome::noise, 0.5) == doctest::Approx(-1.0));
  CHECK(score(ScoringPair(1, 0), Outcome::data, 2.0 / 3.0) == doctest::Approx(2.0));
  // S1(mu) = G + (1 - mu) G' and S0(1 - mu) = G - mu G'.
  for (double mu : {0.2, 0.5, 0.9}) {
    const ScoringPair p(0.25, 1.0, true);
    const double h = 1e-6;
    const double gp = (eval_G(p, mu + h) - eval_G(p, mu - h)) / (2 * h);
    CHECK(score(p, Outcome::data, mu) == doctest::Approx(eval_G(p, mu) + (1 - mu) * gp).epsilon(1e-8));
    CHECK(score(p, Outcome::noise, mu) == doctest::Approx(eval_G(p, mu) - mu * gp).epsilon(1e-8));
    CHECK(eval_G_prime(p, mu) == doctest::Approx(gp).epsilon(1e-8));
  }
}

TEST_CASE("bregman divergence") {
  for (double a : {0.0, 0.5}) CHECK(std::abs(bregman(ScoringPair(a, 1), 0.3, 0.3)) <= 1e-12);
  CHECK(bregman(ScoringPair(0, 0), 0.7, 0.3) > 0.0);
  // Expected-score gap under Bernoulli(0.2) between honest and dishonest reports.
  const ScoringPair p(0, 1);
  auto expected = [&](double report) {
    return 0.2 * score(p, Outcome::data, report) + 0.8 * score(p, Outcome::noise, report);
  };
  CHECK(bregman(p, 0.2, 0.8) == doctest::Approx(expected(0.2) - expected(0.8)).epsilon(1e-12));
}

TEST_CASE("logit losses") {
  CHECK(logit_loss(ScoringPair(0, 0), Outcome::data, 1.5) == doctest::Approx(-1.5));
  CHECK(logit_loss(ScoringPair(0, 0), Outcome::noise, 0.0) == doctest::Approx(1.0));
  CHECK(logit_loss(ScoringPair(0, 1), Outcome::data, 0.0) == doctest::Approx(-std::log(2.0)));
  // Agreement with -f(e^delta) wherever no clipping happens.
  for (double d : {-3.0, 0.0, 2.0}) {
    const ScoringPair p(0.5, 2.0, true);
    CHECK(logit_loss(p, Outcome::data, d) == doctest::Approx(-eval_f1(p, std::exp(d))));
    CHECK(logit_loss(p, Outcome::noise, d) == doctest::Approx(-eval_f0(p, std::exp(d))));
  }
}

TEST_CASE("logit loss gradient matches differences") {
  for (double d : {-4.0, -0.5, 1.0, 3.0}) {
    for (Outcome o : {Outcome::data, Outcome::noise}) {
      const ScoringPair p(1.0 / 16, 0.5, true);
      const double h = 1e-6;
      const double fd = (logit_loss(p, o, d + h) - logit_loss(p, o, d - h)) / (2 * h);
      CHECK(logit_loss_eval(p, o, d).grad == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("clipped exponential") {
  CHECK(exp_clipped(12.0, 10.0) == doctest::Approx(std::exp(10.0) * 3.0));
  CHECK(exp_clipped_grad(12.0, 10.0) == doctest::Approx(std::exp(10.0)));
  CHECK(exp_clipped(10.0, 10.0) == std::exp(10.0));
  CHECK(exp_clipped_grad(10.0, 10.0) == std::exp(10.0));
  CHECK(exp_clipped(std::nextafter(10.0, 11.0), 10.0) == doctest::Approx(std::exp(10.0)));
  ClipStats stats;
  (void)logit_loss(ScoringPair(0, 0), Outcome::noise, 15.0, 10.0, &stats);
  CHECK(stats.clipped == 1);
  CHECK(logit_loss(ScoringPair(0, 0), Outcome::noise, 15.0, kNoClip) == doctest::Approx(std::exp(15.0)));
}

TEST_CASE("normalized pairs") {
  for (double a : {0.0, 1.0 / 64, 0.5, 1.0}) {
    for (double b : {0.0, 0.5, 2.0}) {
      const ScoringPair p(a, b, true);
      CHECK(std::abs(eval_f1(p, 1.0)) <= 1e-12);
      CHECK(std::abs(eval_f0(p, 1.0)) <= 1e-12);
      CHECK(grad_f1(p, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("ratio point round trips") {
  for (double r : {1e-3, 0.5, 1.0, 7.0, 1e3}) {
    const RatioPoint p = RatioPoint::from_ratio(r);
    const RatioPoint q = RatioPoint::from_posterior(p.mu);
    const RatioPoint s = RatioPoint::from_logit(p.delta);
    CHECK(q.r == doctest::Approx(r).epsilon(1e-12));
    CHECK(s.mu == doctest::Approx(p.mu).epsilon(1e-12));
    CHECK(std::exp(p.delta) == doctest::Approx(r).epsilon(1e-12));
  }
}

TEST_CASE("cone combinations") {
  const ScoringPair base(0, 0);
  const ScoringPair same = combine(std::vector<ScoringPair>{base}, std::vector<double>{1.0});
  CHECK(eval_f1(same, 3.0) == doctest::Approx(eval_f1(base, 3.0)));
  CHECK(eval_f0(same, 3.0) == doctest::Approx(eval_f0(base, 3.0)));

  const ScoringPair mix = combine(std::vector<ScoringPair>{ScoringPair(1.0 / 16, 0, true), ScoringPair(0, 0, true)},
                                  std::vector<double>{0.9, 0.1});
  CHECK(mix == stabilized_pair(1.0 / 16));
  for (double r : {0.1, 1.0, 5.0}) {
    CHECK(eval_f1(mix, r) == doctest::Approx(0.9 * eval_f1(ScoringPair(1.0 / 16, 0, true), r) +
                                             0.1 * eval_f1(ScoringPair(0, 0, true), r)));
  }
  CHECK(grad_f0(mix, 1.0) == doctest::Approx(-grad_f1(mix, 1.0)));

  CHECK_THROWS_AS((void)combine(std::vector<ScoringPair>{base}, std::vector<double>{1.0, 2.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)combine(std::vector<ScoringPair>{base}, std::vector<double>{0.0}),
                  std::invalid_argument);
}

TEST_CASE("dropped linear part") {
  const ScoringPair raw(0, 0);
  CHECK(dropped_linear_mean(raw) == doctest::Approx(-1.0));
  CHECK(dropped_linear_mean(ScoringPair(0, 0, true)) == doctest::Approx(0.0));
  // Without the -r part the raw (0,0) noise loss is zero.
  CHECK(noise_loss_without_linear(raw, 2.0).value == doctest::Approx(0.0));
  // (0,1): what remains is -beta log(r + beta).
  CHECK(noise_loss_without_linear(ScoringPair(0, 1), 0.0).value == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("log grid") {
  const auto g = log_grid(1e-2, 1e2, 33);
  REQUIRE(g.size() == 33);
  CHECK(g.front() == doctest::Approx(1e-2));
  CHECK(g[16] == doctest::Approx(1.0));
  CHECK(g.back() == doctest::Approx(1e2));
}
