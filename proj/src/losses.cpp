#include "fvnce/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fvnce::losses {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double softplus(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }

void check_batch(const Batch& b, const nn::LatentNet& net) {
  const Index d = net.arch.data_dim;
  const Index l = net.arch.latent_dim;
  if (b.data_x.cols() != d || b.noise_x.cols() != d) {
    throw std::invalid_argument("batch width does not match the model data dimension");
  }
  if (b.data_eps.cols() != l || b.noise_eps.cols() != l || b.prior_eps.cols() != l) {
    throw std::invalid_argument("batch noise width does not match the latent dimension");
  }
  if (b.data_x.rows() == 0 || b.noise_x.rows() == 0) throw std::invalid_argument("empty batch");
}

// Per-row score node f1(delta) or f0(delta) through the logit-domain loss.
Var score_rows(Tape& tape, Var delta, const psr::ScoringPair& pair, psr::Outcome outcome,
               bool drop_linear, double threshold, psr::ClipStats& stats) {
  return tape.unary(delta, [&](double d) -> std::pair<double, double> {
    const psr::LogitLoss l = drop_linear && outcome == psr::Outcome::noise
                                 ? psr::noise_loss_without_linear(pair, d, threshold, &stats)
                                 : psr::logit_loss_eval(pair, outcome, d, threshold, &stats);
    return {-l.value, -l.grad};
  });
}

// delta = log p(x, z) - log p_n(x) - log q(z | x) at a reparametrized z ~ q.
Var sampled_delta(Tape& tape, const nn::LatentNet& net, const Matrix& x, const Vector& log_pn,
                  const Matrix& eps) {
  const Var xv = tape.constant(x);
  const auto s = net.encoder.sample(tape, xv, eps);
  const Var lj = net.model.log_joint(tape, s.z, xv);
  return tape.sub(tape.sub(lj, tape.constant(log_pn)), s.log_q);
}

Var clipped_exp_rows(Tape& tape, Var u, double threshold, psr::ClipStats& stats) {
  return tape.unary(u, [&](double v) -> std::pair<double, double> {
    ++stats.evaluations;
    if (v > threshold) ++stats.clipped;
    return {psr::exp_clipped(v, threshold), psr::exp_clipped_grad(v, threshold)};
  });
}

void record(Diagnostics* diag, const Tape& tape, Var delta, psr::Outcome outcome) {
  if (!diag) return;
  const Matrix& v = tape.value(delta);
  if (outcome == psr::Outcome::data) {
    diag->delta_data_sum += v.sum();
    diag->data_count += static_cast<std::size_t>(v.size());
  } else {
    diag->delta_noise_sum += v.sum();
    diag->noise_count += static_cast<std::size_t>(v.size());
  }
}

Matrix repeat_rows(const Matrix& m, int times) {
  if (times == 1) return m;
  Matrix out(m.rows() * times, m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    for (int k = 0; k < times; ++k) out.row(i * times + k) = m.row(i);
  }
  return out;
}

Matrix normals(Rng& rng, Index rows, Index cols) {
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = rng.normal();
  }
  return out;
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  const auto n = static_cast<double>(v.size());
  for (double x : v) m.mean += x;
  m.mean /= n;
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var = v.size() > 1 ? m.var / (n - 1.0) : 0.0;
  return m;
}

Estimate two_stream(const std::vector<double>& d, const std::vector<double>& n) {
  const Moments md = moments(d);
  const Moments mn = moments(n);
  return {md.mean + mn.mean,
          std::sqrt(md.var / static_cast<double>(d.size()) + mn.var / static_cast<double>(n.size())),
          d.size() + n.size()};
}

void check_tabular(const nn::TabularJointModel& model, const dist::TabularDistribution& data,
                   const dist::TabularDistribution& noise) {
  if (data.size() != model.x_size() || noise.size() != model.x_size()) {
    throw std::invalid_argument("tabular supports differ in size");
  }
}

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
  static const std::pair<const char*, LossKind> table[] = {
      {"nce", LossKind::nce},   {"snce", LossKind::snce},       {"fvnce", LossKind::fvnce},
      {"vae", LossKind::vae},   {"ae", LossKind::ae},           {"vae_det", LossKind::vae_det},
      {"rvae", LossKind::rvae}, {"j01", LossKind::j01},         {"j10", LossKind::j10},
      {"mixed", LossKind::mixed}};
  for (const auto& [key, kind] : table) {
    if (name == key) return kind;
  }
  throw std::invalid_argument("unknown loss kind: " + name);
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::nce: return "nce";
    case LossKind::snce: return "snce";
    case LossKind::fvnce: return "fvnce";
    case LossKind::vae: return "vae";
    case LossKind::ae: return "ae";
    case LossKind::vae_det: return "vae_det";
    case LossKind::rvae: return "rvae";
    case LossKind::j01: return "j01";
    case LossKind::j10: return "j10";
    case LossKind::mixed: return "mixed";
  }
  return "unknown";
}

void LossConfig::validate() const {
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  if (!(clip_threshold > 0.0)) throw std::invalid_argument("clip threshold must be positive");
  if (kind == LossKind::mixed) {
    if (mix.empty()) throw std::invalid_argument("mixed loss needs at least one component");
    for (const auto& c : mix) {
      if (!(c.weight > 0.0)) throw std::invalid_argument("mixture weights must be positive");
      c.config.validate();
    }
  }
  if (!tie_encoders && kind != LossKind::rvae) {
    throw std::invalid_argument("untied encoders are only supported by rvae on network models");
  }
}

double Diagnostics::mean_delta_data() const {
  return data_count ? delta_data_sum / static_cast<double>(data_count) : 0.0;
}

double Diagnostics::mean_delta_noise() const {
  return noise_count ? delta_noise_sum / static_cast<double>(noise_count) : 0.0;
}

Diagnostics& Diagnostics::operator+=(const Diagnostics& other) {
  delta_data_sum += other.delta_data_sum;
  delta_noise_sum += other.delta_noise_sum;
  data_count += other.data_count;
  noise_count += other.noise_count;
  clip += other.clip;
  return *this;
}

DensityUse density_use(const LossConfig& config) {
  switch (config.kind) {
    case LossKind::vae:
    case LossKind::ae:
    case LossKind::vae_det: return {false, false};
    case LossKind::rvae: return {false, true};
    case LossKind::fvnce:
      return {true, !(config.drop_constant_term && config.pair.is_log_ratio())};
    case LossKind::mixed: {
      DensityUse u{false, false};
      for (const auto& m : config.mix) {
        const DensityUse c = density_use(m.config);
        u.data = u.data || c.data;
        u.noise = u.noise || c.noise;
      }
      return u;
    }
    default: return {true, true};
  }
}

Batch make_batch(Matrix data_x, Matrix noise_x, const dist::Density& noise, Index latent_dim,
                 int mc_samples, Rng& rng, DensityUse use, const Vector* data_log_pn) {
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  if (data_x.rows() != noise_x.rows()) {
    throw std::invalid_argument("data and noise batches must have equal size");
  }
  if (data_log_pn && data_log_pn->size() != data_x.rows()) {
    throw std::invalid_argument("precomputed log p_n has the wrong length");
  }
  // Unused densities stay NaN so that a wrong DensityUse cannot go unnoticed.
  auto log_pn = [&](const Matrix& x, bool needed, const Vector* given) -> Vector {
    if (!needed) return Vector::Constant(x.rows() * mc_samples, kNaN);
    const Vector v = given ? *given : noise.log_pdf_rows(x);
    return repeat_rows(v, mc_samples);
  };
  Batch b;
  b.mc_samples = mc_samples;
  b.data_log_pn = log_pn(data_x, use.data, data_log_pn);
  b.noise_log_pn = log_pn(noise_x, use.noise, nullptr);
  b.data_x = repeat_rows(data_x, mc_samples);
  b.noise_x = repeat_rows(noise_x, mc_samples);
  Rng r1 = rng.split(1);
  Rng r2 = rng.split(2);
  Rng r3 = rng.split(3);
  b.data_eps = normals(r1, b.data_x.rows(), latent_dim);
  b.noise_eps = normals(r2, b.noise_x.rows(), latent_dim);
  b.prior_eps = normals(r3, b.data_x.rows(), latent_dim);
  return b;
}

Var fvnce_loss(Tape& tape, const nn::LatentNet& net, const psr::ScoringPair& pair,
               const Batch& batch, const LossConfig& config, Diagnostics* diag) {
  check_batch(batch, net);
  psr::ClipStats stats;
  const double t = config.clip_threshold;

  const Var dd = sampled_delta(tape, net, batch.data_x, batch.data_log_pn, batch.data_eps);
  record(diag, tape, dd, psr::Outcome::data);
  Var out = tape.mean(score_rows(tape, dd, pair, psr::Outcome::data, false, t, stats));

  const bool drop = config.drop_constant_term;
  if (drop && pair.is_log_ratio()) {
    // The noise branch is the constant -E[r] and needs no samples.
    out = tape.shift(out, psr::dropped_linear_mean(pair));
  } else {
    const Var dn = sampled_delta(tape, net, batch.noise_x, batch.noise_log_pn, batch.noise_eps);
    record(diag, tape, dn, psr::Outcome::noise);
    const Var s0 = tape.mean(score_rows(tape, dn, pair, psr::Outcome::noise, drop, t, stats));
    out = tape.add(out, drop ? tape.shift(s0, psr::dropped_linear_mean(pair)) : s0);
  }
  if (diag) diag->clip += stats;
  return out;
}

Var vae_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch) {
  check_batch(batch, net);
  const Var x = tape.constant(batch.data_x);
  const auto m = net.encoder.moments(tape, x);
  const Var sd = tape.exp(tape.scale(m.log_var, 0.5));
  const Var z = tape.add(m.mean, tape.mul(sd, tape.constant(batch.data_eps)));
  const Var rec = net.model.log_likelihood(tape, z, x);
  // KL(N(m, e^v) || N(0, I)) = 1/2 sum(e^v + m^2 - 1 - v)
  const Var kl_terms = tape.sub(tape.add(tape.exp(m.log_var), tape.square(m.mean)),
                                tape.shift(m.log_var, 1.0));
  const Var kl = tape.scale(tape.row_sum(kl_terms), 0.5);
  return tape.mean(tape.sub(rec, kl));
}

Var ae_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch) {
  check_batch(batch, net);
  const Var x = tape.constant(batch.data_x);
  const Var z = net.deterministic().encode(tape, x);
  return tape.mean(net.model.log_likelihood(tape, z, x));
}

Var vae_det_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch) {
  check_batch(batch, net);
  const Var x = tape.constant(batch.data_x);
  const Var z = net.deterministic().encode(tape, x);
  const Var lp = tape.shift(net.model.log_prior(tape, z), -net.model.log_prior_max());
  return tape.mean(tape.add(net.model.log_likelihood(tape, z, x), lp));
}

Var rvae_penalty(Tape& tape, const nn::LatentNet& net, const Batch& batch, double threshold,
                 Diagnostics* diag) {
  check_batch(batch, net);
  const Var x = tape.constant(batch.noise_x);
  const Var z = net.deterministic().encode(tape, x);
  const Var delta = tape.sub(net.model.log_joint(tape, z, x), tape.constant(batch.noise_log_pn));
  record(diag, tape, delta, psr::Outcome::noise);
  psr::ClipStats stats;
  const Var out = tape.mean(clipped_exp_rows(tape, delta, threshold, stats));
  if (diag) diag->clip += stats;
  return out;
}

Var rvae_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch, const LossConfig& config,
              Diagnostics* diag) {
  const Var data = config.stochastic_data_encoder ? vae_loss(tape, net, batch)
                                                  : vae_det_loss(tape, net, batch);
  return tape.sub(data, rvae_penalty(tape, net, batch, config.clip_threshold, diag));
}

Var j01_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch, const LossConfig& config,
             Diagnostics* diag) {
  check_batch(batch, net);
  if (!config.tie_encoders) throw std::invalid_argument("j01 requires tied encoders");
  const Var dd = sampled_delta(tape, net, batch.data_x, batch.data_log_pn, batch.data_eps);
  const Var dn = sampled_delta(tape, net, batch.noise_x, batch.noise_log_pn, batch.noise_eps);
  record(diag, tape, dd, psr::Outcome::data);
  record(diag, tape, dn, psr::Outcome::noise);
  Var out = tape.add(tape.mean(tape.softplus(dd)), tape.mean(tape.softplus(dn)));
  if (!config.drop_constant_term) {
    psr::ClipStats stats;
    out = tape.sub(out, tape.mean(clipped_exp_rows(tape, dn, config.clip_threshold, stats)));
    if (diag) diag->clip += stats;
  }
  return out;
}

Var j10_loss(Tape& tape, const nn::LatentNet& net, const Batch& batch, const LossConfig& config,
             Diagnostics* diag) {
  check_batch(batch, net);
  psr::ClipStats stats;
  const double t = config.clip_threshold;
  // First term: x ~ p_d, z ~ p_Z, ratio p(x | z) / p_n(x).
  const Var xd = tape.constant(batch.data_x);
  const Var z = tape.constant(batch.prior_eps);
  const Var u = tape.sub(net.model.log_likelihood(tape, z, xd), tape.constant(batch.data_log_pn));
  record(diag, tape, u, psr::Outcome::data);
  const Var first = tape.mean(clipped_exp_rows(tape, u, t, stats));
  // Second term: -1/2 E_{p_n q0}[r^2].
  const Var dn = sampled_delta(tape, net, batch.noise_x, batch.noise_log_pn, batch.noise_eps);
  record(diag, tape, dn, psr::Outcome::noise);
  const Var second = tape.mean(clipped_exp_rows(tape, tape.scale(dn, 2.0), t, stats));
  if (diag) diag->clip += stats;
  return tape.sub(first, tape.scale(second, 0.5));
}

Var objective(Tape& tape, const nn::LatentNet& net, const LossConfig& config, const Batch& batch,
              Diagnostics* diag) {
  config.validate();
  switch (config.kind) {
    case LossKind::fvnce: return fvnce_loss(tape, net, config.pair, batch, config, diag);
    case LossKind::vae: return vae_loss(tape, net, batch);
    case LossKind::ae: return ae_loss(tape, net, batch);
    case LossKind::vae_det: return vae_det_loss(tape, net, batch);
    case LossKind::rvae: return rvae_loss(tape, net, batch, config, diag);
    case LossKind::j01: return j01_loss(tape, net, batch, config, diag);
    case LossKind::j10: return j10_loss(tape, net, batch, config, diag);
    case LossKind::mixed: {
      Var total = tape.scalar(0.0);
      for (const auto& c : config.mix) {
        total = tape.add(total, tape.scale(objective(tape, net, c.config, batch, diag), c.weight));
      }
      return total;
    }
    case LossKind::nce:
    case LossKind::snce:
      throw std::invalid_argument(to_string(config.kind) +
                                  " needs a model with a tractable marginal");
  }
  throw std::invalid_argument("unhandled loss kind");
}

// ---------------------------------------------------------------------------

Estimate nce_estimate(const nn::TabularJointModel& model, const dist::TabularDistribution& data,
                      const dist::TabularDistribution& noise, Rng& rng, std::size_t n) {
  check_tabular(model, data, noise);
  const Vector lm = model.log_marginal();
  const Vector& ln = noise.log_mass();
  Rng rd = rng.split(1);
  Rng rn = rng.split(2);
  const auto n_i = static_cast<Index>(n);
  std::vector<double> d;
  std::vector<double> s;
  for (Index x : data.sample_indices(rd, n_i)) d.push_back(-softplus(ln(x) - lm(x)));
  for (Index x : noise.sample_indices(rn, n_i)) s.push_back(-softplus(lm(x) - ln(x)));
  return two_stream(d, s);
}

Estimate snce_estimate(const nn::TabularJointModel& model, const dist::TabularDistribution& data,
                       const dist::TabularDistribution& noise, const psr::ScoringPair& pair,
                       Rng& rng, std::size_t n) {
  check_tabular(model, data, noise);
  const Vector lm = model.log_marginal();
  const Vector& ln = noise.log_mass();
  Rng rd = rng.split(1);
  Rng rn = rng.split(2);
  const auto n_i = static_cast<Index>(n);
  std::vector<double> d;
  std::vector<double> s;
  for (Index x : data.sample_indices(rd, n_i)) {
    d.push_back(-psr::logit_loss(pair, psr::Outcome::data, lm(x) - ln(x), psr::kNoClip));
  }
  for (Index x : noise.sample_indices(rn, n_i)) {
    s.push_back(-psr::logit_loss(pair, psr::Outcome::noise, lm(x) - ln(x), psr::kNoClip));
  }
  return two_stream(d, s);
}

Estimate fvnce_estimate(const nn::TabularJointModel& model, const dist::TabularDistribution& data,
                        const dist::TabularDistribution& noise, const nn::TabularEncoder& q1,
                        const nn::TabularEncoder& q0, const psr::ScoringPair& pair, Rng& rng,
                        std::size_t n, double threshold) {
  check_tabular(model, data, noise);
  if (q1.x_size() != model.x_size() || q0.x_size() != model.x_size() ||
      q1.z_size() != model.z_size() || q0.z_size() != model.z_size()) {
    throw std::invalid_argument("encoder supports do not match the model");
  }
  const Vector& ln = noise.log_mass();
  Rng rd = rng.split(1);
  Rng rn = rng.split(2);
  Rng rz = rng.split(3);
  const auto n_i = static_cast<Index>(n);
  std::vector<double> d;
  std::vector<double> s;
  for (Index x : data.sample_indices(rd, n_i)) {
    const Index z = q1.sample(x, rz);
    const double delta = model.log_joint(x, z) - ln(x) - q1.log_q()(x, z);
    d.push_back(-psr::logit_loss(pair, psr::Outcome::data, delta, threshold));
  }
  for (Index x : noise.sample_indices(rn, n_i)) {
    const Index z = q0.sample(x, rz);
    const double delta = model.log_joint(x, z) - ln(x) - q0.log_q()(x, z);
    s.push_back(-psr::logit_loss(pair, psr::Outcome::noise, delta, threshold));
  }
  return two_stream(d, s);
}

Estimate restricted_mass_estimate(const nn::TabularJointModel& model,
                                  const dist::TabularDistribution& noise,
                                  const nn::TabularEncoder& q0, Rng& rng, std::size_t n) {
  if (noise.size() != model.x_size() || q0.x_size() != model.x_size()) {
    throw std::invalid_argument("tabular supports differ in size");
  }
  Rng rn = rng.split(1);
  Rng rz = rng.split(2);
  std::vector<double> w;
  for (Index x : noise.sample_indices(rn, static_cast<Index>(n))) {
    const Index z = q0.sample(x, rz);
    w.push_back(std::exp(model.log_joint(x, z) - noise.log_mass()(x) - q0.log_q()(x, z)));
  }
  const Moments m = moments(w);
  return {m.mean, std::sqrt(m.var / static_cast<double>(n)), n};
}

}  // namespace fvnce::losses
