#include "fvnce/nnmodel.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fvnce::nn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Mlp::Mlp(ParamVector& params, const std::string& prefix, std::vector<Index> sizes,
         Activation activation)
    : sizes_(std::move(sizes)), activation_(activation) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
  for (Index s : sizes_) {
    if (s <= 0) throw std::invalid_argument("Mlp: layer sizes must be positive");
  }
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    const std::string tag = prefix + "." + std::to_string(i);
    Layer layer;
    layer.weight = params.add(tag + ".w", sizes_[i], sizes_[i + 1]);
    layer.bias = params.add(tag + ".b", 1, sizes_[i + 1]);
    layers_.push_back(layer);
  }
}

void Mlp::init(ParamVector& params, Rng& rng) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const double fan = static_cast<double>(sizes_[i] + sizes_[i + 1]);
    const double limit = std::sqrt(6.0 / fan);
    auto w = params.view(layers_[i].weight);
    for (Index c = 0; c < w.cols(); ++c) {
      for (Index r = 0; r < w.rows(); ++r) w(r, c) = limit * (2.0 * rng.uniform() - 1.0);
    }
    params.view(layers_[i].bias).setZero();
  }
}

Var Mlp::forward(Tape& tape, Var x) const {
  if (tape.value(x).cols() != in_dim()) throw std::invalid_argument("Mlp: input width mismatch");
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = tape.add(tape.matmul(h, tape.param(layers_[i].weight)), tape.param(layers_[i].bias));
    if (i + 1 < layers_.size()) h = activation_ == Activation::tanh ? tape.tanh(h) : tape.relu(h);
  }
  return h;
}

GaussianLatentModel::GaussianLatentModel(Mlp decoder, double sigma_dec)
    : decoder_(std::move(decoder)), sigma_dec_(sigma_dec) {
  if (!(sigma_dec > 0.0)) throw std::invalid_argument("GaussianLatentModel: sigma_dec must be > 0");
}

Var GaussianLatentModel::decode(Tape& tape, Var z) const { return decoder_.forward(tape, z); }

Var GaussianLatentModel::log_likelihood(Tape& tape, Var z, Var x) const {
  const Var diff = tape.sub(x, decode(tape, z));
  const double d = static_cast<double>(data_dim());
  const double norm = -0.5 * d * (kLog2Pi + 2.0 * std::log(sigma_dec_));
  const Var quad = tape.row_sum(tape.square(diff));
  return tape.shift(tape.scale(quad, -0.5 / (sigma_dec_ * sigma_dec_)), norm);
}

Var GaussianLatentModel::log_prior(Tape& tape, Var z) const {
  const Var quad = tape.row_sum(tape.square(z));
  return tape.shift(tape.scale(quad, -0.5), log_prior_max());
}

Var GaussianLatentModel::log_joint(Tape& tape, Var z, Var x) const {
  return tape.add(log_likelihood(tape, z, x), log_prior(tape, z));
}

double GaussianLatentModel::log_prior_max() const {
  return -0.5 * static_cast<double>(latent_dim()) * kLog2Pi;
}

DeterministicEncoder::DeterministicEncoder(Mlp net, Index latent)
    : net_(std::move(net)), latent_(latent) {
  if (latent <= 0 || latent > net_.out_dim()) {
    throw std::invalid_argument("DeterministicEncoder: latent size exceeds network output");
  }
}

Var DeterministicEncoder::encode(Tape& tape, Var x) const {
  const Var out = net_.forward(tape, x);
  return latent_ == net_.out_dim() ? out : tape.cols(out, 0, latent_);
}

StochasticEncoder::StochasticEncoder(Mlp net) : net_(std::move(net)) {
  if (net_.out_dim() % 2 != 0) {
    throw std::invalid_argument("StochasticEncoder: output width must be 2 * latent");
  }
}

StochasticEncoder::Moments StochasticEncoder::moments(Tape& tape, Var x) const {
  const Var out = net_.forward(tape, x);
  const Index l = latent_dim();
  return {tape.cols(out, 0, l), tape.cols(out, l, l)};
}

StochasticEncoder::Sample StochasticEncoder::sample(Tape& tape, Var x, const Matrix& eps) const {
  const Index l = latent_dim();
  if (eps.cols() != l || eps.rows() != tape.value(x).rows()) {
    throw std::invalid_argument("StochasticEncoder: noise shape mismatch");
  }
  const Moments m = moments(tape, x);
  const Var sd = tape.exp(tape.scale(m.log_var, 0.5));
  const Var z = tape.add(m.mean, tape.mul(sd, tape.constant(eps)));
  // log q at the reparametrized point: the standardized residual is eps itself.
  const Vector quad = eps.rowwise().squaredNorm();
  const Vector base =
      (-0.5 * quad.array() - 0.5 * static_cast<double>(l) * kLog2Pi).matrix();
  const Var log_q = tape.sub(tape.constant(base), tape.scale(tape.row_sum(m.log_var), 0.5));
  return {z, log_q};
}

Var StochasticEncoder::log_density(Tape& tape, Var z, Var x) const {
  const Moments m = moments(tape, x);
  const Var resid = tape.sub(z, m.mean);
  const Var quad = tape.row_sum(tape.div(tape.square(resid), tape.exp(m.log_var)));
  const Var logdet = tape.row_sum(m.log_var);
  const double norm = -0.5 * static_cast<double>(latent_dim()) * kLog2Pi;
  return tape.shift(tape.scale(tape.add(quad, logdet), -0.5), norm);
}

DeterministicEncoder StochasticEncoder::mean_map() const {
  return DeterministicEncoder(net_, latent_dim());
}

namespace {

LatentNet layout(const Architecture& arch, ParamVector& params) {
  if (arch.data_dim <= 0 || arch.latent_dim <= 0) {
    throw std::invalid_argument("Architecture: dimensions must be positive");
  }
  std::vector<Index> dec{arch.latent_dim};
  dec.insert(dec.end(), arch.hidden.begin(), arch.hidden.end());
  dec.push_back(arch.data_dim);
  std::vector<Index> enc{arch.data_dim};
  enc.insert(enc.end(), arch.hidden.rbegin(), arch.hidden.rend());
  enc.push_back(2 * arch.latent_dim);

  LatentNet net;
  net.arch = arch;
  net.model = GaussianLatentModel(Mlp(params, "decoder", dec, arch.activation), arch.sigma_dec);
  net.encoder = StochasticEncoder(Mlp(params, "encoder", enc, arch.activation));
  return net;
}

}  // namespace

LatentNet build_latent_net(const Architecture& arch, ParamVector& params, Rng& rng) {
  if (params.size() != 0) throw std::invalid_argument("build_latent_net: parameters not empty");
  LatentNet net = layout(arch, params);
  Rng dec_rng = rng.split(1);
  Rng enc_rng = rng.split(2);
  net.model.decoder().init(params, dec_rng);
  net.encoder.net().init(params, enc_rng);
  return net;
}

LatentNet describe_latent_net(const Architecture& arch) {
  ParamVector scratch;
  return layout(arch, scratch);
}

Matrix encode_mean(const LatentNet& net, const ParamVector& params, const Matrix& x) {
  Tape tape(&params);
  const Var z = net.deterministic().encode(tape, tape.constant(x));
  return tape.value(z);
}

Matrix decode_mean(const LatentNet& net, const ParamVector& params, const Matrix& z) {
  Tape tape(&params);
  return tape.value(net.model.decode(tape, tape.constant(z)));
}

Vector reconstruction_log_likelihood(const LatentNet& net, const ParamVector& params,
                                     const Matrix& x) {
  Tape tape(&params);
  const Var xv = tape.constant(x);
  const Var z = net.deterministic().encode(tape, xv);
  return tape.value(net.model.log_likelihood(tape, z, xv));
}

// ---------------------------------------------------------------------------

TabularJointModel::TabularJointModel(Vector log_prior, Matrix theta)
    : log_prior_(std::move(log_prior)), theta_(std::move(theta)) {
  if (log_prior_.size() != theta_.rows() || theta_.cols() == 0 || theta_.rows() == 0) {
    throw std::invalid_argument("TabularJointModel: prior length must equal theta rows");
  }
  if (!(std::abs(std::exp(log_sum_exp(log_prior_)) - 1.0) <= 1e-12)) {
    throw std::invalid_argument("TabularJointModel: prior masses must sum to 1");
  }
  refresh();
}

TabularJointModel TabularJointModel::random(Index nx, Index nz, Rng& rng, double spread) {
  Vector prior = dirichlet_one(nz, rng).array().log();
  Matrix theta(nz, nx);
  for (Index z = 0; z < nz; ++z) {
    for (Index x = 0; x < nx; ++x) theta(z, x) = spread * rng.normal();
  }
  return TabularJointModel(std::move(prior), std::move(theta));
}

TabularJointModel TabularJointModel::from_joint(const Matrix& joint) {
  if (std::abs(joint.sum() - 1.0) > 1e-12 || (joint.array() < 0.0).any()) {
    throw std::invalid_argument("TabularJointModel: joint table must be a distribution");
  }
  const Vector pz = joint.colwise().sum().transpose();
  Vector prior(pz.size());
  Matrix theta(joint.cols(), joint.rows());
  for (Index z = 0; z < joint.cols(); ++z) {
    if (pz(z) <= 0.0) throw std::invalid_argument("TabularJointModel: latent value without mass");
    prior(z) = std::log(pz(z));
    for (Index x = 0; x < joint.rows(); ++x) theta(z, x) = std::log(joint(x, z) / pz(z));
  }
  return TabularJointModel(std::move(prior), std::move(theta));
}

void TabularJointModel::set_theta(Matrix theta) {
  if (theta.rows() != theta_.rows() || theta.cols() != theta_.cols()) {
    throw std::invalid_argument("TabularJointModel: theta shape mismatch");
  }
  theta_ = std::move(theta);
  refresh();
}

void TabularJointModel::refresh() {
  log_joint_.resize(x_size(), z_size());
  for (Index z = 0; z < z_size(); ++z) {
    const Vector row = theta_.row(z).transpose();
    const double lse = log_sum_exp(row);
    for (Index x = 0; x < x_size(); ++x) log_joint_(x, z) = log_prior_(z) + row(x) - lse;
  }
}

Matrix TabularJointModel::log_conditional() const {
  Matrix out = log_joint_;
  for (Index z = 0; z < z_size(); ++z) out.col(z).array() -= log_prior_(z);
  return out;
}

Vector TabularJointModel::log_marginal() const {
  Vector out(x_size());
  for (Index x = 0; x < x_size(); ++x) out(x) = log_sum_exp(log_joint_.row(x).transpose());
  return out;
}

TabularEncoder::TabularEncoder(Matrix log_q) : log_q_(std::move(log_q)) {
  if (log_q_.rows() == 0 || log_q_.cols() == 0) throw std::invalid_argument("TabularEncoder: empty");
  for (Index x = 0; x < log_q_.rows(); ++x) {
    const double lse = log_sum_exp(log_q_.row(x).transpose());
    if (!(std::abs(lse) < 1e-10)) {
      throw std::invalid_argument("TabularEncoder: rows must sum to 1");
    }
  }
}

TabularEncoder TabularEncoder::dirichlet(Index nx, Index nz, Rng& rng) {
  Matrix lq(nx, nz);
  for (Index x = 0; x < nx; ++x) lq.row(x) = dirichlet_one(nz, rng).array().log().transpose();
  return TabularEncoder(std::move(lq));
}

TabularEncoder TabularEncoder::deterministic(const std::vector<Index>& code, Index nz) {
  Matrix lq = Matrix::Constant(static_cast<Index>(code.size()), nz, kNegInf);
  for (std::size_t x = 0; x < code.size(); ++x) {
    if (code[x] < 0 || code[x] >= nz) throw std::invalid_argument("TabularEncoder: code out of range");
    lq(static_cast<Index>(x), code[x]) = 0.0;
  }
  return TabularEncoder(std::move(lq));
}

Index TabularEncoder::sample(Index x, Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  Index last = 0;
  for (Index z = 0; z < z_size(); ++z) {
    const double p = std::exp(log_q_(x, z));
    if (p <= 0.0) continue;
    acc += p;
    last = z;
    if (u < acc) return z;
  }
  return last;
}

Index TabularEncoder::mode(Index x) const {
  Index best = 0;
  log_q_.row(x).maxCoeff(&best);
  return best;
}

TabularEncoder exact_posterior(const TabularJointModel& model) {
  const Vector lm = model.log_marginal();
  Matrix lq = model.log_joint_table();
  for (Index x = 0; x < lq.rows(); ++x) {
    if (!std::isfinite(lm(x))) {
      throw std::domain_error("exact_posterior: marginal is zero at x = " + std::to_string(x));
    }
    lq.row(x).array() -= lm(x);
  }
  return TabularEncoder(std::move(lq));
}

Vector dirichlet_one(Index n, Rng& rng) {
  if (n <= 0) throw std::invalid_argument("dirichlet_one: n must be positive");
  Vector e(n);
  for (Index i = 0; i < n; ++i) e(i) = -std::log(rng.uniform_open());
  return e / e.sum();
}

}  // namespace fvnce::nn
