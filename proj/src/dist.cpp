#include "fvnce/dist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fvnce::dist {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) return kNegInf;
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

void Density::check_dim(Index got) const {
  if (got != dim()) {
    throw std::invalid_argument("dimension mismatch: expected " + std::to_string(dim()) +
                                ", got " + std::to_string(got));
  }
}

Vector Density::log_pdf_rows(const Matrix& xs) const {
  check_dim(xs.cols());
  Vector out(xs.rows());
  for (Index i = 0; i < xs.rows(); ++i) out(i) = log_pdf(xs.row(i).transpose());
  return out;
}

// ---------------------------------------------------------------------------

DiagonalGaussian::DiagonalGaussian(Vector mean, Vector log_var)
    : mean_(std::move(mean)), log_var_(std::move(log_var)) {
  if (mean_.size() != log_var_.size() || mean_.size() == 0) {
    throw std::invalid_argument("DiagonalGaussian: mean and log_var must be equal, nonzero length");
  }
}

DiagonalGaussian DiagonalGaussian::standard(Index dim) {
  return {Vector::Zero(dim), Vector::Zero(dim)};
}

double DiagonalGaussian::log_pdf(const Eigen::Ref<const Vector>& x) const {
  check_dim(x.size());
  const auto z2 = (x - mean_).array().square() * (-log_var_.array()).exp();
  return -0.5 * (static_cast<double>(dim()) * kLog2Pi + log_var_.sum() + z2.sum());
}

Matrix DiagonalGaussian::sample(Rng& rng, Index n) const {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  const Vector sd = (0.5 * log_var_.array()).exp();
  Matrix out(n, dim());
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < dim(); ++j) out(i, j) = mean_(j) + sd(j) * rng.normal();
  }
  return out;
}

// ---------------------------------------------------------------------------

GaussianKde::GaussianKde(Matrix centers, double bandwidth)
    : centers_(std::move(centers)), bandwidth_(bandwidth) {
  if (centers_.rows() == 0 || centers_.cols() == 0) {
    throw std::invalid_argument("GaussianKde: need at least one center");
  }
  if (!(bandwidth_ > 0.0)) throw std::invalid_argument("GaussianKde: bandwidth must be > 0");
  center_norms_ = centers_.rowwise().squaredNorm();
}

double GaussianKde::log_pdf(const Eigen::Ref<const Vector>& x) const {
  check_dim(x.size());
  const double inv2s2 = 0.5 / (bandwidth_ * bandwidth_);
  const Vector logits = -inv2s2 * (centers_.rowwise() - x.transpose()).rowwise().squaredNorm();
  const double d = static_cast<double>(dim());
  return log_sum_exp(logits) - std::log(static_cast<double>(centers_.rows())) -
         0.5 * d * (kLog2Pi + 2.0 * std::log(bandwidth_));
}

Vector GaussianKde::log_pdf_rows(const Matrix& xs) const {
  check_dim(xs.cols());
  // |x - c|^2 = |x|^2 + |c|^2 - 2 x.c, one product for all pairs.
  const double inv2s2 = 0.5 / (bandwidth_ * bandwidth_);
  const Vector xn = xs.rowwise().squaredNorm();
  Matrix d2 = -2.0 * xs * centers_.transpose();
  d2.colwise() += xn;
  d2.rowwise() += center_norms_.transpose();
  const double d = static_cast<double>(dim());
  const double offset = std::log(static_cast<double>(centers_.rows())) +
                        0.5 * d * (kLog2Pi + 2.0 * std::log(bandwidth_));
  Vector out(xs.rows());
  for (Index i = 0; i < xs.rows(); ++i) {
    const Vector logits = -inv2s2 * d2.row(i).transpose().cwiseMax(0.0);
    out(i) = log_sum_exp(logits) - offset;
  }
  return out;
}

Matrix GaussianKde::sample(Rng& rng, Index n) const {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  Matrix out(n, dim());
  for (Index i = 0; i < n; ++i) {
    const auto c = static_cast<Index>(rng.index(static_cast<std::uint64_t>(centers_.rows())));
    for (Index j = 0; j < dim(); ++j) out(i, j) = centers_(c, j) + bandwidth_ * rng.normal();
  }
  return out;
}

// ---------------------------------------------------------------------------

TabularDistribution::TabularDistribution(Matrix support, Vector log_mass)
    : support_(std::move(support)), log_mass_(std::move(log_mass)) {
  if (support_.rows() == 0 || support_.rows() != log_mass_.size()) {
    throw std::invalid_argument("TabularDistribution: support and masses differ in size");
  }
  if (log_mass_.array().isNaN().any() || (log_mass_.array() > 0.0).any()) {
    throw std::invalid_argument("TabularDistribution: log masses must be <= 0");
  }
  const Vector p = log_mass_.array().exp();
  const double total = p.sum();
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("TabularDistribution: masses sum to " + std::to_string(total));
  }
  cdf_.resize(p.size());
  double acc = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    acc += p(i);
    cdf_(i) = acc;
  }
}

TabularDistribution TabularDistribution::over_indices(const Vector& mass) {
  Matrix support(mass.size(), 1);
  for (Index i = 0; i < mass.size(); ++i) support(i, 0) = static_cast<double>(i);
  return {std::move(support), mass.array().log().matrix()};
}

TabularDistribution TabularDistribution::uniform(Matrix support) {
  const Index n = support.rows();
  return {std::move(support), Vector::Constant(n, -std::log(static_cast<double>(n)))};
}

double TabularDistribution::log_pdf(const Eigen::Ref<const Vector>& x) const {
  check_dim(x.size());
  for (Index i = 0; i < support_.rows(); ++i) {
    if (support_.row(i).transpose() == x) return log_mass_(i);
  }
  return kNegInf;
}

std::vector<Index> TabularDistribution::sample_indices(Rng& rng, Index n) const {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  std::vector<Index> out(static_cast<std::size_t>(n));
  const double* first = cdf_.data();
  const double* last = first + cdf_.size();
  for (auto& idx : out) {
    const double u = rng.uniform() * cdf_(cdf_.size() - 1);
    idx = std::min<Index>(std::upper_bound(first, last, u) - first, cdf_.size() - 1);
  }
  return out;
}

Matrix TabularDistribution::sample(Rng& rng, Index n) const {
  const auto idx = sample_indices(rng, n);
  Matrix out(n, dim());
  for (Index i = 0; i < n; ++i) out.row(i) = support_.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

nlohmann::json TabularDistribution::to_json() const {
  nlohmann::json j;
  j["support"] = nlohmann::json::array();
  for (Index i = 0; i < support_.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(support_.cols()));
    for (Index k = 0; k < support_.cols(); ++k) row[static_cast<std::size_t>(k)] = support_(i, k);
    j["support"].push_back(row);
  }
  std::vector<double> mass(static_cast<std::size_t>(log_mass_.size()));
  for (Index i = 0; i < log_mass_.size(); ++i) mass[static_cast<std::size_t>(i)] = std::exp(log_mass_(i));
  j["mass"] = mass;
  return j;
}

TabularDistribution TabularDistribution::from_json(const nlohmann::json& j) {
  const auto& sup = j.at("support");
  const auto mass = j.at("mass").get<std::vector<double>>();
  if (sup.size() != mass.size() || mass.empty()) {
    throw std::invalid_argument("tabular json: support and mass differ in length");
  }
  const auto first = sup.at(0).get<std::vector<double>>();
  Matrix support(static_cast<Index>(sup.size()), static_cast<Index>(first.size()));
  Vector log_mass(static_cast<Index>(mass.size()));
  for (std::size_t i = 0; i < sup.size(); ++i) {
    const auto row = sup[i].get<std::vector<double>>();
    if (row.size() != first.size()) throw std::invalid_argument("tabular json: ragged support");
    for (std::size_t k = 0; k < row.size(); ++k) {
      support(static_cast<Index>(i), static_cast<Index>(k)) = row[k];
    }
    if (mass[i] < 0.0) throw std::invalid_argument("tabular json: negative mass");
    log_mass(static_cast<Index>(i)) = std::log(mass[i]);
  }
  return {std::move(support), std::move(log_mass)};
}

std::vector<std::pair<Vector, double>> enumerate(const Density& d) {
  const auto* tab = dynamic_cast<const TabularDistribution*>(&d);
  if (!tab) throw std::invalid_argument("enumerate: distribution is not tabular");
  std::vector<std::pair<Vector, double>> out;
  out.reserve(static_cast<std::size_t>(tab->size()));
  for (Index i = 0; i < tab->size(); ++i) {
    out.emplace_back(tab->support().row(i).transpose(), std::exp(tab->log_mass()(i)));
  }
  return out;
}

}  // namespace fvnce::dist
