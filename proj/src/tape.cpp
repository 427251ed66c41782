#include "fvnce/tape.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace fvnce::diff {

namespace {

Index broadcast_extent(Index x, Index y, const char* what) {
  if (x == y || y == 1) return x;
  if (x == 1) return y;
  throw std::invalid_argument(std::string("shape mismatch in ") + what + ": " +
                              std::to_string(x) + " vs " + std::to_string(y));
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

// Sum a broadcast gradient back down to an operand of shape rows x cols.
Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

void accumulate(Matrix& into, const Matrix& x) {
  if (into.size() == 0) {
    into = x;
  } else {
    into += x;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t ParamVector::add(const std::string& name, Index rows, Index cols) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("ParamVector: empty slice " + name);
  for (const auto& s : slices_) {
    if (s.name == name) throw std::invalid_argument("ParamVector: duplicate slice " + name);
  }
  Slice s{name, rows, cols, values_.size()};
  Vector grown = Vector::Zero(values_.size() + s.size());
  grown.head(values_.size()) = values_;
  values_ = std::move(grown);
  slices_.push_back(std::move(s));
  return slices_.size() - 1;
}

std::size_t ParamVector::find(const std::string& name) const {
  for (std::size_t i = 0; i < slices_.size(); ++i) {
    if (slices_[i].name == name) return i;
  }
  throw std::out_of_range("ParamVector: no slice named " + name);
}

void ParamVector::set_values(const Vector& v) {
  if (v.size() != values_.size()) throw std::invalid_argument("ParamVector: length mismatch");
  values_ = v;
}

Eigen::Map<Matrix> ParamVector::view(std::size_t id) {
  const Slice& s = slices_.at(id);
  return {values_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Matrix> ParamVector::view(std::size_t id) const {
  const Slice& s = slices_.at(id);
  return {values_.data() + s.offset, s.rows, s.cols};
}

std::uint64_t ParamVector::hash() const noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values_.data());
  const std::size_t n = static_cast<std::size_t>(values_.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------

Tape::Tape(const ParamVector* params) : params_(params) {}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(std::size_t slice_id) {
  if (!params_) throw std::logic_error("Tape::param: tape has no parameter vector");
  Node n;
  n.op = Op::Param;
  n.value = params_->view(slice_id);
  n.slice = slice_id;
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

double Tape::scalar_value(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw std::invalid_argument("node is not a scalar");
  return m(0, 0);
}

Var Tape::binary(Op op, Var a, Var b) {
  const Matrix& x = value(a);
  const Matrix& y = value(b);
  const Index rows = broadcast_extent(x.rows(), y.rows(), "binary op");
  const Index cols = broadcast_extent(x.cols(), y.cols(), "binary op");
  const Matrix xe = expand(x, rows, cols);
  const Matrix ye = expand(y, rows, cols);
  Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  switch (op) {
    case Op::Add: n.value = xe + ye; break;
    case Op::Sub: n.value = xe - ye; break;
    case Op::Mul: n.value = xe.cwiseProduct(ye); break;
    case Op::Div: n.value = xe.cwiseQuotient(ye); break;
    default: throw std::logic_error("Tape::binary: not a binary op");
  }
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return binary(Op::Add, a, b); }
Var Tape::sub(Var a, Var b) { return binary(Op::Sub, a, b); }
Var Tape::mul(Var a, Var b) { return binary(Op::Mul, a, b); }
Var Tape::div(Var a, Var b) { return binary(Op::Div, a, b); }

Var Tape::elementwise(Var a, Matrix value, Matrix partial) {
  Node n;
  n.op = Op::Elementwise;
  n.a = a.id;
  n.value = std::move(value);
  n.partial = std::move(partial);
  return push(std::move(n));
}

Var Tape::neg(Var a) { return scale(a, -1.0); }

Var Tape::scale(Var a, double s) {
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.scalar = s;
  n.value = value(a) * s;
  return push(std::move(n));
}

Var Tape::shift(Var a, double s) {
  Node n;
  n.op = Op::Shift;
  n.a = a.id;
  n.value = value(a).array() + s;
  return push(std::move(n));
}

Var Tape::exp(Var a) {
  Matrix v = value(a).array().exp();
  Matrix p = v;
  return elementwise(a, std::move(v), std::move(p));
}

Var Tape::exp_clipped(Var a, double threshold) {
  const Matrix& u = value(a);
  const double et = std::exp(threshold);
  Matrix v(u.rows(), u.cols());
  Matrix p(u.rows(), u.cols());
  for (Index i = 0; i < u.size(); ++i) {
    const double x = u(i);
    if (x <= threshold) {
      v(i) = p(i) = std::exp(x);
    } else {
      v(i) = et * (x - threshold + 1.0);
      p(i) = et;
    }
  }
  return elementwise(a, std::move(v), std::move(p));
}

Var Tape::log(Var a) {
  const Matrix& x = value(a);
  if (!(x.array() > 0.0).all()) throw std::domain_error("Tape::log: non-positive input");
  Matrix v = x.array().log();
  Matrix p = x.array().inverse();
  return elementwise(a, std::move(v), std::move(p));
}

Var Tape::pow(Var a, double p) {
  const Matrix& x = value(a);
  if (p != std::floor(p) && (x.array() < 0.0).any()) {
    throw std::domain_error("Tape::pow: negative base with fractional exponent");
  }
  Matrix v = x.array().pow(p);
  Matrix d = p * x.array().pow(p - 1.0);
  return elementwise(a, std::move(v), std::move(d));
}

Var Tape::square(Var a) {
  const Matrix& x = value(a);
  Matrix v = x.array().square();
  Matrix d = 2.0 * x.array();
  return elementwise(a, std::move(v), std::move(d));
}

Var Tape::tanh(Var a) {
  Matrix v = value(a).array().tanh();
  Matrix d = 1.0 - v.array().square();
  return elementwise(a, std::move(v), std::move(d));
}

Var Tape::relu(Var a) {
  const Matrix& x = value(a);
  Matrix v = x.array().max(0.0);
  Matrix d = (x.array() > 0.0).cast<double>();
  return elementwise(a, std::move(v), std::move(d));
}

Var Tape::softplus(Var a) {
  const Matrix& x = value(a);
  Matrix v(x.rows(), x.cols());
  Matrix d(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double u = x(i);
    v(i) = std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u)));
    d(i) = u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
  }
  return elementwise(a, std::move(v), std::move(d));
}

Var Tape::unary(Var a, const UnaryFn& fn) {
  const Matrix& x = value(a);
  Matrix v(x.rows(), x.cols());
  Matrix d(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const auto [fv, fd] = fn(x(i));
    v(i) = fv;
    d(i) = fd;
  }
  return elementwise(a, std::move(v), std::move(d));
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& x = value(a);
  const Matrix& y = value(b);
  if (x.cols() != y.rows()) {
    throw std::invalid_argument("shape mismatch in matmul: " + std::to_string(x.cols()) +
                                " vs " + std::to_string(y.rows()));
  }
  Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.value = x * y;
  return push(std::move(n));
}

Var Tape::matvec(Var a, Var b) {
  if (value(b).cols() != 1) throw std::invalid_argument("matvec: right operand must be a column");
  return matmul(a, b);
}

Var Tape::sum(Var a) {
  Node n;
  n.op = Op::Sum;
  n.a = a.id;
  n.value = Matrix::Constant(1, 1, value(a).sum());
  return push(std::move(n));
}

Var Tape::mean(Var a) {
  const auto count = static_cast<double>(value(a).size());
  if (count == 0.0) throw std::invalid_argument("mean of empty node");
  return scale(sum(a), 1.0 / count);
}

Var Tape::row_sum(Var a) {
  Node n;
  n.op = Op::RowSum;
  n.a = a.id;
  n.value = value(a).rowwise().sum();
  return push(std::move(n));
}

Var Tape::logsumexp_rows(Var a) {
  const Matrix& x = value(a);
  if (x.cols() == 0) throw std::invalid_argument("logsumexp_rows: no columns");
  const Vector m = x.rowwise().maxCoeff();
  const Matrix shifted = (x.colwise() - m).array().exp();
  const Vector s = shifted.rowwise().sum();
  Node n;
  n.op = Op::LogSumExpRows;
  n.a = a.id;
  n.value = m.array() + s.array().log();
  n.partial = shifted.array().colwise() / s.array();
  return push(std::move(n));
}

Var Tape::logsumexp(Var a, Var b) {
  const Matrix& x = value(a);
  const Matrix& y = value(b);
  const Index rows = broadcast_extent(x.rows(), y.rows(), "logsumexp");
  const Index cols = broadcast_extent(x.cols(), y.cols(), "logsumexp");
  const Matrix xe = expand(x, rows, cols);
  const Matrix ye = expand(y, rows, cols);
  Node n;
  n.op = Op::LogSumExp;
  n.a = a.id;
  n.b = b.id;
  n.value.resize(rows, cols);
  n.partial.resize(rows, cols);
  for (Index i = 0; i < xe.size(); ++i) {
    const double hi = std::max(xe(i), ye(i));
    const double lo = std::min(xe(i), ye(i));
    n.value(i) = hi + std::log1p(std::exp(lo - hi));
    n.partial(i) = std::exp(xe(i) - n.value(i));
  }
  return push(std::move(n));
}

Var Tape::cols(Var a, Index start, Index count) {
  const Matrix& x = value(a);
  if (start < 0 || count <= 0 || start + count > x.cols()) {
    throw std::invalid_argument("cols: column range out of bounds");
  }
  Node n;
  n.op = Op::Cols;
  n.a = a.id;
  n.start = start;
  n.value = x.middleCols(start, count);
  return push(std::move(n));
}

std::vector<Matrix> Tape::adjoints(Var output) const {
  const Matrix& out = value(output);
  if (out.rows() != 1 || out.cols() != 1) {
    throw std::invalid_argument("backward: output must be a 1x1 scalar node");
  }
  std::vector<Matrix> adj(output.id + 1);
  adj[output.id] = Matrix::Ones(1, 1);

  for (std::int64_t i = output.id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const Matrix& g = adj[static_cast<std::size_t>(i)];
    if (g.size() == 0) continue;
    switch (n.op) {
      case Op::Param:
      case Op::Constant:
        break;
      case Op::Add:
      case Op::Sub: {
        const Matrix& x = nodes_[n.a].value;
        const Matrix& y = nodes_[n.b].value;
        accumulate(adj[n.a], reduce_to(g, x.rows(), x.cols()));
        Matrix gb = reduce_to(g, y.rows(), y.cols());
        if (n.op == Op::Sub) gb = -gb;
        accumulate(adj[n.b], gb);
        break;
      }
      case Op::Mul: {
        const Matrix& x = nodes_[n.a].value;
        const Matrix& y = nodes_[n.b].value;
        const Matrix ye = expand(y, g.rows(), g.cols());
        const Matrix xe = expand(x, g.rows(), g.cols());
        accumulate(adj[n.a], reduce_to(g.cwiseProduct(ye), x.rows(), x.cols()));
        accumulate(adj[n.b], reduce_to(g.cwiseProduct(xe), y.rows(), y.cols()));
        break;
      }
      case Op::Div: {
        const Matrix& x = nodes_[n.a].value;
        const Matrix& y = nodes_[n.b].value;
        const Matrix ye = expand(y, g.rows(), g.cols());
        const Matrix ga = g.cwiseQuotient(ye);
        accumulate(adj[n.a], reduce_to(ga, x.rows(), x.cols()));
        accumulate(adj[n.b], reduce_to(-ga.cwiseProduct(n.value), y.rows(), y.cols()));
        break;
      }
      case Op::Scale:
        accumulate(adj[n.a], g * n.scalar);
        break;
      case Op::Shift:
        accumulate(adj[n.a], g);
        break;
      case Op::Elementwise:
        accumulate(adj[n.a], g.cwiseProduct(n.partial));
        break;
      case Op::MatMul:
        accumulate(adj[n.a], g * nodes_[n.b].value.transpose());
        accumulate(adj[n.b], nodes_[n.a].value.transpose() * g);
        break;
      case Op::Sum: {
        const Matrix& x = nodes_[n.a].value;
        accumulate(adj[n.a], Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
        break;
      }
      case Op::RowSum:
        accumulate(adj[n.a], g.replicate(1, nodes_[n.a].value.cols()));
        break;
      case Op::LogSumExpRows:
        accumulate(adj[n.a], n.partial.array().colwise() * g.col(0).array());
        break;
      case Op::LogSumExp: {
        const Matrix& x = nodes_[n.a].value;
        const Matrix& y = nodes_[n.b].value;
        const Matrix ga = g.cwiseProduct(n.partial);
        accumulate(adj[n.a], reduce_to(ga, x.rows(), x.cols()));
        accumulate(adj[n.b], reduce_to(g - ga, y.rows(), y.cols()));
        break;
      }
      case Op::Cols: {
        const Matrix& x = nodes_[n.a].value;
        Matrix ga = Matrix::Zero(x.rows(), x.cols());
        ga.middleCols(n.start, g.cols()) = g;
        accumulate(adj[n.a], ga);
        break;
      }
    }
  }
  return adj;
}

Vector Tape::backward(Var output) const {
  const std::vector<Matrix> adj = adjoints(output);
  Vector grad = Vector::Zero(params_ ? params_->size() : 0);
  for (std::size_t i = 0; i < adj.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op != Op::Param || adj[i].size() == 0) continue;
    const auto& s = params_->slice(n.slice);
    grad.segment(s.offset, s.size()) += Eigen::Map<const Vector>(adj[i].data(), s.size());
  }
  return grad;
}

Matrix Tape::gradient_wrt(Var output, Var node) const {
  if (node.id > output.id) return Matrix::Zero(value(node).rows(), value(node).cols());
  std::vector<Matrix> adj = adjoints(output);
  if (adj[node.id].size() == 0) return Matrix::Zero(value(node).rows(), value(node).cols());
  return adj[node.id];
}

}  // namespace fvnce::diff
