#pragma once

// Reverse-mode differentiation over matrix-valued nodes.
//
// Every node holds a dense matrix. Binary elementwise ops broadcast an
// operand that is 1x1, a single row, or a single column. The tape is
// append-only, so node order is a topological order; backward() walks it once
// in reverse and accumulates adjoints in that fixed order.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace fvnce::diff {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Flat parameter storage with named column-major matrix slices.
class ParamVector {
 public:
  struct Slice {
    std::string name;
    Index rows = 0;
    Index cols = 0;
    Index offset = 0;
    [[nodiscard]] Index size() const noexcept { return rows * cols; }
  };

  /// Appends a zero-initialized slice and returns its id.
  std::size_t add(const std::string& name, Index rows, Index cols);
  [[nodiscard]] std::size_t find(const std::string& name) const;

  [[nodiscard]] const Slice& slice(std::size_t id) const { return slices_.at(id); }
  [[nodiscard]] const std::vector<Slice>& slices() const noexcept { return slices_; }
  [[nodiscard]] Index size() const noexcept { return values_.size(); }

  [[nodiscard]] Vector& values() noexcept { return values_; }
  [[nodiscard]] const Vector& values() const noexcept { return values_; }
  void set_values(const Vector& v);

  [[nodiscard]] Eigen::Map<Matrix> view(std::size_t id);
  [[nodiscard]] Eigen::Map<const Matrix> view(std::size_t id) const;

  /// FNV-1a over the raw parameter bytes.
  [[nodiscard]] std::uint64_t hash() const noexcept;

 private:
  std::vector<Slice> slices_;
  Vector values_;
};

struct Var {
  std::uint32_t id = 0;
};

class Tape {
 public:
  using UnaryFn = std::function<std::pair<double, double>(double)>;

  explicit Tape(const ParamVector* params = nullptr);

  [[nodiscard]] Var param(std::size_t slice_id);
  [[nodiscard]] Var constant(Matrix value);
  [[nodiscard]] Var scalar(double value);

  [[nodiscard]] const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  [[nodiscard]] double scalar_value(Var v) const;
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);

  Var neg(Var a);
  Var scale(Var a, double s);
  Var shift(Var a, double s);

  Var exp(Var a);
  /// exp(u) up to threshold, tangent-line extension above it.
  Var exp_clipped(Var a, double threshold);
  Var log(Var a);
  Var pow(Var a, double p);
  Var square(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var softplus(Var a);
  /// Elementwise map; fn returns (value, derivative).
  Var unary(Var a, const UnaryFn& fn);

  /// (n x k) * (k x m).
  Var matmul(Var a, Var b);
  /// Matrix-vector product, a (n x k) times column b (k x 1).
  Var matvec(Var a, Var b);

  Var sum(Var a);
  Var mean(Var a);
  /// Sum over columns, giving n x 1.
  Var row_sum(Var a);
  /// log-sum-exp over columns, giving n x 1.
  Var logsumexp_rows(Var a);
  /// Elementwise log(exp(a) + exp(b)).
  Var logsumexp(Var a, Var b);
  Var cols(Var a, Index start, Index count);

  /// Gradient of a 1x1 output with respect to the parameter vector.
  [[nodiscard]] Vector backward(Var output) const;
  /// Gradient of a 1x1 output with respect to any node.
  [[nodiscard]] Matrix gradient_wrt(Var output, Var node) const;

 private:
  enum class Op : std::uint8_t {
    Param,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    Shift,
    Elementwise,  // local partial stored in Node::partial
    MatMul,
    Sum,
    RowSum,
    LogSumExpRows,
    LogSumExp,
    Cols,
  };

  struct Node {
    Op op = Op::Constant;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    Matrix value;
    Matrix partial;
    double scalar = 0.0;
    Index start = 0;
    std::size_t slice = 0;
  };

  Var push(Node node);
  Var binary(Op op, Var a, Var b);
  Var elementwise(Var a, Matrix value, Matrix partial);
  [[nodiscard]] std::vector<Matrix> adjoints(Var output) const;

  std::vector<Node> nodes_;
  const ParamVector* params_;
};

}  // namespace fvnce::diff
