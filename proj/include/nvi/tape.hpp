#ifndef NVI_TAPE_HPP
#define NVI_TAPE_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

/**
 * \file
 * \brief Reverse-mode differentiation over dense rank-2 arrays.
 *
 * Every quantity that carries a gradient lives on a Tape as a node. Nodes are
 * appended in evaluation order, so the reverse of the append order is a valid
 * topological order and backward passes are deterministic.
 *
 * Rows index particles and columns index coordinates throughout the library,
 * so most ops act row-wise. Binary elementwise ops broadcast an operand whose
 * row or column count is 1 (bias rows, per-row scalars and 1x1 scalars).
 */

namespace nvi::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// A trainable array. Owned by a ParameterStore; tapes only reference it.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  matvec,
  transpose,
  tanh,
  exp,
  log,
  softplus,
  softmax,
  logsumexp,
  gaussian_logpdf,
  sum,
  row_sum,
  scale,
  shift,
  concat,
  columns,
  cumsum,
  pick,
  lgamma,
  reshape,
  gather,
};

const char* op_name(OpKind op);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape is cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  [[nodiscard]] bool valid() const { return tape_ != nullptr && id_ >= 0; }
  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] int id() const { return id_; }

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] const Matrix& grad() const;
  [[nodiscard]] double scalar() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  struct Node {
    OpKind op = OpKind::leaf;
    bool requires_grad = false;
    int a = -1;
    int b = -1;
    int c = -1;
    double scalar = 0.0;
    Eigen::Index i0 = 0;
    Eigen::Index i1 = 0;
    Parameter* param = nullptr;
    std::vector<int> extra;
    Matrix value;
    Matrix grad;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(const Matrix& value);
  Var constant(double value);
  /// A leaf that accumulates its own gradient across backward passes.
  Var variable(const Matrix& value);
  /// A leaf bound to `p`; backward adds into `p.grad`. With `live == false`
  /// the value is copied in as a constant.
  Var parameter(Parameter& p, bool live = true);
  /// Same value, no parents, never receives gradient.
  Var detach(Var v);

  /// Accumulates d(root)/d(node) into every reachable leaf that requires it.
  void backward(Var root);

  /// Drops all nodes; storage is reused by later recordings.
  void clear();

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  // Recording primitives; the free functions below are the intended interface.
  Var unary(OpKind op, Var a, double scalar = 0.0);
  Var binary(OpKind op, Var a, Var b);
  Var matvec(Var x, Var w);
  Var gaussian_logpdf(Var x, Var mean, Var stddev);
  Var concat(const std::vector<Var>& parts);
  Var columns(Var x, Eigen::Index start, Eigen::Index count);
  Var pick(Var x, const std::vector<int>& index);
  Var reshape(Var x, Eigen::Index rows, Eigen::Index cols);
  Var gather(Var x, const std::vector<int>& rows);

 private:
  friend class Var;
  Node& push(OpKind op, bool requires_grad);
  Node& at(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  void check_owner(Var v, const char* op) const;
  void propagate(int id);

  std::vector<Node> nodes_;
  std::size_t size_ = 0;
};

// Elementwise arithmetic with row/column/scalar broadcasting.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);

/// Row-batched product: (R x n) * (n x m) -> R x m.
Var matvec(Var x, Var w);
Var transpose(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
Var softplus(Var x);
Var lgamma(Var x);
/// Row-wise softmax.
Var softmax(Var x);
/// Row-wise log-sum-exp, R x C -> R x 1.
Var logsumexp(Var x);
/// Row-wise log softmax built from logsumexp.
Var log_softmax(Var x);
/// Row-wise sum over columns of the isotropic-diagonal normal log-density.
/// `mean` and `stddev` broadcast against `x`. R x C -> R x 1.
Var gaussian_logpdf(Var x, Var mean, Var stddev);
/// Sum of all entries, -> 1 x 1.
Var sum(Var x);
/// Row-wise sum, R x C -> R x 1.
Var row_sum(Var x);
/// Column concatenation.
Var concat(const std::vector<Var>& parts);
Var columns(Var x, Eigen::Index start, Eigen::Index count);
/// Row-wise cumulative sum along columns.
Var cumsum(Var x);
/// y(r) = x(r, index[r]), -> R x 1.
Var pick(Var x, const std::vector<int>& index);
/// Row-major reinterpretation with the same number of entries.
Var reshape(Var x, Eigen::Index rows, Eigen::Index cols);
/// y.row(i) = x.row(rows[i]); any number of output rows.
Var gather(Var x, const std::vector<int>& rows);
/// Sum of w(s) * x(s) over rows for a constant weight vector; x is R x 1.
Var weighted_sum(Var x, const Vector& weights);

double log_sum_exp(const Eigen::Ref<const Vector>& x);
double softplus(double x);

}  // namespace nvi::ad

#endif
