#include "nvi/tape.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace nvi::ad {

namespace {

std::string shape(const Matrix& m) {
  std::ostringstream out;
  out << m.rows() << "x" << m.cols();
  return out.str();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape(a) + " and " + shape(b));
}

bool broadcastable(Eigen::Index n, Eigen::Index m) { return n == m || n == 1 || m == 1; }

// Returns `m` itself when it already has the target shape, otherwise a
// replicated copy placed in `storage`.
const Matrix& expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols, Matrix& storage) {
  if (m.rows() == rows && m.cols() == cols) {
    return m;
  }
  storage = m.replicate(rows / m.rows(), cols / m.cols());
  return storage;
}

// Sums a gradient of the broadcast shape back down to the operand shape.
void accumulate_reduced(Matrix& dst, const Matrix& g) {
  if (dst.rows() == g.rows() && dst.cols() == g.cols()) {
    dst += g;
  } else if (dst.rows() == 1 && dst.cols() == 1) {
    dst(0, 0) += g.sum();
  } else if (dst.rows() == 1) {
    dst += g.colwise().sum();
  } else {
    dst += g.rowwise().sum();
  }
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kHalfLog2Pi = 0.91893853320467274178;

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::matvec: return "matvec";
    case OpKind::transpose: return "transpose";
    case OpKind::tanh: return "tanh";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::softplus: return "softplus";
    case OpKind::softmax: return "softmax";
    case OpKind::logsumexp: return "logsumexp";
    case OpKind::gaussian_logpdf: return "gaussian_logpdf";
    case OpKind::sum: return "sum";
    case OpKind::row_sum: return "row_sum";
    case OpKind::scale: return "scale";
    case OpKind::shift: return "shift";
    case OpKind::concat: return "concat";
    case OpKind::columns: return "columns";
    case OpKind::cumsum: return "cumsum";
    case OpKind::pick: return "pick";
    case OpKind::lgamma: return "lgamma";
    case OpKind::reshape: return "reshape";
    case OpKind::gather: return "gather";
  }
  return "unknown";
}

double log_sum_exp(const Eigen::Ref<const Vector>& x) {
  if (x.size() == 0) {
    return -std::numeric_limits<double>::infinity();
  }
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) {
    return m;
  }
  return m + std::log((x.array() - m).exp().sum());
}

double softplus(double x) { return stable_softplus(x); }

// ---------------------------------------------------------------------------
// Var

const Matrix& Var::value() const { return tape_->node(id_).value; }
const Matrix& Var::grad() const { return tape_->node(id_).grad; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw std::invalid_argument("scalar: node has shape " + shape(v));
  }
  return v(0, 0);
}

// ---------------------------------------------------------------------------
// Tape bookkeeping

Tape::Node& Tape::push(OpKind op, bool requires_grad) {
  if (size_ == nodes_.size()) {
    nodes_.emplace_back();
  }
  Node& n = nodes_[size_++];
  n.op = op;
  n.requires_grad = requires_grad;
  n.a = n.b = n.c = -1;
  n.scalar = 0.0;
  n.i0 = n.i1 = 0;
  n.param = nullptr;
  n.extra.clear();
  return n;
}

void Tape::check_owner(Var v, const char* op) const {
  if (!v.valid() || &v.tape() != this || static_cast<std::size_t>(v.id()) >= size_) {
    throw std::invalid_argument(std::string(op) + ": operand does not belong to this tape");
  }
}

void Tape::clear() { size_ = 0; }

Var Tape::constant(const Matrix& value) {
  Node& n = push(OpKind::leaf, false);
  n.value = value;
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::constant(double value) {
  Node& n = push(OpKind::leaf, false);
  n.value.resize(1, 1);
  n.value(0, 0) = value;
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::variable(const Matrix& value) {
  Node& n = push(OpKind::leaf, true);
  n.value = value;
  n.grad = Matrix::Zero(value.rows(), value.cols());
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::parameter(Parameter& p, bool live) {
  Node& n = push(OpKind::leaf, live);
  n.value = p.value;
  if (live) {
    n.param = &p;
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    }
  }
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::detach(Var v) {
  check_owner(v, "detach");
  const int src = v.id();
  Node& n = push(OpKind::leaf, false);
  n.value = nodes_[static_cast<std::size_t>(src)].value;
  return {this, static_cast<int>(size_ - 1)};
}

// ---------------------------------------------------------------------------
// Forward recording

Var Tape::unary(OpKind op, Var a, double scalar) {
  check_owner(a, op_name(op));
  const int ia = a.id();
  const bool rg = at(ia).requires_grad;
  Node& n = push(op, rg);
  n.a = ia;
  n.scalar = scalar;
  const Matrix& x = at(ia).value;
  switch (op) {
    case OpKind::transpose:
      n.value = x.transpose();
      break;
    case OpKind::tanh:
      n.value = x.array().tanh().matrix();
      break;
    case OpKind::exp:
      n.value = x.array().exp().matrix();
      break;
    case OpKind::log:
      n.value = x.array().log().matrix();
      break;
    case OpKind::softplus:
      n.value = x.unaryExpr([](double v) { return stable_softplus(v); });
      break;
    case OpKind::lgamma:
      n.value = x.unaryExpr([](double v) { return std::lgamma(v); });
      break;
    case OpKind::softmax: {
      n.value.resize(x.rows(), x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double m = x.row(r).maxCoeff();
        n.value.row(r) = (x.row(r).array() - m).exp().matrix();
        n.value.row(r) /= n.value.row(r).sum();
      }
      break;
    }
    case OpKind::logsumexp: {
      n.value.resize(x.rows(), 1);
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double m = x.row(r).maxCoeff();
        n.value(r, 0) = std::isfinite(m) ? m + std::log((x.row(r).array() - m).exp().sum()) : m;
      }
      break;
    }
    case OpKind::sum:
      n.value.resize(1, 1);
      n.value(0, 0) = x.sum();
      break;
    case OpKind::row_sum:
      n.value = x.rowwise().sum();
      break;
    case OpKind::scale:
      n.value = scalar * x;
      break;
    case OpKind::shift:
      n.value = x.array() + scalar;
      break;
    case OpKind::cumsum: {
      n.value.resize(x.rows(), x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double acc = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
          acc += x(r, c);
          n.value(r, c) = acc;
        }
      }
      break;
    }
    default:
      throw std::logic_error(std::string("unary: unsupported op ") + op_name(op));
  }
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::binary(OpKind op, Var a, Var b) {
  check_owner(a, op_name(op));
  check_owner(b, op_name(op));
  const int ia = a.id();
  const int ib = b.id();
  {
    const Matrix& x = at(ia).value;
    const Matrix& y = at(ib).value;
    if (!broadcastable(x.rows(), y.rows()) || !broadcastable(x.cols(), y.cols())) {
      shape_error(op_name(op), x, y);
    }
  }
  const bool rg = at(ia).requires_grad || at(ib).requires_grad;
  Node& n = push(op, rg);
  n.a = ia;
  n.b = ib;
  const Matrix& x = at(ia).value;
  const Matrix& y = at(ib).value;
  const Eigen::Index rows = std::max(x.rows(), y.rows());
  const Eigen::Index cols = std::max(x.cols(), y.cols());
  Matrix xs_storage;
  Matrix ys_storage;
  const Matrix& xe = expand(x, rows, cols, xs_storage);
  const Matrix& ye = expand(y, rows, cols, ys_storage);
  switch (op) {
    case OpKind::add:
      n.value = xe + ye;
      break;
    case OpKind::sub:
      n.value = xe - ye;
      break;
    case OpKind::mul:
      n.value = xe.cwiseProduct(ye);
      break;
    case OpKind::div:
      n.value = xe.cwiseQuotient(ye);
      break;
    default:
      throw std::logic_error(std::string("binary: unsupported op ") + op_name(op));
  }
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::matvec(Var x, Var w) {
  check_owner(x, "matvec");
  check_owner(w, "matvec");
  const int ix = x.id();
  const int iw = w.id();
  if (at(ix).value.cols() != at(iw).value.rows()) {
    shape_error("matvec", at(ix).value, at(iw).value);
  }
  const bool rg = at(ix).requires_grad || at(iw).requires_grad;
  Node& n = push(OpKind::matvec, rg);
  n.a = ix;
  n.b = iw;
  n.value.noalias() = at(ix).value * at(iw).value;
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::gaussian_logpdf(Var x, Var mean, Var stddev) {
  check_owner(x, "gaussian_logpdf");
  check_owner(mean, "gaussian_logpdf");
  check_owner(stddev, "gaussian_logpdf");
  const int ix = x.id();
  const int im = mean.id();
  const int is = stddev.id();
  const Matrix& xv = at(ix).value;
  for (int other : {im, is}) {
    const Matrix& o = at(other).value;
    if (!(o.rows() == xv.rows() || o.rows() == 1) || !(o.cols() == xv.cols() || o.cols() == 1)) {
      shape_error("gaussian_logpdf", xv, o);
    }
  }
  const bool rg = at(ix).requires_grad || at(im).requires_grad || at(is).requires_grad;
  Node& n = push(OpKind::gaussian_logpdf, rg);
  n.a = ix;
  n.b = im;
  n.c = is;
  const Matrix& xs = at(ix).value;
  Matrix mu_storage;
  Matrix sd_storage;
  const Matrix& mu = expand(at(im).value, xs.rows(), xs.cols(), mu_storage);
  const Matrix& sd = expand(at(is).value, xs.rows(), xs.cols(), sd_storage);
  const auto d = ((xs - mu).array() / sd.array());
  n.value = (-0.5 * d.square() - sd.array().log() - kHalfLog2Pi).matrix().rowwise().sum();
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::concat(const std::vector<Var>& parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concat: no operands");
  }
  Eigen::Index rows = -1;
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    check_owner(p, "concat");
    const Matrix& v = at(p.id()).value;
    if (rows >= 0 && v.rows() != rows) {
      shape_error("concat", at(parts.front().id()).value, v);
    }
    rows = v.rows();
    cols += v.cols();
    rg = rg || at(p.id()).requires_grad;
  }
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) {
    ids.push_back(p.id());
  }
  Node& n = push(OpKind::concat, rg);
  n.extra = std::move(ids);
  n.value.resize(rows, cols);
  Eigen::Index offset = 0;
  for (int id : n.extra) {
    const Matrix& v = at(id).value;
    n.value.middleCols(offset, v.cols()) = v;
    offset += v.cols();
  }
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::columns(Var x, Eigen::Index start, Eigen::Index count) {
  check_owner(x, "columns");
  const int ix = x.id();
  if (start < 0 || count < 0 || start + count > at(ix).value.cols()) {
    throw std::invalid_argument("columns: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                ") outside shape " + shape(at(ix).value));
  }
  Node& n = push(OpKind::columns, at(ix).requires_grad);
  n.a = ix;
  n.i0 = start;
  n.i1 = count;
  n.value = at(ix).value.middleCols(start, count);
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::pick(Var x, const std::vector<int>& index) {
  check_owner(x, "pick");
  const int ix = x.id();
  const Matrix& xv = at(ix).value;
  if (static_cast<Eigen::Index>(index.size()) != xv.rows()) {
    throw std::invalid_argument("pick: " + std::to_string(index.size()) + " indices for shape " + shape(xv));
  }
  for (int i : index) {
    if (i < 0 || i >= xv.cols()) {
      throw std::invalid_argument("pick: index " + std::to_string(i) + " outside shape " + shape(xv));
    }
  }
  Node& n = push(OpKind::pick, at(ix).requires_grad);
  n.a = ix;
  n.extra = index;
  const Matrix& src = at(ix).value;
  n.value.resize(src.rows(), 1);
  for (Eigen::Index r = 0; r < src.rows(); ++r) {
    n.value(r, 0) = src(r, n.extra[static_cast<std::size_t>(r)]);
  }
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::reshape(Var x, Eigen::Index rows, Eigen::Index cols) {
  check_owner(x, "reshape");
  const int ix = x.id();
  if (rows * cols != at(ix).value.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape(at(ix).value) + " as " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
  Node& n = push(OpKind::reshape, at(ix).requires_grad);
  n.a = ix;
  n.value = Eigen::Map<const Matrix>(at(ix).value.data(), rows, cols);
  return {this, static_cast<int>(size_ - 1)};
}

Var Tape::gather(Var x, const std::vector<int>& rows) {
  check_owner(x, "gather");
  const int ix = x.id();
  for (int r : rows) {
    if (r < 0 || r >= at(ix).value.rows()) {
      throw std::invalid_argument("gather: row " + std::to_string(r) + " outside shape " + shape(at(ix).value));
    }
  }
  Node& n = push(OpKind::gather, at(ix).requires_grad);
  n.a = ix;
  n.extra = rows;
  const Matrix& src = at(ix).value;
  n.value.resize(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    n.value.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
  }
  return {this, static_cast<int>(size_ - 1)};
}

// ---------------------------------------------------------------------------
// Backward

void Tape::backward(Var root) {
  check_owner(root, "backward");
  if (root.value().size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " + shape(root.value()));
  }
  const int r = root.id();
  if (!at(r).requires_grad) {
    return;
  }
  for (int i = 0; i <= r; ++i) {
    Node& n = at(i);
    if (!n.requires_grad) {
      continue;
    }
    const bool accumulating_leaf = n.op == OpKind::leaf && n.param == nullptr;
    if (!accumulating_leaf) {
      n.grad.setZero(n.value.rows(), n.value.cols());
    }
  }
  at(r).grad(0, 0) += 1.0;
  for (int i = r; i >= 0; --i) {
    if (at(i).requires_grad) {
      propagate(i);
    }
  }
}

void Tape::propagate(int id) {
  Node& n = at(id);
  const Matrix& g = n.grad;
  auto wants = [this](int i) { return i >= 0 && at(i).requires_grad; };

  switch (n.op) {
    case OpKind::leaf:
      if (n.param != nullptr) {
        n.param->grad += g;
      }
      return;
    case OpKind::add:
    case OpKind::sub: {
      if (wants(n.a)) {
        accumulate_reduced(at(n.a).grad, g);
      }
      if (wants(n.b)) {
        if (n.op == OpKind::add) {
          accumulate_reduced(at(n.b).grad, g);
        } else {
          accumulate_reduced(at(n.b).grad, -g);
        }
      }
      return;
    }
    case OpKind::mul: {
      const Eigen::Index rows = g.rows();
      const Eigen::Index cols = g.cols();
      Matrix storage;
      if (wants(n.a)) {
        accumulate_reduced(at(n.a).grad, g.cwiseProduct(expand(at(n.b).value, rows, cols, storage)));
      }
      if (wants(n.b)) {
        accumulate_reduced(at(n.b).grad, g.cwiseProduct(expand(at(n.a).value, rows, cols, storage)));
      }
      return;
    }
    case OpKind::div: {
      const Eigen::Index rows = g.rows();
      const Eigen::Index cols = g.cols();
      Matrix storage;
      const Matrix& den = expand(at(n.b).value, rows, cols, storage);
      if (wants(n.a)) {
        accumulate_reduced(at(n.a).grad, g.cwiseQuotient(den));
      }
      if (wants(n.b)) {
        const Matrix gb = -(g.array() * n.value.array() / den.array()).matrix();
        accumulate_reduced(at(n.b).grad, gb);
      }
      return;
    }
    case OpKind::matvec: {
      if (wants(n.a)) {
        at(n.a).grad.noalias() += g * at(n.b).value.transpose();
      }
      if (wants(n.b)) {
        at(n.b).grad.noalias() += at(n.a).value.transpose() * g;
      }
      return;
    }
    case OpKind::transpose:
      at(n.a).grad += g.transpose();
      return;
    case OpKind::tanh:
      at(n.a).grad.array() += g.array() * (1.0 - n.value.array().square());
      return;
    case OpKind::exp:
      at(n.a).grad.array() += g.array() * n.value.array();
      return;
    case OpKind::log:
      at(n.a).grad.array() += g.array() / at(n.a).value.array();
      return;
    case OpKind::softplus:
      at(n.a).grad.array() += g.array() * at(n.a).value.unaryExpr([](double v) { return sigmoid(v); }).array();
      return;
    case OpKind::lgamma:
      at(n.a).grad.array() +=
          g.array() * at(n.a).value.unaryExpr([](double v) { return boost::math::digamma(v); }).array();
      return;
    case OpKind::softmax: {
      const Eigen::VectorXd inner = g.cwiseProduct(n.value).rowwise().sum();
      Matrix& ga = at(n.a).grad;
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        ga.row(r).array() += n.value.row(r).array() * (g.row(r).array() - inner(r));
      }
      return;
    }
    case OpKind::logsumexp: {
      const Matrix& x = at(n.a).value;
      Matrix& ga = at(n.a).grad;
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        if (!std::isfinite(n.value(r, 0))) {
          continue;
        }
        ga.row(r).array() += g(r, 0) * (x.row(r).array() - n.value(r, 0)).exp();
      }
      return;
    }
    case OpKind::gaussian_logpdf: {
      const Matrix& xs = at(n.a).value;
      const Eigen::Index rows = xs.rows();
      const Eigen::Index cols = xs.cols();
      Matrix mu_storage;
      Matrix sd_storage;
      const Matrix& mu = expand(at(n.b).value, rows, cols, mu_storage);
      const Matrix& sd = expand(at(n.c).value, rows, cols, sd_storage);
      const Eigen::ArrayXXd d = (xs - mu).array() / sd.array();
      const Eigen::ArrayXXd gcol = g.replicate(1, cols).array();
      if (wants(n.a)) {
        at(n.a).grad.array() -= gcol * d / sd.array();
      }
      if (wants(n.b)) {
        accumulate_reduced(at(n.b).grad, Matrix((gcol * d / sd.array()).matrix()));
      }
      if (wants(n.c)) {
        accumulate_reduced(at(n.c).grad, Matrix((gcol * (d.square() - 1.0) / sd.array()).matrix()));
      }
      return;
    }
    case OpKind::sum:
      at(n.a).grad.array() += g(0, 0);
      return;
    case OpKind::row_sum: {
      Matrix& ga = at(n.a).grad;
      ga += g.replicate(1, ga.cols());
      return;
    }
    case OpKind::scale:
      at(n.a).grad += n.scalar * g;
      return;
    case OpKind::shift:
      at(n.a).grad += g;
      return;
    case OpKind::concat: {
      Eigen::Index offset = 0;
      for (int part : n.extra) {
        const Eigen::Index c = at(part).value.cols();
        if (at(part).requires_grad) {
          at(part).grad += g.middleCols(offset, c);
        }
        offset += c;
      }
      return;
    }
    case OpKind::columns:
      at(n.a).grad.middleCols(n.i0, n.i1) += g;
      return;
    case OpKind::cumsum: {
      Matrix& ga = at(n.a).grad;
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        double acc = 0.0;
        for (Eigen::Index c = g.cols() - 1; c >= 0; --c) {
          acc += g(r, c);
          ga(r, c) += acc;
        }
      }
      return;
    }
    case OpKind::pick: {
      Matrix& ga = at(n.a).grad;
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        ga(r, n.extra[static_cast<std::size_t>(r)]) += g(r, 0);
      }
      return;
    }
    case OpKind::gather: {
      Matrix& ga = at(n.a).grad;
      for (std::size_t i = 0; i < n.extra.size(); ++i) {
        ga.row(n.extra[i]) += g.row(static_cast<Eigen::Index>(i));
      }
      return;
    }
    case OpKind::reshape: {
      Matrix& ga = at(n.a).grad;
      Eigen::Map<Matrix>(ga.data(), g.rows(), g.cols()) += g;
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Free-function interface

namespace {

void same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
}

}  // namespace

Var operator+(Var a, Var b) {
  same_tape(a, b, "add");
  return a.tape().binary(OpKind::add, a, b);
}
Var operator-(Var a, Var b) {
  same_tape(a, b, "sub");
  return a.tape().binary(OpKind::sub, a, b);
}
Var operator*(Var a, Var b) {
  same_tape(a, b, "mul");
  return a.tape().binary(OpKind::mul, a, b);
}
Var operator/(Var a, Var b) {
  same_tape(a, b, "div");
  return a.tape().binary(OpKind::div, a, b);
}
Var operator-(Var a) { return a.tape().unary(OpKind::scale, a, -1.0); }
Var operator+(Var a, double c) { return a.tape().unary(OpKind::shift, a, c); }
Var operator+(double c, Var a) { return a.tape().unary(OpKind::shift, a, c); }
Var operator-(Var a, double c) { return a.tape().unary(OpKind::shift, a, -c); }
Var operator-(double c, Var a) { return a.tape().unary(OpKind::shift, -a, c); }
Var operator*(Var a, double c) { return a.tape().unary(OpKind::scale, a, c); }
Var operator*(double c, Var a) { return a.tape().unary(OpKind::scale, a, c); }

Var matvec(Var x, Var w) {
  same_tape(x, w, "matvec");
  return x.tape().matvec(x, w);
}
Var transpose(Var x) { return x.tape().unary(OpKind::transpose, x); }
Var tanh(Var x) { return x.tape().unary(OpKind::tanh, x); }
Var exp(Var x) { return x.tape().unary(OpKind::exp, x); }
Var log(Var x) { return x.tape().unary(OpKind::log, x); }
Var softplus(Var x) { return x.tape().unary(OpKind::softplus, x); }
Var lgamma(Var x) { return x.tape().unary(OpKind::lgamma, x); }
Var softmax(Var x) { return x.tape().unary(OpKind::softmax, x); }
Var logsumexp(Var x) { return x.tape().unary(OpKind::logsumexp, x); }
Var log_softmax(Var x) { return x - logsumexp(x); }

Var gaussian_logpdf(Var x, Var mean, Var stddev) {
  same_tape(x, mean, "gaussian_logpdf");
  same_tape(x, stddev, "gaussian_logpdf");
  return x.tape().gaussian_logpdf(x, mean, stddev);
}

Var sum(Var x) { return x.tape().unary(OpKind::sum, x); }
Var row_sum(Var x) { return x.tape().unary(OpKind::row_sum, x); }

Var concat(const std::vector<Var>& parts) {
  if (parts.empty() || !parts.front().valid()) {
    throw std::invalid_argument("concat: no operands");
  }
  return parts.front().tape().concat(parts);
}

Var columns(Var x, Eigen::Index start, Eigen::Index count) { return x.tape().columns(x, start, count); }
Var cumsum(Var x) { return x.tape().unary(OpKind::cumsum, x); }
Var pick(Var x, const std::vector<int>& index) { return x.tape().pick(x, index); }
Var reshape(Var x, Eigen::Index rows, Eigen::Index cols) { return x.tape().reshape(x, rows, cols); }
Var gather(Var x, const std::vector<int>& rows) { return x.tape().gather(x, rows); }

Var weighted_sum(Var x, const Vector& weights) {
  if (x.cols() != 1 || x.rows() != weights.size()) {
    throw std::invalid_argument("weighted_sum: " + std::to_string(weights.size()) + " weights for shape " +
                                shape(x.value()));
  }
  Tape& t = x.tape();
  const Var w = t.constant(Matrix(weights.transpose()));
  return matvec(w, x);
}

}  // namespace nvi::ad
