#include "mbmpo/diffcore/tape.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "mbmpo/errors.hpp"

namespace mbmpo::ad {

namespace {

constexpr double kNormFloor = 1e-12;

void require_same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw PreconditionError("operands live on different tapes");
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch " +
                      std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                      " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
}

void require_row(Var x, Var row, const char* op) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw ConfigError(std::string(op) + ": broadcast row must be 1x" +
                      std::to_string(x.cols()));
  }
}

}  // namespace

const Eigen::MatrixXd& Var::value() const { return tape_->nodes_[id_].value; }

double Var::scalar() const {
  const auto& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw PreconditionError("node is not 1x1");
  return v(0, 0);
}

Var Tape::variable(Eigen::MatrixXd value) {
  Var v = push(Op::kLeaf, std::move(value), -1, -1, 0.0, 0);
  nodes_[v.id_].needs_grad = true;
  return v;
}

Var Tape::constant(Eigen::MatrixXd value) {
  return push(Op::kConstant, std::move(value), -1, -1, 0.0, 0);
}

Var Tape::push(Op op, Eigen::MatrixXd value, int a, int b, double scalar,
               Eigen::Index offset) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.scalar = scalar;
  n.offset = offset;
  n.needs_grad = (a >= 0 && nodes_[a].needs_grad) || (b >= 0 && nodes_[b].needs_grad);
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var push_node(Op op, Eigen::MatrixXd value, Var a, Var b, double scalar,
              Eigen::Index offset) {
  return a.tape().push(op, std::move(value), a.id(), b.valid() ? b.id() : -1, scalar,
                       offset);
}

void Tape::accumulate(int id, const Eigen::MatrixXd& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var output) {
  if (output.tape_ != this) throw PreconditionError("output is not on this tape");
  const auto& out = nodes_[output.id_];
  if (out.value.rows() != 1 || out.value.cols() != 1) {
    throw PreconditionError("backward requires a scalar (1x1) output");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[output.id_].grad = Eigen::MatrixXd::Ones(1, 1);
  for (int i = output.id_; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    backprop_node(n);
  }
}

void Tape::backprop_node(const Node& n) {
  const Eigen::MatrixXd& dy = n.grad;
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
      break;
    case Op::kSlice: {
      Node& parent = nodes_[n.a];
      if (parent.grad.size() == 0) {
        parent.grad = Eigen::MatrixXd::Zero(parent.value.rows(), parent.value.cols());
      }
      Eigen::Map<Eigen::VectorXd>(parent.grad.data(), parent.grad.size())
          .segment(n.offset, dy.size()) +=
          Eigen::Map<const Eigen::VectorXd>(dy.data(), dy.size());
      break;
    }
    case Op::kMatmul:
      if (nodes_[n.a].needs_grad) accumulate(n.a, dy * nodes_[n.b].value.transpose());
      if (nodes_[n.b].needs_grad) accumulate(n.b, nodes_[n.a].value.transpose() * dy);
      break;
    case Op::kAdd:
      accumulate(n.a, dy);
      accumulate(n.b, dy);
      break;
    case Op::kSub:
      accumulate(n.a, dy);
      if (nodes_[n.b].needs_grad) accumulate(n.b, -dy);
      break;
    case Op::kMul:
      if (nodes_[n.a].needs_grad) accumulate(n.a, dy.cwiseProduct(nodes_[n.b].value));
      if (nodes_[n.b].needs_grad) accumulate(n.b, dy.cwiseProduct(nodes_[n.a].value));
      break;
    case Op::kScale:
      accumulate(n.a, n.scalar * dy);
      break;
    case Op::kAddScalar:
      accumulate(n.a, dy);
      break;
    case Op::kAddRow:
      accumulate(n.a, dy);
      if (nodes_[n.b].needs_grad) accumulate(n.b, dy.colwise().sum());
      break;
    case Op::kMulRow: {
      const auto& x = nodes_[n.a].value;
      const auto& r = nodes_[n.b].value;
      if (nodes_[n.a].needs_grad) {
        accumulate(n.a, (dy.array().rowwise() * r.row(0).array()).matrix());
      }
      if (nodes_[n.b].needs_grad) accumulate(n.b, dy.cwiseProduct(x).colwise().sum());
      break;
    }
    case Op::kTanh:
      accumulate(n.a, (dy.array() * (1.0 - n.value.array().square())).matrix());
      break;
    case Op::kRelu:
      accumulate(n.a,
                 (dy.array() * (nodes_[n.a].value.array() > 0.0).cast<double>()).matrix());
      break;
    case Op::kExp:
      accumulate(n.a, dy.cwiseProduct(n.value));
      break;
    case Op::kLog:
      accumulate(n.a, dy.cwiseQuotient(nodes_[n.a].value));
      break;
    case Op::kSquare:
      accumulate(n.a, 2.0 * dy.cwiseProduct(nodes_[n.a].value));
      break;
    case Op::kSum: {
      const auto& x = nodes_[n.a].value;
      accumulate(n.a, Eigen::MatrixXd::Constant(x.rows(), x.cols(), dy(0, 0)));
      break;
    }
    case Op::kMean: {
      const auto& x = nodes_[n.a].value;
      const double s = dy(0, 0) / static_cast<double>(x.size());
      accumulate(n.a, Eigen::MatrixXd::Constant(x.rows(), x.cols(), s));
      break;
    }
    case Op::kRowSum: {
      const auto& x = nodes_[n.a].value;
      accumulate(n.a, dy.col(0).replicate(1, x.cols()));
      break;
    }
    case Op::kWeightNorm: {
      const auto& v = nodes_[n.a].value;
      const auto& g = nodes_[n.b].value;
      Eigen::MatrixXd dv(v.rows(), v.cols());
      Eigen::MatrixXd dg(1, v.cols());
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        const double raw = v.col(j).norm();
        const double norm = std::max(raw, kNormFloor);
        const double proj = dy.col(j).dot(v.col(j));
        dg(0, j) = proj / norm;
        if (raw > kNormFloor) {
          dv.col(j) = (g(0, j) / norm) * (dy.col(j) - (proj / (norm * norm)) * v.col(j));
        } else {
          dv.col(j) = (g(0, j) / norm) * dy.col(j);
        }
      }
      if (nodes_[n.a].needs_grad) accumulate(n.a, dv);
      if (nodes_[n.b].needs_grad) accumulate(n.b, dg);
      break;
    }
  }
}

Eigen::MatrixXd Tape::gradient(Var v) const {
  const Node& n = nodes_[v.id_];
  if (n.grad.size() == 0) return Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

// -- primitives -- //

Var slice(Var flat, Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) {
  const auto& x = flat.value();
  if (offset < 0 || offset + rows * cols > x.size()) {
    throw ConfigError("slice out of range");
  }
  Eigen::MatrixXd out =
      Eigen::Map<const Eigen::MatrixXd>(x.data() + offset, rows, cols);
  return push_node(Op::kSlice, std::move(out), flat, Var(), 0.0, offset);
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ConfigError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                      std::to_string(b.rows()) + " differ");
  }
  return push_node(Op::kMatmul, a.value() * b.value(), a, b, 0.0, 0);
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  return push_node(Op::kAdd, a.value() + b.value(), a, b, 0.0, 0);
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  return push_node(Op::kSub, a.value() - b.value(), a, b, 0.0, 0);
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  return push_node(Op::kMul, a.value().cwiseProduct(b.value()), a, b, 0.0, 0);
}

Var scale(Var a, double s) { return push_node(Op::kScale, s * a.value(), a, Var(), s, 0); }

Var add_scalar(Var a, double s) {
  return push_node(Op::kAddScalar, (a.value().array() + s).matrix(), a, Var(), s, 0);
}

Var add_row(Var x, Var row) {
  require_same_tape(x, row);
  require_row(x, row, "add_row");
  Eigen::MatrixXd out = x.value().rowwise() + row.value().row(0);
  return push_node(Op::kAddRow, std::move(out), x, row, 0.0, 0);
}

Var mul_row(Var x, Var row) {
  require_same_tape(x, row);
  require_row(x, row, "mul_row");
  Eigen::MatrixXd out = (x.value().array().rowwise() * row.value().row(0).array()).matrix();
  return push_node(Op::kMulRow, std::move(out), x, row, 0.0, 0);
}

Var tanh(Var x) {
  return push_node(Op::kTanh, x.value().array().tanh().matrix(), x, Var(), 0.0, 0);
}

Var relu(Var x) {
  return push_node(Op::kRelu, x.value().cwiseMax(0.0), x, Var(), 0.0, 0);
}

Var exp(Var x) {
  return push_node(Op::kExp, x.value().array().exp().matrix(), x, Var(), 0.0, 0);
}

Var log(Var x) {
  return push_node(Op::kLog, x.value().array().log().matrix(), x, Var(), 0.0, 0);
}

Var square(Var x) {
  return push_node(Op::kSquare, x.value().array().square().matrix(), x, Var(), 0.0, 0);
}

Var sum(Var x) {
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = x.value().sum();
  return push_node(Op::kSum, std::move(out), x, Var(), 0.0, 0);
}

Var mean(Var x) {
  if (x.value().size() == 0) throw PreconditionError("mean of an empty node");
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = x.value().mean();
  return push_node(Op::kMean, std::move(out), x, Var(), 0.0, 0);
}

Var row_sum(Var x) {
  return push_node(Op::kRowSum, x.value().rowwise().sum(), x, Var(), 0.0, 0);
}

Var weight_norm(Var v, Var g) {
  require_same_tape(v, g);
  if (g.rows() != 1 || g.cols() != v.cols()) {
    throw ConfigError("weight_norm: scale must be 1x" + std::to_string(v.cols()));
  }
  const auto& vv = v.value();
  Eigen::MatrixXd w(vv.rows(), vv.cols());
  for (Eigen::Index j = 0; j < vv.cols(); ++j) {
    w.col(j) = (g.value()(0, j) / std::max(vv.col(j).norm(), kNormFloor)) * vv.col(j);
  }
  return push_node(Op::kWeightNorm, std::move(w), v, g, 0.0, 0);
}

Var unary(std::string_view name, Var x) {
  if (name == "tanh") return tanh(x);
  if (name == "relu") return relu(x);
  if (name == "exp") return exp(x);
  if (name == "log") return log(x);
  if (name == "square") return square(x);
  throw UnsupportedOperation("primitive '" + std::string(name) +
                             "' is not supported by the differentiation engine");
}

// -- parameter-vector interface -- //

ParamVar::ParamVar(Tape& tape, const ParameterVector& params)
    : tape_(&tape), params_(params), flat_(tape.variable(params.values())) {}

Var ParamVar::block(std::string_view name) const {
  auto it = cache_.find(std::string(name));
  if (it != cache_.end()) return it->second;
  const auto& e = params_.layout()->entry(name);
  Var v = slice(flat_, e.offset, e.rows, e.cols);
  cache_.emplace(std::string(name), v);
  return v;
}

ValueAndGrad value_and_grad(const Objective& objective, const ParameterVector& params) {
  Tape tape;
  ParamVar p(tape, params);
  Var out = objective(tape, p);
  if (!out.valid() || &out.tape() != &tape) {
    throw PreconditionError("objective must return a node on the supplied tape");
  }
  tape.backward(out);
  Eigen::MatrixXd g = tape.gradient(p.flat());
  return ValueAndGrad{out.scalar(),
                      params.with_values(Eigen::Map<const Eigen::VectorXd>(g.data(), g.size()))};
}

ParameterVector grad(const Objective& objective, const ParameterVector& params) {
  return value_and_grad(objective, params).gradient;
}

ParameterVector hvp_fd(const GradFn& grad_fn, const ParameterVector& params,
                       const ParameterVector& v, double eps) {
  if (!(eps > 0.0)) throw PreconditionError("hvp_fd requires eps > 0");
  if (v.size() != params.size()) throw ConfigError("hvp_fd: vector/params size mismatch");
  const ParameterVector plus = grad_fn(params.axpy(eps, v));
  const ParameterVector minus = grad_fn(params.axpy(-eps, v));
  ParameterVector out = (1.0 / (2.0 * eps)) * (plus - minus);
  if (!out.all_finite()) throw NumericError("hvp_fd produced a non-finite result");
  return out;
}

double default_fd_eps(const ParameterVector& params) {
  return 1e-5 * (1.0 + params.norm_inf());
}

}  // namespace mbmpo::ad
