#ifndef MBMPO_DIFFCORE_TAPE_HPP_
#define MBMPO_DIFFCORE_TAPE_HPP_

#include <Eigen/Dense>

#include <functional>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mbmpo/diffcore/parameter_vector.hpp"

namespace mbmpo::ad {

class Tape;

// Handle to a matrix-valued node on a Tape. Cheap to copy; valid as long as
// the owning tape lives.
class Var {
 public:
  Var() = default;

  const Eigen::MatrixXd& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;  // value of a 1x1 node
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

enum class Op {
  kLeaf,
  kConstant,
  kSlice,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kAddRow,
  kMulRow,
  kTanh,
  kRelu,
  kExp,
  kLog,
  kSquare,
  kSum,
  kMean,
  kRowSum,
  kWeightNorm,
};

// Wengert list of dense matrix operations. Nodes are appended in evaluation
// order, so a single reverse sweep is a valid topological order.
class Tape {
 public:
  Tape() { nodes_.reserve(64); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Eigen::MatrixXd value);
  Var constant(Eigen::MatrixXd value);

  // Reverse sweep from a 1x1 output. Gradients accumulate into every node
  // that depends on a variable.
  void backward(Var output);
  // d(output)/d(v) after backward(); zeros when v does not reach the output
  Eigen::MatrixXd gradient(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  friend Var push_node(Op, Eigen::MatrixXd, Var, Var, double, Eigen::Index);

  struct Node {
    Op op = Op::kConstant;
    int a = -1;
    int b = -1;
    double scalar = 0.0;
    Eigen::Index offset = 0;
    bool needs_grad = false;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
  };

  Var push(Op op, Eigen::MatrixXd value, int a, int b, double scalar,
           Eigen::Index offset);
  void backprop_node(const Node& n);
  void accumulate(int id, const Eigen::MatrixXd& g);

  std::vector<Node> nodes_;
};

// -- primitives -- //

Var slice(Var flat, Eigen::Index offset, Eigen::Index rows, Eigen::Index cols);
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_row(Var x, Var row);  // x + row broadcast over rows
Var mul_row(Var x, Var row);  // x .* row broadcast over rows
Var tanh(Var x);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
Var row_sum(Var x);  // N x M -> N x 1
// W(:,j) = g(j) * v(:,j) / |v(:,j)|
Var weight_norm(Var v, Var g);

// Name-based unary dispatch used for configurable activations.
// Throws UnsupportedOperation for anything outside the primitive set.
Var unary(std::string_view name, Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// -- parameter-vector interface -- //

// A ParameterVector placed on a tape as one flat leaf; named blocks are
// sliced out on demand and cached.
class ParamVar {
 public:
  ParamVar(Tape& tape, const ParameterVector& params);

  Var flat() const { return flat_; }
  Var block(std::string_view name) const;
  const ParameterVector& params() const { return params_; }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  ParameterVector params_;
  Var flat_;
  mutable std::unordered_map<std::string, Var> cache_;
};

using Objective = std::function<Var(Tape&, const ParamVar&)>;
using GradFn = std::function<ParameterVector(const ParameterVector&)>;

struct ValueAndGrad {
  double value = 0.0;
  ParameterVector gradient;
};

// Exact reverse-mode gradient of a scalar objective.
ValueAndGrad value_and_grad(const Objective& objective, const ParameterVector& params);
ParameterVector grad(const Objective& objective, const ParameterVector& params);

// Central-difference Hessian-vector product of a gradient map:
// (grad_fn(p + eps v) - grad_fn(p - eps v)) / (2 eps).
ParameterVector hvp_fd(const GradFn& grad_fn, const ParameterVector& params,
                       const ParameterVector& v, double eps);

// 1e-5 * (1 + |params|_inf)
double default_fd_eps(const ParameterVector& params);

}  // namespace mbmpo::ad

#endif  // MBMPO_DIFFCORE_TAPE_HPP_
