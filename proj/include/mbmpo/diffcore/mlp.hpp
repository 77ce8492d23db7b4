#ifndef MBMPO_DIFFCORE_MLP_HPP_
#define MBMPO_DIFFCORE_MLP_HPP_

#include <Eigen/Dense>

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mbmpo/diffcore/parameter_vector.hpp"
#include "mbmpo/diffcore/tape.hpp"
#include "mbmpo/rng.hpp"

namespace mbmpo {

enum class Activation { kTanh, kRelu };

// throws UnsupportedOperation for names outside {tanh, relu}
Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

// Fully connected network shape. Layer i stores "l<i>.w" (fan_in x fan_out)
// and "l<i>.b" (1 x fan_out); weight-normalized layers store a direction
// "l<i>.v" and per-unit scale "l<i>.g" instead of "l<i>.w".
struct MlpSpec {
  int input_dim = 1;
  std::vector<int> hidden_sizes;
  int output_dim = 1;
  Activation activation = Activation::kTanh;
  bool weight_normalized = false;

  void validate() const;
  Eigen::Index num_params() const;
  int num_layers() const { return static_cast<int>(hidden_sizes.size()) + 1; }

  bool operator==(const MlpSpec&) const = default;
};

void append_mlp_layout(ParamLayout& layout, const MlpSpec& spec, std::string_view prefix);
LayoutPtr make_mlp_layout(const MlpSpec& spec);

// Glorot-uniform weights, zero biases. A weight-normalized layer starts with
// g equal to the column norm of v so that the effective weight equals v.
std::map<std::string, Eigen::MatrixXd> init_mlp_blocks(const MlpSpec& spec,
                                                       std::string_view prefix, Rng& rng);
ParameterVector init_mlp(const MlpSpec& spec, Rng& rng);

// Plain evaluation. Rows of `inputs` are samples.
Eigen::MatrixXd mlp_forward_batch(const MlpSpec& spec, const ParameterVector& params,
                                  const Eigen::MatrixXd& inputs,
                                  std::string_view prefix = "");
Eigen::VectorXd mlp_forward(const MlpSpec& spec, const ParameterVector& params,
                            const Eigen::VectorXd& input, std::string_view prefix = "");

// Differentiable evaluation on a tape.
ad::Var mlp_forward(const MlpSpec& spec, const ad::ParamVar& params, ad::Var inputs,
                    std::string_view prefix = "");

}  // namespace mbmpo

#endif  // MBMPO_DIFFCORE_MLP_HPP_
