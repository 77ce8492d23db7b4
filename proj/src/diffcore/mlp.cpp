#include "mbmpo/diffcore/mlp.hpp"

#include <cmath>
#include <memory>

#include "mbmpo/errors.hpp"

namespace mbmpo {

namespace {

constexpr double kNormFloor = 1e-12;

std::string layer_key(std::string_view prefix, int layer, const char* what) {
  return std::string(prefix) + "l" + std::to_string(layer) + "." + what;
}

int fan_in(const MlpSpec& spec, int layer) {
  return layer == 0 ? spec.input_dim : spec.hidden_sizes[layer - 1];
}

int fan_out(const MlpSpec& spec, int layer) {
  return layer == spec.num_layers() - 1 ? spec.output_dim : spec.hidden_sizes[layer];
}

Eigen::MatrixXd effective_weight(const MlpSpec& spec, const ParameterVector& params,
                                 std::string_view prefix, int layer) {
  if (!spec.weight_normalized) return params.block(layer_key(prefix, layer, "w"));
  const auto v = params.block(layer_key(prefix, layer, "v"));
  const auto g = params.block(layer_key(prefix, layer, "g"));
  Eigen::MatrixXd w(v.rows(), v.cols());
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    w.col(j) = (g(0, j) / std::max(v.col(j).norm(), kNormFloor)) * v.col(j);
  }
  return w;
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw UnsupportedOperation("activation '" + std::string(name) + "' is not supported");
}

std::string_view activation_name(Activation a) {
  return a == Activation::kTanh ? "tanh" : "relu";
}

void MlpSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0) {
    throw ConfigError("mlp input and output dimensions must be positive");
  }
  for (int h : hidden_sizes) {
    if (h <= 0) throw ConfigError("mlp hidden sizes must be positive");
  }
}

Eigen::Index MlpSpec::num_params() const {
  Eigen::Index n = 0;
  for (int l = 0; l < num_layers(); ++l) {
    const Eigen::Index in = fan_in(*this, l);
    const Eigen::Index out = fan_out(*this, l);
    n += in * out + out + (weight_normalized ? out : 0);
  }
  return n;
}

void append_mlp_layout(ParamLayout& layout, const MlpSpec& spec, std::string_view prefix) {
  spec.validate();
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int in = fan_in(spec, l);
    const int out = fan_out(spec, l);
    if (spec.weight_normalized) {
      layout.add(layer_key(prefix, l, "v"), in, out);
      layout.add(layer_key(prefix, l, "g"), 1, out);
    } else {
      layout.add(layer_key(prefix, l, "w"), in, out);
    }
    layout.add(layer_key(prefix, l, "b"), 1, out);
  }
}

LayoutPtr make_mlp_layout(const MlpSpec& spec) {
  auto layout = std::make_shared<ParamLayout>();
  append_mlp_layout(*layout, spec, "");
  return layout;
}

std::map<std::string, Eigen::MatrixXd> init_mlp_blocks(const MlpSpec& spec,
                                                       std::string_view prefix, Rng& rng) {
  spec.validate();
  std::map<std::string, Eigen::MatrixXd> blocks;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int in = fan_in(spec, l);
    const int out = fan_out(spec, l);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Eigen::MatrixXd w(in, out);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = uniform(rng, -limit, limit);
    }
    if (spec.weight_normalized) {
      Eigen::MatrixXd g(1, out);
      for (int j = 0; j < out; ++j) g(0, j) = w.col(j).norm();
      blocks[layer_key(prefix, l, "v")] = w;
      blocks[layer_key(prefix, l, "g")] = g;
    } else {
      blocks[layer_key(prefix, l, "w")] = w;
    }
    blocks[layer_key(prefix, l, "b")] = Eigen::MatrixXd::Zero(1, out);
  }
  return blocks;
}

ParameterVector init_mlp(const MlpSpec& spec, Rng& rng) {
  return ParameterVector::flatten(make_mlp_layout(spec), init_mlp_blocks(spec, "", rng));
}

Eigen::MatrixXd mlp_forward_batch(const MlpSpec& spec, const ParameterVector& params,
                                  const Eigen::MatrixXd& inputs, std::string_view prefix) {
  if (inputs.cols() != spec.input_dim) {
    throw ConfigError("mlp input has " + std::to_string(inputs.cols()) +
                      " columns, expected " + std::to_string(spec.input_dim));
  }
  Eigen::MatrixXd h = inputs;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const Eigen::MatrixXd w = effective_weight(spec, params, prefix, l);
    const auto b = params.block(layer_key(prefix, l, "b"));
    Eigen::MatrixXd z = h * w;
    z.rowwise() += b.row(0);
    if (l + 1 < spec.num_layers()) {
      if (spec.activation == Activation::kTanh) {
        h = z.array().tanh().matrix();
      } else {
        h = z.cwiseMax(0.0);
      }
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Eigen::VectorXd mlp_forward(const MlpSpec& spec, const ParameterVector& params,
                            const Eigen::VectorXd& input, std::string_view prefix) {
  if (input.size() != spec.input_dim) {
    throw ConfigError("mlp input has length " + std::to_string(input.size()) +
                      ", expected " + std::to_string(spec.input_dim));
  }
  Eigen::MatrixXd row = input.transpose();
  return mlp_forward_batch(spec, params, row, prefix).row(0).transpose();
}

ad::Var mlp_forward(const MlpSpec& spec, const ad::ParamVar& params, ad::Var inputs,
                    std::string_view prefix) {
  if (inputs.cols() != spec.input_dim) {
    throw ConfigError("mlp input has " + std::to_string(inputs.cols()) +
                      " columns, expected " + std::to_string(spec.input_dim));
  }
  ad::Var h = inputs;
  for (int l = 0; l < spec.num_layers(); ++l) {
    ad::Var w = spec.weight_normalized
                    ? ad::weight_norm(params.block(layer_key(prefix, l, "v")),
                                      params.block(layer_key(prefix, l, "g")))
                    : params.block(layer_key(prefix, l, "w"));
    ad::Var z = ad::add_row(ad::matmul(h, w), params.block(layer_key(prefix, l, "b")));
    if (l + 1 < spec.num_layers()) {
      h = spec.activation == Activation::kTanh ? ad::tanh(z) : ad::relu(z);
    } else {
      h = z;
    }
  }
  return h;
}

}  // namespace mbmpo
