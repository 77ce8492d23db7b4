#include "mbmpo/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "mbmpo/diffcore/tape.hpp"
#include "mbmpo/errors.hpp"

namespace mbmpo {

namespace {

Eigen::MatrixXd concat_cols(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx,
                            std::size_t begin, std::size_t end) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(i - begin) = m.row(idx[i]);
  return out;
}

Eigen::MatrixXd rows_from(const std::vector<double>& data, Eigen::Index rows, int cols) {
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) out(i, j) = data[i * cols + j];
  }
  return out;
}

struct ModelData {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::MatrixXd next_states;
};

ModelTrainStats train_model(DynamicsModel& model, const ModelData& data,
                            const ModelTrainConfig& config, Rng& rng) {
  const Eigen::Index n = data.states.rows();
  std::vector<Eigen::Index> sample(static_cast<std::size_t>(n));
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (auto& s : sample) s = pick(rng);

  Eigen::Index n_val = static_cast<Eigen::Index>(
      std::llround(config.validation_fraction * static_cast<double>(n)));
  n_val = std::clamp<Eigen::Index>(n_val, 1, std::max<Eigen::Index>(1, n - 1));
  const Eigen::Index n_train = n > 1 ? n - n_val : 1;

  // sample is already a random draw; the first n_train entries train
  const auto split = static_cast<std::size_t>(n_train);
  const std::size_t val_begin = n > 1 ? split : 0;
  const Eigen::MatrixXd s_tr = gather_rows(data.states, sample, 0, split);
  const Eigen::MatrixXd a_tr = gather_rows(data.actions, sample, 0, split);
  const Eigen::MatrixXd sn_tr = gather_rows(data.next_states, sample, 0, split);
  const Eigen::MatrixXd s_va = gather_rows(data.states, sample, val_begin, sample.size());
  const Eigen::MatrixXd a_va = gather_rows(data.actions, sample, val_begin, sample.size());
  const Eigen::MatrixXd sn_va = gather_rows(data.next_states, sample, val_begin, sample.size());

  // normalizers follow the model's own resample
  const Eigen::MatrixXd all_s = gather_rows(data.states, sample, 0, sample.size());
  const Eigen::MatrixXd all_a = gather_rows(data.actions, sample, 0, sample.size());
  const Eigen::MatrixXd all_sn = gather_rows(data.next_states, sample, 0, sample.size());
  model.in_norm = Normalizer::fit(concat_cols(all_s, all_a));
  model.out_norm = Normalizer::fit(all_sn - all_s);

  const Eigen::MatrixXd x_tr = model.in_norm.normalize(concat_cols(s_tr, a_tr));
  const Eigen::MatrixXd y_tr = model.out_norm.normalize(sn_tr - s_tr);

  ModelTrainStats stats;
  stats.train_size = n_train;
  stats.validation_size = s_va.rows();
  stats.initial_validation_loss = one_step_mse(model, s_va, a_va, sn_va);

  Adam adam = model.optimizer && model.optimizer->m.size() == model.params.size()
                  ? Adam(*model.optimizer, config.adam)
                  : Adam(model.params.size(), config.adam);
  RollingEarlyStopper stopper(config.persistence, config.patience,
                              config.min_rel_improvement);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(std::max(1, config.batch_size));
  const MlpSpec& spec = model.spec;

  double val = stats.initial_validation_loss;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t e = std::min(order.size(), b + batch);
      const Eigen::MatrixXd xb = gather_rows(x_tr, order, b, e);
      const Eigen::MatrixXd yb = gather_rows(y_tr, order, b, e);
      const double rows = static_cast<double>(e - b);
      auto objective = [&](ad::Tape& tape, const ad::ParamVar& p) {
        ad::Var pred = mlp_forward(spec, p, tape.constant(xb));
        return ad::scale(ad::sum(ad::square(ad::sub(pred, tape.constant(yb)))), 1.0 / rows);
      };
      const ParameterVector g = ad::grad(objective, model.params);
      model.params = adam.step(model.params, g);
    }
    val = one_step_mse(model, s_va, a_va, sn_va);
    if (!std::isfinite(val)) throw NumericError("model validation loss became non-finite");
    stats.epochs = epoch + 1;
    if (stopper.update(val)) {
      stats.stopped_early = true;
      break;
    }
  }
  model.optimizer = adam.state();
  stats.hit_max_epochs = !stats.stopped_early;
  stats.final_validation_loss = val;
  return stats;
}

}  // namespace

// -- normalizer -- //

Normalizer Normalizer::identity(int dim) {
  return Normalizer{Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Normalizer Normalizer::fit(const Eigen::MatrixXd& rows) {
  if (rows.rows() == 0) throw PreconditionError("cannot fit a normalizer on no data");
  Normalizer n;
  n.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - n.mean.transpose();
  n.std = (centered.colwise().squaredNorm() / static_cast<double>(rows.rows()))
              .cwiseSqrt()
              .transpose();
  n.std = n.std.cwiseMax(kStdFloor);
  return n;
}

Eigen::MatrixXd Normalizer::normalize(const Eigen::MatrixXd& rows) const {
  return (rows.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
}

Eigen::MatrixXd Normalizer::denormalize(const Eigen::MatrixXd& rows) const {
  return (rows.array().rowwise() * std.transpose().array()).matrix().rowwise() +
         mean.transpose();
}

// -- model -- //

DynamicsModel DynamicsModel::create(int state_dim, int action_dim,
                                    std::vector<int> hidden_sizes, Rng& rng) {
  DynamicsModel m;
  m.spec.input_dim = state_dim + action_dim;
  m.spec.hidden_sizes = std::move(hidden_sizes);
  m.spec.output_dim = state_dim;
  m.spec.activation = Activation::kRelu;
  m.spec.weight_normalized = true;
  m.params = init_mlp(m.spec, rng);
  m.in_norm = Normalizer::identity(state_dim + action_dim);
  m.out_norm = Normalizer::identity(state_dim);
  return m;
}

Eigen::MatrixXd DynamicsModel::predict_delta(const Eigen::MatrixXd& states,
                                             const Eigen::MatrixXd& actions) const {
  if (states.cols() != state_dim() || actions.cols() != action_dim() ||
      states.rows() != actions.rows()) {
    throw ConfigError("dynamics model: state/action batch shape mismatch");
  }
  const Eigen::MatrixXd x = in_norm.normalize(concat_cols(states, actions));
  return out_norm.denormalize(mlp_forward_batch(spec, params, x));
}

Eigen::MatrixXd DynamicsModel::predict(const Eigen::MatrixXd& states,
                                       const Eigen::MatrixXd& actions) const {
  return states + predict_delta(states, actions);
}

Eigen::VectorXd predict(const DynamicsModel& model, const Eigen::VectorXd& state,
                        const Eigen::VectorXd& action) {
  Eigen::MatrixXd s = state.transpose();
  Eigen::MatrixXd a = action.transpose();
  Eigen::VectorXd out = model.predict(s, a).row(0).transpose();
  if (!out.allFinite()) throw NumericError("dynamics prediction is not finite");
  return out;
}

// -- ensemble -- //

ModelEnsemble ModelEnsemble::create(int k, int state_dim, int action_dim,
                                    const std::vector<int>& hidden_sizes, Rng& rng) {
  if (k < 1) throw ConfigError("ensemble size must be at least 1");
  ModelEnsemble e;
  for (int i = 0; i < k; ++i) {
    e.models.push_back(DynamicsModel::create(state_dim, action_dim, hidden_sizes, rng));
  }
  return e;
}

void ModelEnsemble::validate() const {
  if (models.empty()) throw ConfigError("ensemble must contain at least one model");
  for (const auto& m : models) {
    if (!(m.spec == models.front().spec)) throw ConfigError("ensemble models must share a spec");
  }
  if (perturbation) {
    if (perturbation->b_max < 0.0 || perturbation->noise_std < 0.0) {
      throw ConfigError("perturbation b_max and noise_std must be non-negative");
    }
    if (perturbation->bias.size() != models.size()) {
      throw ConfigError("perturbation needs one bias per model");
    }
  }
}

Eigen::MatrixXd ModelEnsemble::predict(int k, const Eigen::MatrixXd& states,
                                       const Eigen::MatrixXd& actions, Rng* rng) const {
  if (k < 0 || k >= size()) throw PreconditionError("model index out of range");
  Eigen::MatrixXd out = models[k].predict(states, actions);
  if (perturbation) {
    if (rng == nullptr) throw PreconditionError("perturbed prediction requires an rng");
    const double b = perturbation->bias.at(static_cast<std::size_t>(k));
    const double sd = perturbation->noise_std;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      for (Eigen::Index j = 0; j < out.cols(); ++j) {
        out(i, j) += b + (sd > 0.0 ? sd * standard_normal(*rng) : 0.0);
      }
    }
  }
  if (!out.allFinite()) {
    throw NumericError("dynamics model " + std::to_string(k) + " produced a non-finite state");
  }
  return out;
}

ModelEnsemble resample_perturbation(ModelEnsemble ensemble, Rng& rng) {
  if (!ensemble.perturbation) throw PreconditionError("ensemble has no perturbation configured");
  auto& p = *ensemble.perturbation;
  p.bias.resize(ensemble.models.size());
  for (auto& b : p.bias) b = p.b_max > 0.0 ? uniform(rng, 0.0, p.b_max) : 0.0;
  return ensemble;
}

Eigen::MatrixXd ensemble_std(const ModelEnsemble& ensemble, const Eigen::MatrixXd& states,
                             const Eigen::MatrixXd& actions) {
  if (ensemble.size() < 2) throw PreconditionError("ensemble_std requires at least 2 models");
  const auto k = static_cast<double>(ensemble.size());
  // moments of deviations from model 0, so identical models give exactly zero
  const Eigen::MatrixXd ref = ensemble.models.front().predict(states, actions);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(states.rows(), states.cols());
  Eigen::MatrixXd sum_sq = sum;
  for (std::size_t i = 1; i < ensemble.models.size(); ++i) {
    const Eigen::MatrixXd d = ensemble.models[i].predict(states, actions) - ref;
    sum += d;
    sum_sq += d.cwiseAbs2();
  }
  const Eigen::MatrixXd mean = sum / k;
  return (sum_sq / k - mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
}

Eigen::VectorXd ensemble_std(const ModelEnsemble& ensemble, const Eigen::VectorXd& state,
                             const Eigen::VectorXd& action) {
  Eigen::MatrixXd s = state.transpose();
  Eigen::MatrixXd a = action.transpose();
  return ensemble_std(ensemble, s, a).row(0).transpose();
}

// -- buffer -- //

TransitionBuffer::TransitionBuffer(int state_dim, int action_dim)
    : state_dim_(state_dim), action_dim_(action_dim) {
  if (state_dim <= 0 || action_dim <= 0) throw ConfigError("buffer dimensions must be positive");
}

void TransitionBuffer::append(const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                              const Eigen::VectorXd& next_state) {
  if (state.size() != state_dim_ || next_state.size() != state_dim_ ||
      action.size() != action_dim_) {
    throw ConfigError("transition dimensions do not match the buffer");
  }
  states_.insert(states_.end(), state.data(), state.data() + state.size());
  actions_.insert(actions_.end(), action.data(), action.data() + action.size());
  next_states_.insert(next_states_.end(), next_state.data(),
                      next_state.data() + next_state.size());
  ++size_;
}

Eigen::MatrixXd TransitionBuffer::states() const { return rows_from(states_, size_, state_dim_); }
Eigen::MatrixXd TransitionBuffer::actions() const {
  return rows_from(actions_, size_, action_dim_);
}
Eigen::MatrixXd TransitionBuffer::next_states() const {
  return rows_from(next_states_, size_, state_dim_);
}

// -- early stopping -- //

RollingEarlyStopper::RollingEarlyStopper(double persistence, int patience,
                                         double min_rel_improvement)
    : persistence_(persistence), patience_(patience), min_rel_improvement_(min_rel_improvement) {
  if (!(persistence >= 0.0 && persistence < 1.0)) {
    throw ConfigError("persistence must lie in [0, 1)");
  }
  if (patience < 1) throw ConfigError("patience must be at least 1");
}

bool RollingEarlyStopper::update(double validation_loss) {
  ++epochs_;
  accumulator_ = persistence_ * accumulator_ + (1.0 - persistence_) * validation_loss;
  const double previous = average_;
  average_ = accumulator_ / (1.0 - std::pow(persistence_, static_cast<double>(epochs_)));
  if (epochs_ == 1) return false;
  if (average_ < previous * (1.0 - min_rel_improvement_)) {
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
  }
  return bad_epochs_ >= patience_;
}

// -- training -- //

double one_step_mse(const DynamicsModel& model, const Eigen::MatrixXd& states,
                    const Eigen::MatrixXd& actions, const Eigen::MatrixXd& next_states) {
  if (states.rows() == 0) return 0.0;
  return (next_states - model.predict(states, actions)).rowwise().squaredNorm().mean();
}

EnsembleTrainResult train_ensemble(const ModelEnsemble& ensemble, const TransitionBuffer& buffer,
                                   const ModelTrainConfig& config, Rng& rng) {
  if (buffer.empty()) throw PreconditionError("cannot train models on an empty buffer");
  ensemble.validate();
  if (config.batch_size < 1 || config.max_epochs < 1) {
    throw ConfigError("model batch size and max epochs must be positive");
  }
  if (!(config.validation_fraction > 0.0 && config.validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  const ModelData data{buffer.states(), buffer.actions(), buffer.next_states()};

  // one stream per model, drawn up front so results do not depend on order
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < ensemble.size(); ++k) seeds.push_back(draw_seed(rng));

  EnsembleTrainResult result{ensemble, {}};
  for (int k = 0; k < ensemble.size(); ++k) {
    Rng model_rng(seeds[static_cast<std::size_t>(k)]);
    result.stats.push_back(train_model(result.ensemble.models[k], data, config, model_rng));
  }
  return result;
}

}  // namespace mbmpo
