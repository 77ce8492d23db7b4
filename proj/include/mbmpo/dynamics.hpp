#ifndef MBMPO_DYNAMICS_HPP_
#define MBMPO_DYNAMICS_HPP_

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include "mbmpo/diffcore/adam.hpp"
#include "mbmpo/diffcore/mlp.hpp"
#include "mbmpo/diffcore/parameter_vector.hpp"
#include "mbmpo/rng.hpp"

namespace mbmpo {

// Per-feature affine normalizer. std is floored so constant columns stay finite.
struct Normalizer {
  static constexpr double kStdFloor = 1e-8;

  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static Normalizer identity(int dim);
  static Normalizer fit(const Eigen::MatrixXd& rows);

  Eigen::MatrixXd normalize(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd denormalize(const Eigen::MatrixXd& rows) const;
};

// Deterministic delta-state model: s' = s + denorm_out(net(norm_in([s, a]))).
struct DynamicsModel {
  MlpSpec spec;
  ParameterVector params;
  Normalizer in_norm;
  Normalizer out_norm;
  // optimizer moments carried from the previous training call (warm start)
  std::optional<AdamState> optimizer;

  // relu, weight-normalized, Glorot-initialized, identity normalizers
  static DynamicsModel create(int state_dim, int action_dim, std::vector<int> hidden_sizes,
                              Rng& rng);

  int state_dim() const { return spec.output_dim; }
  int action_dim() const { return spec.input_dim - spec.output_dim; }

  Eigen::MatrixXd predict_delta(const Eigen::MatrixXd& states,
                                const Eigen::MatrixXd& actions) const;
  Eigen::MatrixXd predict(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const;
};

// Unperturbed single-sample prediction.
Eigen::VectorXd predict(const DynamicsModel& model, const Eigen::VectorXd& state,
                        const Eigen::VectorXd& action);

// Biased Gaussian noise N(b_k, noise_std^2) added to every predicted
// coordinate of model k; b_k ~ U(0, b_max) is redrawn by resample_perturbation.
struct Perturbation {
  double b_max = 0.0;
  double noise_std = 0.1;
  std::vector<double> bias;
};

struct ModelEnsemble {
  std::vector<DynamicsModel> models;
  std::optional<Perturbation> perturbation;

  static ModelEnsemble create(int k, int state_dim, int action_dim,
                              const std::vector<int>& hidden_sizes, Rng& rng);

  int size() const { return static_cast<int>(models.size()); }
  void validate() const;

  // Next-state prediction of model k, including the perturbation when one is
  // configured (then `rng` must be non-null).
  Eigen::MatrixXd predict(int k, const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions,
                          Rng* rng) const;
};

// Redraws every model's bias from U(0, b_max).
ModelEnsemble resample_perturbation(ModelEnsemble ensemble, Rng& rng);

// Population std over models of the unperturbed predictions, per coordinate.
Eigen::VectorXd ensemble_std(const ModelEnsemble& ensemble, const Eigen::VectorXd& state,
                             const Eigen::VectorXd& action);
// Batched: one row of per-coordinate std per input row.
Eigen::MatrixXd ensemble_std(const ModelEnsemble& ensemble, const Eigen::MatrixXd& states,
                             const Eigen::MatrixXd& actions);

// Append-only store of real transitions (s, a, s').
class TransitionBuffer {
 public:
  TransitionBuffer(int state_dim, int action_dim);

  void append(const Eigen::VectorXd& state, const Eigen::VectorXd& action,
              const Eigen::VectorXd& next_state);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  Eigen::Index size() const { return size_; }
  bool empty() const { return size_ == 0; }

  Eigen::MatrixXd states() const;
  Eigen::MatrixXd actions() const;
  Eigen::MatrixXd next_states() const;

 private:
  int state_dim_;
  int action_dim_;
  Eigen::Index size_ = 0;
  std::vector<double> states_;
  std::vector<double> actions_;
  std::vector<double> next_states_;
};

// Rolling-average validation monitor. After each epoch the accumulator
// r <- p * r + (1 - p) * v is updated from r = 0 and the average is the
// bias-corrected r / (1 - p^t). An epoch is bad when the average did not fall
// below (1 - min_rel_improvement) times its previous value; the monitor asks
// to stop after `patience` consecutive bad epochs.
class RollingEarlyStopper {
 public:
  RollingEarlyStopper(double persistence, int patience, double min_rel_improvement);

  // returns true when training should stop
  bool update(double validation_loss);
  double average() const { return average_; }
  int epochs_seen() const { return epochs_; }

 private:
  double persistence_;
  int patience_;
  double min_rel_improvement_;
  double accumulator_ = 0.0;
  double average_ = 0.0;
  int bad_epochs_ = 0;
  int epochs_ = 0;
};

struct ModelTrainConfig {
  int batch_size = 500;
  int max_epochs = 100;
  AdamConfig adam;
  double validation_fraction = 0.2;
  double persistence = 0.95;
  int patience = 5;
  double min_rel_improvement = 0.01;
};

struct ModelTrainStats {
  int epochs = 0;
  bool stopped_early = false;
  bool hit_max_epochs = false;
  double initial_validation_loss = 0.0;
  double final_validation_loss = 0.0;
  Eigen::Index train_size = 0;
  Eigen::Index validation_size = 0;
};

struct EnsembleTrainResult {
  ModelEnsemble ensemble;
  std::vector<ModelTrainStats> stats;
};

// One-step loss: mean over rows of |s' - f(s, a)|^2.
double one_step_mse(const DynamicsModel& model, const Eigen::MatrixXd& states,
                    const Eigen::MatrixXd& actions, const Eigen::MatrixXd& next_states);

// Trains every model independently from its current (warm-start) parameters
// and optimizer state on its own bootstrap resample of the buffer, with an 80/20 train/validation
// split, per-resample normalizers and rolling-validation early stopping.
EnsembleTrainResult train_ensemble(const ModelEnsemble& ensemble, const TransitionBuffer& buffer,
                                   const ModelTrainConfig& config, Rng& rng);

}  // namespace mbmpo

#endif  // MBMPO_DYNAMICS_HPP_
