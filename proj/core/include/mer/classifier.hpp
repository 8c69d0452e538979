#pragma once

// A small multinomial classifier with hand-written backpropagation: either a
// single affine layer or affine -> ReLU -> affine. Trained by SGD with
// momentum, coupled weight decay, plateau learning-rate decay and a
// per-epoch lambda schedule.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mer/data.hpp"
#include "mer/error.hpp"
#include "mer/losses.hpp"

namespace mer {

enum class LossKind { kCrossEntropy, kMaxEntropy, kLabelSmoothing };

LossKind parse_loss_kind(std::string_view name);  // "ce" | "mer" | "ls"
std::string_view to_string(LossKind kind);

struct AffineLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct ModelParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;  // 0 selects the linear model
  std::size_t class_count = 0;
  std::vector<AffineLayer> layers;

  bool has_hidden() const noexcept { return hidden_dim > 0; }
  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Same shapes, all zeros.
  static ModelParams zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t class_count);
  /// Weights and biases uniform in +-1/sqrt(fan_in).
  static ModelParams initialize(std::size_t input_dim, std::size_t hidden_dim, std::size_t class_count,
                                std::uint64_t seed);
};

/// Logits, one row per sample. Throws InvalidInput on a feature-width mismatch.
Matrix forward(const ModelParams& params, const Matrix& features);

struct BackwardResult {
  ModelParams gradients;
  // Batch means. `total` is the objective that was differentiated.
  LossBreakdown loss;
};

/// Gradient of the mean per-sample loss with respect to every parameter.
/// `lambda` is the entropy weight for kMaxEntropy and the smoothing weight for
/// kLabelSmoothing; it is ignored for kCrossEntropy.
BackwardResult backward(const ModelParams& params, const Matrix& features,
                        std::span<const std::size_t> labels, LossKind kind, double lambda);

struct OptimizerState {
  ModelParams velocity;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  static OptimizerState for_params(const ModelParams& params, double learning_rate, double momentum,
                                   double weight_decay);
};

/// v <- momentum v + g + weight_decay theta;  theta <- theta - lr v.
/// Throws NumericalError (params untouched) if any gradient entry is non-finite.
void sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state);

/// Piecewise-constant lambda per epoch: the value of the last entry whose
/// threshold is <= epoch, or the first value before the first threshold.
class LambdaSchedule {
 public:
  LambdaSchedule() = default;
  explicit LambdaSchedule(std::vector<std::pair<std::size_t, double>> entries);
  static LambdaSchedule constant(double lambda);
  /// "e1:v1,e2:v2,..."
  static LambdaSchedule parse(std::string_view text);

  double at(std::size_t epoch) const;
  const std::vector<std::pair<std::size_t, double>>& entries() const noexcept { return entries_; }
  std::string to_string() const;

 private:
  std::vector<std::pair<std::size_t, double>> entries_;
};

struct TrainConfig {
  LossKind loss = LossKind::kCrossEntropy;
  LambdaSchedule lambda_schedule = LambdaSchedule::constant(0.0);
  std::size_t hidden_dim = 80;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  double learning_rate = 1e-2;
  double min_learning_rate = 1e-5;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t plateau_patience = 5;
  double plateau_threshold = 1e-4;
  double lr_decay_factor = 0.1;
  // Stop once a plateau is detected while already at min_learning_rate.
  bool stop_at_plateau = false;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EvalMetrics {
  double accuracy = 0.0;
  double mean_ce = 0.0;
  double mean_entropy = 0.0;
};

/// Argmax accuracy (ties go to the lowest class index), mean cross-entropy
/// and mean predicted entropy.
EvalMetrics evaluate(const ModelParams& params, const LabeledDataset& ds);

struct EpochMetrics {
  std::size_t epoch = 0;  // 0 is the freshly initialized model
  double lambda = 0.0;
  double learning_rate = 0.0;
  double train_loss = 0.0;  // objective at `lambda`
  double train_ce = 0.0;
  double train_entropy = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> eval_accuracy;
  std::optional<double> eval_ce;
};

struct TrainMetrics {
  std::vector<EpochMetrics> epochs;
  // Final-epoch training-set mean CE and its exp(-CE).
  double final_ce = 0.0;
  double experimental_cpp = 0.0;
  bool stopped_at_plateau = false;

  const EpochMetrics& final() const { return epochs.back(); }
};

struct TrainResult {
  ModelParams params;
  TrainMetrics metrics;
};

/// Raised by train() when the loss or a gradient turns non-finite. Carries the
/// metrics recorded up to the failing epoch.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, TrainMetrics partial)
      : NumericalError(what), partial_(std::move(partial)) {}
  const TrainMetrics& partial() const noexcept { return partial_; }

 private:
  TrainMetrics partial_;
};

/// Deterministic given config.seed. Throws NumericalError if the loss turns
/// non-finite.
TrainResult train(const TrainConfig& config, const LabeledDataset& train_set,
                  const LabeledDataset* eval_set = nullptr);

}  // namespace mer
