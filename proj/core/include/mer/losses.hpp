#pragma once

// Softmax, cross-entropy, entropy and the maximum-entropy regularized loss,
// together with their gradients with respect to the logits.
//
// All logarithms are natural. Probabilities are clamped to kProbFloor inside
// every log, and 0 * ln 0 is taken to be 0.

#include <cstddef>
#include <span>
#include <vector>

namespace mer {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kSimplexTolerance = 1e-9;

/// Raw per-class scores. At least two classes, all entries finite.
class LogitVector {
 public:
  explicit LogitVector(std::vector<double> values);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  std::vector<double> values_;
};

/// A point on the probability simplex: entries in [0, 1] summing to 1
/// within kSimplexTolerance.
class ProbDistribution {
 public:
  explicit ProbDistribution(std::vector<double> probs);

  static ProbDistribution uniform(std::size_t class_count);
  static ProbDistribution one_hot(std::size_t class_count, std::size_t index);

  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

 private:
  std::vector<double> probs_;
};

struct ClassLabel {
  std::size_t index = 0;
};

/// Per-sample (or batch-mean) loss decomposition.
///
/// For the entropy-regularized loss `total == ce - lambda * entropy`. When a
/// breakdown describes a label-smoothing objective, `lambda` holds the
/// smoothing weight and `total` the smoothed cross-entropy instead.
struct LossBreakdown {
  double ce = 0.0;
  double entropy = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

using GradientVector = std::vector<double>;

/// Dense row-major C x C matrix.
struct SquareMatrix {
  std::size_t dim = 0;
  std::vector<double> data;

  double operator()(std::size_t row, std::size_t col) const { return data[row * dim + col]; }
  double& operator()(std::size_t row, std::size_t col) { return data[row * dim + col]; }
};

/// Max-subtracted softmax; invariant to adding a constant to every logit.
ProbDistribution softmax(const LogitVector& z);

/// Writes softmax(z) into `out` without validation. `out.size()` must equal
/// `z.size()`. Used by the batched classifier kernels.
void softmax_into(std::span<const double> z, std::span<double> out);

/// d p_i / d z_j: p_j (1 - p_j) on the diagonal, -p_i p_j elsewhere.
SquareMatrix softmax_jacobian(const ProbDistribution& p);

/// -ln(max(p_y, kProbFloor)).
double cross_entropy(const ProbDistribution& p, ClassLabel y);

/// Shannon entropy in nats.
double entropy(const ProbDistribution& p);

/// L = CE - lambda * H. Throws InvalidInput for lambda < 0.
LossBreakdown regularized_loss(const ProbDistribution& p, ClassLabel y, double lambda);

/// f(q) = q (1 + lambda ln q - lambda sum_j p_j ln p_j).
double cell_function(double q, const ProbDistribution& p, double lambda);

/// dL/dz_i = f(p_i) - [i == y]. For lambda == 0 this is exactly p - onehot(y).
GradientVector regularized_gradient(const ProbDistribution& p, ClassLabel y, double lambda);

/// Cross-entropy against the smoothed target (1 - a) onehot(y) + a / C.
double label_smoothing_loss(const ProbDistribution& p, ClassLabel y, double lambda_ls);

/// d/dz of label_smoothing_loss(softmax(z)) = p - target.
GradientVector label_smoothing_gradient(const ProbDistribution& p, ClassLabel y, double lambda_ls);

}  // namespace mer
