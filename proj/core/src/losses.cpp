#include "mer/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mer/error.hpp"

namespace mer {
namespace {

double floored_log(double p) { return std::log(std::max(p, kProbFloor)); }

// sum_i p_i ln p_i with 0 ln 0 = 0.
double neg_entropy(std::span<const double> p) {
  double acc = 0.0;
  for (double pi : p) {
    if (pi > 0.0) acc += pi * floored_log(pi);
  }
  return acc;
}

void check_label(std::size_t class_count, ClassLabel y) {
  if (y.index >= class_count) {
    throw InvalidInput("label " + std::to_string(y.index) + " out of range for " +
                       std::to_string(class_count) + " classes");
  }
}

void check_lambda(double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw InvalidInput("lambda must be finite and non-negative, got " + std::to_string(lambda));
  }
}

void check_smoothing(double lambda_ls) {
  if (!(lambda_ls >= 0.0 && lambda_ls <= 1.0)) {
    throw InvalidInput("label smoothing weight must lie in [0, 1], got " + std::to_string(lambda_ls));
  }
}

}  // namespace

LogitVector::LogitVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.size() < 2) throw InvalidInput("logit vector needs at least 2 classes");
  for (double v : values_) {
    if (!std::isfinite(v)) throw InvalidInput("logit vector contains a non-finite entry");
  }
}

ProbDistribution::ProbDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) throw InvalidInput("distribution needs at least 2 classes");
  double sum = 0.0;
  for (double v : probs_) {
    if (!std::isfinite(v) || v < 0.0) {
      throw InvalidInput("distribution entries must be finite and non-negative");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    throw InvalidInput("distribution sums to " + std::to_string(sum) + ", not 1");
  }
}

ProbDistribution ProbDistribution::uniform(std::size_t class_count) {
  return ProbDistribution(std::vector<double>(class_count, 1.0 / static_cast<double>(class_count)));
}

ProbDistribution ProbDistribution::one_hot(std::size_t class_count, std::size_t index) {
  if (index >= class_count) throw InvalidInput("one-hot index out of range");
  std::vector<double> probs(class_count, 0.0);
  probs[index] = 1.0;
  return ProbDistribution(std::move(probs));
}

void softmax_into(std::span<const double> z, std::span<double> out) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - zmax);
    sum += out[i];
  }
  const double inv = 1.0 / sum;
  for (double& v : out) v *= inv;
}

ProbDistribution softmax(const LogitVector& z) {
  std::vector<double> probs(z.size());
  softmax_into(z.values(), probs);
  return ProbDistribution(std::move(probs));
}

SquareMatrix softmax_jacobian(const ProbDistribution& p) {
  const std::size_t n = p.size();
  SquareMatrix jac{n, std::vector<double>(n * n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      jac(i, j) = (i == j) ? p[j] * (1.0 - p[j]) : -p[i] * p[j];
    }
  }
  return jac;
}

double cross_entropy(const ProbDistribution& p, ClassLabel y) {
  check_label(p.size(), y);
  return -floored_log(p[y.index]);
}

double entropy(const ProbDistribution& p) { return -neg_entropy(p.probs()); }

LossBreakdown regularized_loss(const ProbDistribution& p, ClassLabel y, double lambda) {
  check_lambda(lambda);
  LossBreakdown out;
  out.ce = cross_entropy(p, y);
  out.entropy = entropy(p);
  out.lambda = lambda;
  out.total = out.ce - lambda * out.entropy;
  return out;
}

double cell_function(double q, const ProbDistribution& p, double lambda) {
  if (!(q > 0.0) || q > 1.0) {
    throw InvalidInput("cell function argument must lie in (0, 1], got " + std::to_string(q));
  }
  return q * (1.0 + lambda * std::log(q) - lambda * neg_entropy(p.probs()));
}

GradientVector regularized_gradient(const ProbDistribution& p, ClassLabel y, double lambda) {
  check_label(p.size(), y);
  check_lambda(lambda);
  const double plogp = neg_entropy(p.probs());
  GradientVector grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    grad[i] = pi * (1.0 + lambda * floored_log(pi) - lambda * plogp);
  }
  grad[y.index] -= 1.0;
  return grad;
}

double label_smoothing_loss(const ProbDistribution& p, ClassLabel y, double lambda_ls) {
  check_label(p.size(), y);
  check_smoothing(lambda_ls);
  const double off = lambda_ls / static_cast<double>(p.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double target = (i == y.index) ? 1.0 - lambda_ls + off : off;
    if (target != 0.0) loss -= target * floored_log(p[i]);
  }
  return loss;
}

GradientVector label_smoothing_gradient(const ProbDistribution& p, ClassLabel y, double lambda_ls) {
  check_label(p.size(), y);
  check_smoothing(lambda_ls);
  const double off = lambda_ls / static_cast<double>(p.size());
  GradientVector grad(p.probs().begin(), p.probs().end());
  for (double& g : grad) g -= off;
  grad[y.index] -= 1.0 - lambda_ls;
  return grad;
}

}  // namespace mer
