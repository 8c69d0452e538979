#pragma once
// Finite-difference oracles shared by the unit and acceptance suites.
//
// Errors are norm-wise: ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8).
// Per-entry relative error is meaningless for near-zero components.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mer/classifier.hpp"
#include "mer/losses.hpp"

namespace mer::testing {

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

inline std::vector<double> random_logits(std::mt19937_64& rng, std::size_t c, double scale = 2.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> z(c);
  for (double& v : z) v = n(rng);
  return z;
}

/// Per-sample objective evaluated straight from the loss functions.
inline double sample_loss(const ProbDistribution& p, ClassLabel y, LossKind kind, double lambda) {
  switch (kind) {
    case LossKind::kCrossEntropy:
      return cross_entropy(p, y);
    case LossKind::kMaxEntropy:
      return regularized_loss(p, y, lambda).total;
    case LossKind::kLabelSmoothing:
      return label_smoothing_loss(p, y, lambda);
  }
  return 0.0;
}

/// Worst error of regularized_gradient against central differences of
/// regularized_loss(softmax(z)) over `cases` random (z, y, lambda), C in [2, 50].
inline double logit_gradient_worst_error(std::size_t cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> classes(2, 50);
  std::uniform_real_distribution<double> lambdas(0.0, 3.0);
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t t = 0; t < cases; ++t) {
    const std::size_t c = classes(rng);
    auto z = random_logits(rng, c);
    const ClassLabel y{std::uniform_int_distribution<std::size_t>(0, c - 1)(rng)};
    const double lambda = lambdas(rng);
    std::vector<double> numeric(c);
    for (std::size_t i = 0; i < c; ++i) {
      const double saved = z[i];
      z[i] = saved + h;
      const double up = regularized_loss(softmax(LogitVector(z)), y, lambda).total;
      z[i] = saved - h;
      const double down = regularized_loss(softmax(LogitVector(z)), y, lambda).total;
      z[i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
    const auto analytic = regularized_gradient(softmax(LogitVector(z)), y, lambda);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

inline double batch_loss(const ModelParams& params, const Matrix& x, const std::vector<std::size_t>& labels,
                         LossKind kind, double lambda) {
  const Matrix logits = forward(params, x);
  double total = 0;
  std::vector<double> row(params.class_count);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    for (std::size_t c = 0; c < params.class_count; ++c) row[c] = logits(r, Eigen::Index(c));
    total += sample_loss(softmax(LogitVector(row)), ClassLabel{labels[r]}, kind, lambda);
  }
  return total / double(labels.size());
}

struct ModelCase {
  ModelParams params;
  Matrix features;
  std::vector<std::size_t> labels;
  double lambda = 0.0;
};

/// A random small model and batch. Draws again while any hidden
/// pre-activation lies within `kink_margin` of zero, so the finite-difference
/// stencil never straddles a rectifier kink.
inline ModelCase random_model_case(std::mt19937_64& rng, LossKind kind, double kink_margin = 1e-3) {
  std::uniform_int_distribution<std::size_t> classes(2, 9), dims(1, 8), hiddens(0, 12), rows(1, 6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    ModelCase mc;
    const std::size_t c = classes(rng), d = dims(rng), hdim = hiddens(rng), m = rows(rng);
    mc.params = ModelParams::initialize(d, hdim, c, rng());
    // Spread the weights beyond the small init scale so the softmax is not flat.
    for (auto& layer : mc.params.layers) {
      layer.weight *= 2.0;
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = 0.5 * n(rng);
    }
    mc.features = Matrix(m, d);
    for (Eigen::Index i = 0; i < mc.features.size(); ++i) mc.features.data()[i] = n(rng);
    for (std::size_t i = 0; i < m; ++i) mc.labels.push_back(std::uniform_int_distribution<std::size_t>(0, c - 1)(rng));
    mc.lambda = kind == LossKind::kLabelSmoothing ? std::uniform_real_distribution<double>(0.0, 1.0)(rng)
                                                  : std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    if (mc.params.has_hidden()) {
      const auto& l0 = mc.params.layers[0];
      const Matrix pre = (mc.features * l0.weight.transpose()).rowwise() + l0.bias.transpose();
      if (pre.cwiseAbs().minCoeff() < kink_margin) continue;
    }
    return mc;
  }
}

/// Norm-wise error of backward() against central differences over every parameter.
inline double model_gradient_error(const ModelCase& mc, LossKind kind, double h = 1e-6) {
  const auto br = backward(mc.params, mc.features, mc.labels, kind, mc.lambda);
  ModelParams probe = mc.params;
  std::vector<double> analytic, numeric;
  auto visit = [&](double& slot, double grad) {
    const double saved = slot;
    slot = saved + h;
    const double up = batch_loss(probe, mc.features, mc.labels, kind, mc.lambda);
    slot = saved - h;
    const double down = batch_loss(probe, mc.features, mc.labels, kind, mc.lambda);
    slot = saved;
    analytic.push_back(grad);
    numeric.push_back((up - down) / (2 * h));
  };
  for (std::size_t k = 0; k < probe.layers.size(); ++k) {
    auto& layer = probe.layers[k];
    const auto& g = br.gradients.layers[k];
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) visit(layer.weight.data()[i], g.weight.data()[i]);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) visit(layer.bias[i], g.bias[i]);
  }
  return relative_error(analytic, numeric);
}

}  // namespace mer::testing
