#pragma once

// Convergence analysis of the entropy-regularized loss on the probability
// simplex. With every negative class sharing one probability, the minimizer of
//
//   -ln p_y + lambda * sum_i p_i ln p_i   s.t.  sum_i p_i = 1
//
// satisfies p_neg = p_y exp(-1 / (lambda p_y)) and, with m = 1 / p_y,
//
//   lambda = m / ln((C - 1) / (m - 1)).
//
// The positive-class probability at that point is the "convergence
// probability of the positive class" (CPP).

#include <cstddef>
#include <vector>

#include "mer/losses.hpp"

namespace mer {

struct CurvePoint {
  double lambda = 0.0;
  double cpp = 0.0;
  std::size_t class_count = 0;
};

struct ConvergedDistribution {
  double positive = 0.0;
  double negative = 0.0;
  std::size_t class_count = 0;

  /// Expands to a full distribution with the positive class at `y`.
  std::vector<double> expand(ClassLabel y) const;
};

/// A point on the simplex, nonnegative and summing to 1 within 1e-9.
struct SimplexPoint {
  std::vector<double> probs;
  std::size_t iterations = 0;
};

struct SimplexOracleOptions {
  double step = 0.05;
  std::size_t max_iterations = 200000;
  double stop_tolerance = 1e-12;
  // Consecutive loss increases tolerated before declaring divergence.
  std::size_t divergence_window = 100;
};

/// Closed form lambda for a target CPP. Throws DomainError unless 1/C < cpp < 1.
double lambda_for_cpp(double cpp, std::size_t class_count);

/// Inverse of lambda_for_cpp by bisection on m = 1/p_y over (1 + 1e-12, C).
/// Strictly decreasing in both lambda and C. For very small lambda the root
/// falls below the bracket and the result saturates at 1 / (1 + 1e-12).
/// Throws InvalidInput for lambda <= 0 (the relation is undefined there).
double cpp_for_lambda(double lambda, std::size_t class_count);

ConvergedDistribution converged_distribution(double lambda, std::size_t class_count);

/// Direct minimization of the constrained objective by exponentiated-gradient
/// descent from the uniform point. Independent of the closed form above.
/// Stable while step * lambda stays well below 2.
/// Throws NumericalError when the loss rises for `divergence_window`
/// consecutive steps.
SimplexPoint simplex_oracle(ClassLabel y, double lambda, std::size_t class_count,
                            const SimplexOracleOptions& options = {});

/// Experimental CPP from a converged mean cross-entropy: exp(-ce).
double cpp_from_ce(double mean_ce_loss);

/// Positive-class probability of the label-smoothing target: 1 - a + a/C.
double ls_cpp(double lambda_ls, std::size_t class_count);

/// Exact inverse of ls_cpp: the smoothing weight whose target puts `cpp` on the
/// positive class.
double ls_lambda_for_cpp(double cpp, std::size_t class_count);

/// One CurvePoint per (lambda, C) pair, C-major.
std::vector<CurvePoint> sample_curve(const std::vector<double>& lambdas,
                                     const std::vector<std::size_t>& class_counts);

/// `count` log-spaced values covering [lo, hi].
std::vector<double> log_spaced(double lo, double hi, std::size_t count);

}  // namespace mer
