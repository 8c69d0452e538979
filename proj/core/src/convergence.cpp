#include "mer/convergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mer/error.hpp"

namespace mer {
namespace {

constexpr double kBracketOffset = 1e-12;
constexpr std::size_t kMaxBisections = 200;

void check_class_count(std::size_t class_count) {
  if (class_count < 2) throw InvalidInput("class count must be at least 2");
}

// m / ln((C - 1) / (m - 1)), with m - 1 passed separately to keep precision
// when m is close to 1.
double lambda_from_m(double m, double m_minus_one, double c_minus_one) {
  return m / std::log(c_minus_one / m_minus_one);
}

double objective(std::span<const double> p, std::size_t y, double lambda) {
  double plogp = 0.0;
  for (double v : p) {
    if (v > 0.0) plogp += v * std::log(v);
  }
  return -std::log(p[y]) + lambda * plogp;
}

}  // namespace

std::vector<double> ConvergedDistribution::expand(ClassLabel y) const {
  if (y.index >= class_count) throw InvalidInput("label out of range");
  std::vector<double> probs(class_count, negative);
  probs[y.index] = positive;
  return probs;
}

double lambda_for_cpp(double cpp, std::size_t class_count) {
  check_class_count(class_count);
  const double c = static_cast<double>(class_count);
  if (!(cpp > 1.0 / c)) {
    throw DomainError("CPP " + std::to_string(cpp) + " is not above 1/C; unreachable for finite lambda");
  }
  if (!(cpp < 1.0)) throw DomainError("CPP must be below 1, got " + std::to_string(cpp));
  const double m = 1.0 / cpp;
  return lambda_from_m(m, (1.0 - cpp) / cpp, c - 1.0);
}

double cpp_for_lambda(double lambda, std::size_t class_count) {
  check_class_count(class_count);
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw InvalidInput("lambda must be positive and finite, got " + std::to_string(lambda));
  }
  const double c_minus_one = static_cast<double>(class_count) - 1.0;
  // g(m) = lambda(m) - target is increasing in m: -target at m -> 1, +inf at m -> C.
  auto g = [&](double m) { return lambda_from_m(m, m - 1.0, c_minus_one) - lambda; };

  double lo = 1.0 + kBracketOffset;
  double hi = static_cast<double>(class_count) - kBracketOffset;
  if (g(lo) >= 0.0) return 1.0 / lo;

  for (std::size_t it = 0; it < kMaxBisections; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) return 1.0 / mid;
    const double gm = g(mid);
    if (gm == 0.0) return 1.0 / mid;
    (gm < 0.0 ? lo : hi) = mid;
  }
  throw NumericalError("bisection for CPP did not converge in 200 iterations");
}

ConvergedDistribution converged_distribution(double lambda, std::size_t class_count) {
  ConvergedDistribution out;
  out.class_count = class_count;
  out.positive = cpp_for_lambda(lambda, class_count);
  out.negative = out.positive * std::exp(-1.0 / (lambda * out.positive));
  return out;
}

SimplexPoint simplex_oracle(ClassLabel y, double lambda, std::size_t class_count,
                            const SimplexOracleOptions& options) {
  check_class_count(class_count);
  if (y.index >= class_count) throw InvalidInput("label out of range");
  if (!(lambda > 0.0)) throw InvalidInput("oracle requires lambda > 0");
  if (!(options.step > 0.0)) throw InvalidInput("oracle step must be positive");

  // The iterate is carried in log space: near the one-hot limit the negative
  // coordinates underflow long before their logarithms lose precision.
  std::vector<double> logp(class_count, -std::log(static_cast<double>(class_count)));
  std::vector<double> p(class_count, 1.0 / static_cast<double>(class_count));
  std::vector<double> next(class_count);
  double loss = objective(p, y.index, lambda);
  std::size_t rising = 0;

  SimplexPoint out;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    // Multiplicative-weights step: p_i <- p_i exp(-step * dL/dp_i), renormalized.
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < class_count; ++i) {
      double grad = lambda * (logp[i] + 1.0);
      if (i == y.index) grad -= std::exp(-logp[i]);
      logp[i] -= options.step * grad;
      top = std::max(top, logp[i]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < class_count; ++i) sum += std::exp(logp[i] - top);
    const double log_norm = top + std::log(sum);
    double update_sq = 0.0;
    for (std::size_t i = 0; i < class_count; ++i) {
      logp[i] -= log_norm;
      next[i] = std::exp(logp[i]);
      const double d = next[i] - p[i];
      update_sq += d * d;
    }
    p.swap(next);
    out.iterations = it + 1;

    const double new_loss = objective(p, y.index, lambda);
    if (!std::isfinite(new_loss)) {
      throw NumericalError("simplex oracle produced a non-finite loss; try a smaller step");
    }
    rising = new_loss > loss ? rising + 1 : 0;
    if (rising >= options.divergence_window) {
      throw NumericalError("simplex oracle diverged (loss rose for " +
                           std::to_string(options.divergence_window) +
                           " consecutive steps); try a smaller step");
    }
    loss = new_loss;
    if (std::sqrt(update_sq) < options.stop_tolerance) break;
  }
  out.probs = std::move(p);
  return out;
}

double cpp_from_ce(double mean_ce_loss) {
  if (!(mean_ce_loss >= 0.0)) {
    throw InvalidInput("mean cross-entropy must be non-negative, got " + std::to_string(mean_ce_loss));
  }
  return std::exp(-mean_ce_loss);
}

double ls_cpp(double lambda_ls, std::size_t class_count) {
  check_class_count(class_count);
  if (!(lambda_ls >= 0.0 && lambda_ls <= 1.0)) {
    throw InvalidInput("label smoothing weight must lie in [0, 1], got " + std::to_string(lambda_ls));
  }
  return 1.0 - lambda_ls + lambda_ls / static_cast<double>(class_count);
}

double ls_lambda_for_cpp(double cpp, std::size_t class_count) {
  check_class_count(class_count);
  const double c = static_cast<double>(class_count);
  if (!(cpp >= 1.0 / c && cpp <= 1.0)) {
    throw DomainError("CPP " + std::to_string(cpp) + " is outside [1/C, 1]");
  }
  return (1.0 - cpp) / (1.0 - 1.0 / c);
}

std::vector<CurvePoint> sample_curve(const std::vector<double>& lambdas,
                                     const std::vector<std::size_t>& class_counts) {
  std::vector<CurvePoint> points;
  points.reserve(lambdas.size() * class_counts.size());
  for (std::size_t c : class_counts) {
    for (double lambda : lambdas) points.push_back({lambda, cpp_for_lambda(lambda, c), c});
  }
  return points;
}

std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi >= lo)) throw InvalidInput("log grid needs 0 < lo <= hi");
  if (count == 0) return {};
  if (count == 1) return {lo};
  std::vector<double> grid(count);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) {
    grid[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  grid.front() = lo;
  grid.back() = hi;
  return grid;
}

}  // namespace mer
