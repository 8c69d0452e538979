#include <random>

#include <benchmark/benchmark.h>

#include "mer/classifier.hpp"
#include "mer/convergence.hpp"
#include "mer/losses.hpp"

namespace {

std::vector<double> logits(std::size_t c) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<double> z(c);
  for (double& v : z) v = n(rng);
  return z;
}

void BM_Softmax(benchmark::State& state) {
  const auto z = logits(static_cast<std::size_t>(state.range(0)));
  std::vector<double> p(z.size());
  for (auto _ : state) {
    mer::softmax_into(z, p);
    benchmark::DoNotOptimize(p.data());
  }
}
BENCHMARK(BM_Softmax)->Arg(20)->Arg(200)->Arg(3665);

void BM_RegularizedGradient(benchmark::State& state) {
  const auto p = mer::softmax(mer::LogitVector(logits(static_cast<std::size_t>(state.range(0)))));
  for (auto _ : state) benchmark::DoNotOptimize(mer::regularized_gradient(p, mer::ClassLabel{3}, 0.3));
}
BENCHMARK(BM_RegularizedGradient)->Arg(20)->Arg(200)->Arg(3665);

void BM_CppForLambda(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  double lambda = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mer::cpp_for_lambda(lambda, c));
    lambda = lambda < 5.0 ? lambda * 1.01 : 0.1;
  }
}
BENCHMARK(BM_CppForLambda)->Arg(20)->Arg(3665);

void BM_SimplexOracle(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(mer::simplex_oracle(mer::ClassLabel{0}, 0.5, static_cast<std::size_t>(state.range(0))));
  }
}
BENCHMARK(BM_SimplexOracle)->Arg(10)->Arg(50)->Unit(benchmark::kMicrosecond);

// One minibatch of the default experiment model.
void BM_Backward(benchmark::State& state) {
  const auto params = mer::ModelParams::initialize(32, 80, 20, 1);
  const mer::Matrix x = mer::Matrix::Random(32, 32);
  std::vector<std::size_t> y(32);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 20;
  const auto kind = static_cast<mer::LossKind>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(mer::backward(params, x, y, kind, 0.3));
}
BENCHMARK(BM_Backward)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
