#pragma once

// Experiment harness shared by the `mer` CLI and the acceptance suite:
// single training runs with JSON reports, CPP verification, LS-vs-MER
// comparison and label-corruption sweeps.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mer/classifier.hpp"
#include "mer/data.hpp"

namespace mer {

inline constexpr std::string_view kArtifactVersion = "0.3.0";

/// Everything needed to reproduce one training run.
struct RunConfig {
  TrainConfig train;
  // "synthetic[:k=v,...]" or a CSV path.
  std::string dataset = "synthetic";
  CsvSchema csv;
  // 1.0 trains on every row and skips evaluation.
  double train_fraction = 0.8;
  double corruption_rate = 0.0;

  void validate() const;
  bool synthetic() const;
  /// Copy for the i-th seeded repetition: train seed + i and, for synthetic
  /// data, generator seed + i.
  RunConfig with_run_index(std::size_t i) const;
};

struct PreparedData {
  LabeledDataset train;  // possibly label-corrupted
  LabeledDataset eval;   // clean; empty when train_fraction == 1
  bool stratified = true;
  std::optional<double> nearest_center_ceiling;  // synthetic data only
};

/// Loads or generates the dataset, splits it and corrupts the training labels.
PreparedData prepare_data(const RunConfig& config);

struct RunSummary {
  std::optional<double> eval_accuracy;
  double train_accuracy = 0.0;
  double final_ce = 0.0;
  double experimental_cpp = 0.0;
  double theoretical_cpp = 1.0;
  double training_entropy = 0.0;
};

struct RunReport {
  RunConfig config;
  TrainMetrics metrics;
  RunSummary summary;
  std::size_t train_size = 0;
  std::size_t eval_size = 0;
  std::size_t corrupted = 0;
  std::size_t class_count = 0;
  bool stratified = true;
  std::optional<double> nearest_center_ceiling;
  double wall_clock_seconds = 0.0;
  // "ok" or "diverged"; `error` holds the diagnostic for the latter.
  std::string status = "ok";
  std::string error;
};

/// CPP implied by the final-epoch objective: cpp_for_lambda for MER,
/// ls_cpp for label smoothing, 1 for plain cross-entropy or lambda == 0.
double theoretical_cpp(LossKind kind, double lambda, std::size_t class_count);

/// Trains one model. Divergence yields a report with status "diverged" and the
/// partial metrics instead of an exception.
RunReport execute_run(const RunConfig& config, ModelParams* final_params = nullptr);

std::string report_to_json(const RunReport& report);
std::string run_config_to_json(const RunConfig& config);
/// Accepts a bare config object or any report embedding one under "config".
RunConfig run_config_from_json(const std::string& text);
/// The per-epoch metrics block as JSON; equal strings mean bit-identical metrics.
std::string metrics_to_json(const TrainMetrics& metrics);
/// Per-epoch trace as CSV.
std::string metrics_to_csv(const TrainMetrics& metrics);

inline constexpr std::string_view kEpochCsvHeader =
    "epoch,lambda,learning_rate,train_loss,train_ce,train_entropy,train_accuracy,eval_accuracy,eval_ce";

/// Runs fn(0..count-1) on up to `jobs` threads; results land by index, so the
/// outcome does not depend on scheduling.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// --- verify-cpp -------------------------------------------------------------

struct VerifyRow {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double final_ce = 0.0;
  double experimental_cpp = 0.0;
  double theoretical_cpp = 0.0;
  double gap = 0.0;  // theoretical - experimental
  std::size_t epochs_run = 0;
  bool stopped_at_plateau = false;
  std::string status;
};

struct VerifyReport {
  RunConfig base;
  std::vector<double> lambdas;
  std::size_t runs = 1;
  std::vector<VerifyRow> rows;  // lambda-major
  double wall_clock_seconds = 0.0;
};

/// For each lambda and seed: train MER at that fixed lambda until plateau and
/// report exp(-final CE) beside the closed-form CPP.
VerifyReport verify_cpp(const RunConfig& base, const std::vector<double>& lambdas, std::size_t runs,
                        std::size_t jobs = 1);
std::string verify_report_to_json(const VerifyReport& report);

// --- compare-ls -------------------------------------------------------------

struct LambdaPair {
  double target_cpp = 0.0;
  double lambda_ls = 0.0;
  double lambda_mer = 0.0;
};

/// lambda_LS = 1 - cpp by default, or the exact inverse of 1 - a + a/C;
/// lambda_MER from the closed-form curve. Throws DomainError unless
/// 1/C < cpp < 1.
LambdaPair lambdas_for_cpp(double cpp, std::size_t class_count, bool exact_ls);

struct CompareRow {
  double target_cpp = 0.0;
  std::uint64_t seed = 0;
  LossKind method = LossKind::kMaxEntropy;
  double lambda = 0.0;
  double training_entropy = 0.0;
  double train_ce = 0.0;
  std::optional<double> eval_accuracy;
  std::string status;
};

struct CompareTally {
  double target_cpp = 0.0;
  LambdaPair lambdas;
  std::size_t mer_entropy_not_above_ls = 0;
  std::size_t pairs = 0;
};

struct CompareReport {
  RunConfig base;
  bool exact_ls = false;
  std::size_t runs = 1;
  std::vector<CompareRow> rows;
  std::vector<CompareTally> tallies;
  double wall_clock_seconds = 0.0;
};

CompareReport compare_ls(const RunConfig& base, const std::vector<double>& target_cpps, std::size_t runs,
                         bool exact_ls, std::size_t jobs = 1);
std::string compare_report_to_json(const CompareReport& report);

// --- corrupt-sweep ----------------------------------------------------------

struct SweepCell {
  double rate = 0.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> eval_accuracy;
  double train_accuracy = 0.0;
  std::string status;
};

struct SweepTally {
  double rate = 0.0;
  // Seeds where the best lambda > 0 matched or beat lambda == 0 on eval accuracy.
  std::size_t best_mer_not_below_baseline = 0;
  std::size_t seeds = 0;
};

struct SweepReport {
  RunConfig base;
  std::vector<double> rates;
  std::vector<double> lambdas;  // always contains 0
  std::size_t runs = 1;
  std::vector<SweepCell> cells;                    // rate-major, then lambda, then seed
  std::vector<std::vector<double>> mean_accuracy;  // [rate][lambda]
  std::vector<SweepTally> tallies;
  double wall_clock_seconds = 0.0;
};

SweepReport corrupt_sweep(const RunConfig& base, const std::vector<double>& rates, std::vector<double> lambdas,
                          std::size_t runs, std::size_t jobs = 1);
std::string sweep_report_to_json(const SweepReport& report);

}  // namespace mer
