#include "mer/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "mer/convergence.hpp"
#include "mer/random.hpp"

namespace mer {
namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kSplitStream = 1001;
constexpr std::uint64_t kCorruptionStream = 2002;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json config_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  json csv = {{"label_column", c.csv.label_column},
              {"delimiter", std::string(1, c.csv.delimiter)},
              {"has_header", c.csv.has_header},
              {"class_count", c.csv.class_count ? json(*c.csv.class_count) : json(nullptr)}};
  return json{{"loss", std::string(to_string(t.loss))},
              {"lambda_schedule", t.lambda_schedule.to_string()},
              {"hidden_dim", t.hidden_dim},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"learning_rate", t.learning_rate},
              {"min_learning_rate", t.min_learning_rate},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"plateau_patience", t.plateau_patience},
              {"plateau_threshold", t.plateau_threshold},
              {"lr_decay_factor", t.lr_decay_factor},
              {"stop_at_plateau", t.stop_at_plateau},
              {"seed", t.seed},
              {"dataset", c.dataset},
              {"csv", csv},
              {"train_fraction", c.train_fraction},
              {"corruption_rate", c.corruption_rate}};
}

RunConfig config_from(const json& j) {
  RunConfig c;
  TrainConfig& t = c.train;
  t.loss = parse_loss_kind(j.at("loss").get<std::string>());
  t.lambda_schedule = LambdaSchedule::parse(j.at("lambda_schedule").get<std::string>());
  t.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  t.batch_size = j.at("batch_size").get<std::size_t>();
  t.epochs = j.at("epochs").get<std::size_t>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.min_learning_rate = j.at("min_learning_rate").get<double>();
  t.momentum = j.at("momentum").get<double>();
  t.weight_decay = j.at("weight_decay").get<double>();
  t.plateau_patience = j.at("plateau_patience").get<std::size_t>();
  t.plateau_threshold = j.at("plateau_threshold").get<double>();
  t.lr_decay_factor = j.at("lr_decay_factor").get<double>();
  t.stop_at_plateau = j.at("stop_at_plateau").get<bool>();
  t.seed = j.at("seed").get<std::uint64_t>();
  c.dataset = j.at("dataset").get<std::string>();
  if (j.contains("csv")) {
    const json& csv = j.at("csv");
    c.csv.label_column = csv.at("label_column").get<int>();
    const auto delim = csv.at("delimiter").get<std::string>();
    if (delim.size() != 1) throw InvalidInput("csv delimiter must be a single character");
    c.csv.delimiter = delim[0];
    c.csv.has_header = csv.at("has_header").get<bool>();
    if (!csv.at("class_count").is_null()) c.csv.class_count = csv.at("class_count").get<std::size_t>();
  }
  c.train_fraction = j.at("train_fraction").get<double>();
  c.corruption_rate = j.at("corruption_rate").get<double>();
  c.validate();
  return c;
}

json epochs_json(const TrainMetrics& m) {
  json arr = json::array();
  for (const EpochMetrics& e : m.epochs) {
    arr.push_back(json{{"epoch", e.epoch},
                       {"lambda", e.lambda},
                       {"learning_rate", e.learning_rate},
                       {"train_loss", e.train_loss},
                       {"train_ce", e.train_ce},
                       {"train_entropy", e.train_entropy},
                       {"train_accuracy", e.train_accuracy},
                       {"eval_accuracy", optional_number(e.eval_accuracy)},
                       {"eval_ce", optional_number(e.eval_ce)}});
  }
  return arr;
}

}  // namespace

// --- RunConfig --------------------------------------------------------------

bool RunConfig::synthetic() const { return dataset.rfind("synthetic", 0) == 0; }

void RunConfig::validate() const {
  train.validate();
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw InvalidInput("train fraction must lie in (0, 1]");
  if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0)) throw InvalidInput("corruption rate must lie in [0, 1]");
  if (dataset.empty()) throw InvalidInput("dataset is empty");
  if (synthetic()) SyntheticSpec::parse(dataset);
}

RunConfig RunConfig::with_run_index(std::size_t i) const {
  RunConfig out = *this;
  out.train.seed = train.seed + i;
  if (synthetic()) {
    SyntheticSpec spec = SyntheticSpec::parse(dataset);
    spec.seed += i;
    out.dataset = spec.to_string();
  }
  return out;
}

PreparedData prepare_data(const RunConfig& config) {
  config.validate();
  PreparedData out;
  LabeledDataset full;
  if (config.synthetic()) {
    SyntheticDataset gen = generate_synthetic(SyntheticSpec::parse(config.dataset));
    out.nearest_center_ceiling = nearest_center_accuracy(gen.data, gen.centers);
    full = std::move(gen.data);
  } else {
    full = load_csv(config.dataset, config.csv);
  }

  if (config.train_fraction < 1.0) {
    SplitResult parts = split(full, config.train_fraction, mix_seed(config.train.seed, kSplitStream));
    out.train = std::move(parts.train);
    out.eval = std::move(parts.eval);
    out.stratified = parts.stratified;
  } else {
    out.train = std::move(full);
    out.eval = subset(out.train, {});
  }
  out.train = corrupt_labels(out.train, config.corruption_rate, mix_seed(config.train.seed, kCorruptionStream));
  return out;
}

double theoretical_cpp(LossKind kind, double lambda, std::size_t class_count) {
  if (kind == LossKind::kCrossEntropy || lambda == 0.0) return 1.0;
  if (kind == LossKind::kLabelSmoothing) return ls_cpp(lambda, class_count);
  return cpp_for_lambda(lambda, class_count);
}

RunReport execute_run(const RunConfig& config, ModelParams* final_params) {
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  report.config = config;
  const PreparedData data = prepare_data(config);
  report.train_size = data.train.size();
  report.eval_size = data.eval.size();
  report.corrupted = data.train.corrupted_count();
  report.class_count = data.train.class_count;
  report.stratified = data.stratified;
  report.nearest_center_ceiling = data.nearest_center_ceiling;

  const LabeledDataset* eval = data.eval.size() > 0 ? &data.eval : nullptr;
  try {
    TrainResult result = train(config.train, data.train, eval);
    report.metrics = std::move(result.metrics);
    if (final_params) *final_params = std::move(result.params);
  } catch (const TrainingDiverged& e) {
    report.metrics = e.partial();
    report.status = "diverged";
    report.error = e.what();
  }

  if (!report.metrics.epochs.empty()) {
    const EpochMetrics& last = report.metrics.final();
    RunSummary& s = report.summary;
    s.eval_accuracy = last.eval_accuracy;
    s.train_accuracy = last.train_accuracy;
    s.final_ce = last.train_ce;
    s.experimental_cpp = std::isfinite(last.train_ce) ? std::exp(-last.train_ce) : 0.0;
    s.training_entropy = last.train_entropy;
    s.theoretical_cpp = theoretical_cpp(config.train.loss, last.lambda, report.class_count);
  }
  report.wall_clock_seconds = seconds_since(start);
  return report;
}

// --- JSON / CSV -------------------------------------------------------------

std::string run_config_to_json(const RunConfig& config) { return config_json(config).dump(2); }

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), 0);
  }
  try {
    return config_from(j.contains("config") ? j.at("config") : j);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config echo is incomplete: ") + e.what(), 0);
  }
}

std::string metrics_to_json(const TrainMetrics& metrics) { return epochs_json(metrics).dump(); }

std::string report_to_json(const RunReport& r) {
  const RunSummary& s = r.summary;
  json j{{"artifact_version", std::string(kArtifactVersion)},
         {"seed", r.config.train.seed},
         {"status", r.status},
         {"error", r.error},
         {"config", config_json(r.config)},
         {"dataset",
          {{"class_count", r.class_count},
           {"train_size", r.train_size},
           {"eval_size", r.eval_size},
           {"corrupted", r.corrupted},
           {"stratified", r.stratified},
           {"nearest_center_ceiling", optional_number(r.nearest_center_ceiling)}}},
         {"epochs", epochs_json(r.metrics)},
         {"summary",
          {{"eval_accuracy", optional_number(s.eval_accuracy)},
           {"train_accuracy", s.train_accuracy},
           {"final_ce", s.final_ce},
           {"final_ce_source", "final-epoch training-set mean"},
           {"experimental_cpp", s.experimental_cpp},
           {"theoretical_cpp", s.theoretical_cpp},
           {"training_entropy", s.training_entropy},
           {"stopped_at_plateau", r.metrics.stopped_at_plateau}}},
         {"wall_clock_seconds", r.wall_clock_seconds}};
  return j.dump(2);
}

std::string metrics_to_csv(const TrainMetrics& metrics) {
  std::string out(kEpochCsvHeader);
  out += '\n';
  auto num = [](double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
  };
  for (const EpochMetrics& e : metrics.epochs) {
    out += std::to_string(e.epoch) + ',' + num(e.lambda) + ',' + num(e.learning_rate) + ',' + num(e.train_loss) + ',' +
           num(e.train_ce) + ',' + num(e.train_entropy) + ',' + num(e.train_accuracy) + ',' +
           (e.eval_accuracy ? num(*e.eval_accuracy) : "") + ',' + (e.eval_ce ? num(*e.eval_ce) : "") + '\n';
  }
  return out;
}

// --- parallelism ------------------------------------------------------------

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> workers;
    workers.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

// --- verify-cpp -------------------------------------------------------------

VerifyReport verify_cpp(const RunConfig& base, const std::vector<double>& lambdas, std::size_t runs,
                        std::size_t jobs) {
  if (lambdas.empty()) throw InvalidInput("verify-cpp needs at least one lambda");
  if (runs == 0) throw InvalidInput("runs must be positive");
  for (double l : lambdas) {
    if (!(l > 0.0)) throw InvalidInput("verify-cpp lambdas must be positive");
  }
  const auto start = std::chrono::steady_clock::now();
  VerifyReport report;
  report.base = base;
  report.lambdas = lambdas;
  report.runs = runs;
  report.rows.resize(lambdas.size() * runs);

  parallel_for(report.rows.size(), jobs, [&](std::size_t task) {
    const double lambda = lambdas[task / runs];
    RunConfig cfg = base.with_run_index(task % runs);
    cfg.train.loss = LossKind::kMaxEntropy;
    cfg.train.lambda_schedule = LambdaSchedule::constant(lambda);
    cfg.train.stop_at_plateau = true;
    const RunReport run = execute_run(cfg);

    VerifyRow& row = report.rows[task];
    row.lambda = lambda;
    row.seed = cfg.train.seed;
    row.final_ce = run.summary.final_ce;
    row.experimental_cpp = run.summary.experimental_cpp;
    row.theoretical_cpp = cpp_for_lambda(lambda, run.class_count);
    row.gap = row.theoretical_cpp - row.experimental_cpp;
    row.epochs_run = run.metrics.epochs.empty() ? 0 : run.metrics.final().epoch;
    row.stopped_at_plateau = run.metrics.stopped_at_plateau;
    row.status = run.status;
  });
  report.wall_clock_seconds = seconds_since(start);
  return report;
}

std::string verify_report_to_json(const VerifyReport& r) {
  json rows = json::array();
  for (const VerifyRow& row : r.rows) {
    rows.push_back(json{{"lambda", row.lambda},
                        {"seed", row.seed},
                        {"final_ce", row.final_ce},
                        {"experimental_cpp", row.experimental_cpp},
                        {"theoretical_cpp", row.theoretical_cpp},
                        {"gap", row.gap},
                        {"epochs_run", row.epochs_run},
                        {"stopped_at_plateau", row.stopped_at_plateau},
                        {"status", row.status}});
  }
  return json{{"artifact_version", std::string(kArtifactVersion)},
              {"command", "verify-cpp"},
              {"config", config_json(r.base)},
              {"lambdas", r.lambdas},
              {"runs", r.runs},
              {"rows", rows},
              {"wall_clock_seconds", r.wall_clock_seconds}}
      .dump(2);
}

// --- compare-ls -------------------------------------------------------------

LambdaPair lambdas_for_cpp(double cpp, std::size_t class_count, bool exact_ls) {
  LambdaPair pair;
  pair.target_cpp = cpp;
  pair.lambda_mer = lambda_for_cpp(cpp, class_count);
  pair.lambda_ls = exact_ls ? ls_lambda_for_cpp(cpp, class_count) : 1.0 - cpp;
  return pair;
}

CompareReport compare_ls(const RunConfig& base, const std::vector<double>& target_cpps, std::size_t runs,
                         bool exact_ls, std::size_t jobs) {
  if (target_cpps.empty()) throw InvalidInput("compare-ls needs at least one target CPP");
  if (runs == 0) throw InvalidInput("runs must be positive");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t class_count = prepare_data(base).train.class_count;

  CompareReport report;
  report.base = base;
  report.exact_ls = exact_ls;
  report.runs = runs;
  std::vector<LambdaPair> pairs;
  for (double cpp : target_cpps) pairs.push_back(lambdas_for_cpp(cpp, class_count, exact_ls));

  // Task layout: [cpp][seed][method], method 0 = LS, 1 = MER.
  report.rows.resize(target_cpps.size() * runs * 2);
  parallel_for(report.rows.size(), jobs, [&](std::size_t task) {
    const std::size_t cpp_idx = task / (runs * 2);
    const std::size_t seed_idx = (task / 2) % runs;
    const bool mer = task % 2 == 1;
    RunConfig cfg = base.with_run_index(seed_idx);
    cfg.train.loss = mer ? LossKind::kMaxEntropy : LossKind::kLabelSmoothing;
    const double lambda = mer ? pairs[cpp_idx].lambda_mer : pairs[cpp_idx].lambda_ls;
    cfg.train.lambda_schedule = LambdaSchedule::constant(lambda);
    const RunReport run = execute_run(cfg);

    CompareRow& row = report.rows[task];
    row.target_cpp = target_cpps[cpp_idx];
    row.seed = cfg.train.seed;
    row.method = cfg.train.loss;
    row.lambda = lambda;
    row.training_entropy = run.summary.training_entropy;
    row.train_ce = run.summary.final_ce;
    row.eval_accuracy = run.summary.eval_accuracy;
    row.status = run.status;
  });

  for (std::size_t c = 0; c < target_cpps.size(); ++c) {
    CompareTally tally;
    tally.target_cpp = target_cpps[c];
    tally.lambdas = pairs[c];
    for (std::size_t s = 0; s < runs; ++s) {
      const CompareRow& ls = report.rows[(c * runs + s) * 2];
      const CompareRow& mer = report.rows[(c * runs + s) * 2 + 1];
      ++tally.pairs;
      if (mer.training_entropy <= ls.training_entropy) ++tally.mer_entropy_not_above_ls;
    }
    report.tallies.push_back(tally);
  }
  report.wall_clock_seconds = seconds_since(start);
  return report;
}

std::string compare_report_to_json(const CompareReport& r) {
  json rows = json::array();
  for (const CompareRow& row : r.rows) {
    rows.push_back(json{{"target_cpp", row.target_cpp},
                        {"seed", row.seed},
                        {"method", std::string(to_string(row.method))},
                        {"lambda", row.lambda},
                        {"training_entropy", row.training_entropy},
                        {"train_ce", row.train_ce},
                        {"eval_accuracy", optional_number(row.eval_accuracy)},
                        {"status", row.status}});
  }
  json tallies = json::array();
  for (const CompareTally& t : r.tallies) {
    tallies.push_back(json{{"target_cpp", t.target_cpp},
                           {"lambda_ls", t.lambdas.lambda_ls},
                           {"lambda_mer", t.lambdas.lambda_mer},
                           {"mer_entropy_not_above_ls", t.mer_entropy_not_above_ls},
                           {"pairs", t.pairs}});
  }
  return json{{"artifact_version", std::string(kArtifactVersion)},
              {"command", "compare-ls"},
              {"config", config_json(r.base)},
              {"exact_ls", r.exact_ls},
              {"runs", r.runs},
              {"rows", rows},
              {"tallies", tallies},
              {"wall_clock_seconds", r.wall_clock_seconds}}
      .dump(2);
}

// --- corrupt-sweep ----------------------------------------------------------

SweepReport corrupt_sweep(const RunConfig& base, const std::vector<double>& rates, std::vector<double> lambdas,
                          std::size_t runs, std::size_t jobs) {
  if (rates.empty()) throw InvalidInput("corrupt-sweep needs at least one corruption rate");
  if (runs == 0) throw InvalidInput("runs must be positive");
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw InvalidInput("sweep lambdas must be finite and non-negative");
  }
  if (std::find(lambdas.begin(), lambdas.end(), 0.0) == lambdas.end()) lambdas.insert(lambdas.begin(), 0.0);

  const auto start = std::chrono::steady_clock::now();
  SweepReport report;
  report.base = base;
  report.rates = rates;
  report.lambdas = lambdas;
  report.runs = runs;
  report.cells.resize(rates.size() * lambdas.size() * runs);

  parallel_for(report.cells.size(), jobs, [&](std::size_t task) {
    const std::size_t rate_idx = task / (lambdas.size() * runs);
    const std::size_t lambda_idx = (task / runs) % lambdas.size();
    const std::size_t seed_idx = task % runs;
    RunConfig cfg = base.with_run_index(seed_idx);
    cfg.corruption_rate = rates[rate_idx];
    cfg.train.loss = LossKind::kMaxEntropy;
    cfg.train.lambda_schedule = LambdaSchedule::constant(lambdas[lambda_idx]);
    const RunReport run = execute_run(cfg);

    SweepCell& cell = report.cells[task];
    cell.rate = rates[rate_idx];
    cell.lambda = lambdas[lambda_idx];
    cell.seed = cfg.train.seed;
    cell.eval_accuracy = run.summary.eval_accuracy;
    cell.train_accuracy = run.summary.train_accuracy;
    cell.status = run.status;
  });

  auto cell_at = [&](std::size_t r, std::size_t l, std::size_t s) -> const SweepCell& {
    return report.cells[(r * lambdas.size() + l) * runs + s];
  };
  const auto baseline_idx = static_cast<std::size_t>(std::find(lambdas.begin(), lambdas.end(), 0.0) - lambdas.begin());
  for (std::size_t r = 0; r < rates.size(); ++r) {
    std::vector<double> means(lambdas.size(), 0.0);
    for (std::size_t l = 0; l < lambdas.size(); ++l) {
      for (std::size_t s = 0; s < runs; ++s) means[l] += cell_at(r, l, s).eval_accuracy.value_or(0.0);
      means[l] /= static_cast<double>(runs);
    }
    report.mean_accuracy.push_back(std::move(means));

    SweepTally tally;
    tally.rate = rates[r];
    tally.seeds = runs;
    for (std::size_t s = 0; s < runs; ++s) {
      const double base_acc = cell_at(r, baseline_idx, s).eval_accuracy.value_or(0.0);
      double best = -1.0;
      for (std::size_t l = 0; l < lambdas.size(); ++l) {
        if (l != baseline_idx) best = std::max(best, cell_at(r, l, s).eval_accuracy.value_or(0.0));
      }
      if (best >= base_acc) ++tally.best_mer_not_below_baseline;
    }
    report.tallies.push_back(tally);
  }
  report.wall_clock_seconds = seconds_since(start);
  return report;
}

std::string sweep_report_to_json(const SweepReport& r) {
  json cells = json::array();
  for (const SweepCell& c : r.cells) {
    cells.push_back(json{{"corruption_rate", c.rate},
                         {"lambda", c.lambda},
                         {"seed", c.seed},
                         {"eval_accuracy", optional_number(c.eval_accuracy)},
                         {"train_accuracy", c.train_accuracy},
                         {"status", c.status}});
  }
  json table = json::array();
  for (std::size_t i = 0; i < r.rates.size(); ++i) {
    table.push_back(json{{"corruption_rate", r.rates[i]}, {"mean_eval_accuracy", r.mean_accuracy[i]}});
  }
  json tallies = json::array();
  for (const SweepTally& t : r.tallies) {
    tallies.push_back(json{{"corruption_rate", t.rate},
                           {"best_mer_not_below_baseline", t.best_mer_not_below_baseline},
                           {"seeds", t.seeds}});
  }
  return json{{"artifact_version", std::string(kArtifactVersion)},
              {"command", "corrupt-sweep"},
              {"config", config_json(r.base)},
              {"rates", r.rates},
              {"lambdas", r.lambdas},
              {"runs", r.runs},
              {"table", table},
              {"cells", cells},
              {"tallies", tallies},
              {"wall_clock_seconds", r.wall_clock_seconds}}
      .dump(2);
}

}  // namespace mer
