#include "cli.hpp"

#include <charconv>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mer/checkpoint.hpp"
#include "mer/convergence.hpp"
#include "mer/error.hpp"
#include "mer/experiments.hpp"

namespace mer::cli {
namespace {

// Usage problems detected after CLI11 parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    T value{};
    const auto r = std::from_chars(item.data(), item.data() + item.size(), value);
    if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size()) {
      throw UsageError(std::string("cannot parse '") + item + "' in " + what);
    }
    out.push_back(value);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
    return;
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw InvalidInput("cannot write " + path);
  file << text;
  if (!text.empty() && text.back() != '\n') file << '\n';
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path, 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Flags shared by every subcommand that trains models.
struct TrainFlags {
  std::uint64_t seed = 1;
  std::string out;
  std::string dataset = "synthetic";
  std::optional<std::size_t> classes;
  std::string loss = "ce";
  std::optional<double> lambda;
  std::string lambda_schedule;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  double min_lr = 1e-5;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t hidden = 80;
  std::size_t patience = 5;
  bool stop_at_plateau = false;
  double train_fraction = 0.8;
  double corruption_rate = 0.0;
  std::size_t runs = 1;
  std::size_t jobs = 1;
  int label_column = -1;
  char delimiter = ',';
  bool header = false;

  void attach(CLI::App* app, bool with_loss, bool with_runs) {
    app->add_option("--seed", seed, "Run seed (initialization, shuffling, split, corruption)");
    app->add_option("--out", out, "Output path for the JSON report (stdout when omitted)");
    app->add_option("--dataset", dataset, "CSV path or synthetic spec, e.g. synthetic:classes=20,noise=0.45");
    app->add_option("--classes", classes, "Class count (overrides the synthetic spec; fixes C for CSV input)");
    if (with_loss) {
      app->add_option("--loss", loss, "Loss: ce, mer or ls")->check(CLI::IsMember({"ce", "mer", "ls"}));
      app->add_option("--lambda", lambda, "Constant regularization weight");
      app->add_option("--lambda-schedule", lambda_schedule, "Per-epoch weights as e1:v1,e2:v2,...");
    }
    app->add_option("--epochs", epochs, "Maximum training epochs");
    app->add_option("--batch-size", batch_size, "Minibatch size")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "Initial learning rate");
    app->add_option("--min-lr", min_lr, "Learning-rate floor for plateau decay");
    app->add_option("--momentum", momentum, "SGD momentum");
    app->add_option("--weight-decay", weight_decay, "Coupled L2 weight decay");
    app->add_option("--hidden", hidden, "Hidden width; 0 trains a linear model");
    app->add_option("--patience", patience, "Epochs without improvement before the learning rate decays");
    app->add_flag("--stop-at-plateau", stop_at_plateau, "Stop when the loss plateaus at the learning-rate floor");
    app->add_option("--train-fraction", train_fraction, "Fraction of rows used for training; 1 disables evaluation");
    app->add_option("--corruption-rate", corruption_rate, "Fraction of training labels to corrupt");
    if (with_runs) {
      app->add_option("--runs", runs, "Number of seeds (seed, seed+1, ...)")->check(CLI::PositiveNumber);
      app->add_option("--jobs", jobs, "Worker threads for independent runs")->check(CLI::PositiveNumber);
    }
    app->add_option("--label-column", label_column, "CSV label column; negative counts from the end");
    app->add_option("--delimiter", delimiter, "CSV delimiter");
    app->add_flag("--header", header, "CSV input has a header row");
  }

  RunConfig to_config() const {
    if (lambda && !lambda_schedule.empty()) throw UsageError("--lambda and --lambda-schedule are mutually exclusive");
    RunConfig cfg;
    TrainConfig& t = cfg.train;
    t.loss = parse_loss_kind(loss);
    if (!lambda_schedule.empty()) {
      t.lambda_schedule = LambdaSchedule::parse(lambda_schedule);
    } else {
      t.lambda_schedule = LambdaSchedule::constant(lambda.value_or(0.0));
    }
    if (t.loss == LossKind::kCrossEntropy) {
      for (const auto& [epoch, value] : t.lambda_schedule.entries()) {
        if (value != 0.0) throw UsageError("--loss ce takes no regularization weight; use --loss mer or ls");
      }
    }
    t.hidden_dim = hidden;
    t.batch_size = batch_size;
    t.epochs = epochs;
    t.learning_rate = lr;
    t.min_learning_rate = min_lr;
    t.momentum = momentum;
    t.weight_decay = weight_decay;
    t.plateau_patience = patience;
    t.stop_at_plateau = stop_at_plateau;
    t.seed = seed;
    cfg.dataset = dataset;
    cfg.csv.label_column = label_column;
    cfg.csv.delimiter = delimiter;
    cfg.csv.has_header = header;
    if (classes) {
      if (cfg.synthetic()) {
        SyntheticSpec spec = SyntheticSpec::parse(dataset);
        spec.class_count = *classes;
        cfg.dataset = spec.to_string();
      } else {
        cfg.csv.class_count = *classes;
      }
    }
    cfg.train_fraction = train_fraction;
    cfg.corruption_rate = corruption_rate;
    cfg.validate();
    return cfg;
  }
};

int cmd_train(const TrainFlags& flags, const std::string& config_path, const std::string& trace_path,
              const std::string& checkpoint_path, std::ostream& out, std::ostream& err) {
  RunConfig cfg = config_path.empty() ? flags.to_config() : run_config_from_json(read_file(config_path));
  ModelParams params;
  const RunReport report = execute_run(cfg, &params);
  emit(report_to_json(report), flags.out, out);
  if (!trace_path.empty()) emit(metrics_to_csv(report.metrics), trace_path, out);
  if (report.status != "ok") {
    err << "mer train: " << report.error << '\n';
    return kExitNumerical;
  }
  if (!checkpoint_path.empty()) {
    save_checkpoint({params, cfg.train.seed, report.metrics.final().epoch}, checkpoint_path);
  }
  return kExitOk;
}

int cmd_curve(const std::string& classes, const std::string& lambdas, double lambda_min, double lambda_max,
              std::size_t points, const std::string& out_path, std::ostream& out) {
  const auto class_counts = parse_list<std::size_t>(classes, "--classes");
  std::vector<double> grid;
  if (!lambdas.empty()) {
    grid = parse_list<double>(lambdas, "--lambdas");
  } else {
    if (!(lambda_min > 0.0) || !(lambda_max > 0.0)) throw UsageError("lambda range must be positive");
    if (lambda_max < lambda_min) throw UsageError("--lambda-max must not be below --lambda-min");
    if (points == 0) throw UsageError("--points must be positive");
    grid = log_spaced(lambda_min, lambda_max, points);
  }
  for (double l : grid) {
    if (!(l > 0.0)) throw UsageError("lambda values must be positive");
  }
  for (std::size_t c : class_counts) {
    if (c < 2) throw UsageError("class counts must be at least 2");
  }
  std::string csv = "lambda,cpp,class_count\n";
  for (const CurvePoint& p : sample_curve(grid, class_counts)) {
    csv += format_double(p.lambda) + ',' + format_double(p.cpp) + ',' + std::to_string(p.class_count) + '\n';
  }
  emit(csv, out_path, out);
  return kExitOk;
}

bool any_diverged(const std::vector<std::string>& statuses) {
  for (const auto& s : statuses) {
    if (s != "ok") return true;
  }
  return false;
}

int cmd_gen_data(const std::string& dataset, std::optional<std::size_t> classes, std::optional<std::uint64_t> seed,
                 const std::string& out_path, bool header, std::ostream& out) {
  SyntheticSpec spec = SyntheticSpec::parse(dataset);
  if (classes) spec.class_count = *classes;
  if (seed) spec.seed = *seed;
  spec.validate();
  const SyntheticDataset gen = generate_synthetic(spec);
  emit(to_csv(gen.data, header), out_path, out);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Maximum-entropy regularization experiments for softmax classifiers", "mer"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", std::string(kArtifactVersion));

  TrainFlags train_flags;
  std::string config_path, trace_path, checkpoint_path;
  auto* train = app.add_subcommand("train", "Train one model and write a JSON run report");
  train_flags.attach(train, true, false);
  train->add_option("--config", config_path, "Re-run the config echo of an earlier report");
  train->add_option("--trace", trace_path, "Write the per-epoch trace as CSV");
  train->add_option("--checkpoint", checkpoint_path, "Save the final model");

  std::string curve_classes = "3665", curve_lambdas, curve_out;
  double lambda_min = 0.01, lambda_max = 10.0;
  std::size_t points = 50;
  auto* curve = app.add_subcommand("curve", "Emit the CPP-versus-lambda curve as CSV");
  curve->add_option("--classes", curve_classes, "Comma-separated class counts");
  curve->add_option("--lambdas", curve_lambdas, "Explicit comma-separated lambda values");
  curve->add_option("--lambda-min", lambda_min, "Lower end of the log-spaced grid");
  curve->add_option("--lambda-max", lambda_max, "Upper end of the log-spaced grid");
  curve->add_option("--points", points, "Grid size");
  curve->add_option("--out", curve_out, "CSV output path (stdout when omitted)");

  TrainFlags verify_flags;
  std::string verify_lambdas = "0.1,0.3,0.7";
  auto* verify = app.add_subcommand("verify-cpp", "Compare experimental and closed-form CPP at fixed lambdas");
  verify_flags.attach(verify, false, true);
  verify->add_option("--lambdas", verify_lambdas, "Comma-separated fixed lambdas");

  TrainFlags compare_flags;
  std::string compare_cpps = "0.41,0.77";
  bool exact_ls = false;
  auto* compare = app.add_subcommand("compare-ls", "Pair label smoothing and MER at matched theoretical CPP");
  compare_flags.attach(compare, false, true);
  compare->add_option("--cpps", compare_cpps, "Comma-separated target CPPs in (1/C, 1)");
  compare->add_flag("--exact-ls", exact_ls, "Invert 1 - a + a/C exactly instead of using a = 1 - cpp");

  TrainFlags sweep_flags;
  std::string sweep_rates = "0.1,0.2", sweep_lambdas = "0.5,1.0";
  auto* sweep = app.add_subcommand("corrupt-sweep", "Eval accuracy over corruption rates x lambdas");
  sweep_flags.attach(sweep, false, true);
  sweep->add_option("--rates", sweep_rates, "Comma-separated corruption rates");
  sweep->add_option("--lambdas", sweep_lambdas, "Comma-separated MER lambdas (0 is always added)");

  std::string gen_dataset = "synthetic", gen_out;
  std::optional<std::size_t> gen_classes;
  std::optional<std::uint64_t> gen_seed;
  bool gen_header = false;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
  gen->add_option("--dataset", gen_dataset, "Synthetic spec string");
  gen->add_option("--classes", gen_classes, "Class count override");
  gen->add_option("--seed", gen_seed, "Generator seed override");
  gen->add_option("--out", gen_out, "CSV output path (stdout when omitted)");
  gen->add_flag("--header", gen_header, "Write a header row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train && !config_path.empty()) {
      for (const CLI::Option* opt : train->get_options()) {
        const std::string& name = opt->get_name();
        if (opt->count() > 0 && name != "--config" && name != "--out" && name != "--trace" && name != "--checkpoint") {
          throw UsageError("--config replays a stored run; " + name + " cannot be combined with it");
        }
      }
    }
    if (*train) return cmd_train(train_flags, config_path, trace_path, checkpoint_path, out, err);
    if (*curve) return cmd_curve(curve_classes, curve_lambdas, lambda_min, lambda_max, points, curve_out, out);
    if (*verify) {
      const RunConfig base = verify_flags.to_config();
      const VerifyReport report = verify_cpp(base, parse_list<double>(verify_lambdas, "--lambdas"),
                                             verify_flags.runs, verify_flags.jobs);
      emit(verify_report_to_json(report), verify_flags.out, out);
      std::vector<std::string> statuses;
      for (const auto& row : report.rows) statuses.push_back(row.status);
      return any_diverged(statuses) ? kExitNumerical : kExitOk;
    }
    if (*compare) {
      const RunConfig base = compare_flags.to_config();
      const CompareReport report = compare_ls(base, parse_list<double>(compare_cpps, "--cpps"), compare_flags.runs,
                                              exact_ls, compare_flags.jobs);
      emit(compare_report_to_json(report), compare_flags.out, out);
      std::vector<std::string> statuses;
      for (const auto& row : report.rows) statuses.push_back(row.status);
      return any_diverged(statuses) ? kExitNumerical : kExitOk;
    }
    if (*sweep) {
      const RunConfig base = sweep_flags.to_config();
      const SweepReport report = corrupt_sweep(base, parse_list<double>(sweep_rates, "--rates"),
                                               parse_list<double>(sweep_lambdas, "--lambdas"), sweep_flags.runs,
                                               sweep_flags.jobs);
      emit(sweep_report_to_json(report), sweep_flags.out, out);
      std::vector<std::string> statuses;
      for (const auto& cell : report.cells) statuses.push_back(cell.status);
      return any_diverged(statuses) ? kExitNumerical : kExitOk;
    }
    if (*gen) return cmd_gen_data(gen_dataset, gen_classes, gen_seed, gen_out, gen_header, out);
  } catch (const UsageError& e) {
    err << "mer: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidInput& e) {
    err << "mer: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "mer: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "mer: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "mer: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace mer::cli
