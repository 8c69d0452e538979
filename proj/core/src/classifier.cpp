#include "mer/classifier.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "mer/random.hpp"

namespace mer {
namespace {

using Index = Eigen::Index;

void check_features(const ModelParams& params, const Matrix& features) {
  if (static_cast<std::size_t>(features.cols()) != params.input_dim) {
    throw InvalidInput("feature width " + std::to_string(features.cols()) + " does not match model input " +
                       std::to_string(params.input_dim));
  }
}

struct Activations {
  Matrix pre_hidden;  // empty for the linear model
  Matrix hidden;
  Matrix logits;
};

Activations run_forward(const ModelParams& params, const Matrix& x) {
  check_features(params, x);
  Activations act;
  if (params.has_hidden()) {
    const auto& l0 = params.layers[0];
    const auto& l1 = params.layers[1];
    act.pre_hidden = (x * l0.weight.transpose()).rowwise() + l0.bias.transpose();
    act.hidden = act.pre_hidden.cwiseMax(0.0);
    act.logits = (act.hidden * l1.weight.transpose()).rowwise() + l1.bias.transpose();
  } else {
    const auto& l0 = params.layers[0];
    act.logits = (x * l0.weight.transpose()).rowwise() + l0.bias.transpose();
  }
  return act;
}

ProbDistribution row_softmax(const Matrix& logits, Index row) {
  std::vector<double> z(logits.row(row).begin(), logits.row(row).end());
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericalError("non-finite logit at row " + std::to_string(row));
  }
  return softmax(LogitVector(std::move(z)));
}

struct Summary {
  double accuracy = 0.0;
  LossBreakdown loss;
};

// Full pass over a dataset: accuracy and the mean objective for `kind`.
Summary summarize(const ModelParams& params, const Matrix& x, std::span<const std::size_t> labels, LossKind kind,
                  double lambda) {
  const Matrix logits = forward(params, x);
  Summary s;
  s.loss.lambda = lambda;
  std::size_t correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const ProbDistribution p = row_softmax(logits, i);
    const ClassLabel y{labels[static_cast<std::size_t>(i)]};
    const double ce = cross_entropy(p, y);
    const double h = entropy(p);
    s.loss.ce += ce;
    s.loss.entropy += h;
    switch (kind) {
      case LossKind::kCrossEntropy: s.loss.total += ce; break;
      case LossKind::kMaxEntropy: s.loss.total += ce - lambda * h; break;
      case LossKind::kLabelSmoothing: s.loss.total += label_smoothing_loss(p, y, lambda); break;
    }
    const auto probs = p.probs();
    const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    if (best == y.index) ++correct;
  }
  const auto n = static_cast<double>(logits.rows());
  if (n > 0) {
    s.accuracy = static_cast<double>(correct) / n;
    s.loss.ce /= n;
    s.loss.entropy /= n;
    s.loss.total /= n;
  }
  return s;
}

}  // namespace

LossKind parse_loss_kind(std::string_view name) {
  if (name == "ce") return LossKind::kCrossEntropy;
  if (name == "mer") return LossKind::kMaxEntropy;
  if (name == "ls") return LossKind::kLabelSmoothing;
  throw InvalidInput("unknown loss kind '" + std::string(name) + "' (expected ce, mer or ls)");
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kCrossEntropy: return "ce";
    case LossKind::kMaxEntropy: return "mer";
    case LossKind::kLabelSmoothing: return "ls";
  }
  throw InvalidInput("unknown loss kind");
}

// --- parameters -------------------------------------------------------------

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool ModelParams::all_finite() const {
  return std::all_of(layers.begin(), layers.end(),
                     [](const AffineLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

ModelParams ModelParams::zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t class_count) {
  if (input_dim == 0 || class_count < 2) throw InvalidInput("model needs input_dim > 0 and at least 2 classes");
  ModelParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.class_count = class_count;
  auto layer = [](std::size_t out, std::size_t in) {
    return AffineLayer{Matrix::Zero(static_cast<Index>(out), static_cast<Index>(in)), Vector::Zero(static_cast<Index>(out))};
  };
  if (hidden_dim > 0) {
    p.layers.push_back(layer(hidden_dim, input_dim));
    p.layers.push_back(layer(class_count, hidden_dim));
  } else {
    p.layers.push_back(layer(class_count, input_dim));
  }
  return p;
}

ModelParams ModelParams::initialize(std::size_t input_dim, std::size_t hidden_dim, std::size_t class_count,
                                    std::uint64_t seed) {
  ModelParams p = zeros(input_dim, hidden_dim, class_count);
  Rng rng(seed);
  for (auto& layer : p.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < layer.weight.rows(); ++i) {
      for (Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = dist(rng);
    }
    for (auto& b : layer.bias) b = dist(rng);
  }
  return p;
}

// --- forward / backward -----------------------------------------------------

Matrix forward(const ModelParams& params, const Matrix& features) { return run_forward(params, features).logits; }

BackwardResult backward(const ModelParams& params, const Matrix& features, std::span<const std::size_t> labels,
                        LossKind kind, double lambda) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw InvalidInput("batch has " + std::to_string(features.rows()) + " rows but " +
                       std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw InvalidInput("empty batch");
  if (kind != LossKind::kCrossEntropy && kind != LossKind::kMaxEntropy && kind != LossKind::kLabelSmoothing) {
    throw InvalidInput("unknown loss kind");
  }
  const Activations act = run_forward(params, features);
  const Index n = act.logits.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  BackwardResult out;
  out.loss.lambda = kind == LossKind::kCrossEntropy ? 0.0 : lambda;
  Matrix dlogits(n, act.logits.cols());
  for (Index i = 0; i < n; ++i) {
    const ProbDistribution p = row_softmax(act.logits, i);
    const ClassLabel y{labels[static_cast<std::size_t>(i)]};
    GradientVector g;
    const double ce = cross_entropy(p, y);
    const double h = entropy(p);
    switch (kind) {
      case LossKind::kCrossEntropy:
        g = regularized_gradient(p, y, 0.0);
        out.loss.total += ce;
        break;
      case LossKind::kMaxEntropy:
        g = regularized_gradient(p, y, lambda);
        out.loss.total += ce - lambda * h;
        break;
      case LossKind::kLabelSmoothing:
        g = label_smoothing_gradient(p, y, lambda);
        out.loss.total += label_smoothing_loss(p, y, lambda);
        break;
    }
    out.loss.ce += ce;
    out.loss.entropy += h;
    for (Index j = 0; j < dlogits.cols(); ++j) dlogits(i, j) = g[static_cast<std::size_t>(j)] * inv_n;
  }
  out.loss.ce *= inv_n;
  out.loss.entropy *= inv_n;
  out.loss.total *= inv_n;

  out.gradients = ModelParams::zeros(params.input_dim, params.hidden_dim, params.class_count);
  auto& grads = out.gradients.layers;
  if (params.has_hidden()) {
    grads[1].weight.noalias() = dlogits.transpose() * act.hidden;
    grads[1].bias = dlogits.colwise().sum().transpose();
    Matrix dhidden = dlogits * params.layers[1].weight;
    dhidden = dhidden.cwiseProduct((act.pre_hidden.array() > 0.0).cast<double>().matrix());
    grads[0].weight.noalias() = dhidden.transpose() * features;
    grads[0].bias = dhidden.colwise().sum().transpose();
  } else {
    grads[0].weight.noalias() = dlogits.transpose() * features;
    grads[0].bias = dlogits.colwise().sum().transpose();
  }
  return out;
}

// --- optimizer --------------------------------------------------------------

OptimizerState OptimizerState::for_params(const ModelParams& params, double learning_rate, double momentum,
                                          double weight_decay) {
  if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InvalidInput("weight decay must be non-negative");
  return {ModelParams::zeros(params.input_dim, params.hidden_dim, params.class_count), learning_rate, momentum,
          weight_decay};
}

void sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
  if (grads.layers.size() != params.layers.size() || state.velocity.layers.size() != params.layers.size()) {
    throw InvalidInput("gradient / velocity layer count does not match the model");
  }
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& g = grads.layers[k];
    const auto& p = params.layers[k];
    if (g.weight.rows() != p.weight.rows() || g.weight.cols() != p.weight.cols() || g.bias.size() != p.bias.size()) {
      throw InvalidInput("gradient shape mismatch in layer " + std::to_string(k));
    }
    if (!g.weight.allFinite() || !g.bias.allFinite()) {
      throw NumericalError("non-finite gradient in layer " + std::to_string(k) + " (max |w| " +
                           std::to_string(p.weight.cwiseAbs().maxCoeff()) + ", lr " +
                           std::to_string(state.learning_rate) + ")");
    }
  }
  const double mu = state.momentum;
  const double wd = state.weight_decay;
  const double lr = state.learning_rate;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    auto& v = state.velocity.layers[k];
    auto& p = params.layers[k];
    const auto& g = grads.layers[k];
    v.weight = mu * v.weight + g.weight + wd * p.weight;
    v.bias = mu * v.bias + g.bias + wd * p.bias;
    p.weight -= lr * v.weight;
    p.bias -= lr * v.bias;
  }
}

// --- schedule ---------------------------------------------------------------

LambdaSchedule::LambdaSchedule(std::vector<std::pair<std::size_t, double>> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw InvalidInput("lambda schedule needs at least one entry");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!(entries_[i].second >= 0.0) || !std::isfinite(entries_[i].second)) {
      throw InvalidInput("lambda schedule values must be finite and non-negative");
    }
    if (i > 0 && entries_[i].first <= entries_[i - 1].first) {
      throw InvalidInput("lambda schedule epochs must be strictly increasing");
    }
  }
}

LambdaSchedule LambdaSchedule::constant(double lambda) { return LambdaSchedule({{0, lambda}}); }

LambdaSchedule LambdaSchedule::parse(std::string_view text) {
  std::vector<std::pair<std::size_t, double>> entries;
  while (!text.empty()) {
    const std::size_t comma = text.find(',');
    std::string_view item = text.substr(0, comma);
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    const std::size_t colon = item.find(':');
    if (colon == std::string_view::npos) {
      throw InvalidInput("lambda schedule entry '" + std::string(item) + "' is not epoch:value");
    }
    std::size_t epoch = 0;
    double value = 0.0;
    const auto e = item.substr(0, colon);
    const auto v = item.substr(colon + 1);
    const auto r1 = std::from_chars(e.data(), e.data() + e.size(), epoch);
    const auto r2 = std::from_chars(v.data(), v.data() + v.size(), value);
    if (r1.ec != std::errc() || r1.ptr != e.data() + e.size() || r2.ec != std::errc() ||
        r2.ptr != v.data() + v.size()) {
      throw InvalidInput("cannot parse lambda schedule entry '" + std::string(item) + "'");
    }
    entries.emplace_back(epoch, value);
  }
  return LambdaSchedule(std::move(entries));
}

double LambdaSchedule::at(std::size_t epoch) const {
  if (entries_.empty()) return 0.0;
  double value = entries_.front().second;
  for (const auto& [threshold, lambda] : entries_) {
    if (threshold <= epoch) value = lambda;
  }
  return value;
}

std::string LambdaSchedule::to_string() const {
  std::string out;
  char buf[64];
  for (const auto& [epoch, lambda] : entries_) {
    if (!out.empty()) out += ',';
    out += std::to_string(epoch) + ':';
    const auto r = std::to_chars(buf, buf + sizeof(buf), lambda);
    out.append(buf, r.ptr);
  }
  return out;
}

// --- training ---------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidInput("batch size must be positive");
  if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
  if (!(min_learning_rate > 0.0) || min_learning_rate > learning_rate) {
    throw InvalidInput("min learning rate must lie in (0, learning_rate]");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InvalidInput("weight decay must be non-negative");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) throw InvalidInput("lr decay factor must lie in (0, 1)");
  if (plateau_patience == 0) throw InvalidInput("plateau patience must be positive");
  if (lambda_schedule.entries().empty()) throw InvalidInput("lambda schedule is empty");
  if (loss == LossKind::kLabelSmoothing) {
    for (const auto& [epoch, lambda] : lambda_schedule.entries()) {
      if (lambda > 1.0) throw InvalidInput("label smoothing weight must lie in [0, 1]");
    }
  }
}

EvalMetrics evaluate(const ModelParams& params, const LabeledDataset& ds) {
  if (ds.size() == 0) return {};
  const Summary s = summarize(params, ds.features, ds.labels, LossKind::kCrossEntropy, 0.0);
  return {s.accuracy, s.loss.ce, s.loss.entropy};
}

TrainResult train(const TrainConfig& config, const LabeledDataset& train_set, const LabeledDataset* eval_set) {
  config.validate();
  if (train_set.size() == 0) throw InvalidInput("training set is empty");
  if (train_set.class_count < 2) throw InvalidInput("training set needs at least 2 classes");
  if (eval_set && (eval_set->feature_dim() != train_set.feature_dim() || eval_set->class_count != train_set.class_count)) {
    throw InvalidInput("eval set shape does not match the training set");
  }

  TrainResult result;
  result.params = ModelParams::initialize(train_set.feature_dim(), config.hidden_dim, train_set.class_count,
                                          mix_seed(config.seed, 0));
  OptimizerState state = OptimizerState::for_params(result.params, config.learning_rate, config.momentum,
                                                    config.weight_decay);
  TrainMetrics& metrics = result.metrics;

  auto record = [&](std::size_t epoch, double lambda) {
    const Summary s = summarize(result.params, train_set.features, train_set.labels, config.loss, lambda);
    EpochMetrics m;
    m.epoch = epoch;
    m.lambda = lambda;
    m.learning_rate = state.learning_rate;
    m.train_loss = s.loss.total;
    m.train_ce = s.loss.ce;
    m.train_entropy = s.loss.entropy;
    m.train_accuracy = s.accuracy;
    if (eval_set && eval_set->size() > 0) {
      const EvalMetrics e = evaluate(result.params, *eval_set);
      m.eval_accuracy = e.accuracy;
      m.eval_ce = e.mean_ce;
    }
    metrics.epochs.push_back(m);
    if (!std::isfinite(m.train_loss)) {
      throw TrainingDiverged("training loss became non-finite at epoch " + std::to_string(epoch), metrics);
    }
    return m.train_loss;
  };

  auto finish = [&] {
    metrics.final_ce = metrics.final().train_ce;
    metrics.experimental_cpp = std::exp(-metrics.final_ce);
  };

  try {
    record(0, config.lambda_schedule.at(0));
  } catch (const TrainingDiverged&) {
    throw;
  } catch (const NumericalError& e) {
    throw TrainingDiverged(e.what(), metrics);
  }

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  Matrix batch_x;
  std::vector<std::size_t> batch_y;
  double best_loss = std::numeric_limits<double>::infinity();
  double current_lambda = std::numeric_limits<double>::quiet_NaN();
  std::size_t stale_epochs = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lambda = config.lambda_schedule.at(epoch);
    if (lambda != current_lambda) {
      // The objective changes with lambda, so plateau tracking restarts.
      current_lambda = lambda;
      best_loss = std::numeric_limits<double>::infinity();
      stale_epochs = 0;
    }

    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(config.seed, epoch + 1));
    std::shuffle(order.begin(), order.end(), rng);

    double loss = 0.0;
    try {
      for (std::size_t start = 0; start < n; start += config.batch_size) {
        const std::size_t count = std::min(config.batch_size, n - start);
        batch_x.resize(static_cast<Index>(count), train_set.features.cols());
        batch_y.resize(count);
        for (std::size_t b = 0; b < count; ++b) {
          const std::size_t row = order[start + b];
          batch_x.row(static_cast<Index>(b)) = train_set.features.row(static_cast<Index>(row));
          batch_y[b] = train_set.labels[row];
        }
        const BackwardResult br = backward(result.params, batch_x, batch_y, config.loss, lambda);
        if (!std::isfinite(br.loss.total)) throw NumericalError("non-finite minibatch loss");
        sgd_step(result.params, br.gradients, state);
      }
      loss = record(epoch + 1, lambda);
    } catch (const TrainingDiverged&) {
      throw;
    } catch (const NumericalError& e) {
      throw TrainingDiverged(std::string("epoch ") + std::to_string(epoch + 1) + ": " + e.what(), metrics);
    }

    if (loss < best_loss - config.plateau_threshold) {
      best_loss = loss;
      stale_epochs = 0;
    } else if (++stale_epochs >= config.plateau_patience) {
      stale_epochs = 0;
      if (state.learning_rate <= config.min_learning_rate) {
        if (config.stop_at_plateau) {
          metrics.stopped_at_plateau = true;
          break;
        }
      } else {
        state.learning_rate = std::max(state.learning_rate * config.lr_decay_factor, config.min_learning_rate);
      }
    }
  }
  finish();
  return result;
}

}  // namespace mer
