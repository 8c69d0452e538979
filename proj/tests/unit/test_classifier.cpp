#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/gradient_check.hpp"
#include "mer/checkpoint.hpp"
#include "mer/classifier.hpp"
#include "mer/error.hpp"

using namespace mer;
using mer::testing::model_gradient_error;
using mer::testing::random_model_case;

namespace {

LabeledDataset make_dataset(Matrix features, std::vector<std::size_t> labels, std::size_t classes) {
  LabeledDataset ds;
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  ds.class_count = classes;
  ds.corruption_mask.assign(ds.labels.size(), false);
  ds.original_labels = ds.labels;
  return ds;
}

// Two well-separated 2-D blobs.
LabeledDataset separable_toy(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  Matrix x(80, 2);
  std::vector<std::size_t> y(80);
  for (int i = 0; i < 80; ++i) {
    y[i] = i % 2;
    const double sign = y[i] == 0 ? -1.0 : 1.0;
    x(i, 0) = sign * 2.0 + n(rng);
    x(i, 1) = n(rng);
  }
  return make_dataset(std::move(x), std::move(y), 2);
}

TrainConfig toy_config(LossKind kind, double lambda) {
  TrainConfig cfg;
  cfg.loss = kind;
  cfg.lambda_schedule = LambdaSchedule::constant(lambda);
  cfg.hidden_dim = 8;
  cfg.batch_size = 8;
  cfg.epochs = 50;
  cfg.learning_rate = 0.05;
  cfg.seed = 3;
  return cfg;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    if (a.layers[k].weight != b.layers[k].weight || a.layers[k].bias != b.layers[k].bias) return false;
  }
  return a.input_dim == b.input_dim && a.hidden_dim == b.hidden_dim && a.class_count == b.class_count;
}

bool same_metrics(const EpochMetrics& a, const EpochMetrics& b) {
  return a.epoch == b.epoch && a.lambda == b.lambda && a.learning_rate == b.learning_rate &&
         a.train_loss == b.train_loss && a.train_ce == b.train_ce && a.train_entropy == b.train_entropy &&
         a.train_accuracy == b.train_accuracy && a.eval_accuracy == b.eval_accuracy && a.eval_ce == b.eval_ce;
}

}  // namespace

TEST_SUITE("classifier") {
  TEST_CASE("loss kind names") {
    CHECK(parse_loss_kind("ce") == LossKind::kCrossEntropy);
    CHECK(parse_loss_kind("mer") == LossKind::kMaxEntropy);
    CHECK(parse_loss_kind("ls") == LossKind::kLabelSmoothing);
    CHECK(to_string(LossKind::kMaxEntropy) == "mer");
    CHECK_THROWS_AS(parse_loss_kind("focal"), InvalidInput);
  }

  TEST_CASE("model shapes") {
    const auto lin = ModelParams::initialize(5, 0, 3, 1);
    CHECK(lin.layers.size() == 1);
    CHECK(lin.parameter_count() == 5 * 3 + 3);
    const auto mlp = ModelParams::initialize(5, 7, 3, 1);
    CHECK(mlp.layers.size() == 2);
    CHECK(mlp.parameter_count() == 5 * 7 + 7 + 7 * 3 + 3);
    const double bound = 1.0 / std::sqrt(5.0);
    CHECK(mlp.layers[0].weight.cwiseAbs().maxCoeff() <= bound);
    CHECK(mlp.layers[1].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(7.0));
    CHECK(same_params(ModelParams::initialize(5, 7, 3, 9), ModelParams::initialize(5, 7, 3, 9)));
    CHECK_FALSE(same_params(ModelParams::initialize(5, 7, 3, 9), ModelParams::initialize(5, 7, 3, 10)));
  }

  TEST_CASE("forward examples") {
    const auto zero = ModelParams::zeros(4, 6, 3);
    Matrix x = Matrix::Random(5, 4);
    const Matrix logits = forward(zero, x);
    CHECK(logits.rows() == 5);
    CHECK(logits.cwiseAbs().maxCoeff() == 0.0);

    // Linear model on one-hot features: row j of the logits is column j of W.
    auto lin = ModelParams::initialize(4, 0, 3, 5);
    lin.layers[0].bias.setZero();
    const Matrix eye = Matrix::Identity(4, 4);
    const Matrix out = forward(lin, eye);
    for (int j = 0; j < 4; ++j) {
      for (int c = 0; c < 3; ++c) CHECK(out(j, c) == lin.layers[0].weight(c, j));
    }

    CHECK_THROWS_AS(forward(lin, Matrix::Zero(2, 5)), InvalidInput);
  }

  TEST_CASE("single-sample linear gradient is an outer product") {
    auto lin = ModelParams::initialize(3, 0, 4, 2);
    Matrix x(1, 3);
    x << 0.5, -1.0, 2.0;
    const std::vector<std::size_t> y{2};
    const auto br = backward(lin, x, y, LossKind::kMaxEntropy, 0.4);
    const Matrix z = forward(lin, x);
    const auto p = softmax(LogitVector({z(0, 0), z(0, 1), z(0, 2), z(0, 3)}));
    const auto g = regularized_gradient(p, ClassLabel{2}, 0.4);
    for (int c = 0; c < 4; ++c) {
      CHECK(br.gradients.layers[0].bias[c] == doctest::Approx(g[c]).epsilon(1e-14));
      for (int j = 0; j < 3; ++j) {
        CHECK(br.gradients.layers[0].weight(c, j) == doctest::Approx(g[c] * x(0, j)).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("lambda = 0 MER gradients equal CE gradients bit for bit") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 10; ++t) {
      auto mc = random_model_case(rng, LossKind::kMaxEntropy);
      const auto a = backward(mc.params, mc.features, mc.labels, LossKind::kMaxEntropy, 0.0);
      const auto b = backward(mc.params, mc.features, mc.labels, LossKind::kCrossEntropy, 0.0);
      CHECK(same_params(a.gradients, b.gradients));
      CHECK(a.loss.total == b.loss.total);
    }
  }

  TEST_CASE("full-model gradients match finite differences") {
    for (LossKind kind : {LossKind::kCrossEntropy, LossKind::kMaxEntropy, LossKind::kLabelSmoothing}) {
      std::mt19937_64 rng(100 + static_cast<int>(kind));
      for (int t = 0; t < 20; ++t) {
        const auto mc = random_model_case(rng, kind);
        INFO("kind=" << to_string(kind) << " case " << t);
        CHECK(model_gradient_error(mc, kind) < 1e-5);
      }
    }
  }

  TEST_CASE("fixed small model: C = 7, hidden 9") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> n(0.0, 1.0);
    testing::ModelCase mc;
    mc.params = ModelParams::initialize(5, 9, 7, 12);
    for (auto& layer : mc.params.layers) layer.weight *= 2.0;
    mc.labels = {0, 3, 6, 2};
    mc.lambda = 0.3;
    const auto& l0 = mc.params.layers[0];
    do {
      mc.features = Matrix(4, 5);
      for (Eigen::Index i = 0; i < mc.features.size(); ++i) mc.features.data()[i] = n(rng);
    } while (((mc.features * l0.weight.transpose()).rowwise() + l0.bias.transpose()).cwiseAbs().minCoeff() < 1e-3);
    CHECK(model_gradient_error(mc, LossKind::kMaxEntropy) < 1e-5);
  }

  TEST_CASE("backward rejects bad batches") {
    const auto p = ModelParams::initialize(2, 0, 3, 1);
    const Matrix x = Matrix::Zero(2, 2);
    const std::vector<std::size_t> one{0};
    CHECK_THROWS_AS(backward(p, x, one, LossKind::kCrossEntropy, 0.0), InvalidInput);
    const std::vector<std::size_t> bad{0, 3};
    CHECK_THROWS_AS(backward(p, x, bad, LossKind::kCrossEntropy, 0.0), InvalidInput);
    const std::vector<std::size_t> ok{0, 1};
    CHECK_THROWS_AS(backward(p, x, ok, static_cast<LossKind>(42), 0.0), InvalidInput);
  }

  TEST_CASE("sgd_step") {
    const auto base = ModelParams::initialize(3, 4, 2, 8);
    auto grads = ModelParams::zeros(3, 4, 2);
    for (auto& layer : grads.layers) {
      layer.weight.setConstant(0.5);
      layer.bias.setConstant(-0.25);
    }

    SUBCASE("plain step when momentum and decay are off") {
      auto p = base;
      auto st = OptimizerState::for_params(p, 0.1, 0.0, 0.0);
      sgd_step(p, grads, st);
      for (std::size_t k = 0; k < p.layers.size(); ++k) {
        CHECK((p.layers[k].weight - (base.layers[k].weight.array() - 0.05).matrix()).cwiseAbs().maxCoeff() <= 1e-15);
        CHECK((p.layers[k].bias - (base.layers[k].bias.array() + 0.025).matrix()).cwiseAbs().maxCoeff() <= 1e-15);
      }
    }

    SUBCASE("zero gradient, no decay, zero velocity leaves params unchanged") {
      auto p = base;
      auto st = OptimizerState::for_params(p, 0.1, 0.9, 0.0);
      sgd_step(p, ModelParams::zeros(3, 4, 2), st);
      CHECK(same_params(p, base));
    }

    SUBCASE("two momentum steps on a fixed gradient move lr * g * 2.9") {
      auto p = base;
      auto st = OptimizerState::for_params(p, 0.1, 0.9, 0.0);
      sgd_step(p, grads, st);
      sgd_step(p, grads, st);
      for (std::size_t k = 0; k < p.layers.size(); ++k) {
        const Matrix dw = base.layers[k].weight - p.layers[k].weight;
        const Vector db = base.layers[k].bias - p.layers[k].bias;
        CHECK((dw.array() - 0.1 * 0.5 * 2.9).abs().maxCoeff() <= 1e-14);
        CHECK((db.array() + 0.1 * 0.25 * 2.9).abs().maxCoeff() <= 1e-14);
      }
    }

    SUBCASE("weight decay is coupled into the velocity") {
      auto p = base;
      auto st = OptimizerState::for_params(p, 0.1, 0.0, 0.01);
      sgd_step(p, ModelParams::zeros(3, 4, 2), st);
      CHECK((p.layers[0].weight - base.layers[0].weight * (1 - 0.1 * 0.01)).cwiseAbs().maxCoeff() <= 1e-15);
    }

    SUBCASE("non-finite gradient aborts without touching params") {
      auto p = base;
      auto st = OptimizerState::for_params(p, 0.1, 0.9, 0.0);
      auto bad = grads;
      bad.layers[1].bias[0] = NAN;
      CHECK_THROWS_AS(sgd_step(p, bad, st), NumericalError);
      CHECK(same_params(p, base));
    }
  }

  TEST_CASE("lambda schedule") {
    const auto s = LambdaSchedule::parse("5:0.1,10:0.5");
    CHECK(s.at(0) == 0.1);
    CHECK(s.at(5) == 0.1);
    CHECK(s.at(9) == 0.1);
    CHECK(s.at(10) == 0.5);
    CHECK(s.at(1000) == 0.5);
    CHECK(LambdaSchedule::parse(s.to_string()).entries() == s.entries());
    CHECK(LambdaSchedule::constant(0.3).at(42) == 0.3);
    CHECK_THROWS_AS(LambdaSchedule::parse("3:0.1,3:0.2"), InvalidInput);
    CHECK_THROWS_AS(LambdaSchedule::parse("0:-1"), InvalidInput);
    CHECK_THROWS_AS(LambdaSchedule::parse("0.5"), InvalidInput);
    CHECK_THROWS_AS(LambdaSchedule::parse("a:0.5"), InvalidInput);
    CHECK_THROWS_AS(LambdaSchedule::parse(""), InvalidInput);
  }

  TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = {};
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = {};
    cfg.loss = LossKind::kLabelSmoothing;
    cfg.lambda_schedule = LambdaSchedule::constant(1.5);
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  }

  TEST_CASE("evaluate") {
    std::mt19937_64 rng(12);
    SUBCASE("uniform predictions fall to the lowest class index") {
      Matrix x = Matrix::Random(40, 3);
      std::vector<std::size_t> y(40);
      std::size_t zeros = 0;
      for (auto& v : y) {
        v = rng() % 4;
        zeros += v == 0;
      }
      const auto m = evaluate(ModelParams::zeros(3, 0, 4), make_dataset(x, y, 4));
      CHECK(m.accuracy == doctest::Approx(double(zeros) / 40).epsilon(1e-15));
      CHECK(m.mean_ce == doctest::Approx(std::log(4.0)).epsilon(1e-14));
      CHECK(m.mean_entropy == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    }

    SUBCASE("perfect logits") {
      auto lin = ModelParams::zeros(3, 0, 3);
      lin.layers[0].weight = Matrix::Identity(3, 3) * 60.0;
      const auto m = evaluate(lin, make_dataset(Matrix::Identity(3, 3), {0, 1, 2}, 3));
      CHECK(m.accuracy == 1.0);
      CHECK(m.mean_ce < 1e-12);
    }

    SUBCASE("agrees with an independent re-implementation") {
      const auto params = ModelParams::initialize(6, 5, 4, 21);
      Matrix x(100, 6);
      std::normal_distribution<double> n(0, 2);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
      std::vector<std::size_t> y(100);
      for (auto& v : y) v = rng() % 4;
      const auto got = evaluate(params, make_dataset(x, y, 4));

      // Plain loops, no Eigen products, no library softmax.
      const auto& l0 = params.layers[0];
      const auto& l1 = params.layers[1];
      double hits = 0, ce = 0, ent = 0;
      for (int r = 0; r < 100; ++r) {
        std::vector<double> hidden(5), logits(4);
        for (int h = 0; h < 5; ++h) {
          double s = l0.bias[h];
          for (int j = 0; j < 6; ++j) s += l0.weight(h, j) * x(r, j);
          hidden[h] = s > 0 ? s : 0;
        }
        for (int c = 0; c < 4; ++c) {
          double s = l1.bias[c];
          for (int h = 0; h < 5; ++h) s += l1.weight(c, h) * hidden[h];
          logits[c] = s;
        }
        int best = 0;
        for (int c = 1; c < 4; ++c) {
          if (logits[c] > logits[best]) best = c;
        }
        hits += best == int(y[r]);
        const double mx = logits[best];
        double z = 0;
        for (double v : logits) z += std::exp(v - mx);
        double h = 0;
        for (double v : logits) {
          const double q = std::exp(v - mx) / z;
          h -= q * std::log(q);
        }
        ce += -(logits[y[r]] - mx - std::log(z));
        ent += h;
      }
      CHECK(got.accuracy == doctest::Approx(hits / 100).epsilon(1e-15));
      CHECK(got.mean_ce == doctest::Approx(ce / 100).epsilon(1e-12));
      CHECK(got.mean_entropy == doctest::Approx(ent / 100).epsilon(1e-12));
    }
  }

  TEST_CASE("train with zero epochs reports the initialized model") {
    const auto ds = separable_toy(1);
    auto cfg = toy_config(LossKind::kCrossEntropy, 0.0);
    cfg.epochs = 0;
    const auto res = train(cfg, ds);
    REQUIRE(res.metrics.epochs.size() == 1);
    CHECK(res.metrics.final().epoch == 0);
    const auto init = evaluate(res.params, ds);
    CHECK(res.metrics.final().train_accuracy == init.accuracy);
    CHECK(res.metrics.final_ce == init.mean_ce);
  }

  TEST_CASE("separable toy set: CE reaches 1.0, MER keeps more entropy") {
    const auto ds = separable_toy(2);
    const auto ce = train(toy_config(LossKind::kCrossEntropy, 0.0), ds);
    const auto mer = train(toy_config(LossKind::kMaxEntropy, 0.5), ds);
    CHECK(ce.metrics.final().train_accuracy == 1.0);
    CHECK(mer.metrics.final().train_accuracy == 1.0);
    CHECK(mer.metrics.final().train_entropy > ce.metrics.final().train_entropy);
    CHECK(ce.metrics.epochs.size() == 51);
  }

  TEST_CASE("training is deterministic given the seed") {
    const auto ds = separable_toy(3);
    auto cfg = toy_config(LossKind::kMaxEntropy, 0.3);
    cfg.epochs = 10;
    const auto a = train(cfg, ds, &ds);
    const auto b = train(cfg, ds, &ds);
    REQUIRE(a.metrics.epochs.size() == b.metrics.epochs.size());
    for (std::size_t i = 0; i < a.metrics.epochs.size(); ++i) CHECK(same_metrics(a.metrics.epochs[i], b.metrics.epochs[i]));
    CHECK(same_params(a.params, b.params));
    cfg.seed = 4;
    const auto c = train(cfg, ds, &ds);
    CHECK_FALSE(same_params(a.params, c.params));
  }

  TEST_CASE("lambda schedule is applied by epoch") {
    const auto ds = separable_toy(4);
    auto cfg = toy_config(LossKind::kMaxEntropy, 0.0);
    cfg.lambda_schedule = LambdaSchedule::parse("0:0.1,3:0.6");
    cfg.epochs = 5;
    const auto res = train(cfg, ds);
    // Metrics row e describes the model after training epoch e - 1 (zero-based).
    for (const auto& m : res.metrics.epochs) {
      CHECK(m.lambda == cfg.lambda_schedule.at(m.epoch == 0 ? 0 : m.epoch - 1));
    }
    CHECK(res.metrics.epochs[3].lambda == 0.1);
    CHECK(res.metrics.epochs[4].lambda == 0.6);
  }

  TEST_CASE("divergence raises TrainingDiverged with partial metrics") {
    const auto ds = separable_toy(5);
    auto cfg = toy_config(LossKind::kCrossEntropy, 0.0);
    cfg.learning_rate = 1e12;
    cfg.momentum = 0.0;
    cfg.epochs = 20;
    try {
      train(cfg, ds);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(!e.partial().epochs.empty());
      CHECK(e.partial().epochs.front().epoch == 0);
    }
  }

  TEST_CASE("plateau decay lowers the learning rate and can stop training") {
    const auto ds = separable_toy(6);
    auto cfg = toy_config(LossKind::kMaxEntropy, 0.5);
    cfg.epochs = 400;
    cfg.plateau_patience = 2;
    cfg.stop_at_plateau = true;
    const auto res = train(cfg, ds);
    CHECK(res.metrics.stopped_at_plateau);
    CHECK(res.metrics.epochs.size() < 401);
    CHECK(res.metrics.final().learning_rate == doctest::Approx(cfg.min_learning_rate));
    for (std::size_t i = 1; i < res.metrics.epochs.size(); ++i) {
      CHECK(res.metrics.epochs[i].learning_rate <= res.metrics.epochs[i - 1].learning_rate);
    }
  }

  TEST_CASE("checkpoint round trip is lossless") {
    const auto params = ModelParams::initialize(7, 5, 3, 99);
    const Checkpoint ck{params, 99, 12};
    const auto back = parse_checkpoint(serialize_checkpoint(ck));
    CHECK(same_params(back.params, params));
    CHECK(back.seed == 99);
    CHECK(back.epoch == 12);

    const auto lin = parse_checkpoint(serialize_checkpoint({ModelParams::initialize(4, 0, 2, 1), 1, 0}));
    CHECK(lin.params.layers.size() == 1);

    CHECK_THROWS_AS(parse_checkpoint("not a checkpoint"), ParseError);
    CHECK_THROWS_AS(parse_checkpoint(serialize_checkpoint(ck) + "extra\n"), ParseError);
    auto poisoned = ck;
    poisoned.params.layers[0].bias[0] = INFINITY;
    CHECK_THROWS_AS(parse_checkpoint(serialize_checkpoint(poisoned)), ParseError);
    auto text = serialize_checkpoint(ck);
    text.resize(text.size() / 2);
    CHECK_THROWS_AS(parse_checkpoint(text), ParseError);
  }
}
