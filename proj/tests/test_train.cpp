#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "lktcn/errors.hpp"
#include "lktcn/gradcheck.hpp"
#include "lktcn/train.hpp"

using namespace lktcn;

namespace {

TimeSeriesDataset sine_dataset(std::size_t rows, std::uint64_t seed) {
  TimeSeriesDataset d;
  d.names = {"a", "b"};
  Rng rng(seed, 0);
  const double pi = std::acos(-1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    d.values.push_back(std::sin(2 * pi * r / 24.0) + 0.05 * rng.normal());
    d.values.push_back(0.5 * std::cos(2 * pi * r / 12.0) + 0.3 * std::sin(2 * pi * r / 24.0) + 0.05 * rng.normal());
  }
  return d;
}

ModelConfig sine_config() {
  ModelConfig c;
  c.M = 2;
  c.L = 48;
  c.T = 12;
  c.P = 8;
  c.S = 4;
  c.D = 8;
  c.K = 1;
  c.large_k = 7;
  c.small_k = 3;
  return c;
}

struct Prepared {
  TimeSeriesDataset data;
  Splits splits;
};

Prepared prepared(std::size_t rows = 800) {
  Prepared p{sine_dataset(rows, 1), {}};
  p.splits = split(rows, SplitSpec::standard(), 48, 12);
  standardize(p.data, p.splits.train_border);
  return p;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig t;
  t.lr = 1e-3;
  t.max_epochs = epochs;
  t.seed = 7;
  return t;
}

}  // namespace

TEST(Loss, MseExamples) {
  Tensor<double> a({2, 2, 3}, 0.5);
  EXPECT_EQ(mse_loss(a, a).item(), 0.0);
  EXPECT_EQ(mse_loss(Tensor<double>({2, 2, 3}, 0.0), Tensor<double>({2, 2, 3}, 1.0)).item(), 1.0);
}

TEST(Loss, MseGradient) {
  Rng rng(1, 0);
  Tensor<double> pred = uniform_tensor<double>({2, 3, 4}, rng);
  Tensor<double> target = uniform_tensor<double>({2, 3, 4}, rng);
  const Tensor<double> g = analytic_gradient([&](const Tensor<double>& p) { return mse_loss(p, target); }, pred);
  for (std::size_t i = 0; i < pred.numel(); ++i) EXPECT_NEAR(g[i], 2.0 * (pred[i] - target[i]) / 24.0, 1e-15);
  EXPECT_LT(finite_difference_check([&](const Tensor<double>& p) { return mse_loss(p, target); }, pred), 1e-8);
}

TEST(Loss, MaeExamples) {
  Tensor<double> t({1, 1, 4}, std::vector<double>{1, -1, 1, -1});
  EXPECT_EQ(mae_metric(t, t), 0.0);
  EXPECT_EQ(mae_metric(Tensor<double>({1, 1, 4}, 0.0), t), 1.0);
  Rng rng(2, 0);
  Tensor<double> a = uniform_tensor<double>({10}, rng), b = uniform_tensor<double>({10}, rng);
  Tensor<double> a3 = ops::scale(a, 3.0), b3 = ops::scale(b, 3.0);
  EXPECT_NEAR(mae_metric(a3, b3), 3.0 * mae_metric(a, b), 1e-14);
  EXPECT_THROW(mae_metric(a, Tensor<double>({9})), std::invalid_argument);
}

TEST(Adam, ZeroGradientsLeaveParamsUnchanged) {
  Tensor<double> w({3}, std::vector<double>{1, 2, 3});
  w.set_requires_grad(true);
  w.grad_buffer();
  AdamState<double> s;
  adam_step<double>({w}, s, 0.1);
  EXPECT_EQ(std::vector<double>(w.data().begin(), w.data().end()), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  for (double g : {0.3, -4.0, 1e-3}) {
    Tensor<double> w({1}, 2.0);
    w.set_requires_grad(true);
    w.grad_buffer()[0] = g;
    AdamState<double> s;
    adam_step<double>({w}, s, 0.01);
    EXPECT_NEAR(w[0], 2.0 - 0.01 * (g > 0 ? 1 : -1), 1e-7);
  }
}

TEST(Adam, ZeroLearningRateChangesNothing) {
  Tensor<float> w({4}, std::vector<float>{1, -2, 3, 0.5f});
  w.set_requires_grad(true);
  for (auto& g : w.grad_buffer()) g = 0.7f;
  AdamState<float> s;
  adam_step<float>({w}, s, 0.0);
  EXPECT_EQ(std::vector<float>(w.data().begin(), w.data().end()), (std::vector<float>{1, -2, 3, 0.5f}));
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  const std::vector<double> target{3.0, -1.5, 0.25};
  const std::vector<double> curvature{1.0, 4.0, 0.5};
  Tensor<double> w({3}, 0.0);
  w.set_requires_grad(true);
  AdamState<double> s;
  for (int step = 0; step < 500; ++step) {
    auto g = w.grad_buffer();
    for (std::size_t i = 0; i < 3; ++i) g[i] = 2.0 * curvature[i] * (w[i] - target[i]);
    adam_step<double>({w}, s, 0.05);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w[i], target[i], 1e-3);
}

TEST(Adam, DecoupledWeightDecayShrinksWithoutGradient) {
  Tensor<double> w({1}, 2.0);
  w.set_requires_grad(true);
  w.grad_buffer();
  AdamState<double> s;
  adam_step<double>({w}, s, 0.1, 0.5);
  EXPECT_NEAR(w[0], 2.0 * (1.0 - 0.1 * 0.5), 1e-15);
}

TEST(Training, LossDescendsOnFixedBatch) {
  ModelConfig c = fixtures::tiny_config();
  Rng rng(3, 0);
  auto params = init_params<float>(c, rng);
  std::vector<Tensor<float>> weights;
  for (const auto& [n, t] : params.named_parameters()) weights.push_back(t);
  Tensor<float> x = uniform_tensor<float>({8, c.M, c.L}, rng);
  Tensor<float> y = uniform_tensor<float>({8, c.M, c.T}, rng);
  AdamState<float> state;
  std::vector<double> losses;
  for (int step = 0; step < 6; ++step) {
    Rng drop(11, 2);  // same dropout mask every step
    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    Tensor<float> loss = mse_loss(forward(x, params, c, Mode::Train, drop), y);
    losses.push_back(loss.item());
    tape.backward(loss);
    adam_step(weights, state, 1e-3);
    params.zero_grad();
  }
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << "step " << i;
}

TEST(Training, SameSeedIsBitIdentical) {
  auto p = prepared();
  TrainConfig t = quick(2);
  t.max_steps_per_epoch = 8;
  const auto a = train<float>(sine_config(), t, p.data, p.splits);
  const auto b = train<float>(sine_config(), t, p.data, p.splits);
  ASSERT_GE(a.step_losses.size(), 10u);
  EXPECT_EQ(a.step_losses, b.step_losses);
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    EXPECT_EQ(a.epochs[i].train_mse, b.epochs[i].train_mse);
    EXPECT_EQ(a.epochs[i].val_mse, b.epochs[i].val_mse);
    EXPECT_EQ(a.epochs[i].val_mae, b.epochs[i].val_mae);
  }
  t.seed = 8;
  EXPECT_NE(train<float>(sine_config(), t, p.data, p.splits).step_losses, a.step_losses);
}

TEST(Training, ZeroPatienceStopsAtFirstWorsening) {
  auto p = prepared();
  TrainConfig t = quick(30);
  t.patience = 0;
  t.lr = 3e-3;
  t.max_steps_per_epoch = 4;
  const auto r = train<float>(sine_config(), t, p.data, p.splits);
  double best = INFINITY;
  for (std::size_t i = 0; i + 1 < r.epochs.size(); ++i) {
    EXPECT_LT(r.epochs[i].val_mse, best) << "epoch " << i + 1 << " should already have stopped training";
    best = r.epochs[i].val_mse;
  }
  if (r.early_stopped) EXPECT_GE(r.epochs.back().val_mse, best);
  else EXPECT_EQ(r.epochs.size(), 30u);
}

TEST(Training, KeepsBestValidationEpoch) {
  auto p = prepared();
  TrainConfig t = quick(6);
  t.patience = 1;
  t.max_steps_per_epoch = 6;
  auto r = train<float>(sine_config(), t, p.data, p.splits);
  double min_val = INFINITY;
  for (const auto& e : r.epochs) min_val = std::min(min_val, e.val_mse);
  EXPECT_EQ(r.best_val_mse, min_val);
  EXPECT_EQ(r.epochs[r.best_epoch - 1].val_mse, min_val);
  EXPECT_NEAR(evaluate(r.best, sine_config(), p.data, p.splits.val).mse, min_val, 1e-12);
}

TEST(Training, BeatsRepeatLastOnSineData) {
  auto p = prepared();
  TrainConfig t = quick(20);
  auto r = train<float>(sine_config(), t, p.data, p.splits);
  const Metrics naive = evaluate_repeat_last(p.data, p.splits.val, 48, 12);
  EXPECT_LT(r.best_val_mse, naive.mse);
  EXPECT_LE(r.epochs.size(), 20u);
}

TEST(Training, DivergenceIsReported) {
  auto p = prepared();
  TrainConfig t = quick(3);
  t.lr = 1e30;
  t.max_steps_per_epoch = 5;
  EXPECT_THROW(train<float>(sine_config(), t, p.data, p.splits), DivergenceError);
}

TEST(Training, RejectsBadConfig) {
  auto p = prepared();
  TrainConfig t = quick(1);
  t.lr = 0.0;
  EXPECT_THROW(train<float>(sine_config(), t, p.data, p.splits), std::invalid_argument);
  ModelConfig wrong = sine_config();
  wrong.M = 3;
  EXPECT_THROW(train<float>(wrong, quick(1), p.data, p.splits), std::invalid_argument);
}

TEST(Evaluate, RepeatLastOnConstantSeriesIsExact) {
  TimeSeriesDataset d;
  d.names = {"a", "b"};
  d.values.assign(200, 4.0);
  const Metrics m = evaluate_repeat_last(d, {0, 100}, 10, 5);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.windows, 86u);
}

TEST(Evaluate, DeterministicAndMergeConsistent) {
  auto p = prepared();
  TrainConfig t = quick(2);
  t.max_steps_per_epoch = 10;
  auto r = train<float>(sine_config(), t, p.data, p.splits);
  const Metrics a = evaluate(r.best, sine_config(), p.data, p.splits.test);
  const Metrics b = evaluate(r.best, sine_config(), p.data, p.splits.test);
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_EQ(a.mae, b.mae);
  const auto merged = merge_reparam(r.best, sine_config());
  const Metrics m = evaluate(merged, sine_config(), p.data, p.splits.test);
  EXPECT_LT(std::abs(m.mse - a.mse), 1e-4);
}
