#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "lktcn/gradcheck.hpp"
#include "lktcn/ops.hpp"
#include "oracles.hpp"

using namespace lktcn;
using TD = Tensor<double>;

namespace {

TD make(Shape s, std::vector<double> v) { return TD(std::move(s), std::move(v)); }

std::vector<double> values(const TD& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Tensor, StoresProductOfShape) {
  TD t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.data().size(), 24u);
  EXPECT_THROW(TD({2, 0}), std::invalid_argument);
  EXPECT_THROW(TD(Shape{}), std::invalid_argument);
  EXPECT_THROW(TD({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, GradHasDataShape) {
  TD x = make({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    Tape<double>::Scope s(tape);
    tape.backward(ops::sum(ops::square(x)));
  }
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().size(), x.numel());
  EXPECT_EQ(x.grad_tensor().shape(), x.shape());
}

TEST(Tensor, DetachedNeverAccumulates) {
  TD x = make({3}, {1, 2, 3});
  x.set_requires_grad(true);
  TD d = x.detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_FALSE(d.same_storage(x));
  Tape<double> tape;
  {
    Tape<double>::Scope s(tape);
    TD loss = ops::sum(ops::add(ops::square(d), x));
    tape.backward(loss);
  }
  EXPECT_FALSE(d.has_grad());
  EXPECT_EQ(values(x.grad_tensor()), (std::vector<double>{1, 1, 1}));
}

TEST(Tape, SumGradientIsOnes) {
  TD x = make({4}, {0.5, -1, 2, 3});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tape<double>::Scope s(tape);
  tape.backward(ops::sum(x));
  EXPECT_EQ(values(x.grad_tensor()), (std::vector<double>{1, 1, 1, 1}));
}

TEST(Tape, SquareGradient) {
  TD x = make({2}, {1, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tape<double>::Scope s(tape);
  tape.backward(ops::sum(ops::square(x)));
  EXPECT_EQ(values(x.grad_tensor()), (std::vector<double>{2, 4}));
}

TEST(Tape, SecondBackwardIsAnError) {
  TD x = make({2}, {1, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tape<double>::Scope s(tape);
  TD loss = ops::sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), std::logic_error);
}

TEST(Tape, NonScalarLossRejected) {
  TD x = make({2}, {1, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tape<double>::Scope s(tape);
  TD y = ops::square(x);
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
}

TEST(Tape, RecordsInExecutionOrder) {
  TD x = make({2}, {1, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tape<double>::Scope s(tape);
  TD a = ops::square(x);
  TD b = ops::scale(a, 2.0);
  TD c = ops::sum(b);
  ASSERT_EQ(tape.size(), 3u);
  EXPECT_EQ(tape.records()[0].op, "square");
  EXPECT_EQ(tape.records()[1].op, "scale");
  EXPECT_EQ(tape.records()[2].op, "sum");
  // every input of record i is either a leaf or the output of an earlier record
  EXPECT_TRUE(tape.records()[1].inputs[0].same_storage(tape.records()[0].output));
  EXPECT_TRUE(tape.records()[2].inputs[0].same_storage(tape.records()[1].output));
}

TEST(Tape, NothingRecordedWithoutGradInputs) {
  TD x = make({2}, {1, 2});
  Tape<double> tape;
  Tape<double>::Scope s(tape);
  ops::sum(ops::square(x));
  EXPECT_EQ(tape.size(), 0u);
}

// ---- conv1d_grouped ----

TEST(Conv, IdentityKernel) {
  TD y = ops::conv1d_grouped(make({1, 1, 3}, {1, 2, 3}), make({1, 1, 1}, {1.0}), TD(), 1, Padding::none(), 1);
  EXPECT_EQ(values(y), (std::vector<double>{1, 2, 3}));
}

TEST(Conv, PairSumKernel) {
  TD y = ops::conv1d_grouped(make({1, 1, 3}, {1, 2, 3}), make({1, 1, 2}, {1, 1}), TD(), 1, Padding::none(), 1);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2}));
  EXPECT_EQ(values(y), (std::vector<double>{3, 5}));
}

TEST(Conv, GroupedIdentity) {
  TD x = make({1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  TD y = ops::conv1d_grouped(x, make({2, 1, 1}, {1.0, 1.0}), TD(), 1, Padding::none(), 2);
  EXPECT_EQ(values(y), values(x));
}

TEST(Conv, ShapeErrors) {
  TD x({1, 4, 5});
  EXPECT_THROW(ops::conv1d_grouped(x, TD({4, 2, 1}), TD(), 1, Padding::none(), 3), std::invalid_argument);
  EXPECT_THROW(ops::conv1d_grouped(x, TD({3, 1, 1}), TD(), 1, Padding::none(), 4), std::invalid_argument);
  EXPECT_THROW(ops::conv1d_grouped(x, TD({4, 3, 1}), TD(), 1, Padding::none(), 1), std::invalid_argument);
  EXPECT_THROW(ops::conv1d_grouped(x, TD({4, 4, 7}), TD(), 1, Padding::none(), 1), std::invalid_argument);
  EXPECT_THROW(ops::conv1d_grouped(x, TD({4, 4, 1}), TD({3}), 1, Padding::none(), 1), std::invalid_argument);
  EXPECT_THROW(ops::conv1d_grouped(TD({4, 5}), TD({4, 4, 1}), TD(), 1, Padding::none(), 1), std::invalid_argument);
}

TEST(Conv, OutputLengthFormula) {
  for (std::size_t N : {5u, 8u, 13u})
    for (std::size_t k : {1u, 2u, 3u})
      for (std::size_t s : {1u, 2u, 3u})
        for (std::size_t pad : {0u, 1u, 2u}) {
          TD y = ops::conv1d_grouped(TD({1, 1, N}, 1.0), TD({1, 1, k}, 1.0), TD(), s, Padding::symmetric(pad), 1);
          EXPECT_EQ(y.dim(2), (N + 2 * pad - k) / s + 1);
          EXPECT_EQ(ops::conv1d_output_length(N, k, s, Padding::symmetric(pad)), y.dim(2));
        }
}

TEST(Conv, MatchesNestedLoopOracleOnGrid) {
  Rng rng(11, 0);
  int cases = 0;
  double worst = 0.0;
  for (std::size_t groups : {1u, 2u, 3u})
    for (std::size_t k : {1u, 2u, 3u, 5u})
      for (std::size_t stride : {1u, 2u, 3u})
        for (int pad_mode = 0; pad_mode < 3; ++pad_mode)
          for (std::size_t N : {4u, 9u}) {
            const std::size_t B = 2, Cin = 2 * groups, Cout = groups * (1 + cases % 2);
            Padding pad = pad_mode == 0 ? Padding::none()
                          : pad_mode == 1 ? Padding::symmetric(k / 2)
                                          : Padding::repeat_last(k > 1 ? k - 1 : 1);
            if (N + pad.total() < k) continue;
            TD x = uniform_tensor<double>({B, Cin, N}, rng);
            TD w = uniform_tensor<double>({Cout, Cin / groups, k}, rng);
            TD b = uniform_tensor<double>({Cout}, rng);
            TD y = ops::conv1d_grouped(x, w, b, stride, pad, groups);
            const auto xb = values(x), wb = values(w), bb = values(b);
            std::size_t nout = 0;
            const auto ref = oracle::conv1d(xb, B, Cin, N, wb, Cout, k, &bb, stride, pad.left, pad.right, groups,
                                            pad.kind == Padding::Kind::RepeatLast, &nout);
            ASSERT_EQ(y.shape(), (Shape{B, Cout, nout}));
            for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - y[i]));
            ++cases;
          }
  EXPECT_GE(cases, 200);
  EXPECT_LT(worst, 1e-12);
}

TEST(Conv, GroupLocality) {
  Rng rng(3, 0);
  const std::size_t groups = 3, Cin = 6, Cout = 9;
  TD x = uniform_tensor<double>({2, Cin, 7}, rng);
  TD w = uniform_tensor<double>({Cout, Cin / groups, 3}, rng);
  TD b = uniform_tensor<double>({Cout}, rng);
  TD y = ops::conv1d_grouped(x, w, b, 1, Padding::symmetric(1), groups);
  for (std::size_t j = 0; j < groups; ++j) {
    TD xz = x.clone();
    auto d = xz.mutable_data();
    for (std::size_t bi = 0; bi < 2; ++bi)
      for (std::size_t c = j * 2; c < j * 2 + 2; ++c)
        for (std::size_t n = 0; n < 7; ++n) d[(bi * Cin + c) * 7 + n] = 0.0;
    TD yz = ops::conv1d_grouped(xz, w, b, 1, Padding::symmetric(1), groups);
    for (std::size_t bi = 0; bi < 2; ++bi)
      for (std::size_t c = 0; c < Cout; ++c) {
        if (c / 3 == j) continue;
        for (std::size_t n = 0; n < 7; ++n) EXPECT_EQ(yz[(bi * Cout + c) * 7 + n], y[(bi * Cout + c) * 7 + n]);
      }
  }
}

// ---- batchnorm1d ----

TEST(BatchNorm, ConstantChannelGivesZeros) {
  BNState<double> s(1);
  TD y = ops::batchnorm1d(TD({2, 1, 3}, 4.0), s, Mode::Train);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, TwoPointChannel) {
  BNState<double> s(1);
  s.eps = 1e-14;
  TD y = ops::batchnorm1d(make({1, 1, 2}, {0, 2}), s, Mode::Train);
  EXPECT_NEAR(y[0], -1.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0, 1e-12);
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  BNState<double> s(2);
  s.eps = 0.0;
  TD x = make({1, 2, 3}, {1, -2, 3, 0.5, 7, -1});
  TD y = ops::batchnorm1d(x, s, Mode::Eval);
  EXPECT_EQ(values(y), values(x));
}

TEST(BatchNorm, RejectsSingleSampleInTraining) {
  BNState<double> s(2);
  EXPECT_THROW(ops::batchnorm1d(TD({1, 2, 1}), s, Mode::Train), std::invalid_argument);
  EXPECT_NO_THROW(ops::batchnorm1d(TD({1, 2, 1}), s, Mode::Eval));
  EXPECT_THROW(ops::batchnorm1d(TD({1, 3, 4}), s, Mode::Eval), std::invalid_argument);
}

TEST(BatchNorm, RunningStatsFollowMomentum) {
  BNState<double> s(1);
  const std::vector<double> v{1, 2, 3, 6};
  ops::batchnorm1d(make({2, 1, 2}, v), s, Mode::Train);
  const double mean = 3.0;
  double ss = 0;
  for (double a : v) ss += (a - mean) * (a - mean);
  EXPECT_NEAR(s.running_mean[0], 0.9 * 0.0 + 0.1 * mean, 1e-15);
  EXPECT_NEAR(s.running_var[0], 0.9 * 1.0 + 0.1 * ss / 3.0, 1e-15);
  EXPECT_EQ(s.batches_tracked, 1);
}

// ---- gelu ----

TEST(Gelu, ReferenceValues) {
  EXPECT_EQ(ops::gelu(make({1}, {0.0}))[0], 0.0);
  EXPECT_NEAR(ops::gelu(make({1}, {10.0}))[0], 10.0, 1e-6);
  const double g1 = ops::gelu(make({1}, {1.0}))[0];
  EXPECT_NEAR(g1, oracle::gelu(1.0), 1e-14);
  EXPECT_NEAR(g1, 0.8413447, 1e-7);
  for (double x : {-2.5, -1.0, -0.3, 0.7, 2.0}) EXPECT_NEAR(ops::gelu(make({1}, {x}))[0], oracle::gelu(x), 1e-14);
}

// ---- dropout ----

TEST(Dropout, IdentityCases) {
  Rng rng(1, 0);
  TD x = make({4}, {1, 2, 3, 4});
  EXPECT_EQ(values(ops::dropout(x, 0.0, Mode::Train, rng)), values(x));
  EXPECT_EQ(values(ops::dropout(x, 0.7, Mode::Eval, rng)), values(x));
  EXPECT_THROW(ops::dropout(x, 1.0, Mode::Train, rng), std::invalid_argument);
  EXPECT_THROW(ops::dropout(x, -0.1, Mode::Train, rng), std::invalid_argument);
}

TEST(Dropout, SurvivorMeanWithinThreeSigma) {
  Rng rng(2, 0);
  const std::size_t n = 100000;
  TD y = ops::dropout(TD({n}, 1.0), 0.5, Mode::Train, rng);
  double mean = 0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    mean += v;
  }
  mean /= n;
  // Each element is 0 or 2 with probability 1/2: variance 1, so sigma of the mean is 1/sqrt(n).
  EXPECT_LT(std::abs(mean - 1.0), 3.0 / std::sqrt(double(n)));
}

TEST(Dropout, MaskReproducibleFromSeed) {
  Rng a(9, 2), b(9, 2), c(9, 3);
  TD x({64}, 1.0);
  const auto ya = values(ops::dropout(x, 0.3, Mode::Train, a));
  EXPECT_EQ(ya, values(ops::dropout(x, 0.3, Mode::Train, b)));
  EXPECT_NE(ya, values(ops::dropout(x, 0.3, Mode::Train, c)));
}

// ---- linear ----

TEST(Linear, Examples) {
  TD x = make({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(values(ops::linear(x, make({2, 2}, {1, 0, 0, 1}), make({2}, {0, 0}))), values(x));
  EXPECT_EQ(values(ops::linear(make({1, 2}, {1, 2}), make({1, 2}, {1, 1}), make({1}, {0}))),
            (std::vector<double>{3}));
  EXPECT_THROW(ops::linear(x, TD({2, 3}), TD({2})), std::invalid_argument);
}

TEST(Linear, MatchesMatmulOracle) {
  Rng rng(4, 0);
  TD x = uniform_tensor<double>({3, 2, 5}, rng);
  TD w = uniform_tensor<double>({4, 5}, rng);
  TD b = uniform_tensor<double>({4}, rng);
  TD y = ops::linear(x, w, b);
  EXPECT_EQ(y.shape(), (Shape{3, 2, 4}));
  const auto ref = oracle::matmul(values(x), 6, 5, values(w), 4, values(b));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

// ---- layout ----

TEST(Layout, IdentityPermutation) {
  Rng rng(5, 0);
  TD x = uniform_tensor<double>({2, 3, 4}, rng);
  EXPECT_EQ(values(ops::permute(x, {0, 1, 2})), values(x));
}

TEST(Layout, PermuteRoundTripIsExact) {
  Rng rng(6, 0);
  TD x = uniform_tensor<double>({2, 3, 4, 5}, rng);
  TD p = ops::permute(x, {2, 0, 3, 1});
  EXPECT_EQ(p.shape(), (Shape{4, 2, 5, 3}));
  // inverse of (2,0,3,1) is (1,3,0,2)
  TD back = ops::permute(p, {1, 3, 0, 2});
  EXPECT_EQ(back.shape(), x.shape());
  EXPECT_EQ(values(back), values(x));
}

TEST(Layout, ChannelMergeRoundTrip) {
  Rng rng(7, 0);
  TD x = uniform_tensor<double>({2, 3, 4, 5}, rng);
  TD flat = ops::reshape(x, {2, 12, 5});
  TD fm = ops::permute_reshape(x, {0, 2, 1, 3}, {2, 12, 5});
  // feature-major channel d*M+m holds variable-major channel m*D+d
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t d = 0; d < 4; ++d)
      for (std::size_t n = 0; n < 5; ++n) EXPECT_EQ(fm[(d * 3 + m) * 5 + n], flat[(m * 4 + d) * 5 + n]);
  TD back = ops::permute_reshape(ops::reshape(fm, {2, 4, 3, 5}), {0, 2, 1, 3}, {2, 3, 4, 5});
  EXPECT_EQ(values(back), values(x));
}

TEST(Layout, Errors) {
  TD x({2, 3});
  EXPECT_THROW(ops::reshape(x, {5}), std::invalid_argument);
  EXPECT_THROW(ops::permute(x, {0, 0}), std::invalid_argument);
  EXPECT_THROW(ops::permute(x, {0}), std::invalid_argument);
  EXPECT_THROW(ops::permute_reshape(x, {1, 0}, {7}), std::invalid_argument);
}

// ---- finite differences ----

TEST(FiniteDifference, SumMatchesToRoundoff) {
  Rng rng(8, 0);
  TD x = uniform_tensor<double>({3, 4}, rng);
  EXPECT_LT(finite_difference_check([](const TD& t) { return ops::sum(t); }, x), 1e-8);
}

TEST(FiniteDifference, ConvBatchNormGelu) {
  Rng rng(9, 0);
  TD x = uniform_tensor<double>({2, 4, 6}, rng);
  TD w = uniform_tensor<double>({4, 2, 3}, rng);
  TD b = uniform_tensor<double>({4}, rng);
  const auto f = [&](const TD& t) {
    BNState<double> s(4);
    return ops::sum(ops::gelu(ops::batchnorm1d(ops::conv1d_grouped(t, w, b, 1, Padding::symmetric(1), 2), s,
                                               Mode::Train)));
  };
  EXPECT_LT(finite_difference_check(f, x), 1e-5);
}

TEST(FiniteDifference, DetectsBrokenBackward) {
  // y = x^3 with a backward rule that claims dy/dx = 2x.
  const auto broken_cube = [](const TD& x) {
    TD out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.mutable_data()[i] = x[i] * x[i] * x[i];
    return record_op<double>("broken_cube", out, {x}, [x](const TD& o) {
      double* g = x.grad_buffer().data();
      for (std::size_t i = 0; i < x.numel(); ++i) g[i] += o.grad()[i] * 2.0 * x[i];
    });
  };
  TD x = make({3}, {0.5, 1.5, -2.0});
  const double err = finite_difference_check([&](const TD& t) { return ops::sum(broken_cube(t)); }, x);
  EXPECT_GT(err, 1e-2);
}

TEST(FiniteDifference, PropagatesNan) {
  TD x = make({2}, {1.0, 2.0});
  const double err =
      finite_difference_check([](const TD& t) { return ops::scale(ops::sum(t), std::nan("")); }, x);
  EXPECT_TRUE(std::isnan(err));
}

TEST(GradientSuite, EveryOpCoveredAndPassing) {
  const GradCheckReport r = run_gradient_suite(0);
  EXPECT_TRUE(r.uncovered_ops.empty());
  std::set<std::string> seen;
  for (const auto& e : r.entries) {
    seen.insert(e.op);
    EXPECT_TRUE(e.passed()) << e.op << " / " << e.case_name << ": " << e.max_rel_error;
    EXPECT_EQ(e.threshold, e.op == "model" ? kModelGradTolerance : kOpGradTolerance);
  }
  for (const auto& op : ops::differentiable_ops()) EXPECT_TRUE(seen.count(op)) << op;
  EXPECT_TRUE(seen.count("model"));
}
