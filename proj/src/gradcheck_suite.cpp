#include <algorithm>

#include "lktcn/gradcheck.hpp"
#include "lktcn/model.hpp"
#include "lktcn/ops.hpp"

namespace lktcn {

namespace {

using TD = Tensor<double>;

// Contract an output with a fixed random weighting so every output element
// contributes a distinct coefficient to the scalar.
TD project(const TD& y, const TD& weights) { return ops::sum(ops::mul(y, weights)); }

class Suite {
 public:
  explicit Suite(unsigned seed) : rng_(seed, 17) {}

  TD rand(Shape s, double lo = -1.0, double hi = 1.0) { return uniform_tensor<double>(std::move(s), rng_, lo, hi); }

  // Checks d/dx of sum(w * g(x)) where w is a fresh random weighting.
  void check(const std::string& op, const std::string& name, const TD& x,
             const std::function<TD(const TD&)>& g, double threshold = kOpGradTolerance) {
    const TD probe = g(x.detach());
    const TD w = rand(probe.shape());
    ScalarFn f = [&](const TD& v) { return project(g(v), w); };
    report_.entries.push_back({op, name, finite_difference_check(f, x), threshold});
  }

  void check_scalar(const std::string& op, const std::string& name, const TD& x, const ScalarFn& f,
                    double threshold = kOpGradTolerance) {
    report_.entries.push_back({op, name, finite_difference_check(f, x), threshold});
  }

  GradCheckReport finish() {
    for (const auto& op : ops::differentiable_ops()) {
      bool covered = std::any_of(report_.entries.begin(), report_.entries.end(),
                                 [&](const GradCheckEntry& e) { return e.op == op; });
      if (!covered) report_.uncovered_ops.push_back(op);
    }
    return std::move(report_);
  }

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
  GradCheckReport report_;
};

void conv_cases(Suite& s) {
  struct Case {
    const char* name;
    std::size_t B, Cin, Cout, N, k, stride, groups;
    Padding pad;
  };
  const Case cases[] = {
      {"dense k3", 2, 2, 3, 7, 3, 1, 1, Padding::none()},
      {"grouped same-pad", 2, 4, 6, 6, 3, 1, 2, Padding::symmetric(1)},
      {"depthwise k5", 1, 3, 3, 8, 5, 1, 3, Padding::symmetric(2)},
      {"stride2 repeat-last", 2, 1, 3, 9, 4, 2, 1, Padding::repeat_last(2)},
  };
  for (const auto& c : cases) {
    TD x = s.rand({c.B, c.Cin, c.N});
    TD w = s.rand({c.Cout, c.Cin / c.groups, c.k});
    TD b = s.rand({c.Cout});
    s.check("conv1d_grouped", std::string(c.name) + " d/input", x,
            [&](const TD& v) { return ops::conv1d_grouped(v, w, b, c.stride, c.pad, c.groups); });
    s.check("conv1d_grouped", std::string(c.name) + " d/weight", w,
            [&](const TD& v) { return ops::conv1d_grouped(x, v, b, c.stride, c.pad, c.groups); });
    s.check("conv1d_grouped", std::string(c.name) + " d/bias", b,
            [&](const TD& v) { return ops::conv1d_grouped(x, w, v, c.stride, c.pad, c.groups); });
  }
}

void batchnorm_cases(Suite& s) {
  TD x = s.rand({3, 2, 4}, -2.0, 2.0);
  BNState<double> bn(2);
  bn.gamma = s.rand({2}, 0.5, 1.5);
  bn.beta = s.rand({2});
  s.check("batchnorm1d", "train d/input", x, [&](const TD& v) { return ops::batchnorm1d(v, bn, Mode::Train); });
  s.check("batchnorm1d", "train d/gamma", bn.gamma, [&](const TD& v) {
    BNState<double> st = bn;
    st.gamma = v;
    return ops::batchnorm1d(x, st, Mode::Train);
  });
  s.check("batchnorm1d", "train d/beta", bn.beta, [&](const TD& v) {
    BNState<double> st = bn;
    st.beta = v;
    return ops::batchnorm1d(x, st, Mode::Train);
  });
  BNState<double> frozen = bn;
  frozen.running_mean = s.rand({2});
  frozen.running_var = s.rand({2}, 0.5, 2.0);
  s.check("batchnorm1d", "eval d/input", x, [&](const TD& v) { return ops::batchnorm1d(v, frozen, Mode::Eval); });
}

void elementwise_cases(Suite& s) {
  TD x = s.rand({2, 3, 4}, -3.0, 3.0);
  TD y = s.rand({2, 3, 4});
  s.check("gelu", "d/input", x, [](const TD& v) { return ops::gelu(v); });
  s.check("dropout", "p=0.3 fixed mask", x, [](const TD& v) {
    Rng mask_rng(99, 1);
    return ops::dropout(v, 0.3, Mode::Train, mask_rng);
  });
  s.check("add", "d/a", x, [&](const TD& v) { return ops::add(v, y); });
  s.check("add", "d/b", y, [&](const TD& v) { return ops::add(x, v); });
  s.check("sub", "d/a", x, [&](const TD& v) { return ops::sub(v, y); });
  s.check("sub", "d/b", y, [&](const TD& v) { return ops::sub(x, v); });
  s.check("mul", "d/a", x, [&](const TD& v) { return ops::mul(v, y); });
  s.check("mul", "d/b", y, [&](const TD& v) { return ops::mul(x, v); });
  s.check("scale", "d/input", x, [](const TD& v) { return ops::scale(v, -1.7); });
  s.check("square", "d/input", x, [](const TD& v) { return ops::square(v); });
  s.check_scalar("sum", "d/input", x, [](const TD& v) { return ops::sum(v); });
  s.check_scalar("mean", "d/input", x, [](const TD& v) { return ops::mean(v); });
  TD pos = s.rand({2, 5}, 0.2, 3.0);
  s.check("sqrt_floor", "above floor", pos, [](const TD& v) { return ops::sqrt_floor(v, 1e-5); });
}

void linear_cases(Suite& s) {
  TD x = s.rand({2, 3, 5});
  TD w = s.rand({4, 5});
  TD b = s.rand({4});
  s.check("linear", "d/input", x, [&](const TD& v) { return ops::linear(v, w, b); });
  s.check("linear", "d/weight", w, [&](const TD& v) { return ops::linear(x, v, b); });
  s.check("linear", "d/bias", b, [&](const TD& v) { return ops::linear(x, w, v); });
}

void layout_cases(Suite& s) {
  TD x = s.rand({2, 3, 4, 5});
  s.check("permute", "[B,M,D,N]->[B,D,M,N]", x, [](const TD& v) { return ops::permute(v, {0, 2, 1, 3}); });
  s.check("permute", "reverse axes", x, [](const TD& v) { return ops::permute(v, {3, 2, 1, 0}); });
  s.check("reshape", "merge axes", x, [](const TD& v) { return ops::reshape(v, Shape{2, 12, 5}); });
}

void broadcast_cases(Suite& s) {
  TD x = s.rand({2, 3, 4});
  TD v = s.rand({2, 3}, 0.5, 2.0);
  s.check("reduce_mean_last", "d/input", x, [](const TD& t) { return ops::reduce_mean_last(t); });
  s.check("add_last", "d/x", x, [&](const TD& t) { return ops::add_last(t, v); });
  s.check("add_last", "d/v", v, [&](const TD& t) { return ops::add_last(x, t); });
  s.check("sub_last", "d/x", x, [&](const TD& t) { return ops::sub_last(t, v); });
  s.check("sub_last", "d/v", v, [&](const TD& t) { return ops::sub_last(x, t); });
  s.check("mul_last", "d/x", x, [&](const TD& t) { return ops::mul_last(t, v); });
  s.check("mul_last", "d/v", v, [&](const TD& t) { return ops::mul_last(x, t); });
  s.check("div_last", "d/x", x, [&](const TD& t) { return ops::div_last(t, v); });
  s.check("div_last", "d/v", v, [&](const TD& t) { return ops::div_last(x, t); });
}

void affine_cases(Suite& s) {
  TD x = s.rand({2, 3, 4});
  TD g = s.rand({3}, 0.5, 1.5);
  TD b = s.rand({3});
  s.check("channel_affine", "d/x", x, [&](const TD& t) { return ops::channel_affine(t, g, b); });
  s.check("channel_affine", "d/scale", g, [&](const TD& t) { return ops::channel_affine(x, t, b); });
  s.check("channel_affine", "d/shift", b, [&](const TD& t) { return ops::channel_affine(x, g, t); });
  s.check("channel_affine_inverse", "d/y", x, [&](const TD& t) { return ops::channel_affine_inverse(t, g, b, 1e-10); });
  s.check("channel_affine_inverse", "d/scale", g,
          [&](const TD& t) { return ops::channel_affine_inverse(x, t, b, 1e-10); });
  s.check("channel_affine_inverse", "d/shift", b,
          [&](const TD& t) { return ops::channel_affine_inverse(x, g, t, 1e-10); });
}

void composite_cases(Suite& s) {
  TD x = s.rand({2, 2, 6});
  TD w = s.rand({4, 1, 3});
  TD b = s.rand({4});
  BNState<double> bn(4);
  s.check_scalar("conv1d_grouped", "conv->bn->gelu->sum", x, [&](const TD& v) {
    return ops::sum(ops::gelu(ops::batchnorm1d(ops::conv1d_grouped(v, w, b, 1, Padding::symmetric(1), 2), bn,
                                               Mode::Train)));
  });
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.M = 2;
  c.L = 8;
  c.P = 4;
  c.S = 2;
  c.D = 3;
  c.K = 1;
  c.large_k = 5;
  c.small_k = 3;
  c.r = 1;
  c.T = 4;
  c.dropout = 0.1;
  return c;
}

void model_cases(Suite& s) {
  const ModelConfig c = tiny_config();
  Rng init(7, 3);
  ModelParams<double> params = init_params<double>(c, init);
  TD x = s.rand({2, c.M, c.L}, -2.0, 2.0);
  TD target = s.rand({2, c.M, c.T});
  auto loss_at = [&](const TD& input) {
    Rng drop(5, 2);
    TD pred = forward(input, params, c, Mode::Train, drop);
    return ops::mean(ops::square(ops::sub(pred, target)));
  };
  s.check_scalar("model", "end-to-end d/input", x, loss_at, kModelGradTolerance);

  auto swap_check = [&](const std::string& name, TD& slot) {
    TD original = slot;
    s.check_scalar("model", "end-to-end d/" + name, original, [&](const TD& v) {
      TD keep = slot;
      slot = v;
      TD out = loss_at(x);
      slot = keep;
      return out;
    }, kModelGradTolerance);
  };
  swap_check("embed.weight", params.embed.weight);
  swap_check("blocks.0.dw_large.weight", params.blocks[0].dw_large.weight);
  swap_check("blocks.0.dw_small.weight", params.blocks[0].dw_small.weight);
  swap_check("blocks.0.bn_large.gamma", params.blocks[0].bn_large.gamma);
  swap_check("blocks.0.ffn1_in.weight", params.blocks[0].ffn.ffn1_in.weight);
  swap_check("blocks.0.ffn2_out.weight", params.blocks[0].ffn.ffn2_out.weight);
  swap_check("head.weight", params.head.weight);
  swap_check("revin.gamma", params.revin_gamma);
}

}  // namespace

GradCheckReport run_gradient_suite(unsigned seed) {
  Suite s(seed);
  conv_cases(s);
  batchnorm_cases(s);
  elementwise_cases(s);
  linear_cases(s);
  layout_cases(s);
  broadcast_cases(s);
  affine_cases(s);
  composite_cases(s);
  model_cases(s);
  return s.finish();
}

}  // namespace lktcn
