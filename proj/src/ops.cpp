#include "lktcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lktcn {

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x4c4b5443u};
  engine_.seed(seq);
}

double Rng::normal() {
  // Box-Muller keeps the stream identical across standard libraries.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <typename T>
BNState<T>::BNState(std::size_t channels)
    : gamma(Shape{channels}, T(1)),
      beta(Shape{channels}, T(0)),
      running_mean(Shape{channels}, T(0)),
      running_var(Shape{channels}, T(1)) {}

template struct BNState<float>;
template struct BNState<double>;

template <typename T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return t;
}

template Tensor<float> uniform_tensor(Shape, Rng&, double, double);
template Tensor<double> uniform_tensor(Shape, Rng&, double, double);

namespace ops {

const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> names = {
      "conv1d_grouped", "batchnorm1d", "gelu",     "dropout",     "linear",  "permute",
      "reshape",        "add",         "sub",      "mul",         "scale",   "square",
      "sum",            "mean",        "reduce_mean_last",        "add_last", "sub_last",
      "mul_last",       "div_last",    "sqrt_floor", "channel_affine", "channel_affine_inverse"};
  return names;
}

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

}  // namespace

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, Padding padding) {
  require(stride >= 1, "conv1d: stride must be >= 1");
  std::size_t padded = length + padding.total();
  require(padded >= kernel, "conv1d: padded length " + std::to_string(padded) + " shorter than kernel " +
                                std::to_string(kernel));
  return (padded - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv1d_grouped(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         std::size_t stride, Padding padding, std::size_t groups) {
  require(input.rank() == 3, "conv1d: input must be [B,Cin,N], got " + shape_str(input.shape()));
  require(weight.rank() == 3, "conv1d: weight must be [Cout,Cin/g,k], got " + shape_str(weight.shape()));
  require(groups >= 1, "conv1d: groups must be >= 1");
  require(padding.kind == Padding::Kind::Zero || padding.left == 0, "conv1d: repeat-last padding is tail-only");
  const std::size_t B = input.dim(0), Cin = input.dim(1), N = input.dim(2);
  const std::size_t Cout = weight.dim(0), k = weight.dim(2);
  require(Cin % groups == 0 && Cout % groups == 0,
          "conv1d: channels (" + std::to_string(Cin) + "->" + std::to_string(Cout) + ") not divisible by groups " +
              std::to_string(groups));
  const std::size_t Ig = Cin / groups, Og = Cout / groups;
  require(weight.dim(1) == Ig, "conv1d: weight expects " + std::to_string(weight.dim(1)) +
                                   " input channels per group, input provides " + std::to_string(Ig));
  if (bias.defined()) require(bias.rank() == 1 && bias.dim(0) == Cout, "conv1d: bias must be [Cout]");
  const std::size_t Nout = conv1d_output_length(N, k, stride, padding);
  const std::size_t Np = N + padding.total();

  // Materialize the padded input once; rows are then read without bounds checks.
  std::vector<T> padded;
  const T* xp = input.data().data();
  if (padding.total() > 0) {
    padded.assign(B * Cin * Np, T(0));
    for (std::size_t row = 0; row < B * Cin; ++row) {
      const T* src = xp + row * N;
      T* dst = padded.data() + row * Np;
      std::copy(src, src + N, dst + padding.left);
      if (padding.kind == Padding::Kind::RepeatLast) std::fill(dst + N, dst + Np, src[N - 1]);
    }
    xp = padded.data();
  }

  Tensor<T> out(Shape{B, Cout, Nout});
  T* op = out.mutable_data().data();
  const T* wp = weight.data().data();
  const T* bp = bias.defined() ? bias.data().data() : nullptr;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t o = 0; o < Og; ++o) {
        const std::size_t oc = g * Og + o;
        T* orow = op + (b * Cout + oc) * Nout;
        std::fill(orow, orow + Nout, bp ? bp[oc] : T(0));
        for (std::size_t i = 0; i < Ig; ++i) {
          const T* irow = xp + (b * Cin + g * Ig + i) * Np;
          const T* wrow = wp + (oc * Ig + i) * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const T wv = wrow[kk];
            const T* src = irow + kk;
            if (stride == 1) {
              for (std::size_t n = 0; n < Nout; ++n) orow[n] += wv * src[n];
            } else {
              for (std::size_t n = 0; n < Nout; ++n) orow[n] += wv * src[n * stride];
            }
          }
        }
      }
    }
  }

  auto padded_holder = std::make_shared<std::vector<T>>(std::move(padded));
  return record_op<T>(
      "conv1d_grouped", out, {input, weight, bias},
      [input, weight, bias, padded_holder, stride, padding, groups, B, Cin, N, Cout, k, Ig, Og, Nout,
       Np](const Tensor<T>& output) {
        const T* gy = output.grad().data();
        const T* x = padding.total() > 0 ? padded_holder->data() : input.data().data();
        const T* w = weight.data().data();
        T* gw = grad_or_null(weight);
        T* gb = bias.defined() ? grad_or_null(bias) : nullptr;
        const bool need_gx = input.requires_grad();
        std::vector<T> gxp(need_gx ? B * Cin * Np : 0, T(0));
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t o = 0; o < Og; ++o) {
              const std::size_t oc = g * Og + o;
              const T* grow = gy + (b * Cout + oc) * Nout;
              if (gb) {
                T acc = T(0);
                for (std::size_t n = 0; n < Nout; ++n) acc += grow[n];
                gb[oc] += acc;
              }
              for (std::size_t i = 0; i < Ig; ++i) {
                const std::size_t row = b * Cin + g * Ig + i;
                const T* irow = x + row * Np;
                for (std::size_t kk = 0; kk < k; ++kk) {
                  const std::size_t widx = (oc * Ig + i) * k + kk;
                  if (gw) {
                    T acc = T(0);
                    for (std::size_t n = 0; n < Nout; ++n) acc += grow[n] * irow[n * stride + kk];
                    gw[widx] += acc;
                  }
                  if (need_gx) {
                    const T wv = w[widx];
                    T* dst = gxp.data() + row * Np + kk;
                    if (stride == 1) {
                      for (std::size_t n = 0; n < Nout; ++n) dst[n] += wv * grow[n];
                    } else {
                      for (std::size_t n = 0; n < Nout; ++n) dst[n * stride] += wv * grow[n];
                    }
                  }
                }
              }
            }
          }
        }
        if (!need_gx) return;
        T* gx = input.grad_buffer().data();
        for (std::size_t row = 0; row < B * Cin; ++row) {
          const T* src = gxp.data() + row * Np;
          T* dst = gx + row * N;
          for (std::size_t n = 0; n < N; ++n) dst[n] += src[padding.left + n];
          if (padding.kind == Padding::Kind::RepeatLast)
            for (std::size_t n = N; n < Np; ++n) dst[N - 1] += src[n];
        }
      });
}

template <typename T>
Tensor<T> batchnorm1d(const Tensor<T>& input, BNState<T>& state, Mode mode) {
  require(input.rank() == 3, "batchnorm1d: input must be [B,C,N], got " + shape_str(input.shape()));
  const std::size_t B = input.dim(0), C = input.dim(1), N = input.dim(2);
  require(state.channels() == C, "batchnorm1d: state has " + std::to_string(state.channels()) +
                                     " channels, input has " + std::to_string(C));
  const std::size_t count = B * N;
  if (mode == Mode::Train)
    require(count >= 2, "batchnorm1d: train mode needs at least 2 values per channel (B*N >= 2)");

  const T* x = input.data().data();
  const T* gamma = state.gamma.data().data();
  const T* beta = state.beta.data().data();
  std::vector<T> mean(C), inv_std(C);
  if (mode == Mode::Train) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
      T acc = T(0);
      for (std::size_t b = 0; b < B; ++b) {
        const T* row = x + (b * C + c) * N;
        for (std::size_t n = 0; n < N; ++n) acc += row[n];
      }
      const T mu = acc / T(count);
      T sq = T(0);
      for (std::size_t b = 0; b < B; ++b) {
        const T* row = x + (b * C + c) * N;
        for (std::size_t n = 0; n < N; ++n) sq += (row[n] - mu) * (row[n] - mu);
      }
      const T var = sq / T(count);
      mean[c] = mu;
      inv_std[c] = T(1) / std::sqrt(var + state.eps);
      rm[c] = (T(1) - state.momentum) * rm[c] + state.momentum * mu;
      rv[c] = (T(1) - state.momentum) * rv[c] + state.momentum * (sq / T(count - 1));
    }
    ++state.batches_tracked;
  } else {
    const T* rm = state.running_mean.data().data();
    const T* rv = state.running_var.data().data();
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = rm[c];
      inv_std[c] = T(1) / std::sqrt(rv[c] + state.eps);
    }
  }

  Tensor<T> out(Shape{B, C, N});
  T* y = out.mutable_data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* row = x + (b * C + c) * N;
      T* orow = y + (b * C + c) * N;
      const T s = gamma[c] * inv_std[c];
      const T shift = beta[c] - mean[c] * s;
      for (std::size_t n = 0; n < N; ++n) orow[n] = row[n] * s + shift;
    }

  const bool train = mode == Mode::Train;
  return record_op<T>(
      "batchnorm1d", out, {input, state.gamma, state.beta},
      [input, g = state.gamma, bt = state.beta, mean = std::move(mean), inv_std = std::move(inv_std), train, B, C,
       N](const Tensor<T>& output) {
        const T* gy = output.grad().data();
        const T* x = input.data().data();
        const T* gamma = g.data().data();
        T* gx = grad_or_null(input);
        T* gg = grad_or_null(g);
        T* gbeta = grad_or_null(bt);
        const T count = T(B * N);
        for (std::size_t c = 0; c < C; ++c) {
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (std::size_t b = 0; b < B; ++b) {
            const T* row = x + (b * C + c) * N;
            const T* grow = gy + (b * C + c) * N;
            for (std::size_t n = 0; n < N; ++n) {
              sum_dy += grow[n];
              sum_dy_xhat += grow[n] * (row[n] - mean[c]) * inv_std[c];
            }
          }
          if (gg) gg[c] += sum_dy_xhat;
          if (gbeta) gbeta[c] += sum_dy;
          if (!gx) continue;
          const T s = gamma[c] * inv_std[c];
          for (std::size_t b = 0; b < B; ++b) {
            const T* row = x + (b * C + c) * N;
            const T* grow = gy + (b * C + c) * N;
            T* dst = gx + (b * C + c) * N;
            for (std::size_t n = 0; n < N; ++n) {
              if (train) {
                const T xhat = (row[n] - mean[c]) * inv_std[c];
                dst[n] += s * (grow[n] - sum_dy / count - xhat * sum_dy_xhat / count);
              } else {
                dst[n] += s * grow[n];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& input) {
  const auto x = input.data();
  Tensor<T> out(input.shape());
  auto y = out.mutable_data();
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    y[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  return record_op<T>("gelu", out, {input}, [input](const Tensor<T>& output) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const auto x = input.data();
    const auto gy = output.grad();
    T* gx = input.grad_buffer().data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += static_cast<T>(gy[i] * (cdf + v * pdf));
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double p, Mode mode, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "dropout: rate must lie in [0,1), got " + std::to_string(p));
  if (mode == Mode::Eval || p == 0.0) return input;
  const auto x = input.data();
  auto mask = std::make_shared<std::vector<T>>(x.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : *mask) m = rng.uniform() < p ? T(0) : keep_scale;
  Tensor<T> out(input.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * (*mask)[i];
  return record_op<T>("dropout", out, {input}, [input, mask](const Tensor<T>& output) {
    const auto gy = output.grad();
    T* gx = input.grad_buffer().data();
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (*mask)[i];
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(weight.rank() == 2, "linear: weight must be [F_out,F_in]");
  const std::size_t Fout = weight.dim(0), Fin = weight.dim(1);
  require(input.shape().back() == Fin, "linear: trailing dim " + std::to_string(input.shape().back()) +
                                           " does not match F_in " + std::to_string(Fin));
  if (bias.defined()) require(bias.rank() == 1 && bias.dim(0) == Fout, "linear: bias must be [F_out]");
  const std::size_t rows = input.numel() / Fin;
  Shape out_shape = input.shape();
  out_shape.back() = Fout;
  Tensor<T> out(out_shape);

  const T* x = input.data().data();
  const T* w = weight.data().data();
  // Transposed copy so the innermost loop runs over contiguous outputs.
  std::vector<T> wt(Fin * Fout);
  for (std::size_t o = 0; o < Fout; ++o)
    for (std::size_t i = 0; i < Fin; ++i) wt[i * Fout + o] = w[o * Fin + i];
  T* y = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* yrow = y + r * Fout;
    if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), yrow);
    const T* xrow = x + r * Fin;
    for (std::size_t i = 0; i < Fin; ++i) {
      const T xv = xrow[i];
      const T* wrow = wt.data() + i * Fout;
      for (std::size_t o = 0; o < Fout; ++o) yrow[o] += xv * wrow[o];
    }
  }

  return record_op<T>("linear", out, {input, weight, bias}, [input, weight, bias, rows, Fin, Fout](const Tensor<T>& output) {
    const T* gy = output.grad().data();
    const T* x = input.data().data();
    const T* w = weight.data().data();
    T* gx = grad_or_null(input);
    T* gw = grad_or_null(weight);
    T* gb = bias.defined() ? grad_or_null(bias) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* grow = gy + r * Fout;
      const T* xrow = x + r * Fin;
      for (std::size_t o = 0; o < Fout; ++o) {
        const T g = grow[o];
        if (gb) gb[o] += g;
        if (gw) {
          T* gwrow = gw + o * Fin;
          for (std::size_t i = 0; i < Fin; ++i) gwrow[i] += g * xrow[i];
        }
        if (gx) {
          T* gxrow = gx + r * Fin;
          const T* wrow = w + o * Fin;
          for (std::size_t i = 0; i < Fin; ++i) gxrow[i] += g * wrow[i];
        }
      }
    }
  });
}

namespace {

// Gather `src` (shape `in_shape`) into the axis order `perm`; when `inverse`
// is set, scatter instead (the adjoint of the gather).
template <typename T>
void permute_copy(const T* src, T* dst, const Shape& in_shape, const std::vector<std::size_t>& perm, bool inverse) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t a = rank - 1; a-- > 0;) in_strides[a] = in_strides[a + 1] * in_shape[a + 1];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);  // input stride for each output axis
  for (std::size_t a = 0; a < rank; ++a) {
    out_shape[a] = in_shape[perm[a]];
    strides[a] = in_strides[perm[a]];
  }
  const std::size_t total = shape_numel(in_shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t in_off = 0;
  const std::size_t inner = out_shape[rank - 1], inner_stride = strides[rank - 1];
  for (std::size_t out_off = 0; out_off < total; out_off += inner) {
    if (!inverse) {
      for (std::size_t j = 0; j < inner; ++j) dst[out_off + j] = src[in_off + j * inner_stride];
    } else {
      for (std::size_t j = 0; j < inner; ++j) dst[in_off + j * inner_stride] += src[out_off + j];
    }
    // Advance the multi-index over all but the innermost output axis.
    for (std::size_t a = rank - 1; a-- > 0;) {
      ++idx[a];
      in_off += strides[a];
      if (idx[a] < out_shape[a]) break;
      in_off -= strides[a] * out_shape[a];
      idx[a] = 0;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& input, const std::vector<std::size_t>& axis_order) {
  const std::size_t rank = input.rank();
  require(axis_order.size() == rank, "permute: axis order has wrong length");
  std::vector<bool> seen(rank, false);
  for (auto a : axis_order) {
    require(a < rank && !seen[a], "permute: invalid axis order");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t a = 0; a < rank; ++a) out_shape[a] = input.dim(axis_order[a]);
  Tensor<T> out(out_shape);
  permute_copy(input.data().data(), out.mutable_data().data(), input.shape(), axis_order, false);
  return record_op<T>("permute", out, {input}, [input, axis_order](const Tensor<T>& output) {
    permute_copy(output.grad().data(), input.grad_buffer().data(), input.shape(), axis_order, true);
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape new_shape) {
  require(shape_numel(new_shape) == input.numel(),
          "reshape: cannot reshape " + shape_str(input.shape()) + " to " + shape_str(new_shape));
  Tensor<T> out(std::move(new_shape), std::vector<T>(input.data().begin(), input.data().end()));
  return record_op<T>("reshape", out, {input}, [input](const Tensor<T>& output) {
    const auto gy = output.grad();
    auto gx = input.grad_buffer();
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

template <typename T>
Tensor<T> permute_reshape(const Tensor<T>& input, const std::vector<std::size_t>& axis_order, Shape new_shape) {
  require(shape_numel(new_shape) == input.numel(),
          "permute_reshape: size mismatch " + shape_str(input.shape()) + " vs " + shape_str(new_shape));
  return reshape(permute(input, axis_order), std::move(new_shape));
}

namespace {

template <typename T, typename Fwd>
Tensor<T> map_binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd) {
  require_same_shape(a, b, op);
  Tensor<T> out(a.shape());
  auto y = out.mutable_data();
  const auto xa = a.data();
  const auto xb = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xa[i], xb[i]);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto out = map_binary(a, b, "add", [](T x, T y) { return x + y; });
  return record_op<T>("add", out, {a, b}, [a, b](const Tensor<T>& output) {
    const auto gy = output.grad();
    if (T* ga = grad_or_null(a))
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    if (T* gb = grad_or_null(b))
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto out = map_binary(a, b, "sub", [](T x, T y) { return x - y; });
  return record_op<T>("sub", out, {a, b}, [a, b](const Tensor<T>& output) {
    const auto gy = output.grad();
    if (T* ga = grad_or_null(a))
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    if (T* gb = grad_or_null(b))
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto out = map_binary(a, b, "mul", [](T x, T y) { return x * y; });
  return record_op<T>("mul", out, {a, b}, [a, b](const Tensor<T>& output) {
    const auto gy = output.grad();
    const auto xa = a.data();
    const auto xb = b.data();
    if (T* ga = grad_or_null(a))
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * xb[i];
    if (T* gb = grad_or_null(b))
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * xa[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto y = out.mutable_data();
  const auto x = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * factor;
  return record_op<T>("scale", out, {a}, [a, factor](const Tensor<T>& output) {
    const auto gy = output.grad();
    T* ga = a.grad_buffer().data();
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * factor;
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto y = out.mutable_data();
  const auto x = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * x[i];
  return record_op<T>("square", out, {a}, [a](const Tensor<T>& output) {
    const auto gy = output.grad();
    const auto x = a.data();
    T* ga = a.grad_buffer().data();
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += T(2) * x[i] * gy[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return record_op<T>("sum", Tensor<T>::scalar(acc), {a}, [a](const Tensor<T>& output) {
    const T g = output.grad()[0];
    for (auto& v : a.grad_buffer()) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  const T n = T(a.numel());
  return record_op<T>("mean", Tensor<T>::scalar(acc / n), {a}, [a, n](const Tensor<T>& output) {
    const T g = output.grad()[0] / n;
    for (auto& v : a.grad_buffer()) v += g;
  });
}

namespace {

Shape drop_last(const Shape& s) {
  if (s.size() == 1) return Shape{1};
  return Shape(s.begin(), s.end() - 1);
}

}  // namespace

template <typename T>
Tensor<T> reduce_mean_last(const Tensor<T>& a) {
  const std::size_t L = a.shape().back();
  const std::size_t rows = a.numel() / L;
  Tensor<T> out(drop_last(a.shape()));
  auto y = out.mutable_data();
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = T(0);
    for (std::size_t j = 0; j < L; ++j) acc += x[r * L + j];
    y[r] = acc / T(L);
  }
  return record_op<T>("reduce_mean_last", out, {a}, [a, rows, L](const Tensor<T>& output) {
    const auto gy = output.grad();
    T* ga = a.grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < L; ++j) ga[r * L + j] += gy[r] / T(L);
  });
}

namespace {

enum class LastOp { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> broadcast_last(const Tensor<T>& x, const Tensor<T>& v, LastOp kind, const char* name) {
  const std::size_t L = x.shape().back();
  const std::size_t rows = x.numel() / L;
  require(v.numel() == rows, std::string(name) + ": operand " + shape_str(v.shape()) +
                                 " does not broadcast over " + shape_str(x.shape()));
  Tensor<T> out(x.shape());
  auto y = out.mutable_data();
  const auto xs = x.data();
  const auto vs = v.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T s = vs[r];
    for (std::size_t j = 0; j < L; ++j) {
      const T a = xs[r * L + j];
      switch (kind) {
        case LastOp::Add: y[r * L + j] = a + s; break;
        case LastOp::Sub: y[r * L + j] = a - s; break;
        case LastOp::Mul: y[r * L + j] = a * s; break;
        case LastOp::Div: y[r * L + j] = a / s; break;
      }
    }
  }
  return record_op<T>(name, out, {x, v}, [x, v, kind, rows, L](const Tensor<T>& output) {
    const auto gy = output.grad();
    const auto xs = x.data();
    const auto vs = v.data();
    T* gx = grad_or_null(x);
    T* gv = grad_or_null(v);
    for (std::size_t r = 0; r < rows; ++r) {
      const T s = vs[r];
      T acc = T(0);
      for (std::size_t j = 0; j < L; ++j) {
        const std::size_t i = r * L + j;
        switch (kind) {
          case LastOp::Add:
            if (gx) gx[i] += gy[i];
            acc += gy[i];
            break;
          case LastOp::Sub:
            if (gx) gx[i] += gy[i];
            acc -= gy[i];
            break;
          case LastOp::Mul:
            if (gx) gx[i] += gy[i] * s;
            acc += gy[i] * xs[i];
            break;
          case LastOp::Div:
            if (gx) gx[i] += gy[i] / s;
            acc -= gy[i] * xs[i] / (s * s);
            break;
        }
      }
      if (gv) gv[r] += acc;
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> add_last(const Tensor<T>& x, const Tensor<T>& v) {
  return broadcast_last(x, v, LastOp::Add, "add_last");
}
template <typename T>
Tensor<T> sub_last(const Tensor<T>& x, const Tensor<T>& v) {
  return broadcast_last(x, v, LastOp::Sub, "sub_last");
}
template <typename T>
Tensor<T> mul_last(const Tensor<T>& x, const Tensor<T>& v) {
  return broadcast_last(x, v, LastOp::Mul, "mul_last");
}
template <typename T>
Tensor<T> div_last(const Tensor<T>& x, const Tensor<T>& v) {
  return broadcast_last(x, v, LastOp::Div, "div_last");
}

template <typename T>
Tensor<T> sqrt_floor(const Tensor<T>& a, T floor) {
  Tensor<T> out(a.shape());
  auto y = out.mutable_data();
  const auto x = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    require(x[i] >= T(0), "sqrt_floor: negative input");
    y[i] = std::max(std::sqrt(x[i]), floor);
  }
  return record_op<T>("sqrt_floor", out, {a}, [a, floor](const Tensor<T>& output) {
    const auto gy = output.grad();
    const auto x = a.data();
    T* ga = a.grad_buffer().data();
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const T r = std::sqrt(x[i]);
      if (r > floor) ga[i] += gy[i] / (T(2) * r);
    }
  });
}

namespace {

template <typename T>
void check_channel_operands(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, const char* name) {
  require(x.rank() >= 2, std::string(name) + ": input needs a channel axis");
  require(scale.numel() == x.dim(1) && shift.numel() == x.dim(1),
          std::string(name) + ": scale/shift must have one value per channel");
}

}  // namespace

template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift) {
  check_channel_operands(x, scale, shift, "channel_affine");
  const std::size_t B = x.dim(0), C = x.dim(1), inner = x.numel() / (B * C);
  Tensor<T> out(x.shape());
  auto y = out.mutable_data();
  const auto xs = x.data();
  const auto s = scale.data();
  const auto t = shift.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t i = (b * C + c) * inner + j;
        y[i] = xs[i] * s[c] + t[c];
      }
  return record_op<T>("channel_affine", out, {x, scale, shift},
                      [x, scale, shift, B, C, inner](const Tensor<T>& output) {
                        const auto gy = output.grad();
                        const auto xs = x.data();
                        const auto s = scale.data();
                        T* gx = grad_or_null(x);
                        T* gs = grad_or_null(scale);
                        T* gt = grad_or_null(shift);
                        for (std::size_t b = 0; b < B; ++b)
                          for (std::size_t c = 0; c < C; ++c)
                            for (std::size_t j = 0; j < inner; ++j) {
                              const std::size_t i = (b * C + c) * inner + j;
                              if (gx) gx[i] += gy[i] * s[c];
                              if (gs) gs[c] += gy[i] * xs[i];
                              if (gt) gt[c] += gy[i];
                            }
                      });
}

template <typename T>
Tensor<T> channel_affine_inverse(const Tensor<T>& y, const Tensor<T>& scale, const Tensor<T>& shift, T denom_eps) {
  check_channel_operands(y, scale, shift, "channel_affine_inverse");
  const std::size_t B = y.dim(0), C = y.dim(1), inner = y.numel() / (B * C);
  Tensor<T> out(y.shape());
  auto o = out.mutable_data();
  const auto ys = y.data();
  const auto s = scale.data();
  const auto t = shift.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t i = (b * C + c) * inner + j;
        o[i] = (ys[i] - t[c]) / (s[c] + denom_eps);
      }
  return record_op<T>("channel_affine_inverse", out, {y, scale, shift},
                      [y, scale, shift, denom_eps, B, C, inner](const Tensor<T>& output) {
                        const auto gy = output.grad();
                        const auto ys = y.data();
                        const auto s = scale.data();
                        const auto t = shift.data();
                        T* gin = grad_or_null(y);
                        T* gs = grad_or_null(scale);
                        T* gt = grad_or_null(shift);
                        for (std::size_t b = 0; b < B; ++b)
                          for (std::size_t c = 0; c < C; ++c) {
                            const T d = s[c] + denom_eps;
                            for (std::size_t j = 0; j < inner; ++j) {
                              const std::size_t i = (b * C + c) * inner + j;
                              if (gin) gin[i] += gy[i] / d;
                              if (gs) gs[c] -= gy[i] * (ys[i] - t[c]) / (d * d);
                              if (gt) gt[c] -= gy[i] / d;
                            }
                          }
                      });
}

#define LKTCN_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> conv1d_grouped(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, Padding, \
                                    std::size_t);                                                            \
  template Tensor<T> batchnorm1d(const Tensor<T>&, BNState<T>&, Mode);                                       \
  template Tensor<T> gelu(const Tensor<T>&);                                                                 \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, Rng&);                                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                       \
  template Tensor<T> permute_reshape(const Tensor<T>&, const std::vector<std::size_t>&, Shape);              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                                             \
  template Tensor<T> square(const Tensor<T>&);                                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                                 \
  template Tensor<T> reduce_mean_last(const Tensor<T>&);                                                     \
  template Tensor<T> add_last(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sub_last(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul_last(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> div_last(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sqrt_floor(const Tensor<T>&, T);                                                        \
  template Tensor<T> channel_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> channel_affine_inverse(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

LKTCN_INSTANTIATE_OPS(float)
LKTCN_INSTANTIATE_OPS(double)

#undef LKTCN_INSTANTIATE_OPS

}  // namespace ops
}  // namespace lktcn
