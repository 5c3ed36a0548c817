#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lktcn/tensor.hpp"

namespace lktcn {

enum class Mode { Train, Eval };

/// Zero padding on both sides, or a tail pad that repeats the last value of
/// each row (used by the patch embedding).
struct Padding {
  enum class Kind { Zero, RepeatLast };
  Kind kind = Kind::Zero;
  std::size_t left = 0;
  std::size_t right = 0;

  static Padding none() { return {}; }
  static Padding symmetric(std::size_t each) { return {Kind::Zero, each, each}; }
  static Padding zeros(std::size_t left, std::size_t right) { return {Kind::Zero, left, right}; }
  static Padding repeat_last(std::size_t count) { return {Kind::RepeatLast, 0, count}; }
  std::size_t total() const { return left + right; }
};

/// Seeded random stream. Distinct stream ids derived from one root seed give
/// independent sequences.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);
  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double normal();
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Per-channel batch-norm parameters and running statistics.
template <typename T>
struct BNState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);
  std::int64_t batches_tracked = 0;

  BNState() = default;
  explicit BNState(std::size_t channels);
  std::size_t channels() const { return gamma.numel(); }
};

/// Tensor with values drawn uniformly from [lo, hi).
template <typename T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0);

namespace ops {

/// Names of every op that records a backward rule onto the tape.
const std::vector<std::string>& differentiable_ops();

/// input [B,Cin,N], weight [Cout,Cin/groups,k], bias [Cout] or undefined.
/// Output length (N + pad - k)/stride + 1.
template <typename T>
Tensor<T> conv1d_grouped(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         std::size_t stride, Padding padding, std::size_t groups);

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, Padding padding);

/// Normalizes each channel of [B,C,N] over (B,N). Train mode uses batch
/// statistics (biased variance) and updates the running stats with the
/// unbiased variance; eval mode uses the running stats.
template <typename T>
Tensor<T> batchnorm1d(const Tensor<T>& input, BNState<T>& state, Mode mode);

/// Exact erf form.
template <typename T>
Tensor<T> gelu(const Tensor<T>& input);

/// Inverted dropout: survivors are scaled by 1/(1-p).
template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double p, Mode mode, Rng& rng);

/// Affine map over the trailing axis. weight [F_out,F_in], bias [F_out] or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> permute(const Tensor<T>& input, const std::vector<std::size_t>& axis_order);

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape new_shape);

template <typename T>
Tensor<T> permute_reshape(const Tensor<T>& input, const std::vector<std::size_t>& axis_order, Shape new_shape);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> square(const Tensor<T>& a);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// [..., L] -> [...] (a rank-1 input reduces to [1]).
template <typename T>
Tensor<T> reduce_mean_last(const Tensor<T>& a);

/// Binary ops between x [..., L] and v [...], broadcasting v along the last axis.
template <typename T>
Tensor<T> add_last(const Tensor<T>& x, const Tensor<T>& v);
template <typename T>
Tensor<T> sub_last(const Tensor<T>& x, const Tensor<T>& v);
template <typename T>
Tensor<T> mul_last(const Tensor<T>& x, const Tensor<T>& v);
template <typename T>
Tensor<T> div_last(const Tensor<T>& x, const Tensor<T>& v);

/// max(sqrt(x), floor); gradient is zero where the floor is active.
template <typename T>
Tensor<T> sqrt_floor(const Tensor<T>& a, T floor);

/// x [B,C,...] * scale[c] + shift[c] along axis 1.
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift);

/// (y - shift[c]) / (scale[c] + denom_eps) along axis 1.
template <typename T>
Tensor<T> channel_affine_inverse(const Tensor<T>& y, const Tensor<T>& scale, const Tensor<T>& shift, T denom_eps);

}  // namespace ops
}  // namespace lktcn
