#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lktcn/model.hpp"

namespace fixtures {

using namespace lktcn;

inline ModelConfig tiny_config() {
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
  return c;
}

inline ModelConfig small_config() {
  ModelConfig c;
  c.M = 3;
  c.L = 48;
  c.T = 12;
  c.P = 8;
  c.S = 4;
  c.D = 4;
  c.K = 2;
  c.large_k = 7;
  c.small_k = 3;
  c.r = 2;
  c.dropout = 0.1;
  return c;
}

/// Give every BN non-trivial affine parameters and running statistics, as a
/// trained model would have.
template <typename T>
void randomize_bn(ModelParams<T>& p, Rng& rng) {
  for (auto& b : p.blocks)
    for (auto* bn : {&b.bn_large, &b.bn_small}) {
      for (auto& v : bn->gamma.mutable_data()) v = static_cast<T>(0.5 + rng.uniform());
      for (auto& v : bn->beta.mutable_data()) v = static_cast<T>(rng.uniform() - 0.5);
      for (auto& v : bn->running_mean.mutable_data()) v = static_cast<T>(rng.uniform() - 0.5);
      for (auto& v : bn->running_var.mutable_data()) v = static_cast<T>(0.2 + rng.uniform());
      bn->batches_tracked = 10;
    }
}

/// Variable-major [B, M*D, N] channel index of (m, d).
inline std::size_t vm_channel(const ModelConfig& c, std::size_t m, std::size_t d) { return m * c.D + d; }

/// Largest change of any output channel outside group j when only the input
/// channels of group j are perturbed, maximized over j. `group_of` maps a
/// channel index to its group; an exactly decoupled FFN returns 0.
template <typename T>
double max_cross_group_influence(const ConvParams<T>& in, const ConvParams<T>& out, std::size_t conv_groups,
                                 std::size_t channels, std::size_t n_groups,
                                 const std::function<std::size_t(std::size_t)>& group_of, Rng& rng) {
  const std::size_t B = 2, N = 5;
  Rng unused;
  const Tensor<T> x = uniform_tensor<T>({B, channels, N}, rng);
  const Tensor<T> y = pointwise_ffn(x, in, out, conv_groups, 0.0, Mode::Eval, unused);
  double worst = 0.0;
  for (std::size_t j = 0; j < n_groups; ++j) {
    Tensor<T> xp = x.clone();
    auto d = xp.mutable_data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < channels; ++c)
        if (group_of(c) == j)
          for (std::size_t n = 0; n < N; ++n) d[(b * channels + c) * N + n] += static_cast<T>(1.0 + rng.uniform());
    const Tensor<T> yp = pointwise_ffn(xp, in, out, conv_groups, 0.0, Mode::Eval, unused);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < channels; ++c)
        if (group_of(c) != j)
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t i = (b * channels + c) * N + n;
            worst = std::max(worst, std::abs(static_cast<double>(yp[i]) - static_cast<double>(y[i])));
          }
  }
  return worst;
}

/// Cross-variable leakage of the first point-wise FFN (variable-major input).
template <typename T>
double ffn1_cross_variable(const ModelConfig& c, const ModelParams<T>& p, Rng& rng) {
  const auto& f = p.blocks.at(0).ffn;
  const std::size_t groups = c.ffn_variant == FfnVariant::NoGroup ? 1 : c.M;
  return max_cross_group_influence<T>(f.ffn1_in, f.ffn1_out, groups, c.channels(), c.M,
                                      [&](std::size_t ch) { return ch / c.D; }, rng);
}

/// Cross-feature leakage of the feature-mixing FFN: the second FFN on
/// feature-major input when it exists, otherwise the single ungrouped FFN.
template <typename T>
double ffn2_cross_feature(const ModelConfig& c, const ModelParams<T>& p, Rng& rng) {
  const auto& f = p.blocks.at(0).ffn;
  if (f.ffn2_in.defined())
    return max_cross_group_influence<T>(f.ffn2_in, f.ffn2_out, c.D, c.channels(), c.D,
                                        [&](std::size_t ch) { return ch / c.M; }, rng);
  const std::size_t groups = c.ffn_variant == FfnVariant::NoGroup ? 1 : c.M;
  return max_cross_group_influence<T>(f.ffn1_in, f.ffn1_out, groups, c.channels(), c.D,
                                      [&](std::size_t ch) { return ch % c.D; }, rng);
}

}  // namespace fixtures
