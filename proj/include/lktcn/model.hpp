#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lktcn/ops.hpp"
#include "lktcn/tensor.hpp"

namespace lktcn {

/// Which point-wise FFNs a block carries. MD is the full design; the other
/// variants exist for ablation.
enum class FfnVariant { MD, MOnly, DOnly, NoGroup };

const char* ffn_variant_name(FfnVariant v);
FfnVariant parse_ffn_variant(const std::string& name);

struct ModelConfig {
  std::size_t M = 7;        // variables
  std::size_t L = 336;      // input length
  std::size_t T = 96;       // prediction length
  std::size_t P = 16;       // patch size
  std::size_t S = 8;        // patch stride
  std::size_t D = 64;       // embedding dim
  std::size_t K = 2;        // blocks
  std::size_t large_k = 51;
  std::size_t small_k = 5;
  std::size_t r = 2;        // FFN ratio
  double dropout = 0.1;
  bool revin_affine = true;
  FfnVariant ffn_variant = FfnVariant::MD;

  /// Patch count L // S. Trailing L % S samples never reach a full stride.
  std::size_t num_patches() const { return L / S; }
  std::size_t channels() const { return M * D; }
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  /// Ordered key/value view used by checkpoints and config snapshots.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
  /// Assign one field from its text form. Returns false for unknown keys;
  /// throws std::invalid_argument for malformed values.
  bool set(const std::string& key, const std::string& value);

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kRevinEps = 1e-5;

template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
  bool defined() const { return weight.defined(); }
};

/// The point-wise FFN convolutions. Which ones are defined depends on the
/// variant: MD uses all four, MOnly the first pair, DOnly the second pair and
/// NoGroup the first pair with groups = 1.
template <typename T>
struct FfnParams {
  ConvParams<T> ffn1_in, ffn1_out;
  ConvParams<T> ffn2_in, ffn2_out;
};

template <typename T>
struct BlockParams {
  ConvParams<T> dw_large;
  BNState<T> bn_large;
  ConvParams<T> dw_small;
  BNState<T> bn_small;
  FfnParams<T> ffn;
};

/// A block after structural re-parameterization: one depth-wise conv of the
/// large kernel size replaces both branches and their batch norms.
template <typename T>
struct InferenceBlockParams {
  ConvParams<T> dw;
  FfnParams<T> ffn;
};

template <typename T>
struct ModelParams {
  ConvParams<T> embed;                 // [D,1,P], [D]
  std::vector<BlockParams<T>> blocks;  // K
  ConvParams<T> head;                  // [T, D*N], [T]
  Tensor<T> revin_gamma;               // [M] when affine
  Tensor<T> revin_beta;

  /// Trainable tensors in a stable order (aliases, not copies).
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
  /// Batch-norm running statistics.
  std::vector<std::pair<std::string, Tensor<T>>> named_buffers() const;
  std::size_t parameter_count() const;
  /// Deep copy, including BN statistics.
  ModelParams clone() const;
  void zero_grad();
};

template <typename T>
struct InferenceParams {
  ConvParams<T> embed;
  std::vector<InferenceBlockParams<T>> blocks;
  ConvParams<T> head;
  Tensor<T> revin_gamma;
  Tensor<T> revin_beta;
};

template <typename T>
struct RevINStats {
  Tensor<T> mean;  // [B,M]
  Tensor<T> std;   // [B,M], already floored at eps
  T eps = T(kRevinEps);
};

/// Closed-form trainable parameter count.
std::size_t param_count(const ModelConfig& config);

/// PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization;
/// BN and RevIN affine start at identity.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, Rng& rng);

/// Same shapes as init_params with every block conv weight and bias zero,
/// which makes the backbone the identity map.
template <typename T>
void zero_blocks(ModelParams<T>& params);

template <typename T>
std::pair<Tensor<T>, RevINStats<T>> revin_norm(const Tensor<T>& x, T eps, const Tensor<T>& gamma,
                                               const Tensor<T>& beta);

template <typename T>
Tensor<T> revin_denorm(const Tensor<T>& y, const RevINStats<T>& stats, const Tensor<T>& gamma,
                       const Tensor<T>& beta);

/// [B,M,L] -> [B,M,D,L//S]: tail-pad by repeating the last value P-S times,
/// then a stride-S conv with kernel P maps 1 channel to D.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& x, const ConvParams<T>& embed, const ModelConfig& config);

/// The large + small depth-wise branches, each followed by its BN, summed.
/// Input and output are [B, M*D, N].
template <typename T>
Tensor<T> time_mixing(const Tensor<T>& flat, BlockParams<T>& block, const ModelConfig& config, Mode mode);

/// Conv(k=1) -> dropout -> GELU -> conv(k=1) -> dropout, all grouped.
template <typename T>
Tensor<T> pointwise_ffn(const Tensor<T>& x, const ConvParams<T>& in, const ConvParams<T>& out, std::size_t groups,
                        double dropout, Mode mode, Rng& rng);

/// [B, M*D, N] variable-major <-> [B, D*M, N] feature-major (channel block transpose).
template <typename T>
Tensor<T> to_feature_major(const Tensor<T>& flat, const ModelConfig& config);
template <typename T>
Tensor<T> to_variable_major(const Tensor<T>& flat, const ModelConfig& config);

/// Cross-variable stage of a block according to config.ffn_variant.
/// Input and output are variable-major [B, M*D, N].
template <typename T>
Tensor<T> channel_mixing(const Tensor<T>& flat, const FfnParams<T>& ffn, const ModelConfig& config, Mode mode,
                         Rng& rng);

/// One residual block: z + mixing(time_mixing(z)). z is [B,M,D,N].
template <typename T>
Tensor<T> block_forward(const Tensor<T>& z, BlockParams<T>& block, const ModelConfig& config, Mode mode,
                        Rng& rng);

template <typename T>
Tensor<T> backbone_forward(const Tensor<T>& x_emb, std::vector<BlockParams<T>>& blocks, const ModelConfig& config,
                           Mode mode, Rng& rng);

/// Flatten (D,N) per variable, then one linear map shared by all variables.
template <typename T>
Tensor<T> head_forward(const Tensor<T>& z, const ConvParams<T>& head, const ModelConfig& config);

/// RevIN -> patch embedding -> backbone -> head -> RevIN inverse.
/// x is [B,M,L]; returns [B,M,T].
template <typename T>
Tensor<T> forward(const Tensor<T>& x, ModelParams<T>& params, const ModelConfig& config, Mode mode, Rng& rng);

/// Fold both BNs into their convs, zero-pad the small kernel to the large
/// size and sum. Throws std::logic_error if BN running stats were never populated.
template <typename T>
InferenceBlockParams<T> merge_reparam(const BlockParams<T>& block, const ModelConfig& config);

template <typename T>
InferenceParams<T> merge_reparam(const ModelParams<T>& params, const ModelConfig& config);

template <typename T>
Tensor<T> block_forward(const Tensor<T>& z, const InferenceBlockParams<T>& block, const ModelConfig& config);

/// Eval-mode forward with merged blocks.
template <typename T>
Tensor<T> forward(const Tensor<T>& x, const InferenceParams<T>& params, const ModelConfig& config);

}  // namespace lktcn
