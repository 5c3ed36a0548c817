#include "lktcn/model.hpp"

#include <cmath>
#include <sstream>

#include "lktcn/parse.hpp"

namespace lktcn {

const char* ffn_variant_name(FfnVariant v) {
  switch (v) {
    case FfnVariant::MD: return "MD";
    case FfnVariant::MOnly: return "M_only";
    case FfnVariant::DOnly: return "D_only";
    case FfnVariant::NoGroup: return "no_group";
  }
  return "MD";
}

FfnVariant parse_ffn_variant(const std::string& name) {
  if (name == "MD") return FfnVariant::MD;
  if (name == "M_only") return FfnVariant::MOnly;
  if (name == "D_only") return FfnVariant::DOnly;
  if (name == "no_group") return FfnVariant::NoGroup;
  throw std::invalid_argument("unknown ffn_variant '" + name + "' (MD, M_only, D_only, no_group)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (M < 1 || D < 1 || T < 1 || P < 1 || S < 1 || K < 1) fail("M, D, T, P, S and K must be >= 1");
  if (S > P) fail("stride S must not exceed patch size P");
  if (L < S) fail("input length L must be >= S so that N = L // S >= 1");
  if (large_k % 2 == 0 || small_k % 2 == 0) fail("kernel sizes must be odd");
  if (large_k <= small_k) fail("large_k must exceed small_k");
  if (r < 1) fail("FFN ratio r must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_kv() const {
  std::ostringstream drop;
  drop.precision(17);
  drop << dropout;
  return {{"M", std::to_string(M)},
          {"L", std::to_string(L)},
          {"T", std::to_string(T)},
          {"P", std::to_string(P)},
          {"S", std::to_string(S)},
          {"D", std::to_string(D)},
          {"K", std::to_string(K)},
          {"large_k", std::to_string(large_k)},
          {"small_k", std::to_string(small_k)},
          {"r", std::to_string(r)},
          {"dropout", drop.str()},
          {"revin_affine", revin_affine ? "true" : "false"},
          {"ffn_variant", ffn_variant_name(ffn_variant)}};
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  std::size_t* sizes[] = {&M, &L, &T, &P, &S, &D, &K, &large_k, &small_k, &r};
  const char* size_keys[] = {"M", "L", "T", "P", "S", "D", "K", "large_k", "small_k", "r"};
  for (std::size_t i = 0; i < std::size(size_keys); ++i)
    if (key == size_keys[i]) {
      *sizes[i] = parse_size(key, value);
      return true;
    }
  if (key == "dropout") {
    dropout = parse_double(key, value);
    return true;
  }
  if (key == "revin_affine") {
    revin_affine = parse_bool(key, value);
    return true;
  }
  if (key == "ffn_variant") {
    ffn_variant = parse_ffn_variant(value);
    return true;
  }
  return false;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv)
    if (!c.set(k, v)) throw std::invalid_argument("unknown model config key '" + k + "'");
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

struct FfnLayout {
  bool first = false;   // ffn1 pair present
  bool second = false;  // ffn2 pair present
  std::size_t first_groups = 1;
};

FfnLayout ffn_layout(const ModelConfig& c) {
  switch (c.ffn_variant) {
    case FfnVariant::MD: return {true, true, c.M};
    case FfnVariant::MOnly: return {true, false, c.M};
    case FfnVariant::DOnly: return {false, true, c.M};
    case FfnVariant::NoGroup: return {true, false, 1};
  }
  return {};
}

template <typename T>
ConvParams<T> make_conv(std::size_t out, std::size_t in_per_group, std::size_t k, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_per_group * k));
  ConvParams<T> p{Tensor<T>(Shape{out, in_per_group, k}), Tensor<T>(Shape{out})};
  for (auto& v : p.weight.mutable_data()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  for (auto& v : p.bias.mutable_data()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  p.weight.set_requires_grad(true);
  p.bias.set_requires_grad(true);
  return p;
}

template <typename T>
void push_conv(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& name,
               const ConvParams<T>& p) {
  if (!p.defined()) return;
  out.emplace_back(name + ".weight", p.weight);
  out.emplace_back(name + ".bias", p.bias);
}

template <typename T>
ConvParams<T> clone_conv(const ConvParams<T>& p) {
  if (!p.defined()) return {};
  return {p.weight.clone(), p.bias.clone()};
}

template <typename T>
BNState<T> clone_bn(const BNState<T>& s) {
  BNState<T> c = s;
  c.gamma = s.gamma.clone();
  c.beta = s.beta.clone();
  c.running_mean = s.running_mean.clone();
  c.running_var = s.running_var.clone();
  return c;
}

template <typename T>
FfnParams<T> clone_ffn(const FfnParams<T>& f) {
  return {clone_conv(f.ffn1_in), clone_conv(f.ffn1_out), clone_conv(f.ffn2_in), clone_conv(f.ffn2_out)};
}

}  // namespace

std::size_t param_count(const ModelConfig& c) {
  c.validate();
  const std::size_t C = c.channels(), N = c.num_patches();
  const std::size_t embed = c.D * c.P + c.D;
  // Two depth-wise convs with bias, each followed by a BN with gamma and beta.
  std::size_t block = C * (c.large_k + 1) + C * (c.small_k + 1) + 4 * C;
  const FfnLayout f = ffn_layout(c);
  const std::size_t hidden = c.r * C;
  if (f.first) block += hidden * (C / f.first_groups) + hidden + C * (hidden / f.first_groups) + C;
  if (f.second) block += hidden * (C / c.D) + hidden + C * (hidden / c.D) + C;
  const std::size_t head = c.D * N * c.T + c.T;
  const std::size_t revin = c.revin_affine ? 2 * c.M : 0;
  return embed + c.K * block + head + revin;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& c, Rng& rng) {
  c.validate();
  const std::size_t C = c.channels(), hidden = c.r * C;
  ModelParams<T> p;
  p.embed = make_conv<T>(c.D, 1, c.P, rng);
  const FfnLayout f = ffn_layout(c);
  for (std::size_t i = 0; i < c.K; ++i) {
    BlockParams<T> b;
    b.dw_large = make_conv<T>(C, 1, c.large_k, rng);
    b.bn_large = BNState<T>(C);
    b.dw_small = make_conv<T>(C, 1, c.small_k, rng);
    b.bn_small = BNState<T>(C);
    for (BNState<T>* bn : {&b.bn_large, &b.bn_small}) {
      bn->gamma.set_requires_grad(true);
      bn->beta.set_requires_grad(true);
    }
    if (f.first) {
      b.ffn.ffn1_in = make_conv<T>(hidden, C / f.first_groups, 1, rng);
      b.ffn.ffn1_out = make_conv<T>(C, hidden / f.first_groups, 1, rng);
    }
    if (f.second) {
      b.ffn.ffn2_in = make_conv<T>(hidden, C / c.D, 1, rng);
      b.ffn.ffn2_out = make_conv<T>(C, hidden / c.D, 1, rng);
    }
    p.blocks.push_back(std::move(b));
  }
  const std::size_t flat = c.D * c.num_patches();
  const double bound = 1.0 / std::sqrt(static_cast<double>(flat));
  p.head = {Tensor<T>(Shape{c.T, flat}), Tensor<T>(Shape{c.T})};
  for (auto& v : p.head.weight.mutable_data()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  for (auto& v : p.head.bias.mutable_data()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  p.head.weight.set_requires_grad(true);
  p.head.bias.set_requires_grad(true);
  if (c.revin_affine) {
    p.revin_gamma = Tensor<T>(Shape{c.M}, T(1));
    p.revin_beta = Tensor<T>(Shape{c.M}, T(0));
    p.revin_gamma.set_requires_grad(true);
    p.revin_beta.set_requires_grad(true);
  }
  return p;
}

template <typename T>
void zero_blocks(ModelParams<T>& params) {
  auto zero = [](ConvParams<T>& cp) {
    if (!cp.defined()) return;
    for (auto& v : cp.weight.mutable_data()) v = T(0);
    for (auto& v : cp.bias.mutable_data()) v = T(0);
  };
  for (auto& b : params.blocks) {
    zero(b.dw_large);
    zero(b.dw_small);
    zero(b.ffn.ffn1_in);
    zero(b.ffn.ffn1_out);
    zero(b.ffn.ffn2_in);
    zero(b.ffn.ffn2_out);
  }
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  push_conv(out, "embed", embed);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string pre = "blocks." + std::to_string(i) + ".";
    const auto& b = blocks[i];
    push_conv(out, pre + "dw_large", b.dw_large);
    out.emplace_back(pre + "bn_large.gamma", b.bn_large.gamma);
    out.emplace_back(pre + "bn_large.beta", b.bn_large.beta);
    push_conv(out, pre + "dw_small", b.dw_small);
    out.emplace_back(pre + "bn_small.gamma", b.bn_small.gamma);
    out.emplace_back(pre + "bn_small.beta", b.bn_small.beta);
    push_conv(out, pre + "ffn1_in", b.ffn.ffn1_in);
    push_conv(out, pre + "ffn1_out", b.ffn.ffn1_out);
    push_conv(out, pre + "ffn2_in", b.ffn.ffn2_in);
    push_conv(out, pre + "ffn2_out", b.ffn.ffn2_out);
  }
  push_conv(out, "head", head);
  if (revin_gamma.defined()) {
    out.emplace_back("revin.gamma", revin_gamma);
    out.emplace_back("revin.beta", revin_beta);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::named_buffers() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string pre = "blocks." + std::to_string(i) + ".";
    out.emplace_back(pre + "bn_large.running_mean", blocks[i].bn_large.running_mean);
    out.emplace_back(pre + "bn_large.running_var", blocks[i].bn_large.running_var);
    out.emplace_back(pre + "bn_small.running_mean", blocks[i].bn_small.running_mean);
    out.emplace_back(pre + "bn_small.running_var", blocks[i].bn_small.running_var);
  }
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  ModelParams<T> c;
  c.embed = clone_conv(embed);
  for (const auto& b : blocks)
    c.blocks.push_back({clone_conv(b.dw_large), clone_bn(b.bn_large), clone_conv(b.dw_small), clone_bn(b.bn_small),
                        clone_ffn(b.ffn)});
  c.head = clone_conv(head);
  if (revin_gamma.defined()) {
    c.revin_gamma = revin_gamma.clone();
    c.revin_beta = revin_beta.clone();
  }
  return c;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& [name, t] : named_parameters()) t.zero_grad();
}

// ---------------------------------------------------------------------------
// Forward pieces

template <typename T>
std::pair<Tensor<T>, RevINStats<T>> revin_norm(const Tensor<T>& x, T eps, const Tensor<T>& gamma,
                                               const Tensor<T>& beta) {
  if (x.rank() != 3) throw std::invalid_argument("revin_norm: input must be [B,M,L]");
  RevINStats<T> stats;
  stats.eps = eps;
  stats.mean = ops::reduce_mean_last(x);
  Tensor<T> centered = ops::sub_last(x, stats.mean);
  stats.std = ops::sqrt_floor(ops::reduce_mean_last(ops::square(centered)), eps);
  Tensor<T> out = ops::div_last(centered, stats.std);
  if (gamma.defined()) out = ops::channel_affine(out, gamma, beta);
  return {out, stats};
}

template <typename T>
Tensor<T> revin_denorm(const Tensor<T>& y, const RevINStats<T>& stats, const Tensor<T>& gamma,
                       const Tensor<T>& beta) {
  Tensor<T> out = y;
  if (gamma.defined()) out = ops::channel_affine_inverse(out, gamma, beta, stats.eps * stats.eps);
  return ops::add_last(ops::mul_last(out, stats.std), stats.mean);
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& x, const ConvParams<T>& embed, const ModelConfig& c) {
  if (x.rank() != 3 || x.dim(1) != c.M)
    throw std::invalid_argument("patch_embed: input must be [B,M,L] with M=" + std::to_string(c.M) + ", got " +
                                shape_str(x.shape()));
  const std::size_t B = x.dim(0), L = x.dim(2);
  if (L < c.S)
    throw std::invalid_argument("patch_embed: length " + std::to_string(L) + " < stride " + std::to_string(c.S) +
                                " yields no patches");
  Tensor<T> rows = ops::reshape(x, Shape{B * c.M, 1, L});
  Tensor<T> emb = ops::conv1d_grouped(rows, embed.weight, embed.bias, c.S, Padding::repeat_last(c.P - c.S), 1);
  const std::size_t N = emb.dim(2);
  return ops::reshape(emb, Shape{B, c.M, c.D, N});
}

template <typename T>
Tensor<T> time_mixing(const Tensor<T>& flat, BlockParams<T>& block, const ModelConfig& c, Mode mode) {
  const std::size_t C = c.channels();
  Tensor<T> large = ops::conv1d_grouped(flat, block.dw_large.weight, block.dw_large.bias, 1,
                                        Padding::symmetric((c.large_k - 1) / 2), C);
  Tensor<T> small = ops::conv1d_grouped(flat, block.dw_small.weight, block.dw_small.bias, 1,
                                        Padding::symmetric((c.small_k - 1) / 2), C);
  return ops::add(ops::batchnorm1d(large, block.bn_large, mode), ops::batchnorm1d(small, block.bn_small, mode));
}

template <typename T>
Tensor<T> pointwise_ffn(const Tensor<T>& x, const ConvParams<T>& in, const ConvParams<T>& out, std::size_t groups,
                        double dropout, Mode mode, Rng& rng) {
  Tensor<T> h = ops::conv1d_grouped(x, in.weight, in.bias, 1, Padding::none(), groups);
  h = ops::gelu(ops::dropout(h, dropout, mode, rng));
  h = ops::conv1d_grouped(h, out.weight, out.bias, 1, Padding::none(), groups);
  return ops::dropout(h, dropout, mode, rng);
}

template <typename T>
Tensor<T> to_feature_major(const Tensor<T>& flat, const ModelConfig& c) {
  const std::size_t B = flat.dim(0), N = flat.dim(2);
  Tensor<T> z = ops::reshape(flat, Shape{B, c.M, c.D, N});
  return ops::permute_reshape(z, {0, 2, 1, 3}, Shape{B, c.D * c.M, N});
}

template <typename T>
Tensor<T> to_variable_major(const Tensor<T>& flat, const ModelConfig& c) {
  const std::size_t B = flat.dim(0), N = flat.dim(2);
  Tensor<T> z = ops::reshape(flat, Shape{B, c.D, c.M, N});
  return ops::permute_reshape(z, {0, 2, 1, 3}, Shape{B, c.M * c.D, N});
}

template <typename T>
Tensor<T> channel_mixing(const Tensor<T>& flat, const FfnParams<T>& ffn, const ModelConfig& c, Mode mode,
                         Rng& rng) {
  const FfnLayout f = ffn_layout(c);
  Tensor<T> h = flat;
  if (f.first) h = pointwise_ffn(h, ffn.ffn1_in, ffn.ffn1_out, f.first_groups, c.dropout, mode, rng);
  if (f.second) {
    h = to_feature_major(h, c);
    h = pointwise_ffn(h, ffn.ffn2_in, ffn.ffn2_out, c.D, c.dropout, mode, rng);
    h = to_variable_major(h, c);
  }
  return h;
}

namespace {

template <typename T>
void check_block_input(const Tensor<T>& z, const ModelConfig& c) {
  if (z.rank() != 4 || z.dim(1) != c.M || z.dim(2) != c.D)
    throw std::invalid_argument("block: input must be [B,M,D,N] with M=" + std::to_string(c.M) +
                                ", D=" + std::to_string(c.D) + ", got " + shape_str(z.shape()));
}

}  // namespace

template <typename T>
Tensor<T> block_forward(const Tensor<T>& z, BlockParams<T>& block, const ModelConfig& c, Mode mode, Rng& rng) {
  check_block_input(z, c);
  const std::size_t B = z.dim(0), N = z.dim(3);
  Tensor<T> flat = ops::reshape(z, Shape{B, c.channels(), N});
  Tensor<T> mixed = channel_mixing(time_mixing(flat, block, c, mode), block.ffn, c, mode, rng);
  return ops::add(ops::reshape(mixed, z.shape()), z);
}

template <typename T>
Tensor<T> backbone_forward(const Tensor<T>& x_emb, std::vector<BlockParams<T>>& blocks, const ModelConfig& c,
                           Mode mode, Rng& rng) {
  if (blocks.empty()) throw std::invalid_argument("backbone: at least one block required");
  Tensor<T> z = x_emb;
  for (auto& b : blocks) z = block_forward(z, b, c, mode, rng);
  return z;
}

template <typename T>
Tensor<T> head_forward(const Tensor<T>& z, const ConvParams<T>& head, const ModelConfig& c) {
  if (z.rank() != 4) throw std::invalid_argument("head: input must be [B,M,D,N]");
  const std::size_t B = z.dim(0), M = z.dim(1), flat = z.dim(2) * z.dim(3);
  if (head.weight.dim(1) != flat || head.weight.dim(0) != c.T)
    throw std::invalid_argument("head: weight " + shape_str(head.weight.shape()) + " does not map D*N=" +
                                std::to_string(flat) + " to T=" + std::to_string(c.T));
  return ops::linear(ops::reshape(z, Shape{B, M, flat}), head.weight, head.bias);
}

template <typename T>
Tensor<T> forward(const Tensor<T>& x, ModelParams<T>& params, const ModelConfig& c, Mode mode, Rng& rng) {
  if (x.rank() != 3 || x.dim(1) != c.M || x.dim(2) != c.L)
    throw std::invalid_argument("forward: input must be [B," + std::to_string(c.M) + "," + std::to_string(c.L) +
                                "], got " + shape_str(x.shape()));
  auto [xn, stats] = revin_norm(x, T(kRevinEps), params.revin_gamma, params.revin_beta);
  Tensor<T> z = backbone_forward(patch_embed(xn, params.embed, c), params.blocks, c, mode, rng);
  return revin_denorm(head_forward(z, params.head, c), stats, params.revin_gamma, params.revin_beta);
}

// ---------------------------------------------------------------------------
// Structural re-parameterization

namespace {

template <typename T>
void fold_bn_into(const ConvParams<T>& conv, const BNState<T>& bn, std::size_t target_k, std::vector<double>& w,
                  std::vector<double>& b) {
  const std::size_t C = conv.weight.dim(0), k = conv.weight.dim(2);
  const std::size_t offset = (target_k - k) / 2;
  const auto cw = conv.weight.data();
  const auto cb = conv.bias.data();
  const auto gamma = bn.gamma.data();
  const auto beta = bn.beta.data();
  const auto rm = bn.running_mean.data();
  const auto rv = bn.running_var.data();
  for (std::size_t ch = 0; ch < C; ++ch) {
    const double t = static_cast<double>(gamma[ch]) / std::sqrt(static_cast<double>(rv[ch]) + bn.eps);
    for (std::size_t j = 0; j < k; ++j) w[ch * target_k + offset + j] += cw[ch * k + j] * t;
    b[ch] += (static_cast<double>(cb[ch]) - rm[ch]) * t + beta[ch];
  }
}

}  // namespace

template <typename T>
InferenceBlockParams<T> merge_reparam(const BlockParams<T>& block, const ModelConfig& c) {
  if (block.bn_large.batches_tracked == 0 || block.bn_small.batches_tracked == 0)
    throw std::logic_error("merge_reparam: batch-norm running statistics were never populated");
  const std::size_t C = c.channels(), k = c.large_k;
  std::vector<double> w(C * k, 0.0), b(C, 0.0);
  fold_bn_into(block.dw_large, block.bn_large, k, w, b);
  fold_bn_into(block.dw_small, block.bn_small, k, w, b);
  InferenceBlockParams<T> out;
  out.dw.weight = Tensor<T>(Shape{C, 1, k}, std::vector<T>(w.begin(), w.end()));
  out.dw.bias = Tensor<T>(Shape{C}, std::vector<T>(b.begin(), b.end()));
  out.ffn = block.ffn;
  return out;
}

template <typename T>
InferenceParams<T> merge_reparam(const ModelParams<T>& params, const ModelConfig& c) {
  InferenceParams<T> out;
  out.embed = params.embed;
  for (const auto& b : params.blocks) out.blocks.push_back(merge_reparam(b, c));
  out.head = params.head;
  out.revin_gamma = params.revin_gamma;
  out.revin_beta = params.revin_beta;
  return out;
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& z, const InferenceBlockParams<T>& block, const ModelConfig& c) {
  check_block_input(z, c);
  const std::size_t B = z.dim(0), N = z.dim(3);
  Tensor<T> flat = ops::reshape(z, Shape{B, c.channels(), N});
  Tensor<T> y = ops::conv1d_grouped(flat, block.dw.weight, block.dw.bias, 1, Padding::symmetric((c.large_k - 1) / 2),
                                    c.channels());
  Rng unused;
  Tensor<T> mixed = channel_mixing(y, block.ffn, c, Mode::Eval, unused);
  return ops::add(ops::reshape(mixed, z.shape()), z);
}

template <typename T>
Tensor<T> forward(const Tensor<T>& x, const InferenceParams<T>& params, const ModelConfig& c) {
  if (x.rank() != 3 || x.dim(1) != c.M || x.dim(2) != c.L)
    throw std::invalid_argument("forward: input must be [B," + std::to_string(c.M) + "," + std::to_string(c.L) +
                                "], got " + shape_str(x.shape()));
  auto [xn, stats] = revin_norm(x, T(kRevinEps), params.revin_gamma, params.revin_beta);
  Tensor<T> z = patch_embed(xn, params.embed, c);
  for (const auto& b : params.blocks) z = block_forward(z, b, c);
  return revin_denorm(head_forward(z, params.head, c), stats, params.revin_gamma, params.revin_beta);
}

#define LKTCN_INSTANTIATE_MODEL(T)                                                                                 \
  template struct ModelParams<T>;                                                                                  \
  template ModelParams<T> init_params(const ModelConfig&, Rng&);                                                   \
  template void zero_blocks(ModelParams<T>&);                                                                      \
  template std::pair<Tensor<T>, RevINStats<T>> revin_norm(const Tensor<T>&, T, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> revin_denorm(const Tensor<T>&, const RevINStats<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> patch_embed(const Tensor<T>&, const ConvParams<T>&, const ModelConfig&);                      \
  template Tensor<T> time_mixing(const Tensor<T>&, BlockParams<T>&, const ModelConfig&, Mode);                     \
  template Tensor<T> pointwise_ffn(const Tensor<T>&, const ConvParams<T>&, const ConvParams<T>&, std::size_t,      \
                                   double, Mode, Rng&);                                                            \
  template Tensor<T> to_feature_major(const Tensor<T>&, const ModelConfig&);                                       \
  template Tensor<T> to_variable_major(const Tensor<T>&, const ModelConfig&);                                      \
  template Tensor<T> channel_mixing(const Tensor<T>&, const FfnParams<T>&, const ModelConfig&, Mode, Rng&);        \
  template Tensor<T> block_forward(const Tensor<T>&, BlockParams<T>&, const ModelConfig&, Mode, Rng&);             \
  template Tensor<T> backbone_forward(const Tensor<T>&, std::vector<BlockParams<T>>&, const ModelConfig&, Mode,    \
                                      Rng&);                                                                       \
  template Tensor<T> head_forward(const Tensor<T>&, const ConvParams<T>&, const ModelConfig&);                     \
  template Tensor<T> forward(const Tensor<T>&, ModelParams<T>&, const ModelConfig&, Mode, Rng&);                   \
  template InferenceBlockParams<T> merge_reparam(const BlockParams<T>&, const ModelConfig&);                       \
  template InferenceParams<T> merge_reparam(const ModelParams<T>&, const ModelConfig&);                            \
  template Tensor<T> block_forward(const Tensor<T>&, const InferenceBlockParams<T>&, const ModelConfig&);          \
  template Tensor<T> forward(const Tensor<T>&, const InferenceParams<T>&, const ModelConfig&);

LKTCN_INSTANTIATE_MODEL(float)
LKTCN_INSTANTIATE_MODEL(double)

#undef LKTCN_INSTANTIATE_MODEL

}  // namespace lktcn
