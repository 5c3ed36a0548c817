#include "lktcn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>

namespace lktcn {

BenchRow time_block_forward(const ModelConfig& config, const BenchOptions& options) {
  config.validate();
  if (options.repetitions == 0) throw std::invalid_argument("bench: repetitions must be >= 1");
  Rng rng(options.seed, 0);
  ModelConfig one = config;
  one.K = 1;
  ModelParams<float> params = init_params<float>(one, rng);
  BlockParams<float>& block = params.blocks.at(0);
  // Give BN plausible running statistics; eval mode never updates them.
  for (auto* bn : {&block.bn_large, &block.bn_small}) {
    for (auto& v : bn->running_var.mutable_data()) v = 1.0f;
    bn->batches_tracked = 1;
  }
  const Tensor<float> z =
      uniform_tensor<float>({options.batch, config.M, config.D, config.num_patches()}, rng, -1.0f, 1.0f);

  std::vector<double> samples;
  for (std::size_t i = 0; i < options.warmup + options.repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor<float> out = block_forward(z, block, one, Mode::Eval, rng);
    const auto t1 = std::chrono::steady_clock::now();
    if (out.numel() != z.numel()) throw std::logic_error("bench: block changed the tensor size");
    if (i >= options.warmup) samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::nth_element(samples.begin(), samples.begin() + samples.size() / 2, samples.end());
  return {config.L, config.num_patches(), config.D, samples[samples.size() / 2]};
}

std::vector<BenchRow> bench_lengths(const ModelConfig& base, const std::vector<std::size_t>& lengths,
                                    const BenchOptions& options) {
  std::vector<BenchRow> rows;
  for (std::size_t L : lengths) {
    ModelConfig c = base;
    c.L = L;
    rows.push_back(time_block_forward(c, options));
  }
  return rows;
}

std::vector<double> consecutive_ratios(const std::vector<BenchRow>& rows) {
  std::vector<double> out;
  for (std::size_t i = 1; i < rows.size(); ++i) out.push_back(rows[i].millis / rows[i - 1].millis);
  return out;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "L,N,D,millis\n";
  for (const auto& r : rows) out << r.L << ',' << r.N << ',' << r.D << ',' << r.millis << '\n';
}

}  // namespace lktcn
