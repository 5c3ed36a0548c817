#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "lktcn/model.hpp"

namespace lktcn {

/// Upper bound on time(2L) / time(L) at fixed stride.
inline constexpr double kLengthDoublingLimit = 2.6;

struct BenchRow {
  std::size_t L = 0;
  std::size_t N = 0;
  std::size_t D = 0;
  double millis = 0.0;  // median eval-mode block forward
};

struct BenchOptions {
  std::size_t repetitions = 9;
  std::size_t warmup = 2;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
};

/// Median wall time of one eval-mode block forward (f32) on a [batch, M, D, L//S] input.
BenchRow time_block_forward(const ModelConfig& config, const BenchOptions& options = {});

/// One row per input length; every other field comes from `base`.
std::vector<BenchRow> bench_lengths(const ModelConfig& base, const std::vector<std::size_t>& lengths,
                                    const BenchOptions& options = {});

/// millis[i+1] / millis[i] for consecutive rows.
std::vector<double> consecutive_ratios(const std::vector<BenchRow>& rows);

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace lktcn
