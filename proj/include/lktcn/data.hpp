#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "lktcn/tensor.hpp"

namespace lktcn {

/// Per-column z-score fitted on the training rows.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;  // floored at kMinStd

  static constexpr double kMinStd = 1e-8;
  bool fitted() const { return !mean.empty(); }
  double transform(std::size_t col, double v) const { return (v - mean[col]) / std[col]; }
  double inverse(std::size_t col, double v) const { return v * std[col] + mean[col]; }
};

/// Row-major [rows, M] series. Values are kept in double so the scaler
/// round-trip is exact to well below f32 resolution.
struct TimeSeriesDataset {
  std::vector<std::string> timestamps;  // empty when the file has no time column
  std::vector<std::string> names;       // M labels
  std::vector<double> values;
  Scaler scaler;

  std::size_t rows() const { return names.empty() ? 0 : values.size() / names.size(); }
  std::size_t cols() const { return names.size(); }
  double at(std::size_t row, std::size_t col) const { return values[row * names.size() + col]; }
  double& at(std::size_t row, std::size_t col) { return values[row * names.size() + col]; }
};

/// Comma-separated, optional leading timestamp column (detected from a
/// non-numeric first header cell). Throws ParseError naming the line for
/// ragged rows or bad cells, std::invalid_argument for an empty file and
/// IoError when the file cannot be opened.
TimeSeriesDataset load_csv(const std::string& path);
TimeSeriesDataset parse_csv(std::istream& in, const std::string& source = "<stream>");
void write_csv(const std::string& path, const TimeSeriesDataset& data);

/// Fit the scaler on rows [0, train_border) and z-score every row in place.
void standardize(TimeSeriesDataset& data, std::size_t train_border);
/// Undo standardize() in place.
void inverse_transform(TimeSeriesDataset& data);

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  bool lookback_overlap = true;

  static SplitSpec ett() { return {0.6, 0.2, 0.2, true}; }
  static SplitSpec standard() { return {0.7, 0.1, 0.2, true}; }
  /// ETT-style file names (ETTh1.csv, ETTm2.csv, ...) get 0.6/0.2/0.2.
  static SplitSpec for_dataset(const std::string& path);
  void validate() const;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

struct Splits {
  std::size_t train_border = 0;
  std::size_t val_border = 0;
  IndexRange train, val, test;
};

/// Chronological borders. With lookback_overlap the val/test ranges start L
/// rows before their border. Throws std::invalid_argument if any range holds
/// fewer than L + T rows.
Splits split(std::size_t rows, const SplitSpec& spec, std::size_t L, std::size_t T);

/// All stride-1 (input, target) windows inside a row range.
class WindowSampler {
 public:
  WindowSampler(IndexRange range, std::size_t L, std::size_t T);
  std::size_t count() const { return count_; }
  /// First row of the input window i; its target starts at input_start(i) + L.
  std::size_t input_start(std::size_t i) const { return range_.begin + i; }
  /// Variable-major copies: x is [M,L], y is [M,T].
  void window(const TimeSeriesDataset& data, std::size_t i, std::vector<double>& x, std::vector<double>& y) const;

  const IndexRange& range() const { return range_; }
  std::size_t L() const { return L_; }
  std::size_t T() const { return T_; }

 private:
  IndexRange range_;
  std::size_t L_, T_, count_;
};

/// Stack windows into x [B,M,L] and y [B,M,T].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const TimeSeriesDataset& data, const WindowSampler& sampler,
                                           const std::vector<std::size_t>& indices);

/// Deterministic multi-seasonal series (daily and weekly cycles, slow trend,
/// AR(1) noise, cross-variable coupling), hourly timestamps.
TimeSeriesDataset make_seasonal_dataset(std::size_t rows = 10000, std::size_t vars = 7, std::uint64_t seed = 2023);

}  // namespace lktcn
