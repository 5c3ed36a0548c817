#include "lktcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lktcn/errors.hpp"
#include "lktcn/ops.hpp"
#include "lktcn/parse.hpp"

namespace lktcn {

namespace {

bool is_number(std::string_view cell) {
  double v;
  return try_parse_double(cell, v);
}

bool is_time_header(std::string_view cell) {
  std::string lower(trim(cell));
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return lower == "date" || lower == "time" || lower == "timestamp" || lower == "datetime";
}

}  // namespace

TimeSeriesDataset parse_csv(std::istream& in, const std::string& source) {
  std::vector<std::pair<std::size_t, std::string>> lines;  // (1-based line number, text)
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    lines.emplace_back(no, line);
  }
  if (lines.empty()) throw std::invalid_argument(source + ": empty file");

  std::vector<std::string> first = split(lines[0].second, ',');
  bool has_header = false;
  for (std::size_t i = 1; i < first.size(); ++i) has_header = has_header || !is_number(first[i]);
  if (first.size() == 1) has_header = !is_number(first[0]);
  const std::size_t data_start = has_header ? 1 : 0;
  if (data_start >= lines.size()) throw std::invalid_argument(source + ": no data rows");

  const std::vector<std::string> probe = split(lines[data_start].second, ',');
  const bool has_time = !is_number(probe[0]) || (has_header && is_time_header(first[0]));
  const std::size_t width = first.size();
  const std::size_t offset = has_time ? 1 : 0;
  if (width <= offset) throw ParseError(source + ": no value columns");

  TimeSeriesDataset ds;
  for (std::size_t c = offset; c < width; ++c)
    ds.names.push_back(has_header ? std::string(trim(first[c])) : "v" + std::to_string(c - offset));
  ds.values.reserve((lines.size() - data_start) * ds.names.size());

  for (std::size_t i = data_start; i < lines.size(); ++i) {
    const auto& [no, text] = lines[i];
    const std::vector<std::string> cells = split(text, ',');
    if (cells.size() != width)
      throw ParseError(source + ": line " + std::to_string(no) + ": expected " + std::to_string(width) +
                       " fields, found " + std::to_string(cells.size()));
    if (has_time) ds.timestamps.emplace_back(trim(cells[0]));
    for (std::size_t c = offset; c < width; ++c) {
      double v;
      if (trim(cells[c]).empty())
        throw ParseError(source + ": line " + std::to_string(no) + ": missing value in column '" +
                         ds.names[c - offset] + "'");
      if (!try_parse_double(cells[c], v) || !std::isfinite(v))
        throw ParseError(source + ": line " + std::to_string(no) + ": non-numeric value '" +
                         std::string(trim(cells[c])) + "' in column '" + ds.names[c - offset] + "'");
      ds.values.push_back(v);
    }
  }
  return ds;
}

TimeSeriesDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  return parse_csv(in, path);
}

void write_csv(const std::string& path, const TimeSeriesDataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  const bool has_time = !data.timestamps.empty();
  if (has_time) out << "date";
  for (std::size_t c = 0; c < data.cols(); ++c) out << ((has_time || c) ? "," : "") << data.names[c];
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < data.rows(); ++r) {
    if (has_time) out << data.timestamps[r];
    for (std::size_t c = 0; c < data.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.10g", data.at(r, c));
      out << ((has_time || c) ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

void standardize(TimeSeriesDataset& data, std::size_t train_border) {
  if (train_border < 2 || train_border > data.rows())
    throw std::invalid_argument("standardize: train border must lie in [2, rows]");
  const std::size_t M = data.cols();
  Scaler s;
  s.mean.assign(M, 0.0);
  s.std.assign(M, 0.0);
  for (std::size_t c = 0; c < M; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < train_border; ++r) acc += data.at(r, c);
    const double mu = acc / static_cast<double>(train_border);
    double sq = 0.0;
    for (std::size_t r = 0; r < train_border; ++r) sq += (data.at(r, c) - mu) * (data.at(r, c) - mu);
    s.mean[c] = mu;
    s.std[c] = std::max(std::sqrt(sq / static_cast<double>(train_border)), Scaler::kMinStd);
  }
  for (std::size_t r = 0; r < data.rows(); ++r)
    for (std::size_t c = 0; c < M; ++c) data.at(r, c) = s.transform(c, data.at(r, c));
  data.scaler = std::move(s);
}

void inverse_transform(TimeSeriesDataset& data) {
  if (!data.scaler.fitted()) throw std::logic_error("inverse_transform: dataset was never standardized");
  for (std::size_t r = 0; r < data.rows(); ++r)
    for (std::size_t c = 0; c < data.cols(); ++c) data.at(r, c) = data.scaler.inverse(c, data.at(r, c));
  data.scaler = {};
}

SplitSpec SplitSpec::for_dataset(const std::string& path) {
  const auto slash = path.find_last_of("/\\");
  const std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  return base.rfind("ETT", 0) == 0 ? ett() : standard();
}

void SplitSpec::validate() const {
  if (train <= 0.0 || val <= 0.0 || test <= 0.0) throw std::invalid_argument("split ratios must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
}

namespace {

std::size_t fraction_of(std::size_t rows, double ratio) {
  const double exact = static_cast<double>(rows) * ratio;
  const double nearest = std::round(exact);
  return static_cast<std::size_t>(std::abs(exact - nearest) < 1e-6 ? nearest : std::floor(exact));
}

}  // namespace

Splits split(std::size_t rows, const SplitSpec& spec, std::size_t L, std::size_t T) {
  spec.validate();
  const std::size_t n_train = fraction_of(rows, spec.train);
  const std::size_t n_test = fraction_of(rows, spec.test);
  if (n_train + n_test >= rows) throw std::invalid_argument("split: dataset too short for three splits");
  Splits s;
  s.train_border = n_train;
  s.val_border = rows - n_test;
  const std::size_t back = spec.lookback_overlap ? L : 0;
  s.train = {0, s.train_border};
  s.val = {s.train_border >= back ? s.train_border - back : 0, s.val_border};
  s.test = {s.val_border - back, rows};
  const std::pair<const char*, IndexRange> ranges[] = {{"train", s.train}, {"val", s.val}, {"test", s.test}};
  for (const auto& [name, range] : ranges)
    if (range.size() < L + T)
      throw std::invalid_argument(std::string("split: ") + name + " range holds " + std::to_string(range.size()) +
                                  " rows, need at least L+T=" + std::to_string(L + T));
  return s;
}

WindowSampler::WindowSampler(IndexRange range, std::size_t L, std::size_t T)
    : range_(range), L_(L), T_(T), count_(range.size() >= L + T ? range.size() - L - T + 1 : 0) {}

void WindowSampler::window(const TimeSeriesDataset& data, std::size_t i, std::vector<double>& x,
                           std::vector<double>& y) const {
  if (i >= count_) throw std::out_of_range("window index out of range");
  const std::size_t M = data.cols(), start = input_start(i);
  x.resize(M * L_);
  y.resize(M * T_);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t t = 0; t < L_; ++t) x[m * L_ + t] = data.at(start + t, m);
    for (std::size_t t = 0; t < T_; ++t) y[m * T_ + t] = data.at(start + L_ + t, m);
  }
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const TimeSeriesDataset& data, const WindowSampler& sampler,
                                           const std::vector<std::size_t>& indices) {
  const std::size_t B = indices.size(), M = data.cols(), L = sampler.L(), H = sampler.T();
  Tensor<T> x(Shape{B, M, L});
  Tensor<T> y(Shape{B, M, H});
  auto xs = x.mutable_data();
  auto ys = y.mutable_data();
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t start = sampler.input_start(indices[b]);
    if (indices[b] >= sampler.count()) throw std::out_of_range("make_batch: window index out of range");
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t t = 0; t < L; ++t) xs[(b * M + m) * L + t] = static_cast<T>(data.at(start + t, m));
      for (std::size_t t = 0; t < H; ++t) ys[(b * M + m) * H + t] = static_cast<T>(data.at(start + L + t, m));
    }
  }
  return {x, y};
}

template std::pair<Tensor<float>, Tensor<float>> make_batch(const TimeSeriesDataset&, const WindowSampler&,
                                                            const std::vector<std::size_t>&);
template std::pair<Tensor<double>, Tensor<double>> make_batch(const TimeSeriesDataset&, const WindowSampler&,
                                                              const std::vector<std::size_t>&);

namespace {

// Days since 1970-01-01 to (year, month, day), proleptic Gregorian.
void civil_from_days(long long z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const long long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long long yy = static_cast<long long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y = static_cast<int>(yy + (m <= 2));
}

}  // namespace

TimeSeriesDataset make_seasonal_dataset(std::size_t rows, std::size_t vars, std::uint64_t seed) {
  if (vars < 1 || rows < 1) throw std::invalid_argument("make_seasonal_dataset: need rows, vars >= 1");
  Rng rng(seed, 11);
  constexpr double kTwoPi = 6.283185307179586;
  struct Profile {
    double daily, weekly, trend, phase_d, phase_w, level, noise;
  };
  std::vector<Profile> prof(vars);
  for (auto& p : prof) {
    p.daily = 0.5 + 1.5 * rng.uniform();
    p.weekly = 0.2 + 0.8 * rng.uniform();
    p.trend = -1.0 + 2.0 * rng.uniform();
    p.phase_d = kTwoPi * rng.uniform();
    p.phase_w = kTwoPi * rng.uniform();
    p.level = 10.0 * rng.uniform();
    p.noise = 0.15 + 0.2 * rng.uniform();
  }
  TimeSeriesDataset ds;
  for (std::size_t m = 0; m + 1 < vars; ++m) ds.names.push_back("X" + std::to_string(m + 1));
  ds.names.push_back("OT");
  ds.values.assign(rows * vars, 0.0);
  std::vector<double> ar(vars, 0.0);
  const long long start_day = 16983;  // 2016-07-01
  char stamp[32];
  for (std::size_t t = 0; t < rows; ++t) {
    const double td = static_cast<double>(t);
    const double slow = std::sin(kTwoPi * td / (1.3 * static_cast<double>(rows))) + 0.5 * td / rows;
    double others = 0.0;
    for (std::size_t m = 0; m < vars; ++m) {
      const Profile& p = prof[m];
      ar[m] = 0.8 * ar[m] + p.noise * rng.normal();
      double v = p.level + p.daily * std::sin(kTwoPi * td / 24.0 + p.phase_d) +
                 p.weekly * std::sin(kTwoPi * td / 168.0 + p.phase_w) + p.trend * slow + ar[m];
      if (m + 1 == vars && vars > 1) v = 0.6 * others / static_cast<double>(vars - 1) + 0.5 * v;
      others += v;
      ds.at(t, m) = v;
    }
    int y;
    unsigned mo, d;
    civil_from_days(start_day + static_cast<long long>(t / 24), y, mo, d);
    std::snprintf(stamp, sizeof stamp, "%04d-%02u-%02u %02zu:00:00", y, mo, d, t % 24);
    ds.timestamps.emplace_back(stamp);
  }
  return ds;
}

}  // namespace lktcn
