#include "lktcn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include "lktcn/bench.hpp"
#include "lktcn/checkpoint.hpp"
#include "lktcn/errors.hpp"
#include "lktcn/gradcheck.hpp"
#include "lktcn/parse.hpp"
#include "lktcn/run_config.hpp"
#include "lktcn/train.hpp"

namespace lktcn::cli {

namespace fs = std::filesystem;

namespace {

/// Flags shared by every subcommand: --config plus one override per config key.
struct RunFlags {
  std::string config_path;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key = value config file; flags below override it");
    const RunConfig defaults;
    std::istringstream snap(defaults.snapshot());
    std::map<std::string, std::string> default_text;
    for (std::string line; std::getline(snap, line);) {
      const auto eq = line.find(" = ");
      if (eq != std::string::npos) default_text[line.substr(0, eq)] = line.substr(eq + 3);
    }
    for (const auto& key : RunConfig::keys()) {
      auto* opt = app->add_option("--" + key, overrides[key], "config override (default: " +
                                                                  (default_text[key].empty() ? "none" : default_text[key]) +
                                                                  ")");
      opt->type_name("VALUE")->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& key : RunConfig::keys()) {
      const auto it = overrides.find(key);
      if (it == overrides.end() || it->second.empty()) continue;
      if (!c.set(key, it->second)) throw ConfigError("unknown key '" + key + "'");
    }
    c.validate();
    return c;
  }
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TimeSeriesDataset load_dataset(const RunConfig& c) {
  if (c.data.empty()) return make_seasonal_dataset(10000, c.model.M, 2023);
  if (!fs::exists(c.data)) throw ConfigError("dataset file not found: " + c.data);
  return load_csv(c.data);
}

void require_columns(const TimeSeriesDataset& data, const ModelConfig& model, const std::string& what) {
  if (data.cols() != model.M)
    throw ConfigError(what + " has " + std::to_string(data.cols()) + " variables but the model expects M=" +
                      std::to_string(model.M));
}

void apply_scaler(TimeSeriesDataset& data, const Scaler& s) {
  if (s.mean.size() != data.cols()) throw ConfigError("stored scaler does not match the dataset columns");
  for (std::size_t r = 0; r < data.rows(); ++r)
    for (std::size_t c = 0; c < data.cols(); ++c) data.at(r, c) = s.transform(c, data.at(r, c));
  data.scaler = s;
}

/// Forecast the T rows after the last L rows of a standardized series, mapped back to data units.
template <typename T>
TimeSeriesDataset forecast_tail(ModelParams<T>& params, const ModelConfig& config, const TimeSeriesDataset& data) {
  if (data.rows() < config.L)
    throw ConfigError("input has " + std::to_string(data.rows()) + " rows, need at least L=" +
                      std::to_string(config.L));
  const std::size_t M = config.M, L = config.L, H = config.T, start = data.rows() - L;
  Tensor<T> x({1, M, L});
  auto xs = x.mutable_data();
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t t = 0; t < L; ++t) xs[m * L + t] = static_cast<T>(data.at(start + t, m));
  Rng unused;
  const Tensor<T> y = forward(x, params, config, Mode::Eval, unused);
  TimeSeriesDataset out;
  out.names = data.names;
  out.values.resize(H * M);
  for (std::size_t t = 0; t < H; ++t)
    for (std::size_t m = 0; m < M; ++m) {
      const double v = y[m * H + t];
      out.values[t * M + m] = data.scaler.fitted() ? data.scaler.inverse(m, v) : v;
    }
  return out;
}

template <typename T>
int train_typed(const RunConfig& c, const std::string& out_dir, std::ostream& out) {
  TimeSeriesDataset data = load_dataset(c);
  require_columns(data, c.model, c.data.empty() ? "generated series" : c.data);
  Splits splits;
  try {
    splits = split(data.rows(), c.split_spec(), c.model.L, c.model.T);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  standardize(data, splits.train_border);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());
  {
    std::ofstream snap(fs::path(out_dir) / "config.snapshot");
    if (!snap) throw IoError("cannot write into '" + out_dir + "'");
    snap << c.snapshot();
  }

  TrainResult<T> result = train<T>(c.model, c.train, data, splits, [&](const EpochLog& e) {
    out << "epoch " << e.epoch << " train_mse=" << fmt(e.train_mse) << " val_mse=" << fmt(e.val_mse)
        << " val_mae=" << fmt(e.val_mae) << " seconds=" << fmt(e.seconds) << '\n';
    out.flush();
    return true;
  });

  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.lktc").string();
  save_checkpoint(ckpt_path, make_checkpoint(c.model, result.best, &result.optimizer, &data.scaler));
  write_metric_log((fs::path(out_dir) / "metrics.csv").string(), result.epochs);
  write_step_log((fs::path(out_dir) / "steps.csv").string(), result.step_losses);
  write_csv((fs::path(out_dir) / "forecast.csv").string(), forecast_tail(result.best, c.model, data));

  const Metrics val = evaluate(result.best, c.model, data, splits.val);
  const Metrics test = evaluate(result.best, c.model, data, splits.test);
  const Metrics naive = evaluate_repeat_last(data, splits.test, c.model.L, c.model.T);
  out << "best_epoch " << result.best_epoch << (result.early_stopped ? " (early stopped)" : "") << '\n';
  out << "val mse=" << fmt_full(val.mse) << " mae=" << fmt_full(val.mae) << '\n';
  out << "test mse=" << fmt_full(test.mse) << " mae=" << fmt_full(test.mae) << '\n';
  out << "repeat_last test mse=" << fmt_full(naive.mse) << " mae=" << fmt_full(naive.mae) << '\n';
  out << "checkpoint " << ckpt_path << '\n';
  return kOk;
}

template <typename T>
int eval_typed(const Checkpoint& ckpt, const RunConfig& c, const std::string& which, bool merge, std::ostream& out) {
  const ModelConfig& model = ckpt.config;
  TimeSeriesDataset data = load_dataset(c);
  require_columns(data, model, c.data.empty() ? "generated series" : c.data);
  Splits splits;
  try {
    splits = split(data.rows(), c.split_spec(), model.L, model.T);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (auto s = scaler_from_checkpoint(ckpt))
    apply_scaler(data, *s);
  else
    standardize(data, splits.train_border);
  const IndexRange range = which == "val" ? splits.val : which == "train" ? splits.train : splits.test;

  ModelParams<T> params = params_from_checkpoint<T>(ckpt);
  const Metrics m = evaluate(params, model, data, range);
  out << which << " T=" << model.T << " windows=" << m.windows << " mse=" << fmt_full(m.mse)
      << " mae=" << fmt_full(m.mae) << '\n';
  if (!merge) return kOk;

  const InferenceParams<T> merged = merge_reparam(params, model);
  const Metrics mm = evaluate(merged, model, data, range);
  out << which << " merged T=" << model.T << " windows=" << mm.windows << " mse=" << fmt_full(mm.mse)
      << " mae=" << fmt_full(mm.mae) << '\n';
  // Output deviation over every evaluated window.
  const WindowSampler sampler(range, model.L, model.T);
  Rng unused;
  double dev = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < sampler.count(); start += 256) {
    idx.clear();
    for (std::size_t i = start; i < std::min(sampler.count(), start + 256); ++i) idx.push_back(i);
    const auto batch = make_batch<T>(data, sampler, idx);
    const Tensor<T> a = forward(batch.first, params, model, Mode::Eval, unused);
    const Tensor<T> b = forward(batch.first, merged, model);
    for (std::size_t i = 0; i < a.numel(); ++i)
      dev = std::max(dev, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  out << "max_deviation " << fmt_full(dev) << '\n';
  return kOk;
}

template <typename T>
int predict_typed(const Checkpoint& ckpt, const std::string& input, const std::string& output, std::ostream& out) {
  if (!fs::exists(input)) throw ConfigError("input file not found: " + input);
  TimeSeriesDataset data = load_csv(input);
  require_columns(data, ckpt.config, input);
  if (auto s = scaler_from_checkpoint(ckpt)) apply_scaler(data, *s);
  ModelParams<T> params = params_from_checkpoint<T>(ckpt);
  const TimeSeriesDataset forecast = forecast_tail(params, ckpt.config, data);
  if (const auto parent = fs::path(output).parent_path(); !parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
  write_csv(output, forecast);
  out << "wrote " << forecast.rows() << " rows x " << forecast.cols() << " columns to " << output << '\n';
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
  const GradCheckReport report = run_gradient_suite(static_cast<unsigned>(seed));
  // One summary line per op (worst case), then the individual cases.
  std::map<std::string, std::pair<double, double>> worst;
  std::vector<std::string> order;
  for (const auto& e : report.entries) {
    auto [it, inserted] = worst.try_emplace(e.op, e.max_rel_error, e.threshold);
    if (inserted) order.push_back(e.op);
    else if (!(it->second.first >= e.max_rel_error)) it->second.first = e.max_rel_error;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %14s %10s  %s\n", "op", "max_rel_error", "threshold", "status");
  out << buf;
  for (const auto& op : order) {
    const auto [err, thr] = worst[op];
    std::snprintf(buf, sizeof buf, "%-24s %14.3e %10.0e  %s\n", op.c_str(), err, thr, err < thr ? "PASS" : "FAIL");
    out << buf;
  }
  out << "\ncases:\n";
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof buf, "  %-22s %-28s %12.3e %s\n", e.op.c_str(), e.case_name.c_str(), e.max_rel_error,
                  e.passed() ? "PASS" : "FAIL");
    out << buf;
  }
  out << "coverage: " << order.size() << " ops checked";
  if (report.uncovered_ops.empty()) {
    out << ", every registered differentiable op covered\n";
  } else {
    out << ", uncovered:";
    for (const auto& op : report.uncovered_ops) out << ' ' << op;
    out << '\n';
  }
  out << (report.passed() ? "gradcheck PASSED\n" : "gradcheck FAILED\n");
  return report.passed() ? kOk : kCheckFailed;
}

std::vector<std::size_t> parse_lengths(const std::string& text) {
  std::vector<std::size_t> out;
  try {
    for (auto part : split(text, ',')) out.push_back(parse_size("lengths", part));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (out.empty()) throw ConfigError("--lengths needs at least one value");
  return out;
}

int cmd_bench(const RunConfig& c, const std::string& lengths_text, std::size_t reps, std::size_t batch,
              bool scale_d, std::ostream& out) {
  const std::vector<std::size_t> lengths = parse_lengths(lengths_text);
  BenchOptions options;
  options.repetitions = reps;
  options.batch = batch;
  options.seed = c.train.seed;
  const auto rows = bench_lengths(c.model, lengths, options);
  write_bench_csv(out, rows);
  bool ok = true;
  const auto ratios = consecutive_ratios(rows);
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const bool doubling = rows[i + 1].L == 2 * rows[i].L;
    const bool pass = !doubling || ratios[i] <= kLengthDoublingLimit;
    ok = ok && pass;
    out << "# ratio L " << rows[i].L << "->" << rows[i + 1].L << ": " << fmt(ratios[i]);
    if (doubling) out << " (limit " << kLengthDoublingLimit << ") " << (pass ? "ok" : "EXCEEDED");
    out << '\n';
  }
  if (scale_d) {
    ModelConfig wide = c.model;
    wide.L = lengths.front();
    const BenchRow a = time_block_forward(wide, options);
    wide.D *= 2;
    const BenchRow b = time_block_forward(wide, options);
    out << "# ratio D " << a.D << "->" << b.D << " at L=" << a.L << ": " << fmt(b.millis / a.millis)
        << " (" << fmt(a.millis) << " ms -> " << fmt(b.millis) << " ms)\n";
  }
  return ok ? kOk : kCheckFailed;
}

DType checkpoint_dtype(const Checkpoint& ckpt, const std::map<std::string, std::string>& overrides) {
  const auto it = overrides.find("dtype");
  if (it != overrides.end() && !it->second.empty()) {
    try {
      return parse_dtype(it->second);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  return ckpt.param_dtype();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-LKTCN forecaster: train, evaluate, predict, verify gradients, benchmark", "lktcn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "lktcn 0.1.0");

  RunFlags train_flags, eval_flags, predict_flags, grad_flags, bench_flags;
  std::string train_out = "run";

  auto* train_cmd = app.add_subcommand("train", "Train a model and write a run directory");
  train_flags.attach(train_cmd);
  train_cmd->add_option("--out", train_out, "output directory")->capture_default_str();

  std::string eval_ckpt, eval_split = "test";
  bool merge = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split of a dataset");
  eval_flags.attach(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--split", eval_split, "which split to score")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  eval_cmd->add_flag("--merge-reparam", merge, "also score the merged single-kernel model and print the deviation");
  std::string eval_out_unused;
  eval_cmd->add_option("--out", eval_out_unused, "accepted for symmetry; eval writes nothing");

  std::string predict_ckpt, predict_in, predict_out;
  auto* predict_cmd = app.add_subcommand("predict", "Forecast T rows after the last L rows of a CSV");
  predict_flags.attach(predict_cmd);
  predict_cmd->add_option("--checkpoint", predict_ckpt, "checkpoint file")->required();
  predict_cmd->add_option("--input", predict_in, "input CSV with at least L rows")->required();
  predict_cmd->add_option("--output", predict_out, "forecast CSV (default: <out>/forecast.csv)");
  std::string predict_dir = "run";
  predict_cmd->add_option("--out", predict_dir, "directory used when --output is not given")->capture_default_str();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and the model");
  grad_flags.attach(grad_cmd);
  std::string grad_out_unused;
  grad_cmd->add_option("--out", grad_out_unused, "accepted for symmetry; gradcheck writes nothing");

  std::string lengths = "384,768,1536,3072";
  std::size_t reps = 9, batch = 4;
  bool scale_d = false;
  auto* bench_cmd = app.add_subcommand("bench", "Time one block forward across input lengths");
  bench_flags.attach(bench_cmd);
  bench_cmd->add_option("--lengths", lengths, "comma-separated input lengths")->capture_default_str();
  bench_cmd->add_option("--reps", reps, "timed repetitions per length")->capture_default_str()->check(
      CLI::PositiveNumber);
  bench_cmd->add_option("--batch", batch, "batch size of the timed input")->capture_default_str()->check(
      CLI::PositiveNumber);
  bench_cmd->add_flag("--scale-d", scale_d, "also report the time ratio when D doubles at the first length");
  std::string bench_out_unused;
  bench_cmd->add_option("--out", bench_out_unused, "accepted for symmetry; bench prints to stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (train_cmd->parsed()) {
      const RunConfig c = train_flags.resolve();
      return c.train.dtype == DType::F64 ? train_typed<double>(c, train_out, out) : train_typed<float>(c, train_out, out);
    }
    if (eval_cmd->parsed()) {
      const RunConfig c = eval_flags.resolve();
      const Checkpoint ckpt = load_checkpoint(eval_ckpt);
      return checkpoint_dtype(ckpt, eval_flags.overrides) == DType::F64
                 ? eval_typed<double>(ckpt, c, eval_split, merge, out)
                 : eval_typed<float>(ckpt, c, eval_split, merge, out);
    }
    if (predict_cmd->parsed()) {
      predict_flags.resolve();
      const Checkpoint ckpt = load_checkpoint(predict_ckpt);
      const std::string target = predict_out.empty() ? (fs::path(predict_dir) / "forecast.csv").string() : predict_out;
      return checkpoint_dtype(ckpt, predict_flags.overrides) == DType::F64
                 ? predict_typed<double>(ckpt, predict_in, target, out)
                 : predict_typed<float>(ckpt, predict_in, target, out);
    }
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_flags.resolve().train.seed, out);
    if (bench_cmd->parsed()) return cmd_bench(bench_flags.resolve(), lengths, reps, batch, scale_d, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
  return kUsage;
}

}  // namespace lktcn::cli
