#include "lktcn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "lktcn/errors.hpp"

namespace lktcn {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
  if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  return ops::mean(ops::square(ops::sub(pred, target)));
}

template <typename T>
double mae_metric(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) throw std::invalid_argument("mae_metric: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) acc += std::abs(static_cast<double>(pred[i]) - target[i]);
  return acc / static_cast<double>(pred.numel());
}

template <typename T>
void adam_step(const std::vector<Tensor<T>>& params, AdamState<T>& s, double lr, double weight_decay) {
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), T(0));
      s.v.emplace_back(p.numel(), T(0));
    }
  }
  if (s.m.size() != params.size()) throw std::invalid_argument("adam_step: optimizer state does not match params");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(s.eps);
  const T decay = static_cast<T>(1.0 - lr * weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i];
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = s.m[i];
    auto& v = s.v[i];
    if (m.size() != w.size()) throw std::invalid_argument("adam_step: moment shape mismatch");
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T gj = g.empty() ? T(0) : g[j];
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      if (weight_decay != 0.0) w[j] *= decay;
      w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

namespace {

template <typename T>
std::vector<Tensor<T>> trainable(const ModelParams<T>& params) {
  std::vector<Tensor<T>> out;
  for (const auto& [name, t] : params.named_parameters()) out.push_back(t);
  return out;
}

template <typename T, typename Forward>
Metrics evaluate_with(const Forward& fwd, const TimeSeriesDataset& data, IndexRange range, std::size_t L,
                      std::size_t H, std::size_t batch_size) {
  WindowSampler sampler(range, L, H);
  Metrics out;
  double se = 0.0, ae = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < sampler.count(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(sampler.count(), start + batch_size); ++i) idx.push_back(i);
    auto [x, y] = make_batch<T>(data, sampler, idx);
    Tensor<T> pred = fwd(x);
    const auto p = pred.data();
    const auto t = y.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) - t[i];
      se += d * d;
      ae += std::abs(d);
    }
    count += p.size();
  }
  out.windows = sampler.count();
  if (count > 0) {
    out.mse = se / static_cast<double>(count);
    out.mae = ae / static_cast<double>(count);
  }
  return out;
}

}  // namespace

template <typename T>
Metrics evaluate(ModelParams<T>& params, const ModelConfig& config, const TimeSeriesDataset& data, IndexRange range,
                 std::size_t batch_size) {
  Rng unused;
  return evaluate_with<T>([&](const Tensor<T>& x) { return forward(x, params, config, Mode::Eval, unused); }, data,
                          range, config.L, config.T, batch_size);
}

template <typename T>
Metrics evaluate(const InferenceParams<T>& params, const ModelConfig& config, const TimeSeriesDataset& data,
                 IndexRange range, std::size_t batch_size) {
  return evaluate_with<T>([&](const Tensor<T>& x) { return forward(x, params, config); }, data, range, config.L,
                          config.T, batch_size);
}

Metrics evaluate_repeat_last(const TimeSeriesDataset& data, IndexRange range, std::size_t L, std::size_t H) {
  WindowSampler sampler(range, L, H);
  double se = 0.0, ae = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < sampler.count(); ++i) {
    const std::size_t start = sampler.input_start(i);
    for (std::size_t m = 0; m < data.cols(); ++m) {
      const double last = data.at(start + L - 1, m);
      for (std::size_t t = 0; t < H; ++t) {
        const double d = last - data.at(start + L + t, m);
        se += d * d;
        ae += std::abs(d);
        ++count;
      }
    }
  }
  Metrics out;
  out.windows = sampler.count();
  if (count > 0) {
    out.mse = se / static_cast<double>(count);
    out.mae = ae / static_cast<double>(count);
  }
  return out;
}

template <typename T>
TrainResult<T> train(const ModelConfig& model, const TrainConfig& config, const TimeSeriesDataset& data,
                     const Splits& splits, const EpochCallback& on_epoch) {
  model.validate();
  config.validate();
  if (data.cols() != model.M)
    throw std::invalid_argument("train: dataset has " + std::to_string(data.cols()) + " variables, model expects M=" +
                                std::to_string(model.M));
  const WindowSampler sampler(splits.train, model.L, model.T);
  if (sampler.count() == 0) throw std::invalid_argument("train: training range has no complete window");

  Rng init_rng(config.seed, static_cast<std::uint64_t>(SeedStream::Init));
  Rng shuffle_rng(config.seed, static_cast<std::uint64_t>(SeedStream::Shuffle));
  Rng dropout_rng(config.seed, static_cast<std::uint64_t>(SeedStream::Dropout));

  TrainResult<T> result;
  ModelParams<T> params = init_params<T>(model, init_rng);
  const std::vector<Tensor<T>> weights = trainable(params);
  result.best = params.clone();
  result.best_val_mse = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(sampler.count());
  std::vector<std::size_t> batch;
  std::size_t bad_epochs = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Fisher-Yates with our own draws so the order is identical across standard libraries.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.next() % i]);

    std::size_t steps = (order.size() + config.batch_size - 1) / config.batch_size;
    if (config.max_steps_per_epoch > 0) steps = std::min(steps, config.max_steps_per_epoch);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t begin = s * config.batch_size;
      batch.assign(order.begin() + begin, order.begin() + std::min(order.size(), begin + config.batch_size));
      auto [x, y] = make_batch<T>(data, sampler, batch);
      Tape<T> tape;
      double loss_value;
      {
        typename Tape<T>::Scope scope(tape);
        Tensor<T> loss = mse_loss(forward(x, params, model, Mode::Train, dropout_rng), y);
        loss_value = loss.item();
        if (!std::isfinite(loss_value))
          throw DivergenceError("training diverged: loss is " + std::to_string(loss_value) + " at epoch " +
                                std::to_string(epoch) + ", step " + std::to_string(s + 1) +
                                " (try a smaller lr)");
        tape.backward(loss);
      }
      adam_step(weights, result.optimizer, config.lr, config.weight_decay);
      params.zero_grad();
      result.step_losses.push_back(loss_value);
      loss_sum += loss_value;
    }

    const Metrics val = evaluate(params, model, data, splits.val);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochLog log{epoch, loss_sum / static_cast<double>(steps), val.mse, val.mae, seconds};
    result.epochs.push_back(log);
    if (!std::isfinite(val.mse)) throw DivergenceError("training diverged: validation MSE is not finite");
    if (val.mse < result.best_val_mse) {
      result.best_val_mse = val.mse;
      result.best_epoch = epoch;
      result.best = params.clone();
      bad_epochs = 0;
    } else {
      ++bad_epochs;
    }
    if (on_epoch && !on_epoch(log)) break;
    if (bad_epochs > config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

void write_metric_log(const std::string& path, const std::vector<EpochLog>& epochs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metric log '" + path + "'");
  out << "epoch,train_mse,val_mse,val_mae,seconds\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.3f\n", e.epoch, e.train_mse, e.val_mse, e.val_mae,
                  e.seconds);
    out << buf;
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

void write_step_log(const std::string& path, const std::vector<double>& losses) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write step log '" + path + "'");
  out << "step,train_mse\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, losses[i]);
    out << buf;
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

#define LKTCN_INSTANTIATE_TRAIN(T)                                                                               \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                                               \
  template double mae_metric(const Tensor<T>&, const Tensor<T>&);                                                \
  template void adam_step(const std::vector<Tensor<T>>&, AdamState<T>&, double, double);                         \
  template TrainResult<T> train(const ModelConfig&, const TrainConfig&, const TimeSeriesDataset&, const Splits&, \
                                const EpochCallback&);                                                           \
  template Metrics evaluate(ModelParams<T>&, const ModelConfig&, const TimeSeriesDataset&, IndexRange,          \
                            std::size_t);                                                                        \
  template Metrics evaluate(const InferenceParams<T>&, const ModelConfig&, const TimeSeriesDataset&, IndexRange, \
                            std::size_t);

LKTCN_INSTANTIATE_TRAIN(float)
LKTCN_INSTANTIATE_TRAIN(double)

#undef LKTCN_INSTANTIATE_TRAIN

}  // namespace lktcn
