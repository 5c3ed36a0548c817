#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lktcn/checkpoint.hpp"
#include "lktcn/data.hpp"
#include "lktcn/model.hpp"

namespace lktcn {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 3;
  std::uint64_t seed = 2023;
  double weight_decay = 0.0;
  DType dtype = DType::F32;
  /// Caps optimizer steps per epoch (0 = a full pass over the training windows).
  std::size_t max_steps_per_epoch = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Random-stream ids derived from TrainConfig::seed.
enum class SeedStream : std::uint64_t { Init = 0, Shuffle = 1, Dropout = 2 };

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
double mae_metric(const Tensor<T>& pred, const Tensor<T>& target);

/// One Adam update with bias correction and optional decoupled weight decay,
/// reading gradients from the parameters. Parameters without a gradient
/// are treated as having a zero gradient.
template <typename T>
void adam_step(const std::vector<Tensor<T>>& params, AdamState<T>& state, double lr, double weight_decay = 0.0);

struct EpochLog {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  double seconds = 0.0;
};

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
};

template <typename T>
struct TrainResult {
  ModelParams<T> best;  // parameters from the best validation epoch
  AdamState<T> optimizer;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  std::vector<EpochLog> epochs;
  std::vector<double> step_losses;
  bool early_stopped = false;
};

/// Called after every epoch; return false to stop training.
using EpochCallback = std::function<bool(const EpochLog&)>;

/// Mini-batch Adam on MSE with early stopping on validation MSE. `data` must
/// already be standardized. Stops once validation fails to improve for more
/// than `patience` consecutive epochs. Throws DivergenceError on a non-finite loss.
template <typename T>
TrainResult<T> train(const ModelConfig& model, const TrainConfig& config, const TimeSeriesDataset& data,
                     const Splits& splits, const EpochCallback& on_epoch = {});

/// Eval-mode metrics over every window of `range`, averaged per element.
template <typename T>
Metrics evaluate(ModelParams<T>& params, const ModelConfig& config, const TimeSeriesDataset& data, IndexRange range,
                 std::size_t batch_size = 256);

template <typename T>
Metrics evaluate(const InferenceParams<T>& params, const ModelConfig& config, const TimeSeriesDataset& data,
                 IndexRange range, std::size_t batch_size = 256);

/// Forecast that repeats the last observed value for all T steps.
Metrics evaluate_repeat_last(const TimeSeriesDataset& data, IndexRange range, std::size_t L, std::size_t T);

void write_metric_log(const std::string& path, const std::vector<EpochLog>& epochs);
void write_step_log(const std::string& path, const std::vector<double>& losses);

}  // namespace lktcn
