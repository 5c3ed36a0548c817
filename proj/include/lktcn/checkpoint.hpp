#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lktcn/data.hpp"
#include "lktcn/model.hpp"
#include "lktcn/tensor.hpp"

namespace lktcn {

// On-disk layout (all integers little-endian):
//   "LKTC" | u32 version
//   u32 n_config | n_config x (str key, str value)
//   u32 n_tensors | n_tensors x (str name, u8 dtype, u8 rank, u32 dims[rank], raw values)
// where str is u16 byte length followed by UTF-8 bytes and dtype is 0=f32, 1=f64.
inline constexpr char kCheckpointMagic[4] = {'L', 'K', 'T', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<double> values;  // widened; f32 entries round-trip exactly
};

/// Optimizer moments stored alongside the parameters.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
  DType param_dtype() const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws IoError if the file cannot be read and ParseError for a malformed file.
Checkpoint load_checkpoint(const std::string& path);

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in, const std::string& source = "<stream>");

/// Parameters, BN running stats and counters; optionally the optimizer moments
/// and the dataset scaler.
template <typename T>
Checkpoint make_checkpoint(const ModelConfig& config, const ModelParams<T>& params,
                           const AdamState<T>* optimizer = nullptr, const Scaler* scaler = nullptr);

/// Rebuild parameters in the requested precision. Throws ParseError when a
/// tensor is missing or has the wrong shape.
template <typename T>
ModelParams<T> params_from_checkpoint(const Checkpoint& ckpt);

template <typename T>
std::optional<AdamState<T>> optimizer_from_checkpoint(const Checkpoint& ckpt, const ModelParams<T>& params);

std::optional<Scaler> scaler_from_checkpoint(const Checkpoint& ckpt);

}  // namespace lktcn
