#include "lktcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <type_traits>

#include "lktcn/errors.hpp"

namespace lktcn {

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename U>
  void uint(U v) {
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(bytes), sizeof(U));
  }

  void str(const std::string& s) {
    if (s.size() > 0xFFFF) throw std::invalid_argument("checkpoint: string too long: " + s.substr(0, 32));
    uint<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename U>
  U uint() {
    unsigned char bytes[sizeof(U)];
    read(reinterpret_cast<char*>(bytes), sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
    return v;
  }

  std::string str() {
    const auto n = uint<std::uint16_t>();
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

  void read(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("unexpected end of file");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(source_ + ": " + msg); }

 private:
  std::istream& in_;
  std::string source_;
};

template <typename T>
StoredTensor store(const std::string& name, const Tensor<T>& t) {
  return {name, t.dtype(), t.shape(), std::vector<double>(t.data().begin(), t.data().end())};
}

StoredTensor store_scalar(const std::string& name, double v) { return {name, DType::F64, Shape{1}, {v}}; }

}  // namespace

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

DType Checkpoint::param_dtype() const {
  const StoredTensor* t = find("embed.weight");
  return t ? t->dtype : DType::F32;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  Writer w(out);
  w.raw(kCheckpointMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  const auto kv = ckpt.config.to_kv();
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    w.str(k);
    w.str(v);
  }
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.shape.size() > 255) throw std::invalid_argument("checkpoint: rank too large for " + t.name);
    w.str(t.name);
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.dtype));
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t.values) {
      if (t.dtype == DType::F32)
        w.f32(static_cast<float>(v));
      else
        w.f64(v);
    }
  }
}

Checkpoint read_checkpoint(std::istream& in, const std::string& source) {
  Reader r(in, source);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) r.fail("not a checkpoint (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  std::map<std::string, std::string> kv;
  const auto n_config = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_config; ++i) {
    std::string k = r.str();
    kv[k] = r.str();
  }
  try {
    ckpt.config = ModelConfig::from_kv(kv);
    ckpt.config.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(std::string("invalid config block: ") + e.what());
  }
  const auto n_tensors = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    StoredTensor t;
    t.name = r.str();
    const auto tag = r.uint<std::uint8_t>();
    if (tag > 1) r.fail("tensor '" + t.name + "' has unknown dtype tag " + std::to_string(tag));
    t.dtype = static_cast<DType>(tag);
    const auto rank = r.uint<std::uint8_t>();
    for (std::uint8_t a = 0; a < rank; ++a) t.shape.push_back(r.uint<std::uint32_t>());
    const std::size_t n = shape_numel(t.shape);
    t.values.resize(n);
    for (auto& v : t.values) v = t.dtype == DType::F32 ? static_cast<double>(r.f32()) : r.f64();
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, ckpt);
  if (!out) throw IoError("failed while writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in, path);
}

namespace {

// Works for const and mutable params alike.
template <typename Params>
auto bn_states(Params& p) {
  using State = std::remove_reference_t<decltype((p.blocks[0].bn_large))>;
  std::vector<std::pair<std::string, State*>> out;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string pre = "blocks." + std::to_string(i) + ".";
    out.emplace_back(pre + "bn_large", &p.blocks[i].bn_large);
    out.emplace_back(pre + "bn_small", &p.blocks[i].bn_small);
  }
  return out;
}

}  // namespace

template <typename T>
Checkpoint make_checkpoint(const ModelConfig& config, const ModelParams<T>& params, const AdamState<T>* optimizer,
                           const Scaler* scaler) {
  Checkpoint ckpt;
  ckpt.config = config;
  const auto named = params.named_parameters();
  for (const auto& [name, t] : named) ckpt.tensors.push_back(store(name, t));
  for (const auto& [name, t] : params.named_buffers()) ckpt.tensors.push_back(store(name, t));
  for (const auto& [name, bn] : bn_states(params))
    ckpt.tensors.push_back(store_scalar(name + ".batches_tracked", static_cast<double>(bn->batches_tracked)));
  if (optimizer) {
    ckpt.tensors.push_back(store_scalar("optim.step", static_cast<double>(optimizer->step)));
    for (std::size_t i = 0; i < named.size() && i < optimizer->m.size(); ++i) {
      const Shape& s = named[i].second.shape();
      ckpt.tensors.push_back({"optim.m." + named[i].first, DTypeOf<T>::value, s,
                              std::vector<double>(optimizer->m[i].begin(), optimizer->m[i].end())});
      ckpt.tensors.push_back({"optim.v." + named[i].first, DTypeOf<T>::value, s,
                              std::vector<double>(optimizer->v[i].begin(), optimizer->v[i].end())});
    }
  }
  if (scaler && scaler->fitted()) {
    const Shape s{scaler->mean.size()};
    ckpt.tensors.push_back({"scaler.mean", DType::F64, s, scaler->mean});
    ckpt.tensors.push_back({"scaler.std", DType::F64, s, scaler->std});
  }
  return ckpt;
}

namespace {

template <typename T>
void fill_from(const Checkpoint& ckpt, const std::string& name, Tensor<T>& dst) {
  const StoredTensor* src = ckpt.find(name);
  if (!src) throw ParseError("checkpoint is missing tensor '" + name + "'");
  if (src->shape != dst.shape())
    throw ParseError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape) + ", model expects " +
                     shape_str(dst.shape()));
  auto out = dst.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src->values[i]);
}

}  // namespace

template <typename T>
ModelParams<T> params_from_checkpoint(const Checkpoint& ckpt) {
  Rng unused;
  ModelParams<T> p = init_params<T>(ckpt.config, unused);
  for (auto& [name, t] : p.named_parameters()) fill_from(ckpt, name, t);
  for (auto& [name, t] : p.named_buffers()) fill_from(ckpt, name, t);
  for (auto& [name, bn] : bn_states(p)) {
    const StoredTensor* n = ckpt.find(name + ".batches_tracked");
    bn->batches_tracked = n ? static_cast<std::int64_t>(n->values.at(0)) : 0;
  }
  return p;
}

template <typename T>
std::optional<AdamState<T>> optimizer_from_checkpoint(const Checkpoint& ckpt, const ModelParams<T>& params) {
  const StoredTensor* step = ckpt.find("optim.step");
  if (!step) return std::nullopt;
  AdamState<T> s;
  s.step = static_cast<std::int64_t>(step->values.at(0));
  for (const auto& [name, t] : params.named_parameters()) {
    const StoredTensor* m = ckpt.find("optim.m." + name);
    const StoredTensor* v = ckpt.find("optim.v." + name);
    if (!m || !v || m->values.size() != t.numel() || v->values.size() != t.numel())
      throw ParseError("checkpoint optimizer state incomplete for '" + name + "'");
    s.m.emplace_back(m->values.begin(), m->values.end());
    s.v.emplace_back(v->values.begin(), v->values.end());
  }
  return s;
}

std::optional<Scaler> scaler_from_checkpoint(const Checkpoint& ckpt) {
  const StoredTensor* mean = ckpt.find("scaler.mean");
  const StoredTensor* std = ckpt.find("scaler.std");
  if (!mean || !std) return std::nullopt;
  return Scaler{mean->values, std->values};
}

template Checkpoint make_checkpoint(const ModelConfig&, const ModelParams<float>&, const AdamState<float>*,
                                    const Scaler*);
template Checkpoint make_checkpoint(const ModelConfig&, const ModelParams<double>&, const AdamState<double>*,
                                    const Scaler*);
template ModelParams<float> params_from_checkpoint(const Checkpoint&);
template ModelParams<double> params_from_checkpoint(const Checkpoint&);
template std::optional<AdamState<float>> optimizer_from_checkpoint(const Checkpoint&, const ModelParams<float>&);
template std::optional<AdamState<double>> optimizer_from_checkpoint(const Checkpoint&, const ModelParams<double>&);

}  // namespace lktcn
