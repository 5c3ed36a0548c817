#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lktcn {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename T>
struct DTypeOf;
template <>
struct DTypeOf<float> {
  static constexpr DType value = DType::F32;
};
template <>
struct DTypeOf<double> {
  static constexpr DType value = DType::F64;
};

const char* dtype_name(DType dtype);
DType parse_dtype(const std::string& name);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major tensor with shared storage. Copies alias the same buffer;
/// use clone() or detach() for an independent value.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t numel() const { return impl().data.size(); }
  DType dtype() const { return DTypeOf<T>::value; }

  std::span<const T> data() const { return impl().data; }
  /// Writable view for initialization and optimizer updates. Writing into a
  /// tensor that a live tape has already consumed is undefined.
  std::span<T> mutable_data() { return impl().data; }
  T item() const;
  T operator[](std::size_t i) const { return impl().data[i]; }

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const T> grad() const { return impl().grad; }
  /// Gradient buffer, allocated as zeros on first use. Throws for tensors that
  /// do not require grad.
  std::span<T> grad_buffer() const;
  void zero_grad();
  Tensor grad_tensor() const;

  /// Independent copy of the values that is not attached to any tape.
  Tensor detach() const;
  /// Independent copy that keeps the requires_grad flag (grad not copied).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<Impl>& handle() const { return impl_; }

 private:
  Impl& impl() const;
  std::shared_ptr<Impl> impl_;
};

template <typename T>
class Tape;

namespace detail {
template <typename T>
Tape<T>*& active_tape_slot();
}

/// Define-by-run recording of differentiable operations. Only one tape per
/// scalar type is active on a thread at a time; activate it with Tape::Scope.
template <typename T>
class Tape {
 public:
  /// Receives the op output (its grad populated) and accumulates into inputs.
  using BackwardFn = std::function<void(const Tensor<T>& output)>;

  struct Record {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return detail::active_tape_slot<T>(); }

  void push(Record record);
  /// Reverse traversal from a scalar loss. The tape can be consumed once.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  const std::vector<Record>& records() const { return records_; }

 private:
  std::vector<Record> records_;
  bool consumed_ = false;
};

/// Attach `output` to the active tape if any input participates in autodiff.
/// Returns `output` (marked requires_grad when recorded).
template <typename T>
Tensor<T> record_op(const char* op, Tensor<T> output, std::vector<Tensor<T>> inputs,
                    typename Tape<T>::BackwardFn backward);

/// Convenience for ops that accumulate into an input's gradient only when it
/// participates.
template <typename T>
inline T* grad_or_null(const Tensor<T>& t) {
  return t.requires_grad() ? t.grad_buffer().data() : nullptr;
}

}  // namespace lktcn
