#include "lktcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lktcn {

const char* dtype_name(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& name) {
  if (name == "f32") return DType::F32;
  if (name == "f64") return DType::F64;
  throw std::invalid_argument("unknown dtype '" + name + "' (expected f32 or f64)");
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one axis");
  for (auto d : shape)
    if (d == 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
typename Tensor<T>::Impl& Tensor<T>::impl() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return *impl_;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) throw std::out_of_range("axis out of range");
  return impl().shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor with " + std::to_string(numel()) + " values");
  return impl().data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl().requires_grad = on;
  if (!on) impl().grad.clear();
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() const {
  Impl& self = impl();
  if (!self.requires_grad) throw std::logic_error("gradient requested for a tensor that does not require grad");
  if (self.grad.empty()) self.grad.assign(self.data.size(), T(0));
  return self.grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl().grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
  if (!has_grad()) return Tensor(shape());
  return Tensor(shape(), impl().grad);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), impl().data);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(shape(), impl().data);
  out.impl_->requires_grad = impl().requires_grad;
  return out;
}

namespace detail {

template <typename T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

}  // namespace detail

template <typename T>
Tape<T>::Scope::Scope(Tape& tape) : previous_(detail::active_tape_slot<T>()) {
  detail::active_tape_slot<T>() = &tape;
}

template <typename T>
Tape<T>::Scope::~Scope() {
  detail::active_tape_slot<T>() = previous_;
}

template <typename T>
void Tape<T>::push(Record record) {
  if (consumed_) throw std::logic_error("cannot record onto a tape that has already run backward");
  records_.push_back(std::move(record));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw std::logic_error("backward called twice on the same tape; re-run the forward pass");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw std::invalid_argument("loss is not connected to any tensor requiring grad");
  consumed_ = true;
  loss.grad_buffer()[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not on a path to the loss
    it->backward(it->output);
  }
}

template <typename T>
Tensor<T> record_op(const char* op, Tensor<T> output, std::vector<Tensor<T>> inputs,
                    typename Tape<T>::BackwardFn backward) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return output;
  bool participates = std::any_of(inputs.begin(), inputs.end(),
                                  [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
  if (!participates) return output;
  output.set_requires_grad(true);
  tape->push({op, std::move(inputs), output, std::move(backward)});
  return output;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tape<float>*& detail::active_tape_slot<float>();
template Tape<double>*& detail::active_tape_slot<double>();
template Tensor<float> record_op(const char*, Tensor<float>, std::vector<Tensor<float>>, Tape<float>::BackwardFn);
template Tensor<double> record_op(const char*, Tensor<double>, std::vector<Tensor<double>>,
                                  Tape<double>::BackwardFn);

}  // namespace lktcn
