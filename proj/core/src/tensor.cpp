#include "atd/tensor.hpp"

#include <cmath>
#include <sstream>

#include "atd/errors.hpp"

namespace atd {

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Uninit) : shape_(std::move(shape)) {
  for (int d : shape_) {
    if (d <= 0) throw DimensionError("Tensor: non-positive dimension in " + shape_str(shape_));
  }
  st_ = std::make_shared<Storage>();
  st_->size = shape_numel(shape_);
  st_->data = std::make_unique_for_overwrite<double[]>(st_->size);
}

Tensor::Tensor(Shape shape, double fill) : Tensor(std::move(shape), Uninit{}) {
  std::fill_n(st_->data.get(), st_->size, fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : Tensor(std::move(shape), Uninit{}) {
  if (values.size() != st_->size) {
    throw DimensionError("Tensor: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(shape_));
  }
  std::copy(values.begin(), values.end(), st_->data.get());
}

Tensor Tensor::uninit(Shape shape) { return Tensor(std::move(shape), Uninit{}); }

size_t Tensor::numel() const { return st_ ? st_->size : 0; }

double* Tensor::data() const {
  if (!st_) throw ContractError("Tensor: access to undefined tensor");
  return st_->data.get();
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("Tensor::item: expected a single element, got shape " + shape_str(shape_));
  }
  return st_->data[0];
}

bool Tensor::requires_grad() const { return st_ && st_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!st_) throw ContractError("Tensor::set_requires_grad on undefined tensor");
  st_->requires_grad = v;
  if (!v) {
    st_->grad.clear();
    st_->grad_alloc = false;
  }
}

bool Tensor::grad_allocated() const { return st_ && st_->grad_alloc; }

std::vector<double>& Tensor::grad() const {
  if (!requires_grad()) throw ContractError("Tensor::grad: tensor does not require gradients");
  if (!st_->grad_alloc) {
    st_->grad.assign(st_->size, 0.0);
    st_->grad_alloc = true;
  }
  return st_->grad;
}

const std::vector<double>& Tensor::grad_const() const {
  if (!grad_allocated()) throw ContractError("Tensor::grad_const: gradient not allocated");
  return st_->grad;
}

void Tensor::zero_grad() const {
  if (st_ && st_->grad_alloc) st_->grad.assign(st_->size, 0.0);
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("Tensor::reshaped: cannot view " + shape_str(shape_) + " as " +
                         shape_str(new_shape));
  }
  Tensor t;
  t.st_ = st_;
  t.shape_ = std::move(new_shape);
  return t;
}

Tensor Tensor::clone() const {
  Tensor t(shape_, Uninit{});
  std::copy(st_->data.get(), st_->data.get() + st_->size, t.st_->data.get());
  return t;
}

bool Tensor::all_finite() const {
  for (size_t i = 0; i < st_->size; ++i) {
    if (!std::isfinite(st_->data[i])) return false;
  }
  return true;
}

void assert_finite(const Tensor& t, const std::string& name) {
  if (!t.all_finite()) throw DataError("non-finite values in tensor '" + name + "'");
}

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("GradTape::backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  if (nodes_.empty()) throw ContractError("GradTape::backward: tape is empty");
  if (!loss.requires_grad()) {
    throw ContractError("GradTape::backward: loss is not connected to the tape");
  }
  Tensor l = loss;
  l.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(GradTape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

TapeSuspend::TapeSuspend() : prev_(g_active_tape) { g_active_tape = nullptr; }
TapeSuspend::~TapeSuspend() { g_active_tape = prev_; }

}  // namespace atd
