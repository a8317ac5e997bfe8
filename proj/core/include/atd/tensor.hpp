#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace atd {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit floats with optional gradient buffer.
// Copies are shallow: handles share one storage, so a parameter held by a
// model and by the optimizer registry see the same data and gradient.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  // Uninitialized contents: the caller must write every element before
  // reading. Used by operations that fully overwrite their output.
  static Tensor uninit(Shape shape);

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  size_t numel() const;

  // Handle semantics: a const Tensor is a const handle, not immutable data.
  // Storage accessors are therefore const-qualified, so captured copies in
  // backward closures can write gradients.
  double* data() const;
  double& operator[](size_t i) const { return data()[i]; }

  // Value of a single-element tensor; ContractError otherwise.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool v);
  bool grad_allocated() const;
  // Gradient buffer, zero-initialized on first access. ContractError when
  // the tensor does not require gradients.
  std::vector<double>& grad() const;
  const std::vector<double>& grad_const() const;
  void zero_grad() const;

  // Same storage, new shape (element counts must match).
  Tensor reshaped(Shape new_shape) const;
  // Deep copy of the values; the copy does not require gradients.
  Tensor clone() const;

  bool all_finite() const;

 private:
  struct Storage {
    std::unique_ptr<double[]> data;
    size_t size = 0;
    std::vector<double> grad;
    bool grad_alloc = false;
    bool requires_grad = false;
  };
  struct Uninit {};
  Tensor(Shape shape, Uninit);
  std::shared_ptr<Storage> st_;
  Shape shape_;
};

// Throws DataError naming `name` if any entry of `t` is NaN or infinite.
void assert_finite(const Tensor& t, const std::string& name);

// Wengert list of executed differentiable operations. Ops record a backward
// thunk onto the active tape; backward() replays them in reverse order.
// Single-threaded per tape; the active tape is a thread-local.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  size_t size() const { return nodes_.size(); }
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients of every recorded
  // operation's inputs. `loss` must be a single element; the tape must be
  // non-empty.
  void backward(const Tensor& loss);

  static GradTape* active();

 private:
  friend class TapeScope;
  std::vector<std::function<void()>> nodes_;
};

// RAII activation of a tape on the current thread.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* prev_;
};

// RAII deactivation of any active tape (used for finite differencing and
// inference inside a recorded region).
class TapeSuspend {
 public:
  TapeSuspend();
  ~TapeSuspend();
  TapeSuspend(const TapeSuspend&) = delete;
  TapeSuspend& operator=(const TapeSuspend&) = delete;

 private:
  GradTape* prev_;
};

}  // namespace atd
