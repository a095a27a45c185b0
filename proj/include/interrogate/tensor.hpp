#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace interrogate {

using Shape = std::vector<int>;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation
};
}  // namespace detail

// Dense 64-bit tensor. Value-semantics handle onto shared storage; ops
// allocate fresh outputs, so tensors participating in a live tape are
// never mutated in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Gradient buffer, allocated (zeroed) on first access. Tensors are
  // handles onto shared storage, so this mutates through a const handle.
  std::vector<double>& grad() const;
  void zero_grad() { impl_->grad.clear(); }

  detail::TensorImpl* impl() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Append-only record of operations. Appending order is a topological order
// by construction, so backward() walks the nodes exactly once in reverse.
// Constructing a Tape makes it the active recorder for the current thread;
// destruction restores the previous one (single-owner rule).
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  size_t size() const { return nodes_.size(); }

  void record(const char* op, Tensor output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  // requires_grad tensor reachable from the loss. Loss must be scalar.
  void backward(const Tensor& loss);

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    const char* op;
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
};

// Thread-local multiply-accumulate meter for the dot-product kernels
// (matmul, conv2d, channel scaling). Used by the FLOP-count tests to
// compare the analytic ledger against a literally counted execution.
namespace macmeter {
void enable();
void disable();
bool enabled();
uint64_t count();
void reset();
}  // namespace macmeter

// ---- primitive ops ----
// Elementwise ops accept equal shapes, or a rhs whose shape is a suffix of
// the lhs shape (broadcast over leading batch extents only).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

// [M,K]x[K,N]; [B,M,K]x[K,N]; [B,M,K]x[B,K,N].
Tensor matmul(const Tensor& a, const Tensor& b);
// Swap the last two axes of a 2-D or 3-D tensor.
Tensor transpose2(const Tensor& a);

// Stride 1, odd kernel, zero "same" padding. x: [B,Cin,H,W],
// w: [Cout,Cin,k,k], bias: [Cout] (optional, pass undefined Tensor to skip).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);
// 2x2 average pooling; spatial dims must be even.
Tensor avg_pool2(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Sum-reduce one axis (the axis is removed).
Tensor sum_axis(const Tensor& x, int axis);
// Elementwise max(x, c); gradient flows only where x > c.
Tensor max_with(const Tensor& x, double c);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int stop);

// Multiply along `axis` by a vector v of length shape[axis].
Tensor scale_axis(const Tensor& x, const Tensor& v, int axis);

// Per-index hard select along `axis`: out = task where mask==1, shared
// where mask==0 (bitwise copies, no arithmetic). Gradients follow the
// algebraic form mask*task + (1-mask)*shared.
Tensor gate_mix(const Tensor& mask, const Tensor& task, const Tensor& shared,
                int axis);

// Hard threshold with straight-through backward (identity Jacobian).
// Forward: 1 where x > threshold, else 0 (ties map to 0).
Tensor ste_threshold(const Tensor& x, double threshold);

// Layer normalization over the last axis with learnable gain/shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = 1e-5);

// Mean over the batch of softmax cross-entropy. logits: [B,K].
Tensor cross_entropy_logits(const Tensor& logits,
                            const std::vector<int>& labels);
// Mean absolute / squared deviation; target carries no gradient.
Tensor l1_loss(const Tensor& pred, const Tensor& target);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace interrogate
