#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "winnow/errors.hpp"
#include "winnow/rng.hpp"

namespace winnow {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// Dense float32 tensor with reverse-mode gradient tracking.
///
/// A Tensor is a cheap shared handle. Ops record the computation graph on the
/// produced tensors; backward() replays it in reverse topological order.
/// Values are immutable once an op has produced them — the mutable_* accessors
/// exist for parameter updates (optimizer, pruning surgery) and buffers.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> values,
                          bool requires_grad = false);
  /// He-style draw: N(0, stddev^2) elementwise.
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  int rank() const;
  int64_t dim(int axis) const;

  std::span<const float> data() const;
  std::span<float> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  /// True once a backward pass has populated this tensor's gradient.
  bool has_grad() const;
  std::span<const float> grad() const;
  /// Gradient buffer, allocated (zero-filled) on first use.
  std::span<float> mutable_grad();
  void zero_grad();

  /// Value of a single-element tensor.
  float item() const;

  bool all_finite() const;
  /// Throws InvariantError when any value (or gradient) is NaN/Inf.
  void check_finite(const std::string& label) const;

  /// Deep copy of values; the copy is a fresh leaf (no graph history).
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Graph node behind a Tensor handle.
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until touched by backward()
  bool requires_grad = false;

  // Reverse-mode tape: parents this value was computed from and the function
  // that scatters this node's gradient into them.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
};

/// Runs reverse-mode accumulation from a scalar loss. Every tensor on the
/// recorded graph with requires_grad receives (accumulates) its gradient.
/// The graph is left intact: calling again after zeroing gradients reproduces
/// identical values.
void backward(const Tensor& loss);

/// Thread-local switch for graph recording. Inference paths run under
/// NoGradGuard so ops skip tape construction and activation caching.
bool grad_enabled();

class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

namespace detail {
/// Wires a new graph node: output depends on `parents` via `backward_fn`.
/// requires_grad is inherited from the parents.
Tensor make_node(Shape shape, std::vector<float> values,
                 std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward_fn);
bool all_finite(std::span<const float> xs);
}  // namespace detail

}  // namespace winnow
