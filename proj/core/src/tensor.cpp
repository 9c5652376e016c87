#include "winnow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace winnow {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  const int64_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(n), value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values,
                         bool requires_grad) {
  const int64_t n = shape_numel(shape);
  if (static_cast<int64_t>(values.size()) != n) {
    throw ShapeError("from_data: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  std::vector<float> values(static_cast<size_t>(n));
  for (auto& v : values) v = static_cast<float>(rng.normal() * stddev);
  return from_data(std::move(shape), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("shape() on an empty tensor");
  return impl_->shape;
}

int64_t Tensor::numel() const {
  if (!impl_) return 0;
  return impl_->numel();
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int64_t Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("dim " + std::to_string(axis) + " out of rank " +
                     std::to_string(s.size()));
  }
  return s[static_cast<size_t>(axis)];
}

std::span<const float> Tensor::data() const {
  if (!impl_) throw UsageError("data() on an empty tensor");
  return {impl_->data.data(), impl_->data.size()};
}

std::span<float> Tensor::mutable_data() {
  if (!impl_) throw UsageError("mutable_data() on an empty tensor");
  return {impl_->data.data(), impl_->data.size()};
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw UsageError("set_requires_grad() on an empty tensor");
  impl_->requires_grad = flag;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw UsageError("grad() before any backward pass");
  return {impl_->grad.data(), impl_->grad.size()};
}

std::span<float> Tensor::mutable_grad() {
  if (!impl_) throw UsageError("mutable_grad() on an empty tensor");
  impl_->ensure_grad();
  return {impl_->grad.data(), impl_->grad.size()};
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
  }
}

float Tensor::item() const {
  if (numel() != 1) {
    throw UsageError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

bool Tensor::all_finite() const {
  if (!impl_) return true;
  if (!detail::all_finite({impl_->data.data(), impl_->data.size()})) {
    return false;
  }
  return impl_->grad.empty() ||
         detail::all_finite({impl_->grad.data(), impl_->grad.size()});
}

void Tensor::check_finite(const std::string& label) const {
  if (!all_finite()) {
    throw InvariantError("non-finite values in " + label);
  }
}

Tensor Tensor::clone() const {
  if (!impl_) return Tensor();
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

bool all_finite(std::span<const float> xs) {
  for (float x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor make_node(Shape shape, std::vector<float> values,
                 std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward_fn) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(values));
  TensorImpl* impl = out.impl();
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) {
      if (p.defined() && p.requires_grad()) needs_grad = true;
    }
  }
  if (needs_grad) {
    impl->requires_grad = true;
    impl->backward_fn = std::move(backward_fn);
    impl->parents.reserve(parents.size());
    for (const Tensor& p : parents) {
      if (p.defined()) impl->parents.push_back(p.impl_ptr());
    }
  }
  return out;
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss tensor");
  }

  // Iterative post-order DFS; children end up after their parents, so the
  // reverse of `order` visits each node before the nodes it depends on.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  TensorImpl* root = loss.impl();
  if (!root->requires_grad) {
    throw UsageError("backward() on a loss with no gradient-tracked inputs");
  }
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      TensorImpl* parent = top.node->parents[top.next_parent++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  // The chain rule must run on this pass's gradients alone, so stale
  // accumulations are parked aside and folded back in afterwards.  That makes
  // every call contribute exactly one gradient to every reached tensor, no
  // matter how often the same graph is replayed.
  std::vector<std::vector<float>> prior(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    TensorImpl* node = order[i];
    if (!node->grad.empty()) {
      prior[i] = std::move(node->grad);
      node->grad.clear();
    }
    node->ensure_grad();
  }

  root->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }

  for (size_t i = 0; i < order.size(); ++i) {
    const std::vector<float>& saved = prior[i];
    if (saved.empty()) continue;
    std::vector<float>& grad = order[i]->grad;
    for (size_t j = 0; j < saved.size(); ++j) grad[j] += saved[j];
  }
}

}  // namespace winnow
