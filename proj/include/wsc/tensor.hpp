#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations produce new nodes
// that remember their parents and a backward closure when any input requires
// a gradient and grad mode is enabled. The graph lives exactly as long as the
// tensors referencing it; there is no global tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace wsc {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape, const char* sep = "x") {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << sep;
    os << shape[i];
  }
  return os.str();
}

inline void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("empty shape");
  for (auto e : shape)
    if (e == 0) throw ShapeError("zero extent in shape [" + shape_str(shape) + "]");
}

/// Seeded pseudorandom source.
///
/// Uses std::mt19937_64, whose output sequence is fixed by the C++ standard,
/// and derives uniforms (53-bit mantissa) and normals (Box-Muller) by hand so
/// the stream does not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

/// Disables graph construction for its lifetime (inference, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    validate_shape(shape);
    if (wsc::numel(shape) != data.size())
      throw ShapeError("buffer of " + std::to_string(data.size()) + " elements does not match shape [" +
                       shape_str(shape) + "]");
    auto node = std::make_shared<NodeT>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, T value) {
    validate_shape(shape);
    const auto n = wsc::numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, value));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    validate_shape(shape);
    std::vector<T> data(wsc::numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.normal() * stddev);
    return from_data(std::move(shape), std::move(data));
  }

  /// Result of an operation. Graph linkage is kept only when needed.
  static Tensor make_result(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                            std::function<void(NodeT&)> backward) {
    auto node = std::make_shared<NodeT>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (detail::grad_mode()) {
      const bool any = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.defined() && t.requires_grad(); });
      if (any) {
        node->requires_grad = true;
        for (auto& in : inputs)
          if (in.defined()) node->parents.push_back(in.node_);
        node->backward = std::move(backward);
      }
    }
    return Tensor(std::move(node));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// In-place access, intended for leaf parameters (initialization, optimizer).
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return !node_->backward; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape [" + shape_str(shape()) + "]");
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  /// Detached copy sharing no graph state.
  Tensor detach() const { return from_data(shape(), node_->data); }

  /// Accumulates d(this)/d(leaf) into every reachable leaf requiring grad.
  /// Intermediate gradients are reset each call, leaf gradients accumulate.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward() requires a scalar loss, got [" + shape_str(shape()) + "]");
    if (!requires_grad()) return;
    std::vector<NodeT*> order;
    topo_sort(order);
    for (auto* n : order)
      if (n->backward) n->grad.assign(n->data.size(), T(0));
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward) (*it)->backward(**it);
  }

  NodeT& node() const { return *node_; }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

  // Iterative post-order DFS: parents precede children in `order`.
  void topo_sort(std::vector<NodeT*>& order) const {
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        NodeT* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<NodeT> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Converts between precisions. The result is a fresh leaf.
template <class To, class From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> data(x.data().begin(), x.data().end());
  return Tensor<To>::from_data(x.shape(), std::move(data));
}

}  // namespace wsc
