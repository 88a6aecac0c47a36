#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace prgcn {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel_of(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline void check_shape_valid(const Shape& shape) {
  for (Index d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
  }
}

// Row-major strides.
inline std::vector<Index> strides_of(const Shape& shape) {
  std::vector<Index> s(shape.size());
  Index acc = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    s[i] = acc;
    acc *= shape[i];
  }
  return s;
}

template <typename Scalar>
struct TensorNode {
  Shape shape;
  ArrayX<Scalar> value;
  ArrayX<Scalar> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<Scalar>>> parents;
  // Receives the gradient w.r.t. this node's value and accumulates into parents.
  std::function<void(const ArrayX<Scalar>&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  void accumulate_grad(const ArrayX<Scalar>& g) {
    if (grad.size() == 0) grad = ArrayX<Scalar>::Zero(value.size());
    grad += g;
  }
};

// Dense row-major tensor with optional reverse-mode differentiation.
// Copying a Tensor copies the handle; the underlying buffer is shared and
// treated as immutable once built (optimizer steps mutate parameters in place).
template <typename Scalar>
class Tensor {
 public:
  using Node = TensorNode<Scalar>;

  Tensor() = default;

  Tensor(Shape shape, ArrayX<Scalar> values, bool requires_grad = false) {
    check_shape_valid(shape);
    if (numel_of(shape) != values.size())
      throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape));
    n_ = std::make_shared<Node>();
    n_->shape = std::move(shape);
    n_->value = std::move(values);
    n_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Index n = numel_of(shape);
    return Tensor(std::move(shape), ArrayX<Scalar>::Zero(n), requires_grad);
  }

  static Tensor ones(Shape shape, bool requires_grad = false) {
    Index n = numel_of(shape);
    return Tensor(std::move(shape), ArrayX<Scalar>::Ones(n), requires_grad);
  }

  static Tensor full(Shape shape, Scalar v, bool requires_grad = false) {
    Index n = numel_of(shape);
    return Tensor(std::move(shape), ArrayX<Scalar>::Constant(n, v), requires_grad);
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    return full({1}, v, requires_grad);
  }

  static Tensor from(Shape shape, const std::vector<Scalar>& values, bool requires_grad = false) {
    ArrayX<Scalar> a(static_cast<Index>(values.size()));
    for (Index i = 0; i < a.size(); ++i) a[i] = values[static_cast<std::size_t>(i)];
    return Tensor(std::move(shape), std::move(a), requires_grad);
  }

  static Tensor randn(Shape shape, std::mt19937_64& rng, Scalar stddev = Scalar(1),
                      bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    Index n = numel_of(shape);
    ArrayX<Scalar> a(n);
    for (Index i = 0; i < n; ++i) a[i] = static_cast<Scalar>(dist(rng));
    return Tensor(std::move(shape), std::move(a), requires_grad);
  }

  static Tensor uniform(Shape shape, std::mt19937_64& rng, Scalar lo, Scalar hi,
                        bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    Index n = numel_of(shape);
    ArrayX<Scalar> a(n);
    for (Index i = 0; i < n; ++i) a[i] = static_cast<Scalar>(dist(rng));
    return Tensor(std::move(shape), std::move(a), requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  Index rank() const { return static_cast<Index>(n_->shape.size()); }
  Index size(Index axis) const { return n_->shape[static_cast<std::size_t>(axis)]; }
  Index numel() const { return n_->value.size(); }

  const ArrayX<Scalar>& value() const { return n_->value; }
  ArrayX<Scalar>& mutable_value() { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    n_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return n_->grad.size() > 0; }
  const ArrayX<Scalar>& grad() const {
    if (!has_grad()) throw std::runtime_error("tensor has no gradient");
    return n_->grad;
  }
  void zero_grad() { n_->grad = ArrayX<Scalar>::Zero(n_->value.size()); }
  void clear_grad() { n_->grad.resize(0); }

  Scalar item() const {
    if (numel() != 1) throw std::invalid_argument("item() requires a single-element tensor, shape " + shape_str(shape()));
    return n_->value[0];
  }

  Scalar at(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != rank())
      throw std::invalid_argument("at(): index rank mismatch");
    auto st = strides_of(shape());
    Index off = 0;
    std::size_t i = 0;
    for (Index v : idx) off += v * st[i++];
    return n_->value[off];
  }

  // Value copy outside the differentiation graph.
  Tensor detach() const { return Tensor(n_->shape, n_->value, false); }

  // Same buffer viewed under a different dtype (copy-converts).
  template <typename Other>
  Tensor<Other> cast() const {
    ArrayX<Other> a = n_->value.template cast<Other>();
    return Tensor<Other>(n_->shape, std::move(a), false);
  }

  std::shared_ptr<Node> node() const { return n_; }

  static Tensor from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

// Builds a result node wired to its parents; backward_fn is attached only
// when some parent actually requires a gradient.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, ArrayX<Scalar> value,
                           std::vector<Tensor<Scalar>> parents,
                           std::function<void(const ArrayX<Scalar>&)> backward_fn) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  Tensor<Scalar> out(std::move(shape), std::move(value), needs);
  if (needs) {
    auto n = out.node();
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable requires_grad leaf; the recorded graph is freed afterwards so
// repeated forward/backward rounds do not grow memory.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward() expects a scalar loss, got shape " + shape_str(loss.shape()));
  using NodeT = TensorNode<Scalar>;

  // Iterative post-order topological sort over the parent DAG.
  std::vector<std::shared_ptr<NodeT>> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<std::shared_ptr<NodeT>, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto child = node->parents[next++];
      if (seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate_grad(ArrayX<Scalar>::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& node = *it;
    if (node->backward_fn && node->grad.size() > 0) node->backward_fn(node->grad);
  }
  // Free the tape; keep gradients only on leaves.
  for (auto& node : order) {
    if (node->backward_fn) {
      node->backward_fn = nullptr;
      node->parents.clear();
      node->grad.resize(0);
    }
  }
}

template <typename Scalar>
struct Parameter {
  Tensor<Scalar> value;
  ArrayX<Scalar> momentum;
  std::string name;

  Parameter() = default;
  explicit Parameter(Tensor<Scalar> v, std::string n = {}) : value(std::move(v)), name(std::move(n)) {
    value.set_requires_grad(true);
    momentum = ArrayX<Scalar>::Zero(value.numel());
  }

  Index numel() const { return value.numel(); }
  void zero_grad() { value.zero_grad(); }
};

// buf <- momentum * buf + grad;  value <- value - lr * buf
template <typename Scalar>
void sgd_step(const std::vector<Parameter<Scalar>*>& params, Scalar lr, Scalar momentum) {
  for (Parameter<Scalar>* p : params) {
    if (!p->value.has_grad())
      throw std::runtime_error("sgd_step: parameter '" + (p->name.empty() ? std::string("<unnamed>") : p->name) +
                               "' has no gradient");
    p->momentum = momentum * p->momentum + p->value.grad();
    p->value.mutable_value() -= lr * p->momentum;
  }
}

template <typename Scalar>
void zero_grads(const std::vector<Parameter<Scalar>*>& params) {
  for (Parameter<Scalar>* p : params) p->zero_grad();
}

}  // namespace prgcn
