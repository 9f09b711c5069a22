#include "mdepth/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace mdepth {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw TensorError("from_data: shape " + shape_to_string(shape) + " does not hold " +
                      std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw TensorError("undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw TensorError("dim: axis out of range for " + shape_to_string(s));
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return shape_numel(shape());
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  if (!node_) throw TensorError("undefined tensor");
  return node_->value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  if (!node_) throw TensorError("undefined tensor");
  if (!node_->is_leaf) throw TensorError("mutable_values on a non-leaf tensor");
  return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw TensorError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->value[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!node_) throw TensorError("undefined tensor");
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!node_) throw TensorError("undefined tensor");
  return node_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward() {
  if (!node_) throw TensorError("backward on undefined tensor");
  if (numel() != 1) {
    throw TensorError("backward requires a scalar loss, got shape " + shape_to_string(shape()));
  }
  if (node_->released) {
    throw TensorError("backward called twice on the same graph; re-run the forward pass");
  }
  if (!node_->requires_grad) throw TensorError("backward on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order; every node is visited once.
  // `order` owns the nodes so releasing a parent's inputs cannot free a
  // node that is still waiting for its turn.
  std::vector<std::shared_ptr<detail::Node<T>>> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node<T>>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->inputs.size()) {
      auto child = top.first->inputs[top.second++];
      if (child->requires_grad && !child->is_leaf && visited.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = it->get();
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    if (!n->is_leaf) {
      n->backward_fn = nullptr;
      n->inputs.clear();
      n->released = true;
      if (n != node_.get()) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }
  node_->released = true;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return from_data(shape(), node_->value, requires_grad() && node_->is_leaf);
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::vector<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->is_leaf = false;
  if (shape_numel(node->shape) != node->value.size()) {
    throw TensorError("op produced " + std::to_string(node->value.size()) +
                      " values for shape " + shape_to_string(node->shape));
  }
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) {
      if (in.node()->released && !in.node()->is_leaf) {
        throw TensorError("op input belongs to a graph that was already consumed by backward");
      }
      node->inputs.push_back(in.node());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
std::vector<T>* grad_target(detail::Node<T>& out, std::size_t input_index) {
  auto& in = *out.inputs[input_index];
  if (!in.requires_grad) return nullptr;
  return &in.ensure_grad();
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_result(Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    std::function<void(detail::Node<double>&)>);
template std::vector<float>* grad_target(detail::Node<float>&, std::size_t);
template std::vector<double>* grad_target(detail::Node<double>&, std::size_t);

}  // namespace mdepth
