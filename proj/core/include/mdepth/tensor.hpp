#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdepth {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// One vertex of the autodiff graph. Values are immutable once the op that
// produced them returns; only `grad` is written during the backward sweep.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Process-wide switch, per thread, for graph recording.
bool grad_enabled();

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array with reverse-mode differentiation.
///
/// A Tensor is a cheap handle to a shared graph node; copying a Tensor aliases
/// the same storage. Ops never mutate their inputs. Leaves created with
/// `requires_grad` accumulate gradients across backward passes until
/// `zero_grad()` is called.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const T> values() const;
  /// Writable storage, only for leaves (parameters, inputs).
  std::span<T> mutable_values();
  T item() const;
  T at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Runs reverse-mode differentiation from this scalar.
  /// Throws if the tensor is not a scalar or the graph was already consumed.
  void backward();

  /// Same values, cut from the graph.
  Tensor detach() const;
  Tensor clone() const;

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

/// Builds the result node of an op. When any input requires grad (and grad
/// mode is on) the node is attached to the graph with `backward_fn`, which
/// receives the output node and must accumulate into the inputs' grads.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward_fn);

/// Accumulation target for an op input during backward, or nullptr when the
/// input does not need a gradient.
template <typename T>
std::vector<T>* grad_target(detail::Node<T>& out, std::size_t input_index);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mdepth
