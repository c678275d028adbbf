#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vsanet::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward_fn;

  /// Gradient buffer, zero-initialised on first use.
  std::span<Real> grad_buffer();
};

/// Dense row-major array of rank <= 4 with an optional gradient slot.
///
/// Copies share storage (handle semantics); use clone() for a deep copy.
/// Operations on tensors that require gradients record the producing op so
/// that backward() on a scalar result can propagate gradients to the leaves.
template <typename Real>
class Tensor {
 public:
  using Node = TensorNode<Real>;
  using BackwardFn = std::function<void(Node&)>;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real{0});
  Tensor(Shape shape, std::vector<Real> data);
  static Tensor scalar(Real value) { return Tensor(Shape{1}, std::vector<Real>{value}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return node_ ? node_->data.size() : 0; }

  std::span<Real> data();
  std::span<const Real> data() const;
  Real item() const;

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  /// Gradient view; allocates a zero buffer if none exists yet.
  std::span<Real> grad();
  std::span<const Real> grad() const;
  void zero_grad();

  /// Reverse-mode accumulation from this scalar into every reachable leaf
  /// that requires gradients. Throws std::invalid_argument if not scalar.
  void backward() const;

  /// Deep copy without graph history; keeps the requires_grad flag.
  Tensor clone() const;
  /// Same as clone() but never requires gradients.
  Tensor detach() const;

  /// Builds an op result. The backward function is kept only when grad
  /// recording is enabled and at least one parent requires gradients.
  static Tensor make_result(Shape shape, std::vector<Real> data,
                            std::initializer_list<const Tensor*> parents, BackwardFn fn);

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Element-wise conversion between precisions; the result has no history.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  if (!t.defined()) return {};
  auto src = t.data();
  std::vector<To> out(src.begin(), src.end());
  Tensor<To> result(t.shape(), std::move(out));
  result.set_requires_grad(t.requires_grad());
  return result;
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace vsanet::nn
