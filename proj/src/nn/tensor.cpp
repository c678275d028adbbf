#include "vsanet/nn/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace vsanet::nn {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename Real>
std::span<Real> TensorNode<Real>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), Real{0});
  return grad;
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill) : node_(std::make_shared<Node>()) {
  if (shape.empty() || shape.size() > 4) {
    throw std::invalid_argument("tensor rank must be between 1 and 4, got " +
                                std::to_string(shape.size()));
  }
  node_->data.assign(numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data) : node_(std::make_shared<Node>()) {
  if (shape.empty() || shape.size() > 4) {
    throw std::invalid_argument("tensor rank must be between 1 and 4, got " +
                                std::to_string(shape.size()));
  }
  if (numel(shape) != data.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + to_string(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

template <typename Real>
const Shape& Tensor<Real>::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

template <typename Real>
std::span<Real> Tensor<Real>::data() {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->data;
}

template <typename Real>
std::span<const Real> Tensor<Real>::data() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->data;
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
  }
  return node_->data[0];
}

template <typename Real>
Tensor<Real>& Tensor<Real>::set_requires_grad(bool flag) {
  if (!node_) throw std::logic_error("undefined tensor");
  node_->requires_grad = flag;
  return *this;
}

template <typename Real>
std::span<Real> Tensor<Real>::grad() {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->grad_buffer();
}

template <typename Real>
std::span<const Real> Tensor<Real>::grad() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->grad_buffer();
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename Real>
void Tensor<Real>::backward() const {
  if (!node_) throw std::logic_error("undefined tensor");
  if (node_->data.size() != 1) {
    throw std::invalid_argument("backward() requires a scalar, got shape " +
                                to_string(node_->shape));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order with parents first.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->data.size(), Real{0});
  }
  node_->grad_buffer()[0] += Real{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

template <typename Real>
Tensor<Real> Tensor<Real>::clone() const {
  if (!node_) return {};
  Tensor copy(node_->shape, node_->data);
  copy.node_->requires_grad = node_->requires_grad;
  return copy;
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->data);
}

template <typename Real>
Tensor<Real> Tensor<Real>::make_result(Shape shape, std::vector<Real> data,
                                       std::initializer_list<const Tensor*> parents,
                                       BackwardFn fn) {
  Tensor out(std::move(shape), std::move(data));
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const Tensor* p : parents) needs = needs || (p && p->requires_grad());
  if (!needs) return out;
  out.node_->requires_grad = true;
  for (const Tensor* p : parents) {
    if (p && p->defined()) out.node_->parents.push_back(p->node_);
  }
  out.node_->backward_fn = std::move(fn);
  return out;
}

template struct TensorNode<float>;
template struct TensorNode<double>;
template class Tensor<float>;
template class Tensor<double>;

}  // namespace vsanet::nn
