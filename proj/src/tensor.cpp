#include "docmem/tensor.hpp"

#include <unordered_set>

namespace docmem {

std::string shape_string(Index rows, Index cols) {
  return "[" + std::to_string(rows) + "," + std::to_string(cols) + "]";
}

std::atomic<std::int64_t> ActivationCounter::live_{0};
std::atomic<std::int64_t> ActivationCounter::peak_{0};

void ActivationCounter::add(std::int64_t n) {
  const std::int64_t now = live_.fetch_add(n, std::memory_order_relaxed) + n;
  std::int64_t seen = peak_.load(std::memory_order_relaxed);
  while (now > seen && !peak_.compare_exchange_weak(seen, now, std::memory_order_relaxed)) {
  }
}

void ActivationCounter::release(std::int64_t n) { live_.fetch_sub(n, std::memory_order_relaxed); }

std::int64_t ActivationCounter::live() { return live_.load(std::memory_order_relaxed); }

std::int64_t ActivationCounter::peak() { return peak_.load(std::memory_order_relaxed); }

std::int64_t ActivationCounter::reset() {
  const std::int64_t now = live_.load(std::memory_order_relaxed);
  peak_.store(now, std::memory_order_relaxed);
  return now;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
Tensor<Scalar>::Tensor(Matrix<Scalar> value, bool requires_grad)
    : node_(std::make_shared<Node>(std::move(value))) {
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar v) {
  Matrix<Scalar> m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_op(Matrix<Scalar> value, std::vector<Tensor> parents,
                                       typename Node::BackwardFn backward) {
  Tensor out(std::move(value));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (!needs) return out;
  out.node_->requires_grad = true;
  out.node_->leaf = false;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

template <typename Scalar>
Matrix<Scalar>& Tensor<Scalar>::mutable_value() {
  if (!node_->leaf) throw UsageError("mutable_value: only leaf tensors may be modified in place");
  return node_->value;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ShapeError("item: expected a 1x1 tensor, got " + shape_string(rows(), cols()));
  return node_->value(0, 0);
}

template <typename Scalar>
Matrix<Scalar> Tensor<Scalar>::grad() const {
  if (node_->grad.size() == 0) return Matrix<Scalar>::Zero(rows(), cols());
  return node_->grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  if (!node_->requires_grad) return *this;
  return Tensor(node_->value);
}

template <typename Scalar>
void Tensor<Scalar>::sever() const {
  if (!node_ || node_->leaf) return;
  node_->parents.clear();
  node_->backward = nullptr;
  node_->requires_grad = false;
  node_->leaf = true;
}

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (!node_) throw UsageError("backward: undefined tensor");
  if (size() != 1) throw UsageError("backward: loss must be scalar, got " + shape_string(rows(), cols()));
  if (!node_->requires_grad || node_->leaf) {
    throw UsageError("backward: loss is not connected to the gradient tape");
  }

  // Iterative post-order DFS; `order` ends with the loss.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf) n->grad.resize(0, 0);
  }
  node_->grad = Matrix<Scalar>::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf || n->grad.size() == 0) continue;
    n->backward(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace docmem
