#pragma once

#include <Eigen/Dense>

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace docmem {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_string(Index rows, Index cols);

// High-water mark of live activation values (tensor payloads plus explicitly
// registered buffers such as decoder key/value caches). Parameters count too,
// so callers measure peaks relative to `reset()`.
class ActivationCounter {
 public:
  static void add(std::int64_t n);
  static void release(std::int64_t n);
  static std::int64_t live();
  static std::int64_t peak();
  // Sets peak := live and returns live.
  static std::int64_t reset();

 private:
  static std::atomic<std::int64_t> live_;
  static std::atomic<std::int64_t> peak_;
};

// Gradient recording is a per-thread switch so frozen-model inference can run
// on several threads while one trainer records on another.
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

template <typename Scalar>
struct Node {
  using BackwardFn = std::function<void(Node&)>;

  explicit Node(Matrix<Scalar> v) : value(std::move(v)), counted(value.size()) {
    ActivationCounter::add(counted);
  }
  ~Node() { ActivationCounter::release(counted); }
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Adds `g` into this node's gradient buffer, allocating it on first use.
  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }

  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  bool requires_grad = false;
  bool leaf = true;
  Index counted = 0;
};

}  // namespace detail

template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;
  using NodePtr = std::shared_ptr<Node>;

  Tensor() = default;
  explicit Tensor(Matrix<Scalar> value, bool requires_grad = false);

  static Tensor parameter(Matrix<Scalar> value) { return Tensor(std::move(value), true); }
  static Tensor zeros(Index rows, Index cols) { return Tensor(Matrix<Scalar>::Zero(rows, cols)); }
  static Tensor scalar(Scalar v);

  // Builds an op result. When recording is off or no parent needs a
  // gradient the result is a constant and `backward` is dropped.
  static Tensor from_op(Matrix<Scalar> value, std::vector<Tensor> parents,
                        typename Node::BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }

  const Matrix<Scalar>& value() const { return node_->value; }
  // Only leaves may be mutated in place (optimizer steps, checkpoint loads).
  Matrix<Scalar>& mutable_value();
  Scalar item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return node_ && node_->grad.size() != 0; }
  // Zero-filled when no gradient has reached this tensor.
  Matrix<Scalar> grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  // Same values, no tape linkage.
  Tensor detach() const;
  // Turns an op result into a constant in place: its parents are dropped and
  // every existing consumer stops propagating gradient through it. No effect
  // on leaves.
  void sever() const;

  // Reverse-mode sweep from this 1x1 tensor. Leaf gradients accumulate;
  // interior gradients are recomputed from zero on every call, so a graph may
  // be swept by several losses in turn.
  void backward() const;

  const NodePtr& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  NodePtr node_;
};

}  // namespace docmem
