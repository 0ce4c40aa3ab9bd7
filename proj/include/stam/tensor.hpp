#pragma once

// Dense f64 tensors with a dynamic reverse-mode tape.
//
// A Tensor is a shared handle: copying it aliases the same storage, which is
// how parameters, tape entries and callers refer to one value. Operations
// record onto the tape made active by a TapeScope on the calling thread; with
// no active tape they run as plain forward computations.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stam {

using Vector = Eigen::VectorXd;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  /// Axis counted from the back: back(0) is the last dimension.
  std::size_t back(std::size_t i) const { return dims_.at(dims_.size() - 1 - i); }
  std::size_t numel() const;
  const std::vector<std::size_t>& dims() const { return dims_; }

  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

struct TensorNode {
  Shape shape;
  Vector data;
  Vector grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool produced_by_tape = false;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Vector data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->shape.numel(); }
  std::size_t rank() const { return node_->shape.rank(); }

  const Vector& data() const { return node_->data; }
  /// Mutable storage, for optimizers and loaders. Never call while a tape
  /// that references this tensor is waiting for backward.
  Vector& mutable_data() const { return node_->data; }
  double item() const;
  double operator[](std::size_t flat) const { return node_->data[static_cast<Eigen::Index>(flat)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) const { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() > 0; }
  /// Gradient, or zeros of matching size when no backward pass reached it.
  Vector grad() const;
  void zero_grad() const { node_->grad.resize(0); }

  /// Fresh leaf holding a copy of the values.
  Tensor detach() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }
  bool same(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

using BackwardFn = std::function<void(const Vector& grad_output)>;

class Tape {
 public:
  struct Entry {
    Tensor output;
    BackwardFn backward;
  };

  void record(Tensor output, BackwardFn backward);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

/// Makes `tape` the recording target on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Accumulates `grad` into `t` if it participates in differentiation.
void accumulate_grad(const Tensor& t, const Vector& grad);

/// Reverse sweep from a scalar loss. Gradients of tape-produced tensors are
/// reset first; leaf gradients accumulate across calls.
void backward(const Tensor& loss, Tape& tape);

/// Helper for op implementations: creates the output tensor and records the
/// backward rule when a tape is active and some input requires grad.
Tensor make_result(Shape shape, Vector data, std::span<const Tensor> inputs,
                   const std::function<BackwardFn(const Tensor& output)>& make_backward);

}  // namespace stam
