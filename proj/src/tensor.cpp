#include "stam/tensor.hpp"

#include <sstream>

#include "stam/errors.hpp"

namespace stam {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw ShapeError("shape must have at least one dimension");
  for (std::size_t d : dims_) {
    if (d == 0) throw ShapeError("shape " + str() + " has a zero dimension");
  }
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Vector data, bool requires_grad) : node_(std::make_shared<TensorNode>()) {
  if (static_cast<std::size_t>(data.size()) != shape.numel()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape.str());
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = static_cast<Eigen::Index>(shape.numel());
  return Tensor(std::move(shape), Vector::Constant(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, bool requires_grad) {
  Vector data(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) data[i++] = v;
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full(Shape{1}, value, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on non-scalar tensor of shape " + shape().str());
  return node_->data[0];
}

Vector Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Vector::Zero(node_->data.size());
}

Tensor Tensor::detach() const { return Tensor(shape(), data(), false); }

void Tape::record(Tensor output, BackwardFn backward) {
  entries_.push_back(Entry{std::move(output), std::move(backward)});
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void accumulate_grad(const Tensor& t, const Vector& grad) {
  TensorNode& node = *t.node();
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = grad;
  } else {
    node.grad += grad;
  }
}

void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward: loss does not depend on any tensor that requires grad");
  }
  const auto& entries = tape.entries();
  bool reachable = !loss.node()->produced_by_tape;
  for (const auto& e : entries) {
    e.output.zero_grad();
    if (e.output.same(loss)) reachable = true;
  }
  if (!reachable) throw UsageError("backward: loss was not recorded on this tape");

  accumulate_grad(loss, Vector::Ones(1));
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->output.has_grad()) it->backward(it->output.node()->grad);
  }
}

Tensor make_result(Shape shape, Vector data, std::span<const Tensor> inputs,
                   const std::function<BackwardFn(const Tensor& output)>& make_backward) {
  Tape* tape = active_tape();
  bool needs_grad = false;
  if (tape != nullptr) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  Tensor out(std::move(shape), std::move(data), needs_grad);
  if (needs_grad) {
    out.node()->produced_by_tape = true;
    tape->record(out, make_backward(out));
  }
  return out;
}

}  // namespace stam
