#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "fiml/tensor.hpp"

// Reverse-mode automatic differentiation over an append-only tape.
//
// Every operation appends a node whose id is larger than the ids of its
// parents, so node order is a valid topological order and the backward pass
// is a single sweep in decreasing id order. Tapes are cheap; build one per
// episode / meta-iteration and drop it afterwards.
namespace fiml::ad {

using NodeId = std::uint32_t;

class Tape;

/// Handle to a node on a tape. Copyable; valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  real item() const { return value().item(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Gradient accumulator handed to backward rules.
class GradSink {
 public:
  explicit GradSink(const Tape& tape, std::vector<std::optional<Tensor>>& grads)
      : tape_(tape), grads_(grads) {}

  bool wants(NodeId id) const;
  void add(NodeId id, const Tensor& g);

 private:
  const Tape& tape_;
  std::vector<std::optional<Tensor>>& grads_;
};

using BackwardRule = std::function<void(const Tensor& upstream, GradSink& sink)>;

/// Result of a backward pass.
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* tape, std::vector<std::optional<Tensor>> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  // Zero tensor of the node's shape when the node is not on a path to the loss.
  Tensor operator[](Var v) const;
  bool reached(Var v) const;

 private:
  const Tape* tape_ = nullptr;
  std::vector<std::optional<Tensor>> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var parameter(Tensor value);
  Var constant(Tensor value);
  Var constant(real value) { return constant(Tensor::scalar(value)); }

  // Appends an operation result. The rule is dropped when no parent requires
  // a gradient. `op` names the operation in non-finite diagnostics.
  Var record(const char* op, Tensor value, std::vector<NodeId> parents, BackwardRule rule);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<NodeId> parents;
    BackwardRule rule;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Elementwise arithmetic. Operands must have equal shapes, or one of them is
// a rank-0 scalar which is broadcast.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, real factor);
Var shift(Var a, real offset);
Var square(Var a);
Var exp(Var a);
Var log(Var a);
Var relu(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(real c, Var a) { return scale(a, c); }
inline Var operator*(Var a, real c) { return scale(a, c); }

// Matrix product of rank-2 operands.
Var matmul(Var a, Var b);
Var transpose(Var a);

Var reshape(Var a, Shape shape);

Var sum(Var a);
Var sum(Var a, std::size_t axis);
Var mean(Var a);
Var mean(Var a, std::size_t axis);
Var sum_squares(Var a);

// Reductions and normalizations over the last axis.
Var logsumexp(Var a);
Var softmax(Var a);

// [..] -> [.., count] by repeating every entry along a new trailing axis.
Var repeat_last(Var a, std::size_t count);
// [..] -> [count, ..] by stacking copies.
Var repeat_first(Var a, std::size_t count);

// out[b, f] = sum_l weights[l] * block[b, l, f]
Var contract_axis1(Var block, Var weights);

}  // namespace fiml::ad
