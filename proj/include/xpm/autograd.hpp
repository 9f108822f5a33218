#pragma once

#include "xpm/tensor.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace xpm {

class Tape;
class GradSink;

// A value on (or off) a tape. The wrapped tensor never changes after
// creation; constants carry no tape and no node id.
class Var {
 public:
  Var() = default;

  static Var constant(Tensor v) {
    Var out;
    out.value_ = std::make_shared<const Tensor>(std::move(v));
    return out;
  }

  const Tensor& value() const { return *value_; }
  const std::shared_ptr<const Tensor>& ptr() const { return value_; }
  const Shape& shape() const { return value_->shape(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  // true when gradients should flow to or through this node
  bool requires_grad() const { return grad_; }

 private:
  friend class Tape;
  std::shared_ptr<const Tensor> value_;
  Tape* tape_ = nullptr;
  int id_ = -1;
  bool grad_ = false;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

// Append-only record of the forward computation. Node ids are topologically
// ordered by construction: every input id is smaller than the node's own id.
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<int> inputs;  // grad-connected input ids
    Shape shape;
    BackwardFn backward;  // empty for leaves
  };

  Var leaf(Tensor value, bool requires_grad = true);

  // Appends a node holding `value`; inputs must live on this tape (constants
  // are exempt). Called by op wrappers, which skip recording entirely when no
  // input needs gradients.
  Var record(std::string op, const std::vector<Var>& inputs, Tensor value, BackwardFn backward);

  size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

 private:
  std::vector<Node> nodes_;
};

// node id -> gradient tensor of that node's shape
class Grad {
 public:
  explicit Grad(size_t n) : slots_(n) {}
  bool has(const Var& v) const { return v.id() >= 0 && slots_[static_cast<size_t>(v.id())].has_value(); }
  const Tensor& at(const Var& v) const;
  Tensor at_or_zero(const Var& v) const;

 private:
  friend class GradSink;
  friend Grad backward(Tape& tape, const Var& root);
  std::vector<std::optional<Tensor>> slots_;
};

class GradSink {
 public:
  explicit GradSink(Grad& g) : grad_(g) {}
  // accumulates by summation (fan-out rule)
  void add(int id, Tensor g);

 private:
  Grad& grad_;
};

// Reverse pass from a scalar-valued root. Visits nodes exactly once, in
// reverse id order; returns d(root)/d(node) for every reached node.
Grad backward(Tape& tape, const Var& root);

// ---- differentiable op library ------------------------------------------
// Each function computes its value through the tensor kernels and, when any
// input requires gradients, records a node with the matching adjoint.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var neg(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var exp(const Var& a);
Var log1p(const Var& a);
Var cos(const Var& a);
Var sin(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var relu(const Var& a);
Var atan2(const Var& y, const Var& x);
// mask is a fixed 0/1 tensor; gradients route to a where mask != 0, else to b
Var where(const Tensor& mask, const Var& a, const Var& b);

Var matmul(const Var& a, const Var& b);
Var conv2d(const Var& x, const Var& k, Index stride, Index pad);
// kernel2d is a fixed (non-learnable) filter shared across channels
Var filter2d_valid(const Var& x, const Tensor& kernel2d);
Var resample2x(const Var& x, ResampleDir dir, ResampleMode mode);
Var pad_reflect(const Var& x, Index top, Index bottom, Index left, Index right);
Var crop(const Var& x, Index y0, Index x0, Index h, Index w);
Var concat_leading(const Var& a, const Var& b);
Var slice_leading(const Var& x, Index c0, Index c1);
Var tile_to_seq(const Var& x, Index patch);
Var seq_to_tile(const Var& seq, Index c, Index h, Index w, Index patch);
Var reverse_leading(const Var& x);
Var reshape(const Var& x, Shape shape);

Var sum_all(const Var& a);    // -> shape [1]
Var mean_all(const Var& a);   // -> shape [1]
Var channel_mean(const Var& x);  // [C,...] -> [C]

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

// ---- finite-difference validation ----------------------------------------

struct FiniteDiffReport {
  bool pass = false;
  double max_rel_err = 0.0;
};

// Rebuilds the graph through `f` (fresh tape, leaves in the given order;
// the root must be scalar) and compares backward() against central
// differences on leaf `which`, coordinate by coordinate. A coordinate passes
// when the absolute disagreement is at most 1e-8 or the relative error is at
// most tol_rel. Throws if two evaluations of f at the base point disagree.
FiniteDiffReport finite_diff_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    const std::vector<Tensor>& leaves, size_t which, double eps, double tol_rel);

}  // namespace xpm
