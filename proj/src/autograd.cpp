#include "xpm/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace xpm {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

Tape* common_tape(const std::vector<Var>& inputs) {
  Tape* t = nullptr;
  for (const Var& v : inputs) {
    if (v.tape() == nullptr) continue;
    if (t == nullptr) {
      t = v.tape();
    } else if (t != v.tape()) {
      fail("record: inputs come from different tapes");
    }
  }
  return t;
}

bool any_grad(const std::vector<Var>& inputs) {
  for (const Var& v : inputs) {
    if (v.requires_grad()) return true;
  }
  return false;
}

// Sums a gradient over broadcast axes so it matches the input's shape.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (target.numel() == 1) return Tensor(target, std::vector<double>{sum(g)});
  // per-channel vector broadcast over the leading axis
  const Index c = target[0];
  const Index inner = g.numel() / c;
  Tensor::Storage out(c);
  for (Index ci = 0; ci < c; ++ci) out[ci] = g.array().segment(ci * inner, inner).sum();
  return Tensor::wrap(target, std::move(out));
}

}  // namespace

Var Tape::leaf(Tensor value, bool requires_grad) {
  Var v;
  v.value_ = std::make_shared<const Tensor>(std::move(value));
  v.tape_ = this;
  v.id_ = static_cast<int>(nodes_.size());
  v.grad_ = requires_grad;
  nodes_.push_back(Node{"leaf", {}, v.value_->shape(), nullptr});
  return v;
}

Var Tape::record(std::string op, const std::vector<Var>& inputs, Tensor value,
                 BackwardFn backward_fn) {
  std::vector<int> input_ids;
  for (const Var& v : inputs) {
    if (!v.requires_grad()) continue;
    if (v.tape() != this) fail("record: input belongs to a different tape");
    if (v.id() < 0 || static_cast<size_t>(v.id()) >= nodes_.size()) {
      fail("record: input id violates topological order");
    }
    input_ids.push_back(v.id());
  }
  Var v;
  v.value_ = std::make_shared<const Tensor>(std::move(value));
  v.tape_ = this;
  v.id_ = static_cast<int>(nodes_.size());
  v.grad_ = true;
  nodes_.push_back(Node{std::move(op), std::move(input_ids), v.value_->shape(),
                        std::move(backward_fn)});
  return v;
}

const Tensor& Grad::at(const Var& v) const {
  if (!has(v)) throw std::invalid_argument("grad: no gradient recorded for this var");
  return *slots_[static_cast<size_t>(v.id())];
}

Tensor Grad::at_or_zero(const Var& v) const {
  if (has(v)) return *slots_[static_cast<size_t>(v.id())];
  return Tensor::zeros(v.shape());
}

void GradSink::add(int id, Tensor g) {
  auto& slot = grad_.slots_[static_cast<size_t>(id)];
  if (slot.has_value()) {
    slot = xpm::add(*slot, g);
  } else {
    slot = std::move(g);
  }
}

Grad backward(Tape& tape, const Var& root) {
  if (root.tape() != &tape || root.id() < 0) {
    fail("backward: root does not live on this tape");
  }
  if (root.value().numel() != 1) {
    fail("backward: root must be scalar-valued, got shape " + root.shape().str());
  }
  Grad grad(tape.size());
  GradSink sink(grad);
  sink.add(root.id(), Tensor(root.shape(), 1.0));
  for (int id = root.id(); id >= 0; --id) {
    const Tape::Node& node = tape.node(id);
    if (!node.backward) continue;
    if (!grad.slots_[static_cast<size_t>(id)].has_value()) continue;
    node.backward(*grad.slots_[static_cast<size_t>(id)], sink);
  }
  return grad;
}

namespace {

// Shared wrapper: computes the value, then records only when gradients can
// flow. `make_backward` receives the resolved input ids (-1 when detached).
Var run_op(const char* name, const std::vector<Var>& inputs, Tensor value,
           const std::function<BackwardFn(const std::vector<int>&)>& make_backward) {
  if (!any_grad(inputs)) return Var::constant(std::move(value));
  Tape* tape = common_tape(inputs);
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Var& v : inputs) ids.push_back(v.requires_grad() ? v.id() : -1);
  return tape->record(name, inputs, std::move(value), make_backward(ids));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return run_op("add", {a, b}, add(a.value(), b.value()), [&](const std::vector<int>& id) {
    auto sa = a.shape();
    auto sb = b.shape();
    return [=](const Tensor& g, GradSink& s) {
      if (id[0] >= 0) s.add(id[0], reduce_to(g, sa));
      if (id[1] >= 0) s.add(id[1], reduce_to(g, sb));
    };
  });
}

Var sub(const Var& a, const Var& b) {
  return run_op("sub", {a, b}, sub(a.value(), b.value()), [&](const std::vector<int>& id) {
    auto sa = a.shape();
    auto sb = b.shape();
    return [=](const Tensor& g, GradSink& s) {
      if (id[0] >= 0) s.add(id[0], reduce_to(g, sa));
      if (id[1] >= 0) s.add(id[1], reduce_to(neg(g), sb));
    };
  });
}

Var mul(const Var& a, const Var& b) {
  return run_op("mul", {a, b}, mul(a.value(), b.value()), [&](const std::vector<int>& id) {
    auto pa = a.ptr();
    auto pb = b.ptr();
    return [=](const Tensor& g, GradSink& s) {
      if (id[0] >= 0) s.add(id[0], mul(g, *pb));
      if (id[1] >= 0) s.add(id[1], reduce_to(mul(g, *pa), pb->shape()));
    };
  });
}

Var div(const Var& a, const Var& b) {
  return run_op("div", {a, b}, div(a.value(), b.value()), [&](const std::vector<int>& id) {
    auto pa = a.ptr();
    auto pb = b.ptr();
    return [=](const Tensor& g, GradSink& s) {
      if (id[0] >= 0) s.add(id[0], reduce_to(map2(g, *pb, Map2Op::Div), pa->shape()));
      if (id[1] >= 0) {
        // d/db (a/b) = -a/b^2
        Tensor gb = mul(g, *pa);
        gb = map2(gb, square(*pb), Map2Op::Div);
        s.add(id[1], reduce_to(neg(gb), pb->shape()));
      }
    };
  });
}

Var add_scalar(const Var& a, double v) {
  return run_op("add_scalar", {a}, add_scalar(a.value(), v), [&](const std::vector<int>& id) {
    return [=](const Tensor& g, GradSink& s) { s.add(id[0], g); };
  });
}

Var mul_scalar(const Var& a, double v) {
  return run_op("mul_scalar", {a}, mul_scalar(a.value(), v), [&](const std::vector<int>& id) {
    return [=](const Tensor& g, GradSink& s) { s.add(id[0], mul_scalar(g, v)); };
  });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var abs(const Var& a) {
  return run_op("abs", {a}, abs(a.value()), [&](const std::vector<int>& id) {
    auto pa = a.ptr();
    return [=](const Tensor& g, GradSink& s) {
      Tensor::Storage sign(pa->numel());
      for (Index i = 0; i < pa->numel(); ++i) {
        const double v = (*pa)[i];
        sign[i] = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      }
      s.add(id[0], mul(g, Tensor::wrap(pa->shape(), std::move(sign))));
    };
  });
}

Var square(const Var& a) {
  return run_op("square", {a}, square(a.value()), [&](const std::vector<int>& id) {
    auto pa = a.ptr();
    return [=](const Tensor& g, GradSink& s) {
      s.add(id[0], mul(g, mul_scalar(*pa, 2.0)));
    };
  });
}

Var sqrt(const Var& a) {
  Tensor out = sqrt(a.value());
  return run_op("sqrt", {a}, out, [&](const std::vector<int>& id) {
    auto po = std::make_shared<Tensor>(out);
    return [=](const Tensor& g, GradSink& s) {
      Tensor::Storage d(po->numel());
      for (Index i = 0; i < po->numel(); ++i) {
        const double r = (*po)[i];
        d[i] = r > 0.0 ? 0.5 / r : 0.0;  // subgradient 0 at the origin
      }
      s.add(id[0], mul(g, Tensor::wrap(po->shape(), std::move(d))));
    };
  });
}

Var exp(const Var& a) {
  Tensor out = exp(a.value());
  return run_op("exp", {a}, out, [&](const std::vector<int>& id) {
    auto po = std::make_shared<Tensor>(out);
    return [=](const Tensor& g, GradSink& s) { s.add(id[0], mul(g, *po)); };
  });
}

Var log1p(const Var& a) {
  return run_op("log1p", {a}, log1p(a.value()), [&](const std::vector<int>& id) {
    auto pa = a.ptr();
    return [=](const Tensor& g, GradSink& s) {
      s.add(id[0], div(g, add_scalar(*pa, 1.0)));
    };
  });
}

Var cos(const Var& a) {
  return run_op("cos", {a}, cos(a.value()), [&](const std::vector<int>& id) {
    auto pa = a.ptr();
    return [=](const Tensor& g, GradSink& s) {
      s.add(id[0], mul(g, neg(sin(*pa))));
    };
  });
}

Var sin(const Var& a) {
  return run_op("sin", {a}, sin(a.value()), [&](const std::vector<int>& id) {
    auto pa = a.ptr();
    return [=](const Tensor& g, GradSink& s) { s.add(id[0], mul(g, cos(*pa))); };
  });
}

Var sigmoid(const Var& a) {
  Tensor out = sigmoid(a.value());
  return run_op("sigmoid", {a}, out, [&](const std::vector<int>& id) {
    auto po = std::make_shared<Tensor>(out);
    return [=](const Tensor& g, GradSink& s) {
      Tensor one_minus = sub(Tensor(po->shape(), 1.0), *po);
      s.add(id[0], mul(g, mul(*po, one_minus)));
    };
  });
}

Var softplus(const Var& a) {
  return run_op("softplus", {a}, softplus(a.value()), [&](const std::vector<int>& id) {
    auto pa = a.ptr();
    return [=](const Tensor& g, GradSink& s) { s.add(id[0], mul(g, sigmoid(*pa))); };
  });
}

Var leaky_relu(const Var& a, double slope) {
  return run_op("leaky_relu", {a}, leaky_relu(a.value(), slope),
                [&](const std::vector<int>& id) {
    auto pa = a.ptr();
    return [=](const Tensor& g, GradSink& s) {
      Tensor::Storage d(pa->numel());
      for (Index i = 0; i < pa->numel(); ++i) d[i] = (*pa)[i] > 0.0 ? 1.0 : slope;
      s.add(id[0], mul(g, Tensor::wrap(pa->shape(), std::move(d))));
    };
  });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var atan2(const Var& y, const Var& x) {
  return run_op("atan2", {y, x}, atan2(y.value(), x.value()),
                [&](const std::vector<int>& id) {
    auto py = y.ptr();
    auto px = x.ptr();
    return [=](const Tensor& g, GradSink& s) {
      Tensor::Storage dy(py->numel()), dx(py->numel());
      for (Index i = 0; i < py->numel(); ++i) {
        const double yy = (*py)[i], xx = (*px)[i];
        const double r2 = yy * yy + xx * xx;
        dy[i] = r2 > 0.0 ? xx / r2 : 0.0;
        dx[i] = r2 > 0.0 ? -yy / r2 : 0.0;
      }
      if (id[0] >= 0) s.add(id[0], mul(g, Tensor::wrap(py->shape(), std::move(dy))));
      if (id[1] >= 0) s.add(id[1], mul(g, Tensor::wrap(px->shape(), std::move(dx))));
    };
  });
}

Var where(const Tensor& mask, const Var& a, const Var& b) {
  return run_op("where", {a, b}, where(mask, a.value(), b.value()),
                [&](const std::vector<int>& id) {
    auto pm = std::make_shared<Tensor>(mask);
    return [=](const Tensor& g, GradSink& s) {
      if (id[0] >= 0) s.add(id[0], mul(g, *pm));
      if (id[1] >= 0) {
        Tensor inv = sub(Tensor(pm->shape(), 1.0), *pm);
        s.add(id[1], mul(g, inv));
      }
    };
  });
}

Var matmul(const Var& a, const Var& b) {
  return run_op("matmul", {a, b}, matmul(a.value(), b.value()),
                [&](const std::vector<int>& id) {
    auto pa = a.ptr();
    auto pb = b.ptr();
    return [=](const Tensor& g, GradSink& s) {
      if (id[0] >= 0) s.add(id[0], matmul(g, transpose(*pb)));
      if (id[1] >= 0) s.add(id[1], matmul(transpose(*pa), g));
    };
  });
}

Var conv2d(const Var& x, const Var& k, Index stride, Index pad) {
  return run_op("conv2d", {x, k}, conv2d(x.value(), k.value(), stride, pad),
                [&](const std::vector<int>& id) {
    auto px = x.ptr();
    auto pk = k.ptr();
    return [=](const Tensor& g, GradSink& s) {
      Conv2dGrads grads = conv2d_backward(*px, *pk, g, stride, pad);
      if (id[0] >= 0) s.add(id[0], std::move(grads.dx));
      if (id[1] >= 0) s.add(id[1], std::move(grads.dk));
    };
  });
}

Var filter2d_valid(const Var& x, const Tensor& kernel2d) {
  return run_op("filter2d", {x}, filter2d_valid(x.value(), kernel2d),
                [&](const std::vector<int>& id) {
    auto pk = std::make_shared<Tensor>(kernel2d);
    const Index h = x.shape()[1], w = x.shape()[2];
    return [=](const Tensor& g, GradSink& s) {
      s.add(id[0], filter2d_valid_backward_input(*pk, g, h, w));
    };
  });
}

Var resample2x(const Var& x, ResampleDir dir, ResampleMode mode) {
  return run_op("resample2x", {x}, resample2x(x.value(), dir, mode),
                [&](const std::vector<int>& id) {
    const Index h = x.shape()[1], w = x.shape()[2];
    return [=](const Tensor& g, GradSink& s) {
      s.add(id[0], resample2x_backward(g, dir, mode, h, w));
    };
  });
}

Var pad_reflect(const Var& x, Index top, Index bottom, Index left, Index right) {
  return run_op("pad_reflect", {x}, pad_reflect(x.value(), top, bottom, left, right),
                [&](const std::vector<int>& id) {
    const Index h = x.shape()[1], w = x.shape()[2];
    return [=](const Tensor& g, GradSink& s) {
      s.add(id[0], pad_reflect_backward(g, h, w, top, bottom, left, right));
    };
  });
}

Var crop(const Var& x, Index y0, Index x0, Index h, Index w) {
  return run_op("crop", {x}, crop(x.value(), y0, x0, h, w),
                [&](const std::vector<int>& id) {
    const Index sh = x.shape()[1], sw = x.shape()[2];
    return [=](const Tensor& g, GradSink& s) {
      s.add(id[0], crop_backward(g, y0, x0, sh, sw));
    };
  });
}

Var concat_leading(const Var& a, const Var& b) {
  return run_op("concat", {a, b}, concat_leading(a.value(), b.value()),
                [&](const std::vector<int>& id) {
    const Index ca = a.shape()[0];
    const Index cb = b.shape()[0];
    return [=](const Tensor& g, GradSink& s) {
      if (id[0] >= 0) s.add(id[0], slice_leading(g, 0, ca));
      if (id[1] >= 0) s.add(id[1], slice_leading(g, ca, ca + cb));
    };
  });
}

Var slice_leading(const Var& x, Index c0, Index c1) {
  return run_op("slice", {x}, slice_leading(x.value(), c0, c1),
                [&](const std::vector<int>& id) {
    auto src_shape = x.shape();
    return [=](const Tensor& g, GradSink& s) {
      Tensor full = Tensor::zeros(src_shape);
      const Index inner = full.numel() / full.dim(0);
      full.raw().segment(c0 * inner, (c1 - c0) * inner) = g.array();
      s.add(id[0], std::move(full));
    };
  });
}

Var tile_to_seq(const Var& x, Index patch) {
  return run_op("tile_to_seq", {x}, tile_to_seq(x.value(), patch),
                [&](const std::vector<int>& id) {
    const Index c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    return [=](const Tensor& g, GradSink& s) {
      s.add(id[0], seq_to_tile(g, c, h, w, patch));
    };
  });
}

Var seq_to_tile(const Var& seq, Index c, Index h, Index w, Index patch) {
  return run_op("seq_to_tile", {seq}, seq_to_tile(seq.value(), c, h, w, patch),
                [&](const std::vector<int>& id) {
    return [=](const Tensor& g, GradSink& s) { s.add(id[0], tile_to_seq(g, patch)); };
  });
}

Var reverse_leading(const Var& x) {
  return run_op("reverse", {x}, reverse_leading(x.value()),
                [&](const std::vector<int>& id) {
    return [=](const Tensor& g, GradSink& s) { s.add(id[0], reverse_leading(g)); };
  });
}

Var reshape(const Var& x, Shape shape) {
  return run_op("reshape", {x}, reshape(x.value(), shape),
                [&](const std::vector<int>& id) {
    auto src_shape = x.shape();
    return [=](const Tensor& g, GradSink& s) { s.add(id[0], reshape(g, src_shape)); };
  });
}

Var sum_all(const Var& a) {
  Tensor out(Shape{1}, std::vector<double>{sum(a.value())});
  return run_op("sum_all", {a}, std::move(out), [&](const std::vector<int>& id) {
    auto shape = a.shape();
    return [=](const Tensor& g, GradSink& s) { s.add(id[0], Tensor(shape, g[0])); };
  });
}

Var mean_all(const Var& a) {
  Tensor out(Shape{1}, std::vector<double>{mean(a.value())});
  return run_op("mean_all", {a}, std::move(out), [&](const std::vector<int>& id) {
    auto shape = a.shape();
    const double inv_n = 1.0 / static_cast<double>(a.value().numel());
    return [=](const Tensor& g, GradSink& s) { s.add(id[0], Tensor(shape, g[0] * inv_n)); };
  });
}

Var channel_mean(const Var& x) {
  return run_op("channel_mean", {x}, channel_mean(x.value()),
                [&](const std::vector<int>& id) {
    auto shape = x.shape();
    return [=](const Tensor& g, GradSink& s) {
      const Index c = shape[0];
      const Index inner = shape.numel() / c;
      Tensor full = Tensor::zeros(shape);
      for (Index ci = 0; ci < c; ++ci) {
        full.raw().segment(ci * inner, inner).setConstant(g[ci] / static_cast<double>(inner));
      }
      s.add(id[0], std::move(full));
    };
  });
}

FiniteDiffReport finite_diff_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    const std::vector<Tensor>& leaves, size_t which, double eps, double tol_rel) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be > 0");
  if (which >= leaves.size()) throw std::invalid_argument("finite_diff_check: leaf index");

  auto eval = [&](const std::vector<Tensor>& values) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const Tensor& t : values) vars.push_back(tape.leaf(t, false));
    Var root = f(tape, vars);
    if (root.value().numel() != 1) {
      throw std::invalid_argument("finite_diff_check: f must produce a scalar");
    }
    return root.value()[0];
  };

  const double base = eval(leaves);
  if (eval(leaves) != base) {
    throw std::runtime_error("finite_diff_check: f is not deterministic");
  }

  // analytic gradient; a root detached from the tape has zero gradient
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : leaves) vars.push_back(tape.leaf(t, true));
  Var root = f(tape, vars);
  Tensor analytic = Tensor::zeros(leaves[which].shape());
  if (root.id() >= 0 && root.tape() == &tape) {
    Grad grad = backward(tape, root);
    analytic = grad.at_or_zero(vars[which]);
  }

  FiniteDiffReport report;
  report.pass = true;
  std::vector<Tensor> work = leaves;
  const Tensor& target = leaves[which];
  for (Index i = 0; i < target.numel(); ++i) {
    Tensor plus = target;
    plus.raw()[i] += eps;
    work[which] = plus;
    const double fp = eval(work);
    Tensor minus = target;
    minus.raw()[i] -= eps;
    work[which] = minus;
    const double fm = eval(work);
    work[which] = target;
    const double fd = (fp - fm) / (2.0 * eps);
    const double an = analytic[i];
    const double diff = std::fabs(fd - an);
    if (diff <= 1e-8) continue;
    const double rel = diff / std::max(std::fabs(fd), std::fabs(an));
    report.max_rel_err = std::max(report.max_rel_err, rel);
    if (rel > tol_rel) report.pass = false;
  }
  return report;
}

}  // namespace xpm
