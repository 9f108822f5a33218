#include "xpm/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace xpm {

namespace {

std::atomic<bool> g_debug_checks{true};

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace

bool debug_checks_enabled() { return g_debug_checks.load(std::memory_order_relaxed); }
void set_debug_checks(bool on) { g_debug_checks.store(on, std::memory_order_relaxed); }

void Shape::validate() const {
  for (Index d : dims) {
    if (d < 1) fail("shape: every extent must be >= 1, got " + str());
  }
}

Index Shape::numel() const {
  Index n = 1;
  for (Index d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  require(!shape_.dims.empty(), "tensor: rank-0 shape");
  if (!std::isfinite(fill)) fail("tensor: non-finite fill value");
  data_ = Storage::Constant(shape_.numel(), fill);
}

Tensor::Tensor(Shape shape, const std::vector<double>& values) : shape_(std::move(shape)) {
  require(!shape_.dims.empty(), "tensor: rank-0 shape");
  if (static_cast<Index>(values.size()) != shape_.numel()) {
    fail("tensor: value list length " + std::to_string(values.size()) +
         " does not match shape " + shape_.str());
  }
  data_.resize(shape_.numel());
  for (Index i = 0; i < shape_.numel(); ++i) {
    if (!std::isfinite(values[static_cast<size_t>(i)])) fail("tensor: non-finite value in list");
    data_[i] = values[static_cast<size_t>(i)];
  }
}

Tensor Tensor::wrap(Shape shape, Storage data) {
  Tensor t;
  if (static_cast<Index>(data.size()) != shape.numel()) {
    fail("tensor: storage size does not match shape " + shape.str());
  }
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

double Tensor::at(std::initializer_list<Index> idx) const {
  require(static_cast<Index>(idx.size()) == rank(), "at: index rank mismatch");
  Index flat = 0;
  Index i = 0;
  for (Index v : idx) {
    require(v >= 0 && v < shape_[i], "at: index out of range");
    flat = flat * shape_[i] + v;
    ++i;
  }
  return data_[flat];
}

ComplexTensor::ComplexTensor(Tensor r, Tensor i) : re(std::move(r)), im(std::move(i)) {
  require(re.shape() == im.shape(), "complex tensor: re/im shape mismatch " +
                                        re.shape().str() + " vs " + im.shape().str());
}

ComplexTensor ComplexTensor::zeros(Shape shape) {
  return ComplexTensor(Tensor::zeros(shape), Tensor::zeros(shape));
}

Tensor checked(const char* op, Tensor t) {
  if (debug_checks_enabled()) {
    if (!t.array().isFinite().all()) {
      throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
    }
  }
  return t;
}

namespace {

enum class Broadcast { Same, Scalar, Channel };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.numel() == 1) return Broadcast::Scalar;
  if (b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.dim(0)) return Broadcast::Channel;
  fail("map2: incompatible shapes " + a.shape().str() + " vs " + b.shape().str());
}

double apply_op(Map2Op op, double x, double y) {
  switch (op) {
    case Map2Op::Add: return x + y;
    case Map2Op::Sub: return x - y;
    case Map2Op::Mul: return x * y;
    case Map2Op::Div: return x / y;
    case Map2Op::Max: return x > y ? x : y;
  }
  fail("map2: unknown op");
}

const char* op_name(Map2Op op) {
  switch (op) {
    case Map2Op::Add: return "add";
    case Map2Op::Sub: return "sub";
    case Map2Op::Mul: return "mul";
    case Map2Op::Div: return "div";
    case Map2Op::Max: return "max";
  }
  return "?";
}

}  // namespace

Tensor map2(const Tensor& a, const Tensor& b, Map2Op op) {
  const Broadcast kind = broadcast_kind(a, b);
  Tensor::Storage out(a.numel());
  switch (kind) {
    case Broadcast::Same:
      switch (op) {
        case Map2Op::Add: out = a.array() + b.array(); break;
        case Map2Op::Sub: out = a.array() - b.array(); break;
        case Map2Op::Mul: out = a.array() * b.array(); break;
        case Map2Op::Div: out = a.array() / b.array(); break;
        case Map2Op::Max: out = a.array().max(b.array()); break;
      }
      break;
    case Broadcast::Scalar: {
      const double s = b[0];
      for (Index i = 0; i < a.numel(); ++i) out[i] = apply_op(op, a[i], s);
      break;
    }
    case Broadcast::Channel: {
      const Index c = a.dim(0);
      const Index inner = a.numel() / c;
      for (Index ci = 0; ci < c; ++ci) {
        const double s = b[ci];
        for (Index i = 0; i < inner; ++i) {
          out[ci * inner + i] = apply_op(op, a[ci * inner + i], s);
        }
      }
      break;
    }
  }
  return checked(op_name(op), Tensor::wrap(a.shape(), std::move(out)));
}

Tensor add(const Tensor& a, const Tensor& b) { return map2(a, b, Map2Op::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return map2(a, b, Map2Op::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return map2(a, b, Map2Op::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return map2(a, b, Map2Op::Div); }
Tensor maximum(const Tensor& a, const Tensor& b) { return map2(a, b, Map2Op::Max); }

Tensor add_scalar(const Tensor& a, double s) {
  return checked("add_scalar", Tensor::wrap(a.shape(), a.array() + s));
}

Tensor mul_scalar(const Tensor& a, double s) {
  return checked("mul_scalar", Tensor::wrap(a.shape(), a.array() * s));
}

Tensor neg(const Tensor& a) { return Tensor::wrap(a.shape(), -a.array()); }
Tensor abs(const Tensor& a) { return Tensor::wrap(a.shape(), a.array().abs()); }
Tensor square(const Tensor& a) { return Tensor::wrap(a.shape(), a.array().square()); }

Tensor sqrt(const Tensor& a) {
  return checked("sqrt", Tensor::wrap(a.shape(), a.array().sqrt()));
}

Tensor exp(const Tensor& a) {
  return checked("exp", Tensor::wrap(a.shape(), a.array().exp()));
}

Tensor log1p(const Tensor& a) {
  Tensor::Storage out(a.numel());
  for (Index i = 0; i < a.numel(); ++i) out[i] = std::log1p(a[i]);
  return checked("log1p", Tensor::wrap(a.shape(), std::move(out)));
}

Tensor cos(const Tensor& a) { return Tensor::wrap(a.shape(), a.array().cos()); }
Tensor sin(const Tensor& a) { return Tensor::wrap(a.shape(), a.array().sin()); }

Tensor sigmoid(const Tensor& a) {
  Tensor::Storage out(a.numel());
  for (Index i = 0; i < a.numel(); ++i) {
    const double v = a[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return Tensor::wrap(a.shape(), std::move(out));
}

Tensor softplus(const Tensor& a) {
  Tensor::Storage out(a.numel());
  for (Index i = 0; i < a.numel(); ++i) {
    const double v = a[i];
    // log(1+exp(v)) without overflow for large v
    out[i] = v > 30.0 ? v : std::log1p(std::exp(v));
  }
  return Tensor::wrap(a.shape(), std::move(out));
}

Tensor leaky_relu(const Tensor& a, double slope) {
  Tensor::Storage out(a.numel());
  for (Index i = 0; i < a.numel(); ++i) out[i] = a[i] > 0.0 ? a[i] : slope * a[i];
  return Tensor::wrap(a.shape(), std::move(out));
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor atan2(const Tensor& y, const Tensor& x) {
  require(y.shape() == x.shape(), "atan2: shape mismatch");
  Tensor::Storage out(y.numel());
  for (Index i = 0; i < y.numel(); ++i) out[i] = std::atan2(y[i], x[i]);
  return Tensor::wrap(y.shape(), std::move(out));
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return Tensor::wrap(a.shape(), a.array().max(lo).min(hi));
}

Tensor where(const Tensor& mask, const Tensor& a, const Tensor& b) {
  require(mask.shape() == a.shape() && a.shape() == b.shape(), "where: shape mismatch");
  Tensor::Storage out(a.numel());
  for (Index i = 0; i < a.numel(); ++i) out[i] = mask[i] != 0.0 ? a[i] : b[i];
  return Tensor::wrap(a.shape(), std::move(out));
}

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const MatRM>;

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 tensors required");
  require(a.dim(1) == b.dim(0), "matmul: inner dims differ, " + a.shape().str() +
                                    " x " + b.shape().str());
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  MatRM out(m, n);
  out.noalias() = MapMat(a.data(), m, k) * MapMat(b.data(), k, n);
  Tensor::Storage flat = Eigen::Map<Tensor::Storage>(out.data(), m * n);
  return checked("matmul", Tensor::wrap(Shape{m, n}, std::move(flat)));
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: rank-2 tensor required");
  const Index m = a.dim(0), n = a.dim(1);
  MatRM out = MapMat(a.data(), m, n).transpose();
  Tensor::Storage flat = Eigen::Map<Tensor::Storage>(out.data(), m * n);
  return Tensor::wrap(Shape{n, m}, std::move(flat));
}

namespace {

void check_conv_args(const Tensor& x, const Tensor& k, Index stride, Index pad) {
  require(x.rank() == 3, "conv2d: input must be [C,H,W]");
  require(k.rank() == 4, "conv2d: kernel must be [O,C,kh,kw]");
  require(k.dim(1) == x.dim(0), "conv2d: channel mismatch, input " + x.shape().str() +
                                    " kernel " + k.shape().str());
  require(k.dim(2) % 2 == 1 && k.dim(3) % 2 == 1, "conv2d: kernel extents must be odd");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(pad >= 0, "conv2d: pad must be >= 0");
  const Index h = x.dim(1), w = x.dim(2), kh = k.dim(2), kw = k.dim(3);
  require((h + 2 * pad - kh) % stride == 0 && (w + 2 * pad - kw) % stride == 0,
          "conv2d: non-integral output size");
  require(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d: kernel larger than padded input");
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, Index stride, Index pad) {
  check_conv_args(x, k, stride, pad);
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index ho = (h + 2 * pad - kh) / stride + 1;
  const Index wo = (w + 2 * pad - kw) / stride + 1;

  // im2col followed by one GEMM
  const Index patch = c * kh * kw;
  MatRM cols(patch, ho * wo);
  cols.setZero();
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        const Index row = (ci * kh + ky) * kw + kx;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const double* src = x.data() + (ci * h + iy) * w;
          double* dst = cols.data() + row * (ho * wo) + oy * wo;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) dst[ox] = src[ix];
          }
        }
      }
    }
  }
  MatRM out(o, ho * wo);
  out.noalias() = MapMat(k.data(), o, patch) * cols;
  Tensor::Storage flat = Eigen::Map<Tensor::Storage>(out.data(), o * ho * wo);
  return checked("conv2d", Tensor::wrap(Shape{o, ho, wo}, std::move(flat)));
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& k, const Tensor& dout,
                            Index stride, Index pad) {
  check_conv_args(x, k, stride, pad);
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index ho = dout.dim(1), wo = dout.dim(2);
  require(dout.rank() == 3 && dout.dim(0) == o, "conv2d_backward: bad dout shape");

  Tensor::Storage dx = Tensor::Storage::Zero(x.numel());
  Tensor::Storage dk = Tensor::Storage::Zero(k.numel());
  for (Index oi = 0; oi < o; ++oi) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        const double g = dout[(oi * ho + oy) * wo + ox];
        if (g == 0.0) continue;
        for (Index ci = 0; ci < c; ++ci) {
          for (Index ky = 0; ky < kh; ++ky) {
            const Index iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (Index kx = 0; kx < kw; ++kx) {
              const Index ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              const Index xi = (ci * h + iy) * w + ix;
              const Index kidx = ((oi * c + ci) * kh + ky) * kw + kx;
              dx[xi] += g * k[kidx];
              dk[kidx] += g * x[xi];
            }
          }
        }
      }
    }
  }
  return {Tensor::wrap(x.shape(), std::move(dx)), Tensor::wrap(k.shape(), std::move(dk))};
}

Tensor filter2d_valid(const Tensor& x, const Tensor& kernel2d) {
  require(x.rank() == 3, "filter2d: input must be [C,H,W]");
  require(kernel2d.rank() == 2, "filter2d: kernel must be [kh,kw]");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index kh = kernel2d.dim(0), kw = kernel2d.dim(1);
  require(h >= kh && w >= kw, "filter2d: input smaller than kernel");
  const Index ho = h - kh + 1, wo = w - kw + 1;
  Tensor::Storage out = Tensor::Storage::Zero(c * ho * wo);
  for (Index ci = 0; ci < c; ++ci) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (Index ky = 0; ky < kh; ++ky) {
          const double* src = x.data() + (ci * h + oy + ky) * w + ox;
          const double* kr = kernel2d.data() + ky * kw;
          for (Index kx = 0; kx < kw; ++kx) acc += src[kx] * kr[kx];
        }
        out[(ci * ho + oy) * wo + ox] = acc;
      }
    }
  }
  return checked("filter2d", Tensor::wrap(Shape{c, ho, wo}, std::move(out)));
}

Tensor filter2d_valid_backward_input(const Tensor& kernel2d, const Tensor& dout,
                                     Index h, Index w) {
  const Index c = dout.dim(0), ho = dout.dim(1), wo = dout.dim(2);
  const Index kh = kernel2d.dim(0), kw = kernel2d.dim(1);
  Tensor::Storage dx = Tensor::Storage::Zero(c * h * w);
  for (Index ci = 0; ci < c; ++ci) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        const double g = dout[(ci * ho + oy) * wo + ox];
        if (g == 0.0) continue;
        for (Index ky = 0; ky < kh; ++ky) {
          double* dst = dx.data() + (ci * h + oy + ky) * w + ox;
          const double* kr = kernel2d.data() + ky * kw;
          for (Index kx = 0; kx < kw; ++kx) dst[kx] += g * kr[kx];
        }
      }
    }
  }
  return Tensor::wrap(Shape{c, h, w}, std::move(dx));
}

Tensor resample2x(const Tensor& x, ResampleDir dir, ResampleMode mode) {
  require(x.rank() == 3, "resample2x: input must be [C,H,W]");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (dir == ResampleDir::Down) {
    require(h % 2 == 0 && w % 2 == 0, "resample2x: down requires even extents, got " +
                                          x.shape().str());
    const Index ho = h / 2, wo = w / 2;
    Tensor::Storage out(c * ho * wo);
    for (Index ci = 0; ci < c; ++ci) {
      for (Index oy = 0; oy < ho; ++oy) {
        for (Index ox = 0; ox < wo; ++ox) {
          const Index base = (ci * h + 2 * oy) * w + 2 * ox;
          double v;
          if (mode == ResampleMode::Nearest) {
            v = x[base];
          } else {
            v = 0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
          }
          out[(ci * ho + oy) * wo + ox] = v;
        }
      }
    }
    return Tensor::wrap(Shape{c, ho, wo}, std::move(out));
  }
  const Index ho = h * 2, wo = w * 2;
  Tensor::Storage out(c * ho * wo);
  for (Index ci = 0; ci < c; ++ci) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        double v;
        if (mode == ResampleMode::Nearest) {
          v = x[(ci * h + oy / 2) * w + ox / 2];
        } else {
          // half-pixel centers with edge clamp
          const double sy = (oy + 0.5) / 2.0 - 0.5;
          const double sx = (ox + 0.5) / 2.0 - 0.5;
          const Index y0 = static_cast<Index>(std::floor(sy));
          const Index x0 = static_cast<Index>(std::floor(sx));
          const double fy = sy - y0, fx = sx - x0;
          auto sample = [&](Index yy, Index xx) {
            yy = std::clamp<Index>(yy, 0, h - 1);
            xx = std::clamp<Index>(xx, 0, w - 1);
            return x[(ci * h + yy) * w + xx];
          };
          v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
              fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
        }
        out[(ci * ho + oy) * wo + ox] = v;
      }
    }
  }
  return Tensor::wrap(Shape{c, ho, wo}, std::move(out));
}

Tensor resample2x_backward(const Tensor& dout, ResampleDir dir, ResampleMode mode,
                           Index src_h, Index src_w) {
  const Index c = dout.dim(0), ho = dout.dim(1), wo = dout.dim(2);
  Tensor::Storage dx = Tensor::Storage::Zero(c * src_h * src_w);
  if (dir == ResampleDir::Down) {
    for (Index ci = 0; ci < c; ++ci) {
      for (Index oy = 0; oy < ho; ++oy) {
        for (Index ox = 0; ox < wo; ++ox) {
          const double g = dout[(ci * ho + oy) * wo + ox];
          const Index base = (ci * src_h + 2 * oy) * src_w + 2 * ox;
          if (mode == ResampleMode::Nearest) {
            dx[base] += g;
          } else {
            dx[base] += 0.25 * g;
            dx[base + 1] += 0.25 * g;
            dx[base + src_w] += 0.25 * g;
            dx[base + src_w + 1] += 0.25 * g;
          }
        }
      }
    }
  } else {
    for (Index ci = 0; ci < c; ++ci) {
      for (Index oy = 0; oy < ho; ++oy) {
        for (Index ox = 0; ox < wo; ++ox) {
          const double g = dout[(ci * ho + oy) * wo + ox];
          if (mode == ResampleMode::Nearest) {
            dx[(ci * src_h + oy / 2) * src_w + ox / 2] += g;
          } else {
            const double sy = (oy + 0.5) / 2.0 - 0.5;
            const double sx = (ox + 0.5) / 2.0 - 0.5;
            const Index y0 = static_cast<Index>(std::floor(sy));
            const Index x0 = static_cast<Index>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            auto scatter = [&](Index yy, Index xx, double wgt) {
              yy = std::clamp<Index>(yy, 0, src_h - 1);
              xx = std::clamp<Index>(xx, 0, src_w - 1);
              dx[(ci * src_h + yy) * src_w + xx] += wgt * g;
            };
            scatter(y0, x0, (1 - fy) * (1 - fx));
            scatter(y0, x0 + 1, (1 - fy) * fx);
            scatter(y0 + 1, x0, fy * (1 - fx));
            scatter(y0 + 1, x0 + 1, fy * fx);
          }
        }
      }
    }
  }
  return Tensor::wrap(Shape{c, src_h, src_w}, std::move(dx));
}

Stats reduce_stats(const Tensor& x, const std::vector<Index>& axes) {
  require(!axes.empty(), "reduce_stats: empty axis selection");
  std::vector<bool> reduced(static_cast<size_t>(x.rank()), false);
  for (Index a : axes) {
    require(a >= 0 && a < x.rank(), "reduce_stats: axis out of range");
    reduced[static_cast<size_t>(a)] = true;
  }
  std::vector<Index> out_dims;
  for (Index i = 0; i < x.rank(); ++i) {
    if (!reduced[static_cast<size_t>(i)]) out_dims.push_back(x.dim(i));
  }
  if (out_dims.empty()) out_dims.push_back(1);
  Shape out_shape(out_dims);

  // group elements by their unreduced coordinates
  std::vector<Index> strides(static_cast<size_t>(x.rank()), 1);
  for (Index d = x.rank() - 2; d >= 0; --d) {
    strides[static_cast<size_t>(d)] = strides[static_cast<size_t>(d + 1)] * x.dim(d + 1);
  }
  std::vector<std::vector<double>> groups(static_cast<size_t>(out_shape.numel()));
  for (Index flat = 0; flat < x.numel(); ++flat) {
    Index rem = flat;
    Index out_flat = 0;
    for (Index d = 0; d < x.rank(); ++d) {
      const Index coord = rem / strides[static_cast<size_t>(d)];
      rem %= strides[static_cast<size_t>(d)];
      if (!reduced[static_cast<size_t>(d)]) out_flat = out_flat * x.dim(d) + coord;
    }
    groups[static_cast<size_t>(out_flat)].push_back(x[flat]);
  }

  Tensor::Storage mean_s(out_shape.numel()), med_s(out_shape.numel()),
      min_s(out_shape.numel()), max_s(out_shape.numel());
  for (size_t g = 0; g < groups.size(); ++g) {
    auto& v = groups[g];
    require(!v.empty(), "reduce_stats: empty reduction group");
    mean_s[static_cast<Index>(g)] =
        std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    min_s[static_cast<Index>(g)] = *std::min_element(v.begin(), v.end());
    max_s[static_cast<Index>(g)] = *std::max_element(v.begin(), v.end());
    // lower middle element for even counts
    const size_t mid = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    med_s[static_cast<Index>(g)] = v[mid];
  }
  return {Tensor::wrap(out_shape, std::move(mean_s)), Tensor::wrap(out_shape, std::move(med_s)),
          Tensor::wrap(out_shape, std::move(min_s)), Tensor::wrap(out_shape, std::move(max_s))};
}

double sum(const Tensor& a) { return a.array().sum(); }
double mean(const Tensor& a) { return a.array().mean(); }
double min_value(const Tensor& a) { return a.array().minCoeff(); }
double max_value(const Tensor& a) { return a.array().maxCoeff(); }
double max_abs(const Tensor& a) { return a.array().abs().maxCoeff(); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "max_abs_diff: shape mismatch");
  return (a.array() - b.array()).abs().maxCoeff();
}

Tensor channel_mean(const Tensor& x) {
  require(x.rank() >= 2, "channel_mean: rank >= 2 required");
  const Index c = x.dim(0);
  const Index inner = x.numel() / c;
  Tensor::Storage out(c);
  for (Index ci = 0; ci < c; ++ci) {
    out[ci] = x.array().segment(ci * inner, inner).mean();
  }
  return Tensor::wrap(Shape{c}, std::move(out));
}

namespace {

// reflect-101 fold of index i into [0, n)
Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace

Tensor pad_reflect(const Tensor& x, Index top, Index bottom, Index left, Index right) {
  require(x.rank() == 3, "pad_reflect: input must be [C,H,W]");
  require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "pad_reflect: negative pad");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index ho = h + top + bottom, wo = w + left + right;
  Tensor::Storage out(c * ho * wo);
  for (Index ci = 0; ci < c; ++ci) {
    for (Index oy = 0; oy < ho; ++oy) {
      const Index iy = reflect_index(oy - top, h);
      for (Index ox = 0; ox < wo; ++ox) {
        const Index ix = reflect_index(ox - left, w);
        out[(ci * ho + oy) * wo + ox] = x[(ci * h + iy) * w + ix];
      }
    }
  }
  return Tensor::wrap(Shape{c, ho, wo}, std::move(out));
}

Tensor pad_reflect_backward(const Tensor& dout, Index h, Index w,
                            Index top, Index bottom, Index left, Index right) {
  const Index c = dout.dim(0), ho = dout.dim(1), wo = dout.dim(2);
  require(ho == h + top + bottom && wo == w + left + right, "pad_reflect_backward: shape mismatch");
  Tensor::Storage dx = Tensor::Storage::Zero(c * h * w);
  for (Index ci = 0; ci < c; ++ci) {
    for (Index oy = 0; oy < ho; ++oy) {
      const Index iy = reflect_index(oy - top, h);
      for (Index ox = 0; ox < wo; ++ox) {
        const Index ix = reflect_index(ox - left, w);
        dx[(ci * h + iy) * w + ix] += dout[(ci * ho + oy) * wo + ox];
      }
    }
  }
  return Tensor::wrap(Shape{c, h, w}, std::move(dx));
}

Tensor crop(const Tensor& x, Index y0, Index x0, Index h, Index w) {
  require(x.rank() == 3, "crop: input must be [C,H,W]");
  require(y0 >= 0 && x0 >= 0 && h >= 1 && w >= 1 && y0 + h <= x.dim(1) && x0 + w <= x.dim(2),
          "crop: window out of range");
  const Index c = x.dim(0), sh = x.dim(1), sw = x.dim(2);
  Tensor::Storage out(c * h * w);
  for (Index ci = 0; ci < c; ++ci) {
    for (Index y = 0; y < h; ++y) {
      const double* src = x.data() + (ci * sh + y0 + y) * sw + x0;
      std::copy(src, src + w, out.data() + (ci * h + y) * w);
    }
  }
  return Tensor::wrap(Shape{c, h, w}, std::move(out));
}

Tensor crop_backward(const Tensor& dout, Index y0, Index x0, Index h, Index w) {
  const Index c = dout.dim(0), ch = dout.dim(1), cw = dout.dim(2);
  Tensor::Storage dx = Tensor::Storage::Zero(c * h * w);
  for (Index ci = 0; ci < c; ++ci) {
    for (Index y = 0; y < ch; ++y) {
      const double* src = dout.data() + (ci * ch + y) * cw;
      double* dst = dx.data() + (ci * h + y0 + y) * w + x0;
      for (Index x = 0; x < cw; ++x) dst[x] += src[x];
    }
  }
  return Tensor::wrap(Shape{c, h, w}, std::move(dx));
}

Tensor concat_leading(const Tensor& a, const Tensor& b) {
  require(a.rank() == b.rank(), "concat: rank mismatch");
  for (Index i = 1; i < a.rank(); ++i) {
    require(a.dim(i) == b.dim(i), "concat: trailing extents differ");
  }
  std::vector<Index> dims = a.shape().dims;
  dims[0] += b.dim(0);
  Tensor::Storage out(a.numel() + b.numel());
  out.head(a.numel()) = a.array();
  out.tail(b.numel()) = b.array();
  return Tensor::wrap(Shape(dims), std::move(out));
}

Tensor slice_leading(const Tensor& x, Index c0, Index c1) {
  require(c0 >= 0 && c1 > c0 && c1 <= x.dim(0), "slice: range out of bounds");
  std::vector<Index> dims = x.shape().dims;
  dims[0] = c1 - c0;
  const Index inner = x.numel() / x.dim(0);
  Tensor::Storage out = x.array().segment(c0 * inner, (c1 - c0) * inner);
  return Tensor::wrap(Shape(dims), std::move(out));
}

Tensor tile_to_seq(const Tensor& x, Index patch) {
  require(x.rank() == 3, "tile_to_seq: input must be [C,H,W]");
  require(patch >= 1, "tile_to_seq: patch must be >= 1");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(h % patch == 0 && w % patch == 0,
          "tile_to_seq: extents " + x.shape().str() + " not divisible by patch " +
              std::to_string(patch));
  const Index th = h / patch, tw = w / patch;
  const Index l = th * tw, d = c * patch * patch;
  Tensor::Storage out(l * d);
  for (Index ty = 0; ty < th; ++ty) {
    for (Index tx = 0; tx < tw; ++tx) {
      const Index t = ty * tw + tx;
      for (Index ci = 0; ci < c; ++ci) {
        for (Index py = 0; py < patch; ++py) {
          const double* src = x.data() + (ci * h + ty * patch + py) * w + tx * patch;
          double* dst = out.data() + t * d + (ci * patch + py) * patch;
          std::copy(src, src + patch, dst);
        }
      }
    }
  }
  return Tensor::wrap(Shape{l, d}, std::move(out));
}

Tensor seq_to_tile(const Tensor& seq, Index c, Index h, Index w, Index patch) {
  require(seq.rank() == 2, "seq_to_tile: input must be [L,d]");
  const Index th = h / patch, tw = w / patch;
  require(seq.dim(0) == th * tw && seq.dim(1) == c * patch * patch,
          "seq_to_tile: sequence shape does not match target");
  Tensor::Storage out(c * h * w);
  const Index d = seq.dim(1);
  for (Index ty = 0; ty < th; ++ty) {
    for (Index tx = 0; tx < tw; ++tx) {
      const Index t = ty * tw + tx;
      for (Index ci = 0; ci < c; ++ci) {
        for (Index py = 0; py < patch; ++py) {
          const double* src = seq.data() + t * d + (ci * patch + py) * patch;
          double* dst = out.data() + (ci * h + ty * patch + py) * w + tx * patch;
          std::copy(src, src + patch, dst);
        }
      }
    }
  }
  return Tensor::wrap(Shape{c, h, w}, std::move(out));
}

Tensor reverse_leading(const Tensor& x) {
  const Index n = x.dim(0);
  const Index inner = x.numel() / n;
  Tensor::Storage out(x.numel());
  for (Index i = 0; i < n; ++i) {
    out.segment(i * inner, inner) = x.array().segment((n - 1 - i) * inner, inner);
  }
  return Tensor::wrap(x.shape(), std::move(out));
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape.numel() == x.numel(), "reshape: element count changes, " + x.shape().str() +
                                          " -> " + shape.str());
  return Tensor::wrap(std::move(shape), x.array());
}

double rand_uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

double rand_normal(std::mt19937_64& rng, double stddev) {
  // Box-Muller; keeps the draw deterministic across standard libraries
  double u1 = rand_uniform(rng, 0.0, 1.0);
  const double u2 = rand_uniform(rng, 0.0, 1.0);
  if (u1 < 1e-300) u1 = 1e-300;
  return stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Tensor rand_uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor::Storage out(shape.numel());
  for (Index i = 0; i < shape.numel(); ++i) out[i] = rand_uniform(rng, lo, hi);
  return Tensor::wrap(std::move(shape), std::move(out));
}

Tensor rand_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor::Storage out(shape.numel());
  for (Index i = 0; i < shape.numel(); ++i) out[i] = rand_normal(rng, stddev);
  return Tensor::wrap(std::move(shape), std::move(out));
}

}  // namespace xpm
