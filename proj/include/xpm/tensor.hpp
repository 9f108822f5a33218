#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

namespace xpm {

using Index = std::int64_t;

// Ordered list of positive extents. Element count is the product of extents.
struct Shape {
  std::vector<Index> dims;

  Shape() = default;
  Shape(std::initializer_list<Index> d) : dims(d) { validate(); }
  explicit Shape(std::vector<Index> d) : dims(std::move(d)) { validate(); }

  Index rank() const { return static_cast<Index>(dims.size()); }
  Index numel() const;
  Index operator[](Index i) const { return dims[static_cast<size_t>(i)]; }
  bool operator==(const Shape& o) const { return dims == o.dims; }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const;

 private:
  void validate() const;
};

// Debug-mode scan: when enabled, every op output is checked for NaN/Inf and
// a violation throws naming the op. Enabled by default; benchmarks turn it off.
bool debug_checks_enabled();
void set_debug_checks(bool on);

// Dense row-major tensor of 64-bit floats. Semantically immutable after
// construction: ops are pure functions returning fresh tensors. The mutable
// accessors exist for kernels filling a tensor they are about to return.
class Tensor {
 public:
  using Storage = Eigen::ArrayXd;

  Tensor() = default;
  Tensor(Shape shape, double fill);
  Tensor(Shape shape, const std::vector<double>& values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  // Adopts storage without a finiteness scan; kernel-internal constructor.
  static Tensor wrap(Shape shape, Storage data);

  const Shape& shape() const { return shape_; }
  Index rank() const { return shape_.rank(); }
  Index numel() const { return shape_.numel(); }
  Index dim(Index i) const { return shape_[i]; }
  bool empty() const { return shape_.dims.empty(); }

  double operator[](Index i) const { return data_[i]; }
  double at(std::initializer_list<Index> idx) const;

  const Storage& array() const { return data_; }
  Storage& raw() { return data_; }
  const double* data() const { return data_.data(); }
  double* data() { return data_.data(); }

 private:
  Shape shape_;
  Storage data_;
};

// Real and imaginary planes of identical shape.
struct ComplexTensor {
  Tensor re;
  Tensor im;

  ComplexTensor() = default;
  ComplexTensor(Tensor r, Tensor i);
  const Shape& shape() const { return re.shape(); }
  static ComplexTensor zeros(Shape shape);
};

enum class Map2Op { Add, Sub, Mul, Div, Max };

// Elementwise binary op. b may have the same shape as a, be a scalar (one
// element), or be a vector matching a's leading (channel) axis; the two
// broadcast forms replicate b across the remaining axes.
Tensor map2(const Tensor& a, const Tensor& b, Map2Op op);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log1p(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor relu(const Tensor& a);
Tensor atan2(const Tensor& y, const Tensor& x);
Tensor clamp(const Tensor& a, double lo, double hi);
// out[i] = mask[i] != 0 ? a[i] : b[i]
Tensor where(const Tensor& mask, const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // rank-2 only

// Cross-correlation with zero padding: x [C,H,W], k [O,C,kh,kw] (kh,kw odd).
Tensor conv2d(const Tensor& x, const Tensor& k, Index stride, Index pad);
struct Conv2dGrads {
  Tensor dx;
  Tensor dk;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& k, const Tensor& dout,
                            Index stride, Index pad);

// Depthwise filtering with one shared 2D kernel, valid region only (no pad).
Tensor filter2d_valid(const Tensor& x, const Tensor& kernel2d);
Tensor filter2d_valid_backward_input(const Tensor& kernel2d, const Tensor& dout,
                                     Index h, Index w);

enum class ResampleDir { Down, Up };
enum class ResampleMode { Nearest, Bilinear };

// Down halves H,W (2x2 mean for bilinear, top-left sample for nearest);
// up doubles H,W (replication for nearest, half-pixel interpolation for
// bilinear). Down requires even extents.
Tensor resample2x(const Tensor& x, ResampleDir dir, ResampleMode mode);
Tensor resample2x_backward(const Tensor& dout, ResampleDir dir, ResampleMode mode,
                           Index src_h, Index src_w);

struct Stats {
  Tensor mean;
  Tensor median;  // lower middle element for even counts
  Tensor min;
  Tensor max;
};

// Reduces over the given axes; the result tensors carry the remaining axes
// (shape [1] when all axes are reduced).
Stats reduce_stats(const Tensor& x, const std::vector<Index>& axes);

double sum(const Tensor& a);
double mean(const Tensor& a);
double min_value(const Tensor& a);
double max_value(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
// Mean over axes 1..rank-1 per leading-axis slice; returns shape [C].
Tensor channel_mean(const Tensor& x);

// Reflective padding (mirrored without repeating the edge sample) of the two
// trailing axes of a [C,H,W] tensor. Pads larger than the extent fold back.
Tensor pad_reflect(const Tensor& x, Index top, Index bottom, Index left, Index right);
Tensor pad_reflect_backward(const Tensor& dout, Index h, Index w,
                            Index top, Index bottom, Index left, Index right);
Tensor crop(const Tensor& x, Index y0, Index x0, Index h, Index w);
// Scatters dout back into a zero tensor of extents [C,h,w] at (y0,x0).
Tensor crop_backward(const Tensor& dout, Index y0, Index x0, Index h, Index w);

Tensor concat_leading(const Tensor& a, const Tensor& b);
Tensor slice_leading(const Tensor& x, Index c0, Index c1);

// Cuts [C,H,W] into non-overlapping patch x patch tiles, flattened row-major
// into a [L, C*patch*patch] sequence with L = (H/patch)*(W/patch).
Tensor tile_to_seq(const Tensor& x, Index patch);
Tensor seq_to_tile(const Tensor& seq, Index c, Index h, Index w, Index patch);
// Reverses the leading axis.
Tensor reverse_leading(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

// Seeded draws use mt19937_64 with explicit bit-to-double mapping so the
// stream does not depend on the standard library's distribution objects.
double rand_uniform(std::mt19937_64& rng, double lo, double hi);
double rand_normal(std::mt19937_64& rng, double stddev);
Tensor rand_uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);
Tensor rand_normal(Shape shape, double stddev, std::mt19937_64& rng);

// Verifies every element is finite; throws naming `op` otherwise. Returns the
// tensor unchanged so kernels can wrap their result expression.
Tensor checked(const char* op, Tensor t);

}  // namespace xpm
