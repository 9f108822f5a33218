// Independent brute-force reference implementations used as test oracles.
// These deliberately avoid the library's kernels: plain loops only.
#pragma once

#include "xpm/tensor.hpp"

#include <complex>
#include <vector>

namespace oracle {

using xpm::Index;
using xpm::Tensor;

// naive triple-loop matrix product
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros(xpm::Shape{m, n});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (Index t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      out.raw()[i * n + j] = acc;
    }
  return out;
}

// direct sliding-window cross-correlation with zero padding
inline Tensor conv2d(const Tensor& x, const Tensor& k, Index stride, Index pad) {
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index ho = (h + 2 * pad - kh) / stride + 1;
  const Index wo = (w + 2 * pad - kw) / stride + 1;
  Tensor out = Tensor::zeros(xpm::Shape{o, ho, wo});
  for (Index oi = 0; oi < o; ++oi)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (Index ci = 0; ci < c; ++ci)
          for (Index ky = 0; ky < kh; ++ky)
            for (Index kx = 0; kx < kw; ++kx) {
              const Index iy = oy * stride + ky - pad;
              const Index ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x[(ci * h + iy) * w + ix] * k[((oi * c + ci) * kh + ky) * kw + kx];
            }
        out.raw()[(oi * ho + oy) * wo + ox] = acc;
      }
  return out;
}

// O(N^2) double-sum 2D DFT per channel; sign=-1 forward, +1 inverse (unnormalized)
inline xpm::ComplexTensor dft2(const xpm::ComplexTensor& x, int sign) {
  const Index c = x.re.dim(0), h = x.re.dim(1), w = x.re.dim(2);
  Tensor re = Tensor::zeros(x.re.shape());
  Tensor im = Tensor::zeros(x.re.shape());
  for (Index ci = 0; ci < c; ++ci)
    for (Index u = 0; u < h; ++u)
      for (Index v = 0; v < w; ++v) {
        std::complex<double> acc(0.0, 0.0);
        for (Index y = 0; y < h; ++y)
          for (Index xx = 0; xx < w; ++xx) {
            const double ang = sign * 2.0 * M_PI *
                               (static_cast<double>(u * y) / h + static_cast<double>(v * xx) / w);
            const std::complex<double> e(std::cos(ang), std::sin(ang));
            acc += std::complex<double>(x.re[(ci * h + y) * w + xx],
                                        x.im[(ci * h + y) * w + xx]) * e;
          }
        re.raw()[(ci * h + u) * w + v] = acc.real();
        im.raw()[(ci * h + u) * w + v] = acc.imag();
      }
  return xpm::ComplexTensor(std::move(re), std::move(im));
}

}  // namespace oracle
