#include "xpm/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace xpm {

namespace {

using cd = std::complex<double>;

bool is_pow2(Index n) { return n >= 1 && (n & (n - 1)) == 0; }

// Twiddle table for size n: w[k] = exp(sign*2*pi*i*k/n), k in [0, n/2);
// one table per direction so the butterfly loop carries no branch.
const std::vector<cd>& twiddles(Index n, bool inverse) {
  static std::map<std::pair<Index, bool>, std::vector<cd>> cache;
  const auto key = std::make_pair(n, inverse);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<cd> w(static_cast<size_t>(n / 2));
  const double sign = inverse ? 2.0 : -2.0;
  for (Index k = 0; k < n / 2; ++k) {
    const double a = sign * M_PI * static_cast<double>(k) / static_cast<double>(n);
    w[static_cast<size_t>(k)] = cd(std::cos(a), std::sin(a));
  }
  return cache.emplace(key, std::move(w)).first->second;
}

// Iterative radix-2 Cooley-Tukey, in place, unnormalized in both directions.
void fft1d(cd* v, Index n, bool inverse) {
  if (n == 1) return;
  // bit reversal permutation
  for (Index i = 1, j = 0; i < n; ++i) {
    Index bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(v[i], v[j]);
  }
  const cd* w = twiddles(n, inverse).data();
  for (Index len = 2; len <= n; len <<= 1) {
    const Index step = n / len;
    const Index half = len / 2;
    for (Index i = 0; i < n; i += len) {
      for (Index k = 0; k < half; ++k) {
        const cd tw = w[k * step];
        const cd lo = v[i + k];
        const cd hi = v[i + k + half] * tw;
        v[i + k] = lo + hi;
        v[i + k + half] = lo - hi;
      }
    }
  }
}

}  // namespace

ComplexTensor dft2_raw(const ComplexTensor& x, bool inverse) {
  if (x.re.rank() != 3) throw std::invalid_argument("fft2: input must be [C,H,W]");
  const Index c = x.re.dim(0), h = x.re.dim(1), w = x.re.dim(2);
  if (!is_pow2(h) || !is_pow2(w)) {
    throw std::invalid_argument("fft2: extents must be powers of two, got " +
                                x.re.shape().str());
  }
  Tensor::Storage out_re(x.re.numel()), out_im(x.re.numel());
  // row FFTs scattered transposed in strips, column FFTs on contiguous rows
  // of the flipped plane, then a strip-transposed scatter into the outputs;
  // every pass touches memory in contiguous runs
  thread_local std::vector<cd> strip, flipped;
  constexpr Index kStrip = 32;
  strip.resize(static_cast<size_t>(kStrip * std::max(h, w)));
  flipped.resize(static_cast<size_t>(h * w));
  for (Index ci = 0; ci < c; ++ci) {
    const Index base = ci * h * w;
    for (Index y0 = 0; y0 < h; y0 += kStrip) {
      const Index ny = std::min(kStrip, h - y0);
      for (Index dy = 0; dy < ny; ++dy) {
        cd* r = strip.data() + dy * w;
        const Index src = base + (y0 + dy) * w;
        for (Index xx = 0; xx < w; ++xx) r[xx] = cd(x.re[src + xx], x.im[src + xx]);
        fft1d(r, w, inverse);
      }
      for (Index x0 = 0; x0 < w; x0 += kStrip) {
        const Index nx = std::min(kStrip, w - x0);
        for (Index dx = 0; dx < nx; ++dx) {
          cd* dst = flipped.data() + (x0 + dx) * h + y0;
          for (Index dy = 0; dy < ny; ++dy) dst[dy] = strip[static_cast<size_t>(dy * w + x0 + dx)];
        }
      }
    }
    for (Index x0 = 0; x0 < w; x0 += kStrip) {
      const Index nx = std::min(kStrip, w - x0);
      for (Index dx = 0; dx < nx; ++dx) fft1d(flipped.data() + (x0 + dx) * h, h, inverse);
      for (Index y0 = 0; y0 < h; y0 += kStrip) {
        const Index ny = std::min(kStrip, h - y0);
        for (Index dy = 0; dy < ny; ++dy) {
          double* orow = out_re.data() + base + (y0 + dy) * w + x0;
          double* irow = out_im.data() + base + (y0 + dy) * w + x0;
          for (Index dx = 0; dx < nx; ++dx) {
            const cd v = flipped[static_cast<size_t>((x0 + dx) * h + y0 + dy)];
            orow[dx] = v.real();
            irow[dx] = v.imag();
          }
        }
      }
    }
  }
  return ComplexTensor(Tensor::wrap(x.re.shape(), std::move(out_re)),
                       Tensor::wrap(x.re.shape(), std::move(out_im)));
}

FreqImage fft2(const Tensor& x) {
  ComplexTensor in(x, Tensor::zeros(x.shape()));
  return FreqImage{dft2_raw(in, false)};
}

Tensor ifft2(const FreqImage& f, ImagPolicy policy) {
  ComplexTensor out = dft2_raw(f.spectrum, true);
  const double scale = 1.0 / static_cast<double>(f.spectrum.shape()[1] * f.spectrum.shape()[2]);
  Tensor re = mul_scalar(out.re, scale);
  if (policy == ImagPolicy::Strict) {
    const double residue = max_abs(out.im) * scale;
    if (residue > 1e-9) {
      throw std::runtime_error("ifft2: imaginary residue " + std::to_string(residue) +
                               " exceeds 1e-9; spectrum is not conjugate-symmetric");
    }
  }
  return re;
}

AmpPhase split_amp_phase(const FreqImage& f) {
  const Tensor& re = f.spectrum.re;
  const Tensor& im = f.spectrum.im;
  Tensor::Storage amp(re.numel()), ph(re.numel());
  for (Index i = 0; i < re.numel(); ++i) {
    amp[i] = std::hypot(re[i], im[i]);
    ph[i] = (re[i] == 0.0 && im[i] == 0.0) ? 0.0 : std::atan2(im[i], re[i]);
  }
  return {Tensor::wrap(re.shape(), std::move(amp)), Tensor::wrap(re.shape(), std::move(ph))};
}

FreqImage merge_amp_phase(const AmpPhase& ap) {
  if (ap.amplitude.shape() != ap.phase.shape()) {
    throw std::invalid_argument("merge_amp_phase: amplitude/phase shape mismatch");
  }
  if (min_value(ap.amplitude) < 0.0) {
    throw std::invalid_argument("merge_amp_phase: negative amplitude");
  }
  Tensor::Storage re(ap.amplitude.numel()), im(ap.amplitude.numel());
  for (Index i = 0; i < ap.amplitude.numel(); ++i) {
    re[i] = ap.amplitude[i] * std::cos(ap.phase[i]);
    im[i] = ap.amplitude[i] * std::sin(ap.phase[i]);
  }
  return FreqImage{ComplexTensor(Tensor::wrap(ap.amplitude.shape(), std::move(re)),
                                 Tensor::wrap(ap.amplitude.shape(), std::move(im)))};
}

FreqImage uniform_phase_shift(const FreqImage& f, double dphi) {
  const double c = std::cos(dphi), s = std::sin(dphi);
  const Tensor& re = f.spectrum.re;
  const Tensor& im = f.spectrum.im;
  Tensor::Storage out_re(re.numel()), out_im(re.numel());
  for (Index i = 0; i < re.numel(); ++i) {
    out_re[i] = re[i] * c - im[i] * s;
    out_im[i] = re[i] * s + im[i] * c;
  }
  return FreqImage{ComplexTensor(Tensor::wrap(re.shape(), std::move(out_re)),
                                 Tensor::wrap(re.shape(), std::move(out_im)))};
}

}  // namespace xpm
