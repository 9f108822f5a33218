#include "xpm/spectral.hpp"

#include <doctest.h>

#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

using namespace xpm;

namespace {

ComplexTensor rand_complex(Shape s, std::mt19937_64& rng) {
  return ComplexTensor(rand_uniform(s, -1, 1, rng), rand_uniform(s, -1, 1, rng));
}

}  // namespace

TEST_CASE("fft2: impulse and constant images") {
  Tensor delta = Tensor::zeros(Shape{1, 4, 4});
  delta.raw()[0] = 1.0;
  FreqImage f = fft2(delta);
  for (Index i = 0; i < 16; ++i) {
    CHECK(f.spectrum.re[i] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(f.spectrum.im[i]) <= 1e-12);
  }

  const double c = 0.37;
  FreqImage fc = fft2(Tensor(Shape{1, 4, 4}, c));
  CHECK(fc.spectrum.re[0] == doctest::Approx(16.0 * c).epsilon(1e-12));
  for (Index i = 1; i < 16; ++i) {
    CHECK(std::abs(fc.spectrum.re[i]) <= 1e-12);
    CHECK(std::abs(fc.spectrum.im[i]) <= 1e-12);
  }

  CHECK_THROWS(fft2(Tensor(Shape{1, 3, 4}, 0.0)));
}

TEST_CASE("fft2 matches the naive double-sum DFT oracle") {
  std::mt19937_64 rng(41);
  for (Index n : {8, 16}) {
    Tensor x = rand_uniform(Shape{1, n, n}, -1, 1, rng);
    FreqImage f = fft2(x);
    ComplexTensor ref = oracle::dft2(ComplexTensor(x, Tensor::zeros(x.shape())), -1);
    CHECK(max_abs_diff(f.spectrum.re, ref.re) <= 1e-10);
    CHECK(max_abs_diff(f.spectrum.im, ref.im) <= 1e-10);
  }
}

TEST_CASE("ifft2: round trip, inverse of delta, Parseval") {
  std::mt19937_64 rng(43);
  Tensor x = rand_uniform(Shape{2, 8, 8}, -1, 1, rng);
  FreqImage f = fft2(x);
  CHECK(max_abs_diff(ifft2(f), x) <= 1e-10);

  // all-ones spectrum inverts to an impulse at the origin
  FreqImage ones{ComplexTensor(Tensor(Shape{1, 4, 4}, 1.0), Tensor::zeros(Shape{1, 4, 4}))};
  Tensor imp = ifft2(ones);
  CHECK(imp[0] == doctest::Approx(1.0).epsilon(1e-12));
  for (Index i = 1; i < 16; ++i) CHECK(std::abs(imp[i]) <= 1e-12);

  // Parseval: sum |x|^2 = (1/HW) sum |F|^2
  const double spatial = sum(square(x));
  const double spectral =
      (sum(square(f.spectrum.re)) + sum(square(f.spectrum.im))) / 64.0;
  CHECK(std::abs(spatial - spectral) <= 1e-9);

  // corrupted (non-symmetric) spectrum is rejected under the strict policy
  FreqImage bad = f;
  bad.spectrum.im.raw()[3] += 1.0;
  CHECK_THROWS(ifft2(bad));
  CHECK_NOTHROW(ifft2(bad, ImagPolicy::TakeReal));
}

TEST_CASE("fft2 linearity") {
  std::mt19937_64 rng(47);
  Tensor x = rand_uniform(Shape{1, 8, 8}, -1, 1, rng);
  Tensor y = rand_uniform(Shape{1, 8, 8}, -1, 1, rng);
  const double a = 1.7, b = -0.4;
  FreqImage lhs = fft2(add(mul_scalar(x, a), mul_scalar(y, b)));
  FreqImage fx = fft2(x);
  FreqImage fy = fft2(y);
  Tensor rhs_re = add(mul_scalar(fx.spectrum.re, a), mul_scalar(fy.spectrum.re, b));
  Tensor rhs_im = add(mul_scalar(fx.spectrum.im, a), mul_scalar(fy.spectrum.im, b));
  CHECK(max_abs_diff(lhs.spectrum.re, rhs_re) <= 1e-10);
  CHECK(max_abs_diff(lhs.spectrum.im, rhs_im) <= 1e-10);
}

TEST_CASE("real input gives a conjugate-symmetric spectrum") {
  std::mt19937_64 rng(53);
  Tensor x = rand_uniform(Shape{1, 8, 8}, -1, 1, rng);
  FreqImage f = fft2(x);
  const Index h = 8, w = 8;
  for (Index u = 0; u < h; ++u) {
    for (Index v = 0; v < w; ++v) {
      const Index mu = (h - u) % h, mv = (w - v) % w;
      CHECK(std::abs(f.spectrum.re.at({0, u, v}) - f.spectrum.re.at({0, mu, mv})) <= 1e-10);
      CHECK(std::abs(f.spectrum.im.at({0, u, v}) + f.spectrum.im.at({0, mu, mv})) <= 1e-10);
    }
  }
}

TEST_CASE("split/merge amplitude and phase") {
  // 3-4-5 triangle
  ComplexTensor c(Tensor(Shape{1, 1, 1}, 3.0), Tensor(Shape{1, 1, 1}, 4.0));
  AmpPhase ap = split_amp_phase(FreqImage{c});
  CHECK(ap.amplitude[0] == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(ap.phase[0] == doctest::Approx(std::atan2(4.0, 3.0)).epsilon(1e-15));

  // zero bin convention
  AmpPhase zp = split_amp_phase(FreqImage{ComplexTensor::zeros(Shape{1, 1, 1})});
  CHECK(zp.amplitude[0] == 0.0);
  CHECK(zp.phase[0] == 0.0);

  // merge basics
  FreqImage m1 = merge_amp_phase({Tensor(Shape{1}, 1.0), Tensor(Shape{1}, 0.0)});
  CHECK(m1.spectrum.re[0] == 1.0);
  CHECK(m1.spectrum.im[0] == 0.0);
  FreqImage m2 = merge_amp_phase({Tensor(Shape{1}, 2.0), Tensor(Shape{1}, M_PI / 2)});
  CHECK(std::abs(m2.spectrum.re[0]) <= 1e-12);
  CHECK(m2.spectrum.im[0] == doctest::Approx(2.0).epsilon(1e-12));

  CHECK_THROWS(merge_amp_phase({Tensor(Shape{1}, -0.1), Tensor(Shape{1}, 0.0)}));

  // merge(split(f)) = f on random spectra
  std::mt19937_64 rng(59);
  ComplexTensor f = rand_complex(Shape{2, 4, 4}, rng);
  FreqImage back = merge_amp_phase(split_amp_phase(FreqImage{f}));
  CHECK(max_abs_diff(back.spectrum.re, f.re) <= 1e-10);
  CHECK(max_abs_diff(back.spectrum.im, f.im) <= 1e-10);
}

TEST_CASE("uniform_phase_shift: endpoints and decomposition identity") {
  std::mt19937_64 rng(61);
  Tensor x = rand_uniform(Shape{1, 16, 16}, 0, 1, rng);
  FreqImage f = fft2(x);

  FreqImage same = uniform_phase_shift(f, 0.0);
  CHECK(max_abs_diff(same.spectrum.re, f.spectrum.re) <= 1e-12);

  FreqImage flip = uniform_phase_shift(f, M_PI);
  CHECK(max_abs_diff(flip.spectrum.re, neg(f.spectrum.re)) <= 1e-12);
  CHECK(max_abs_diff(flip.spectrum.im, neg(f.spectrum.im)) <= 1e-12);

  // shifting every phase by dphi decomposes into cos(dphi)*I + sin(dphi)*J
  // where J is the inverse transform of i*F
  FreqImage itimes{ComplexTensor(neg(f.spectrum.im), f.spectrum.re)};
  Tensor j = ifft2(itimes, ImagPolicy::TakeReal);
  for (double dphi : {0.1, 0.7, M_PI / 3, 2.0}) {
    Tensor lhs = ifft2(uniform_phase_shift(f, dphi), ImagPolicy::TakeReal);
    Tensor rhs = add(mul_scalar(x, std::cos(dphi)), mul_scalar(j, std::sin(dphi)));
    CHECK(max_abs_diff(lhs, rhs) <= 1e-9);
  }
}

TEST_CASE("fft2 runtime scales near N log N") {
  // ratio of 256^2 to 128^2 wall time should sit near 4.4x; samples are
  // interleaved and reduced by median so frequency ramps cancel out, and the
  // test takes the best of three attempts
  set_debug_checks(false);
  auto once = [](const Tensor& x) {
    const auto t0 = std::chrono::steady_clock::now();
    FreqImage f = fft2(x);
    const auto t1 = std::chrono::steady_clock::now();
    (void)f;
    return std::chrono::duration<double>(t1 - t0).count();
  };
  Tensor small(Shape{1, 128, 128}, 0.5);
  Tensor large(Shape{1, 256, 256}, 0.5);
  once(small);
  once(large);
  bool ok = false;
  double ratio = 0.0;
  for (int attempt = 0; attempt < 3 && !ok; ++attempt) {
    std::vector<double> ts, tl;
    for (int rep = 0; rep < 15; ++rep) {
      ts.push_back(once(small));
      tl.push_back(once(large));
    }
    std::sort(ts.begin(), ts.end());
    std::sort(tl.begin(), tl.end());
    ratio = tl[7] / ts[7];
    ok = ratio >= 3.2 && ratio <= 6.0;
  }
  set_debug_checks(true);
  INFO("measured ratio ", ratio);
  CHECK(ok);
}
