#pragma once

#include "xpm/tensor.hpp"

#include <complex>
#include <vector>

namespace xpm {

// Per-channel 2D DFT of a [C,H,W] tensor, unnormalized forward convention;
// the inverse carries the 1/(H*W) factor.
struct FreqImage {
  ComplexTensor spectrum;
};

// Modulus/argument planes of a spectrum. Phase lies in (-pi, pi]; the phase
// of a zero bin is 0 by convention.
struct AmpPhase {
  Tensor amplitude;
  Tensor phase;
};

enum class ImagPolicy {
  // error when the inverse transform leaves imaginary residue above 1e-9
  Strict,
  // keep the real plane regardless of residue (model-internal spectra are
  // not conjugate-symmetric once the amplitude/phase paths learn)
  TakeReal,
};

// Requires power-of-two H and W.
FreqImage fft2(const Tensor& x);
Tensor ifft2(const FreqImage& f, ImagPolicy policy = ImagPolicy::Strict);

AmpPhase split_amp_phase(const FreqImage& f);
FreqImage merge_amp_phase(const AmpPhase& ap);

// Multiplies every bin by exp(i*dphi).
FreqImage uniform_phase_shift(const FreqImage& f, double dphi);

// Raw per-plane kernels shared with the autograd wrappers. `inverse` applies
// the conjugate transform without any normalization factor.
ComplexTensor dft2_raw(const ComplexTensor& x, bool inverse);

}  // namespace xpm
