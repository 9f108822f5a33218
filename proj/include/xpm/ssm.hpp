#pragma once

#include "xpm/autograd.hpp"
#include "xpm/tensor.hpp"

namespace xpm {

// Parameters of one scan direction. The continuous diagonal state matrix is
// A = -exp(a_log), strictly negative, so the discrete transition
// exp(delta*A) stays inside (0,1) for any positive step.
struct SsmParams {
  Index d_model = 0;
  Index d_state = 0;
  Tensor a_log;       // [d_model, d_state]
  Tensor w_b;         // [d_state, d_model]
  Tensor w_c;         // [d_state, d_model]
  Tensor w_delta;     // [d_model]
  Tensor delta_bias;  // [1]
  Tensor d_skip;      // [d_model]

  static SsmParams create(Index d_model, Index d_state, std::mt19937_64& rng);
  void validate() const;
};

enum class ScanOrigin { SpatialPatches, FreqAmplitude, FreqPhase };

struct ScanInput {
  Tensor seq;  // [L, d_model]
  ScanOrigin origin = ScanOrigin::SpatialPatches;
};

// Input-dependent per-step parameters under the simplified zero-order hold:
// delta_t = softplus(w_delta . x_t + delta_bias), abar_t = exp(delta_t * A),
// bbar_t = delta_t * (w_b . x_t), c_t = w_c . x_t.
struct SelectiveParams {
  Tensor delta;  // [L]
  Tensor abar;   // [L, d_model, d_state]
  Tensor bbar;   // [L, d_state]
  Tensor c;      // [L, d_state]
};

SelectiveParams selective_params(const SsmParams& p, const ScanInput& input);

// h_0 = 0; h_{t+1}[m,n] = abar_t[m,n]*h_t[m,n] + bbar_t[n]*x_t[m];
// y_t[m] = sum_n c_t[n]*h_{t+1}[m,n] + d_skip[m]*x_t[m].
Tensor scan_sequential(const SsmParams& p, const ScanInput& input);

// Same output contract, computed with the associative pair operator
// (a2,b2)o(a1,b1) = (a2*a1, a2*b1+b2) in a prefix-scan tree.
Tensor scan_parallel(const SsmParams& p, const ScanInput& input);

// Cuts fmap into non-overlapping patch x patch tiles flattened row-major,
// scans forward with p_fwd and in reversed tile order with p_bwd, averages
// the two passes and folds the sequence back to [C,H,W].
Tensor vss2d_forward(const SsmParams& p_fwd, const SsmParams& p_bwd,
                     const Tensor& fmap, Index patch);

// ---- autograd bindings -----------------------------------------------------

struct SsmParamVars {
  Index d_model = 0;
  Index d_state = 0;
  Var a_log;
  Var w_b;
  Var w_c;
  Var w_delta;
  Var delta_bias;
  Var d_skip;

  static SsmParamVars constants(const SsmParams& p);
  SsmParams values() const;
};

Var scan_sequential(const SsmParamVars& p, const Var& seq);
Var vss2d_forward(const SsmParamVars& p_fwd, const SsmParamVars& p_bwd,
                  const Var& fmap, Index patch);

}  // namespace xpm
