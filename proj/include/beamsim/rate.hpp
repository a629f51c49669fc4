#pragma once

#include <span>
#include <vector>

#include "beamsim/numerics.hpp"

namespace beamsim {

/// Per-user channel blocks H_k (M x cols). Row space acts on the beamformer:
/// user k receives H_k * W * x.
using ChannelBlocks = std::span<const CMatrix>;

/// Sum_k log2(1 + |h_k W_k|^2 / (1 + sum_{i!=k} |h_k W_i|^2)); requires M = 1.
double sum_rate_miso(ChannelBlocks H, const CMatrix& W);

/// Sum_k log2 det(I + Sigma_k^{-1} H_k W_k W_k^H H_k^H),
/// Sigma_k = I + H_k (sum_{i!=k} W_i W_i^H) H_k^H.
double sum_rate_mimo(ChannelBlocks H, const CMatrix& W);

/// Dispatches on M.
double sum_rate(ChannelBlocks H, const CMatrix& W);

/// Analytical gradient of the sum rate, 2 * dR/d(conj W).
WirtingerGradient grad_sum_rate(ChannelBlocks H, const CMatrix& W);

/// d/dt grad_sum_rate(H, W + t V) at t = 0. Because the sum rate is real, this
/// is the real Hessian applied to V (in the realified coordinates).
CMatrix grad_sum_rate_directional(ChannelBlocks H, const CMatrix& W, const CMatrix& V);

/// MMSE teacher: W_k = sqrt(P/K) M H_k^H / ||M H_k^H||_F with
/// M = (I + (P/K) sum_i H_i^H H_i)^{-1}. Total power is exactly P.
CMatrix mmse_beamformer(ChannelBlocks H, double P);

struct RefinementTrace {
  std::vector<CMatrix> iterates;  // W_0 .. W_Q
  double eta_ga = 0.0;
  bool projected = false;
  double power_budget = 0.0;

  int steps() const { return static_cast<int>(iterates.size()) - 1; }
  const CMatrix& initial() const { return iterates.front(); }
  const CMatrix& final() const { return iterates.back(); }
};

struct RefineOptions {
  bool project = false;
  double power_budget = 1.0;  // only used when project is on
};

/// Q steps of W_q = W_{q-1} + eta_ga * grad_sum_rate(H_used, W_{q-1}).
RefinementTrace refine(const CMatrix& W0, ChannelBlocks H_used, double eta_ga, int Q,
                       const RefineOptions& options = {});

/// Pulls the loss gradient at W_Q back to W_0 through the unrolled ascent map,
/// by reverse accumulation with Hessian-vector products.
WirtingerGradient unrolled_pullback(ChannelBlocks H, const RefinementTrace& trace,
                                    const WirtingerGradient& grad_at_WQ);

/// Same quantity through explicit block Jacobians
///   S_q = [[dw_q/dw_{q-1}, dw_q/dw~_{q-1}], [dw~_q/dw_{q-1}, dw~_q/dw~_{q-1}]]
/// multiplied forward from q = 1 to Q (w~ = conj w). Dense, O((2n)^3) per step.
WirtingerGradient unrolled_pullback_dense(ChannelBlocks H, const RefinementTrace& trace,
                                          const WirtingerGradient& grad_at_WQ);

/// Product S_Q ... S_1 in the (w, conj w) block basis, 2n x 2n with n = W.size().
CMatrix unrolled_jacobian_dense(ChannelBlocks H, const RefinementTrace& trace);

/// ||W||_F^2
inline double beam_power(const CMatrix& W) { return W.squaredNorm(); }

}  // namespace beamsim
