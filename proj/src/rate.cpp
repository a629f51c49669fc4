#include "beamsim/rate.hpp"

#include <cmath>
#include <string>

namespace beamsim {

namespace {

const double kInvLn2 = 1.0 / std::log(2.0);

struct Shape {
  Eigen::Index M;
  Eigen::Index cols;
  Eigen::Index K;
};

Shape check_shapes(ChannelBlocks H, const CMatrix& W, const char* who) {
  if (H.empty()) {
    throw InvalidArgument(std::string(who) + ": no users");
  }
  const Eigen::Index M = H.front().rows();
  const Eigen::Index cols = H.front().cols();
  for (const auto& Hk : H) {
    if (Hk.rows() != M || Hk.cols() != cols) {
      throw InvalidArgument(std::string(who) + ": channel blocks differ in shape");
    }
  }
  const auto K = static_cast<Eigen::Index>(H.size());
  if (W.rows() != cols || W.cols() != K * M) {
    throw InvalidArgument(std::string(who) + ": beamformer is " + std::to_string(W.rows()) + "x" +
                          std::to_string(W.cols()) + ", expected " + std::to_string(cols) + "x" +
                          std::to_string(K * M));
  }
  return {M, cols, K};
}

double log_det_hpd(const CMatrix& A) {
  Eigen::LLT<CMatrix> llt(A);
  if (llt.info() != Eigen::Success) {
    throw NumericFailure("log-det of a non positive-definite covariance");
  }
  double acc = 0.0;
  const CMatrix& L = llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    acc += std::log(L(i, i).real());
  }
  return 2.0 * acc;
}

// Per-user quantities shared by the gradient and its directional derivative.
struct UserTerms {
  CMatrix T;        // H_k W, M x KM
  CMatrix T_minus;  // T with user k's own block zeroed
  Eigen::LLT<CMatrix> A;
  Eigen::LLT<CMatrix> Sigma;
};

UserTerms user_terms(const CMatrix& Hk, const CMatrix& W, Eigen::Index k, Eigen::Index M) {
  UserTerms t;
  t.T = Hk * W;
  t.T_minus = t.T;
  t.T_minus.middleCols(k * M, M).setZero();
  const CMatrix I = CMatrix::Identity(M, M);
  t.A.compute(I + t.T * t.T.adjoint());
  t.Sigma.compute(I + t.T_minus * t.T_minus.adjoint());
  return t;
}

}  // namespace

double sum_rate_miso(ChannelBlocks H, const CMatrix& W) {
  const Shape s = check_shapes(H, W, "sum_rate_miso");
  if (s.M != 1) {
    throw InvalidArgument("sum_rate_miso: users must have a single antenna");
  }
  double rate = 0.0;
  for (Eigen::Index k = 0; k < s.K; ++k) {
    const Eigen::RowVectorXcd gains = H[k].row(0) * W;
    const double signal = std::norm(gains(k));
    double interference = 0.0;
    for (Eigen::Index i = 0; i < s.K; ++i) {
      if (i != k) {
        interference += std::norm(gains(i));
      }
    }
    rate += std::log1p(signal / (1.0 + interference));
  }
  return rate * kInvLn2;
}

double sum_rate_mimo(ChannelBlocks H, const CMatrix& W) {
  const Shape s = check_shapes(H, W, "sum_rate_mimo");
  double rate = 0.0;
  for (Eigen::Index k = 0; k < s.K; ++k) {
    const CMatrix T = H[k] * W;
    const CMatrix own = T.middleCols(k * s.M, s.M);
    CMatrix others = T;
    others.middleCols(k * s.M, s.M).setZero();
    const CMatrix I = CMatrix::Identity(s.M, s.M);
    const CMatrix Sigma = I + others * others.adjoint();
    const CMatrix A = Sigma + own * own.adjoint();
    rate += log_det_hpd(A) - log_det_hpd(Sigma);
  }
  return rate * kInvLn2;
}

double sum_rate(ChannelBlocks H, const CMatrix& W) {
  if (!H.empty() && H.front().rows() == 1) {
    return sum_rate_miso(H, W);
  }
  return sum_rate_mimo(H, W);
}

// R = sum_k [log det A_k - log det Sigma_k] / ln 2 with A_k = I + H_k W W^H H_k^H and
// Sigma_k the same product with user k's columns removed. d log det(I + X X^H)/d conj(X) =
// (I + X X^H)^{-1} X, so grad = (2/ln 2) sum_k H_k^H (A_k^{-1} T_k - Sigma_k^{-1} T_k^-).
WirtingerGradient grad_sum_rate(ChannelBlocks H, const CMatrix& W) {
  const Shape s = check_shapes(H, W, "grad_sum_rate");
  CMatrix grad = CMatrix::Zero(W.rows(), W.cols());
  for (Eigen::Index k = 0; k < s.K; ++k) {
    const UserTerms t = user_terms(H[k], W, k, s.M);
    const CMatrix inner = t.A.solve(t.T) - t.Sigma.solve(t.T_minus);
    grad.noalias() += H[k].adjoint() * inner;
  }
  grad *= 2.0 * kInvLn2;
  return grad;
}

CMatrix grad_sum_rate_directional(ChannelBlocks H, const CMatrix& W, const CMatrix& V) {
  const Shape s = check_shapes(H, W, "grad_sum_rate_directional");
  if (V.rows() != W.rows() || V.cols() != W.cols()) {
    throw InvalidArgument("grad_sum_rate_directional: direction shape differs from W");
  }
  CMatrix out = CMatrix::Zero(W.rows(), W.cols());
  for (Eigen::Index k = 0; k < s.K; ++k) {
    const UserTerms t = user_terms(H[k], W, k, s.M);
    const CMatrix U = H[k] * V;
    CMatrix U_minus = U;
    U_minus.middleCols(k * s.M, s.M).setZero();

    const CMatrix dA = U * t.T.adjoint() + t.T * U.adjoint();
    const CMatrix dSigma = U_minus * t.T_minus.adjoint() + t.T_minus * U_minus.adjoint();
    const CMatrix AinvT = t.A.solve(t.T);
    const CMatrix SinvT = t.Sigma.solve(t.T_minus);
    const CMatrix d_first = t.A.solve(U - dA * AinvT);
    const CMatrix d_second = t.Sigma.solve(U_minus - dSigma * SinvT);
    out.noalias() += H[k].adjoint() * (d_first - d_second);
  }
  out *= 2.0 * kInvLn2;
  return out;
}

CMatrix mmse_beamformer(ChannelBlocks H, double P) {
  if (!(P > 0.0)) {
    throw InvalidArgument("mmse_beamformer: power budget must be positive");
  }
  if (H.empty()) {
    throw InvalidArgument("mmse_beamformer: no users");
  }
  const Eigen::Index M = H.front().rows();
  const Eigen::Index cols = H.front().cols();
  const auto K = static_cast<Eigen::Index>(H.size());
  const double share = P / static_cast<double>(K);

  CMatrix gram = CMatrix::Identity(cols, cols);
  for (const auto& Hk : H) {
    if (Hk.rows() != M || Hk.cols() != cols) {
      throw InvalidArgument("mmse_beamformer: channel blocks differ in shape");
    }
    gram.noalias() += share * Hk.adjoint() * Hk;
  }
  const Eigen::LLT<CMatrix> llt(gram);
  CMatrix W(cols, K * M);
  for (Eigen::Index k = 0; k < K; ++k) {
    const CMatrix block = llt.solve(H[k].adjoint());
    const double norm = block.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw DegenerateError("mmse_beamformer: user " + std::to_string(k) +
                            " has a zero channel");
    }
    W.middleCols(k * M, M) = std::sqrt(share) * block / norm;
  }
  return W;
}

RefinementTrace refine(const CMatrix& W0, ChannelBlocks H_used, double eta_ga, int Q,
                       const RefineOptions& options) {
  if (Q < 0) {
    throw InvalidArgument("refine: Q must be >= 0");
  }
  if (eta_ga < 0.0) {
    throw InvalidArgument("refine: eta_ga must be >= 0");
  }
  RefinementTrace trace;
  trace.eta_ga = eta_ga;
  trace.projected = options.project;
  trace.power_budget = options.power_budget;
  trace.iterates.reserve(static_cast<std::size_t>(Q) + 1);
  trace.iterates.push_back(W0);
  for (int q = 1; q <= Q; ++q) {
    const CMatrix& prev = trace.iterates.back();
    CMatrix next = prev + eta_ga * grad_sum_rate(H_used, prev);
    if (options.project) {
      const double power = next.squaredNorm();
      if (power > options.power_budget) {
        next *= std::sqrt(options.power_budget / power);
      }
    }
    if (!all_finite(next)) {
      throw NumericFailure("refine: iterate " + std::to_string(q) + " is not finite");
    }
    trace.iterates.push_back(std::move(next));
  }
  return trace;
}

WirtingerGradient unrolled_pullback(ChannelBlocks H, const RefinementTrace& trace,
                                    const WirtingerGradient& grad_at_WQ) {
  if (trace.projected) {
    throw UnsupportedError("unrolled_pullback: projected refinement has no unrolled Jacobian");
  }
  WirtingerGradient g = grad_at_WQ;
  if (trace.eta_ga == 0.0) {
    return g;
  }
  for (int q = trace.steps(); q >= 1; --q) {
    g += trace.eta_ga * grad_sum_rate_directional(H, trace.iterates[q - 1], g);
  }
  return g;
}

namespace {

// One-step block Jacobian in the (w, conj w) basis. Column b of the Wirtinger
// derivatives comes from directional derivatives along e_b and j e_b:
//   dg/dw_b = (D_re - j D_im)/2,  dg/dconj(w_b) = (D_re + j D_im)/2.
CMatrix step_jacobian(ChannelBlocks H, const CMatrix& W, double eta) {
  const Eigen::Index n = W.size();
  CMatrix J = CMatrix::Identity(n, n);
  CMatrix Kc = CMatrix::Zero(n, n);
  CMatrix dir = CMatrix::Zero(W.rows(), W.cols());
  for (Eigen::Index b = 0; b < n; ++b) {
    dir.data()[b] = cd(1.0, 0.0);
    const CMatrix d_re = grad_sum_rate_directional(H, W, dir);
    dir.data()[b] = cd(0.0, 1.0);
    const CMatrix d_im = grad_sum_rate_directional(H, W, dir);
    dir.data()[b] = cd(0.0, 0.0);
    for (Eigen::Index a = 0; a < n; ++a) {
      const cd re = d_re.data()[a];
      const cd im = d_im.data()[a];
      J(a, b) += eta * 0.5 * (re - cd(0.0, 1.0) * im);
      Kc(a, b) = eta * 0.5 * (re + cd(0.0, 1.0) * im);
    }
  }
  CMatrix S(2 * n, 2 * n);
  S.topLeftCorner(n, n) = J;
  S.topRightCorner(n, n) = Kc;
  S.bottomLeftCorner(n, n) = Kc.conjugate();
  S.bottomRightCorner(n, n) = J.conjugate();
  return S;
}

}  // namespace

CMatrix unrolled_jacobian_dense(ChannelBlocks H, const RefinementTrace& trace) {
  if (trace.projected) {
    throw UnsupportedError("unrolled_jacobian_dense: projected refinement is not differentiable");
  }
  const Eigen::Index n = trace.initial().size();
  CMatrix product = CMatrix::Identity(2 * n, 2 * n);
  for (int q = 1; q <= trace.steps(); ++q) {
    product = step_jacobian(H, trace.iterates[q - 1], trace.eta_ga) * product;
  }
  return product;
}

WirtingerGradient unrolled_pullback_dense(ChannelBlocks H, const RefinementTrace& trace,
                                          const WirtingerGradient& grad_at_WQ) {
  const CMatrix jac = unrolled_jacobian_dense(H, trace);
  const Eigen::Index n = trace.initial().size();
  const CVector g = Eigen::Map<const CVector>(grad_at_WQ.data(), n);
  // dL/dconj(w_0) = dL/dw_Q * dw_Q/dconj(w_0) + dL/dconj(w_Q) * dconj(w_Q)/dconj(w_0),
  // with dL/dconj(w_Q) = g/2 and dL/dw_Q = conj(g)/2.
  const CVector g0 = jac.topRightCorner(n, n).transpose() * g.conjugate() +
                     jac.bottomRightCorner(n, n).transpose() * g;
  CMatrix out(grad_at_WQ.rows(), grad_at_WQ.cols());
  Eigen::Map<CVector>(out.data(), n) = g0;
  return out;
}

}  // namespace beamsim
