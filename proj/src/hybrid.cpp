#include "beamsim/hybrid.hpp"

#include <algorithm>
#include <string>

namespace beamsim {

double HybridConfig::rayleigh_distance() const {
  const double n = antennas();
  return n * n * lambda / 2.0;
}

void HybridConfig::validate() const {
  if (N_RF < 1 || S < 1 || n_sub < 1) {
    throw InvalidArgument("HybridConfig: N_RF, S, n_sub must be >= 1");
  }
  if (!(lambda > 0.0) || d < 0.0) {
    throw InvalidArgument("HybridConfig: wavelength must be positive and spacing >= 0");
  }
  if (!(sigma_r >= 0.0) || !(r_min > 0.0) || !(r_c > 0.0)) {
    throw InvalidArgument("HybridConfig: bad distance distribution");
  }
}

std::vector<double> analog_farfield_angles(const GeometryScenario& scenario, int N_RF, int K,
                                           int M) {
  if (N_RF < 1 || K < 1 || M < 1) {
    throw InvalidArgument("analog_farfield: N_RF, K, M must be >= 1");
  }
  scenario.validate(K);
  std::vector<double> beta;
  beta.reserve(N_RF);
  if (scenario.kind == GeometryKind::kSingleCell) {
    for (int n = 1; n <= N_RF; ++n) {
      beta.push_back(-scenario.phi / 2.0 + (n - 0.5) * scenario.phi / N_RF);
    }
  } else {
    if (N_RF != K * M) {
      throw UnsupportedError("analog_farfield: spatial division needs N_RF = K*M (" +
                             std::to_string(K * M) + "), got " + std::to_string(N_RF));
    }
    for (int k = 1; k <= K; ++k) {
      for (int m = 1; m <= M; ++m) {
        beta.push_back(sector_center(k, K) - scenario.psi / 2.0 + (m - 0.5) * scenario.psi / M);
      }
    }
  }
  return beta;
}

CMatrix analog_farfield(const GeometryScenario& scenario, int N, int N_RF, int K, int M,
                        double d_over_lambda) {
  const auto beta = analog_farfield_angles(scenario, N_RF, K, M);
  CMatrix Wa(N, N_RF);
  for (int c = 0; c < N_RF; ++c) {
    Wa.col(c) = array_response(N, beta[c], d_over_lambda);
  }
  return Wa;
}

SubarrayGeometry nearfield_subarray_geometry(double r, double theta, const HybridConfig& cfg) {
  cfg.validate();
  if (!(r > 0.0)) {
    throw InvalidArgument("nearfield_subarray_geometry: distance must be positive");
  }
  SubarrayGeometry p;
  p.r.reserve(cfg.S);
  p.sin_theta.reserve(cfg.S);
  const double st = std::sin(theta);
  for (int s = 0; s < cfg.S; ++s) {
    const double off = s * cfg.n_sub * cfg.spacing();
    const double rs2 = r * r + off * off - 2.0 * off * r * st;
    const double rs = std::sqrt(std::max(rs2, 0.0));
    if (!(rs > 0.0)) {
      throw DegenerateError("degenerate-geometry: user sits on subarray " + std::to_string(s + 1));
    }
    p.r.push_back(rs);
    p.sin_theta.push_back(std::clamp((r * st - off) / rs, -1.0, 1.0));
  }
  return p;
}

CVector nearfield_channel(const SubarrayGeometry& p, cd alpha, const HybridConfig& cfg) {
  if (p.S() != cfg.S) {
    throw InvalidArgument("nearfield_channel: geometry has the wrong subarray count");
  }
  const int n = cfg.n_sub;
  CVector h(cfg.antennas());
  for (int s = 0; s < cfg.S; ++s) {
    const cd phase = std::polar(1.0, -2.0 * kPi * p.r[s] / cfg.lambda);
    const CVector a = array_response(n, std::asin(p.sin_theta[s]), cfg.d_over_lambda());
    h.segment(s * n, n) = std::sqrt(static_cast<double>(n)) * alpha * phase * a.conjugate();
  }
  return h;
}

CVector nearfield_analog_vector(const std::vector<double>& mu, const std::vector<double>& eta,
                                const HybridConfig& cfg) {
  if (static_cast<int>(mu.size()) != cfg.S || static_cast<int>(eta.size()) != cfg.S) {
    throw InvalidArgument("nearfield_analog: need one delay and one phase angle per subarray");
  }
  const int n = cfg.n_sub;
  const double scale = std::sqrt(static_cast<double>(n) / cfg.antennas());
  CVector v(cfg.antennas());
  for (int s = 0; s < cfg.S; ++s) {
    const cd phase = std::polar(1.0, 2.0 * kPi * mu[s] / cfg.lambda);
    v.segment(s * n, n) = scale * phase * array_response(n, eta[s], cfg.d_over_lambda());
  }
  return v;
}

NearFieldAnalog nearfield_analog(const SubarrayGeometry& p, const HybridConfig& cfg) {
  if (p.S() != cfg.S) {
    throw InvalidArgument("nearfield_analog: geometry has the wrong subarray count");
  }
  NearFieldAnalog out;
  const double r_max = *std::max_element(p.r.begin(), p.r.end());
  for (int s = 0; s < cfg.S; ++s) {
    out.mu.push_back(r_max - p.r[s]);
    out.eta.push_back(-std::asin(p.sin_theta[s]));
  }
  out.v = nearfield_analog_vector(out.mu, out.eta, cfg);
  return out;
}

double normalized_gain(const CVector& h_bar, const CVector& v, cd alpha) {
  if (h_bar.size() != v.size()) {
    throw InvalidArgument("normalized_gain: length mismatch");
  }
  if (std::abs(alpha) == 0.0) {
    throw DegenerateError("normalized_gain: zero path gain");
  }
  return std::abs(h_bar.dot(v)) / (std::sqrt(static_cast<double>(h_bar.size())) * std::abs(alpha));
}

std::vector<CMatrix> effective_channel(ChannelBlocks H_bar, const CMatrix& Wa) {
  std::vector<CMatrix> G;
  G.reserve(H_bar.size());
  for (const auto& H : H_bar) {
    if (H.cols() != Wa.rows()) {
      throw InvalidArgument("effective_channel: channel width " + std::to_string(H.cols()) +
                            " does not match analog rows " + std::to_string(Wa.rows()));
    }
    G.push_back(H * Wa);
  }
  return G;
}

CMatrix hybrid_power_normalize(const CMatrix& WD_raw, const CMatrix& Wa, double P) {
  if (Wa.cols() != WD_raw.rows()) {
    throw InvalidArgument("hybrid_power_normalize: W^a columns must equal W^D rows");
  }
  if (!(P > 0.0)) {
    throw InvalidArgument("hybrid_power_normalize: power budget must be positive");
  }
  const double n = (Wa * WD_raw).norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DegenerateError("degenerate-output: W^a W^D is zero");
  }
  return std::sqrt(P) * WD_raw / n;
}

CMatrix hybrid_mmse(ChannelBlocks G, const CMatrix& Wa, double P) {
  return hybrid_power_normalize(mmse_beamformer(G, P), Wa, P);
}

double sample_user_distance(const HybridConfig& cfg, Rng& rng) {
  const double r_max = cfg.rayleigh_distance();
  if (cfg.r_min > r_max) {
    throw InvalidArgument("sample_user_distance: empty admissible distance range");
  }
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const double r = rng.normal(cfg.r_c, cfg.sigma_r);
    if (r >= cfg.r_min && r <= r_max) {
      return r;
    }
  }
  throw NumericFailure("sample_user_distance: rejection sampling did not terminate");
}

namespace {

std::vector<CMatrix> draw_errors(const std::vector<CMatrix>& G, double sigma2_h, Rng& rng) {
  if (sigma2_h < 0.0) {
    throw InvalidArgument("hybrid draw: error variance must be >= 0");
  }
  std::vector<CMatrix> delta;
  for (const auto& g : G) {
    delta.push_back(sigma2_h == 0.0 ? CMatrix::Zero(g.rows(), g.cols())
                                    : complex_gaussian_matrix(g.rows(), g.cols(), sigma2_h, rng));
  }
  return delta;
}

}  // namespace

HybridDraw draw_hybrid_farfield(const SystemConfig& sys, const GeometryScenario& scenario,
                                const PathParams& paths, const CMatrix& Wa, double sigma2,
                                double sigma2_h, Rng& rng) {
  if (Wa.rows() != sys.N) {
    throw InvalidArgument("draw_hybrid_farfield: analog matrix must have N rows");
  }
  HybridDraw out;
  out.analog = Wa;
  out.physical = draw_farfield_channels(sys, scenario, paths, rng);
  auto G = effective_channel(out.physical, Wa);
  auto delta = draw_errors(G, sigma2_h, rng);
  const auto K = G.size();
  out.sample = assemble_sample(std::move(G), std::vector<double>(K, sigma2), std::move(delta));
  return out;
}

HybridDraw draw_hybrid_nearfield(const SystemConfig& sys, const GeometryScenario& scenario,
                                 const HybridConfig& hyb, double sigma2, double sigma2_h, Rng& rng) {
  hyb.validate();
  if (sys.M != 1) {
    throw UnsupportedError("near-field hybrid supports single-antenna users only");
  }
  if (hyb.antennas() != sys.N) {
    throw InvalidArgument("draw_hybrid_nearfield: S * n_sub must equal N");
  }
  if (hyb.N_RF != sys.K) {
    throw UnsupportedError("near-field hybrid needs N_RF = K");
  }
  HybridDraw out;
  const auto theta = sample_user_angles(scenario, sys.K, rng);
  out.analog.resize(sys.N, sys.K);
  for (int k = 0; k < sys.K; ++k) {
    NearFieldUser u;
    u.r = sample_user_distance(hyb, rng);
    u.theta = theta[k];
    u.alpha = rng.complex_normal(1.0);
    u.geometry = nearfield_subarray_geometry(u.r, u.theta, hyb);
    const CVector h = nearfield_channel(u.geometry, u.alpha, hyb);
    out.physical.push_back(h.adjoint());
    out.analog.col(k) = nearfield_analog(u.geometry, hyb).v;
    out.users.push_back(std::move(u));
  }
  auto G = effective_channel(out.physical, out.analog);
  auto delta = draw_errors(G, sigma2_h, rng);
  const auto K = G.size();
  out.sample = assemble_sample(std::move(G), std::vector<double>(K, sigma2), std::move(delta));
  return out;
}

}  // namespace beamsim
