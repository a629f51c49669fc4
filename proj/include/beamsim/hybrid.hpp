#pragma once

#include <vector>

#include "beamsim/channel.hpp"
#include "beamsim/rate.hpp"

namespace beamsim {

struct HybridConfig {
  int N_RF = 16;
  int S = 16;       // near-field subarrays
  int n_sub = 4;    // antennas per subarray
  double lambda = 3e-3;  // meters
  double d = 0.0;        // antenna spacing in meters; 0 means lambda / 2
  double r_c = 3.0;      // mean user distance (meters)
  double sigma_r = 1.0;  // distance standard deviation (meters)
  double r_min = 0.1;    // distance draws below this are rejected

  double spacing() const { return d > 0.0 ? d : lambda / 2.0; }
  double d_over_lambda() const { return spacing() / lambda; }
  int antennas() const { return S * n_sub; }
  /// N^2 lambda / 2 with N = S * n_sub.
  double rayleigh_distance() const;
  void validate() const;
};

/// N x N_RF steering matrix. Single-cell: N_RF angles spread evenly over
/// [-phi/2, phi/2]. Spatial division (requires N_RF = K*M): M angles per user
/// sector. Throws UnsupportedError for spatial division with N_RF != K*M.
CMatrix analog_farfield(const GeometryScenario& scenario, int N, int N_RF, int K, int M,
                        double d_over_lambda = 0.5);

/// Steering angles used by analog_farfield, in column order.
std::vector<double> analog_farfield_angles(const GeometryScenario& scenario, int N_RF, int K, int M);

/// Distance and angle from the first antenna of each subarray to the user.
struct SubarrayGeometry {
  std::vector<double> r;
  std::vector<double> sin_theta;

  int S() const { return static_cast<int>(r.size()); }
};

SubarrayGeometry nearfield_subarray_geometry(double r, double theta, const HybridConfig& cfg);

/// Column h_bar (N x 1) with subvector s = sqrt(n) alpha exp(-j 2 pi r^s / lambda) conj(a_n(theta^s)).
/// The row acting on the analog beamformer is h_bar^H.
CVector nearfield_channel(const SubarrayGeometry& p, cd alpha, const HybridConfig& cfg);

struct NearFieldAnalog {
  CVector v;                // N x 1, unit norm
  std::vector<double> mu;   // delays (meters)
  std::vector<double> eta;  // phase-shifter angles (radians)
};

/// Focusing beamformer with eta^s = -theta^s and mu^s = max r - r^s.
NearFieldAnalog nearfield_analog(const SubarrayGeometry& p, const HybridConfig& cfg);

/// Same construction with caller-chosen parameters.
CVector nearfield_analog_vector(const std::vector<double>& mu, const std::vector<double>& eta,
                                const HybridConfig& cfg);

/// |h_bar^H v| / (sqrt(N) |alpha|)
double normalized_gain(const CVector& h_bar, const CVector& v, cd alpha);

/// G_bar_k = H_bar_k W^a for each user block.
std::vector<CMatrix> effective_channel(ChannelBlocks H_bar, const CMatrix& Wa);

/// sqrt(P) W^D_raw / ||W^a W^D_raw||_F; throws DegenerateError on a zero product.
CMatrix hybrid_power_normalize(const CMatrix& WD_raw, const CMatrix& Wa, double P);

/// MMSE digital beamformer on effective channels, rescaled so ||W^a W^D||_F^2 = P.
CMatrix hybrid_mmse(ChannelBlocks G, const CMatrix& Wa, double P);

struct NearFieldUser {
  double r = 0.0;
  double theta = 0.0;
  cd alpha;
  SubarrayGeometry geometry;
};

/// r ~ N(r_c, sigma_r^2) redrawn until r_min <= r <= Rayleigh distance.
double sample_user_distance(const HybridConfig& cfg, Rng& rng);

/// One hybrid draw: physical channels, the analog matrix used, and the sample
/// whose H / H_tilde hold effective channels (errors added to the effective channel).
struct HybridDraw {
  ChannelSample sample;
  CMatrix analog;
  std::vector<CMatrix> physical;  // 1 x N (or M x N) rows acting on W^a
  std::vector<NearFieldUser> users;  // near-field only
};

HybridDraw draw_hybrid_farfield(const SystemConfig& sys, const GeometryScenario& scenario,
                                const PathParams& paths, const CMatrix& Wa, double sigma2,
                                double sigma2_h, Rng& rng);

HybridDraw draw_hybrid_nearfield(const SystemConfig& sys, const GeometryScenario& scenario,
                                 const HybridConfig& hyb, double sigma2, double sigma2_h, Rng& rng);

}  // namespace beamsim
