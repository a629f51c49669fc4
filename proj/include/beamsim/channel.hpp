#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "beamsim/numerics.hpp"

namespace beamsim {

struct SystemConfig {
  int N = 16;  // BS antennas
  int M = 1;   // antennas per user
  int K = 4;   // users
  double P = 1.0;
  double d_over_lambda = 0.5;

  void validate() const;
};

enum class GeometryKind { kSingleCell, kSpatialDivision };

struct GeometryScenario {
  GeometryKind kind = GeometryKind::kSpatialDivision;
  double phi = kPi / 2.0;   // single-cell sector angle
  double psi = kPi / 16.0;  // spatial-division per-user sector width

  void validate(int K) const;
};

/// Center of the k-th (1-based) of K equal sectors spanning [-pi/2, pi/2].
double sector_center(int k, int K);

/// Multipath statistics shared by all users of a scenario.
struct PathParams {
  int L = 10;
  double sigma_aod = 0.1;
  double sigma_aoa = 0.1;
};

struct PathSet {
  std::vector<cd> gains;
  std::vector<double> aod;
  std::vector<double> aoa;
  double sigma_aod = 0.0;
  double sigma_aoa = 0.0;

  int size() const { return static_cast<int>(gains.size()); }
};

/// Azimuths of K users for the given placement scenario.
std::vector<double> sample_user_angles(const GeometryScenario& scenario, int K, Rng& rng);

/// Draws L paths around user azimuth zeta: AOD ~ N(zeta, sigma_aod^2),
/// AOA ~ N(pi + zeta, sigma_aoa^2), gains ~ CN(0, 1). Angles are not truncated.
PathSet sample_path_angles(double zeta, int L, double sigma_aod, double sigma_aoa, Rng& rng);

/// M x N geometric channel sqrt(MN/L) * sum_l alpha_l a_M(aoa_l) a_N(aod_l)^H.
/// The rows act on the beamformer: the received signal is H * W * x.
CMatrix gen_channel_farfield(const SystemConfig& cfg, const PathSet& paths);

/// One draw of K users. H holds the per-user blocks seen by the (digital)
/// beamformer; in hybrid mode these are effective channels.
struct ChannelSample {
  std::vector<CMatrix> H_bar;
  std::vector<double> sigma2;
  std::vector<CMatrix> H;
  std::vector<CMatrix> H_tilde;
  std::vector<CMatrix> delta_H;

  int K() const { return static_cast<int>(H.size()); }
  int M() const { return H.empty() ? 0 : static_cast<int>(H.front().rows()); }
  int cols() const { return H.empty() ? 0 : static_cast<int>(H.front().cols()); }
};

/// H_k = H_bar_k / sigma2_k, H_tilde_k = H_k + delta_H_k with delta_H entries CN(0, sigma2_h).
ChannelSample normalize_and_estimate(std::vector<CMatrix> H_bar, std::vector<double> sigma2,
                                     double sigma2_h, Rng& rng);

// Same as above with a caller-supplied error realization.
ChannelSample assemble_sample(std::vector<CMatrix> H_bar, std::vector<double> sigma2,
                              std::vector<CMatrix> delta_H);

struct NoiseVarianceSet {
  std::vector<double> snr_db;
  std::vector<double> sigma2;

  double draw(Rng& rng) const;
};

/// sigma^2 = 10^(-SNR_dB/10) for `count` evenly spaced SNR levels over [lo_db, hi_db].
NoiseVarianceSet make_snr_mixture(double lo_db, double hi_db, int count);

inline double snr_db_to_sigma2(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

/// Full far-field draw: user angles, paths, channels, one shared sigma^2, errors.
ChannelSample draw_farfield_sample(const SystemConfig& cfg, const GeometryScenario& scenario,
                                   const PathParams& paths, double sigma2, double sigma2_h,
                                   Rng& rng);

/// Physical channels only (no normalization), one per user.
std::vector<CMatrix> draw_farfield_channels(const SystemConfig& cfg,
                                            const GeometryScenario& scenario,
                                            const PathParams& paths, Rng& rng);

// Binary record file, see docs/formats.md.
void write_channel_batch(const std::filesystem::path& path, std::span<const ChannelSample> batch);
std::vector<ChannelSample> read_channel_batch(const std::filesystem::path& path);

}  // namespace beamsim
