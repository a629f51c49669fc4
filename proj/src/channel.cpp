#include "beamsim/channel.hpp"

#include <fstream>
#include <string>

#include "beamsim/binary_io.hpp"

namespace beamsim {

void SystemConfig::validate() const {
  if (N < 1 || M < 1 || K < 1) {
    throw InvalidArgument("SystemConfig: N, M, K must all be >= 1");
  }
  if (!(P > 0.0)) {
    throw InvalidArgument("SystemConfig: power budget P must be positive");
  }
  if (!(d_over_lambda > 0.0)) {
    throw InvalidArgument("SystemConfig: d_over_lambda must be positive");
  }
}

void GeometryScenario::validate(int K) const {
  if (kind == GeometryKind::kSingleCell) {
    if (phi < 0.0 || phi > kPi) {
      throw InvalidArgument("GeometryScenario: phi must lie in [0, pi]");
    }
  } else {
    if (psi < 0.0 || psi > kPi / K + 1e-12) {
      throw InvalidArgument("GeometryScenario: psi must lie in [0, pi/K]");
    }
  }
}

double sector_center(int k, int K) {
  return -kPi / 2.0 + (static_cast<double>(k) - 0.5) * kPi / static_cast<double>(K);
}

std::vector<double> sample_user_angles(const GeometryScenario& scenario, int K, Rng& rng) {
  scenario.validate(K);
  std::vector<double> zeta(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    if (scenario.kind == GeometryKind::kSingleCell) {
      zeta[k] = rng.uniform(-scenario.phi / 2.0, scenario.phi / 2.0);
    } else {
      const double center = sector_center(k + 1, K);
      zeta[k] = rng.uniform(center - scenario.psi / 2.0, center + scenario.psi / 2.0);
    }
  }
  return zeta;
}

PathSet sample_path_angles(double zeta, int L, double sigma_aod, double sigma_aoa, Rng& rng) {
  if (L < 1) {
    throw InvalidArgument("sample_path_angles: L must be >= 1");
  }
  PathSet paths;
  paths.sigma_aod = sigma_aod;
  paths.sigma_aoa = sigma_aoa;
  paths.gains.reserve(L);
  paths.aod.reserve(L);
  paths.aoa.reserve(L);
  const double mean_aod = zeta;
  const double mean_aoa = kPi + zeta;
  for (int l = 0; l < L; ++l) {
    paths.gains.push_back(rng.complex_normal(1.0));
    paths.aod.push_back(rng.normal(mean_aod, sigma_aod));
    paths.aoa.push_back(rng.normal(mean_aoa, sigma_aoa));
  }
  return paths;
}

CMatrix gen_channel_farfield(const SystemConfig& cfg, const PathSet& paths) {
  cfg.validate();
  const int L = paths.size();
  if (L < 1 || paths.aod.size() != paths.gains.size() || paths.aoa.size() != paths.gains.size()) {
    throw InvalidArgument("gen_channel_farfield: incomplete path set");
  }
  const double scale = std::sqrt(static_cast<double>(cfg.M) * cfg.N / L);
  CMatrix H = CMatrix::Zero(cfg.M, cfg.N);
  for (int l = 0; l < L; ++l) {
    const CVector tx = array_response(cfg.N, paths.aod[l], cfg.d_over_lambda);
    if (cfg.M == 1) {
      H.noalias() += paths.gains[l] * tx.adjoint();
    } else {
      const CVector rx = array_response(cfg.M, paths.aoa[l], cfg.d_over_lambda);
      H.noalias() += paths.gains[l] * rx * tx.adjoint();
    }
  }
  H *= scale;
  return H;
}

ChannelSample assemble_sample(std::vector<CMatrix> H_bar, std::vector<double> sigma2,
                              std::vector<CMatrix> delta_H) {
  if (H_bar.size() != sigma2.size() || H_bar.size() != delta_H.size()) {
    throw InvalidArgument("assemble_sample: per-user list sizes disagree");
  }
  ChannelSample s;
  s.H.reserve(H_bar.size());
  s.H_tilde.reserve(H_bar.size());
  for (std::size_t k = 0; k < H_bar.size(); ++k) {
    if (!(sigma2[k] > 0.0)) {
      throw InvalidArgument("normalize_and_estimate: noise variance must be positive");
    }
    if (delta_H[k].rows() != H_bar[k].rows() || delta_H[k].cols() != H_bar[k].cols()) {
      throw InvalidArgument("assemble_sample: error shape does not match channel shape");
    }
    CMatrix Hk = H_bar[k] / sigma2[k];
    s.H_tilde.push_back(Hk + delta_H[k]);
    s.H.push_back(std::move(Hk));
  }
  s.H_bar = std::move(H_bar);
  s.sigma2 = std::move(sigma2);
  s.delta_H = std::move(delta_H);
  return s;
}

ChannelSample normalize_and_estimate(std::vector<CMatrix> H_bar, std::vector<double> sigma2,
                                     double sigma2_h, Rng& rng) {
  if (sigma2_h < 0.0) {
    throw InvalidArgument("normalize_and_estimate: error variance must be >= 0");
  }
  for (double s : sigma2) {
    if (!(s > 0.0)) {
      throw InvalidArgument("normalize_and_estimate: noise variance must be positive");
    }
  }
  std::vector<CMatrix> delta;
  delta.reserve(H_bar.size());
  for (const auto& Hb : H_bar) {
    if (sigma2_h == 0.0) {
      delta.push_back(CMatrix::Zero(Hb.rows(), Hb.cols()));
    } else {
      delta.push_back(complex_gaussian_matrix(Hb.rows(), Hb.cols(), sigma2_h, rng));
    }
  }
  return assemble_sample(std::move(H_bar), std::move(sigma2), std::move(delta));
}

double NoiseVarianceSet::draw(Rng& rng) const {
  if (sigma2.empty()) {
    throw InvalidArgument("NoiseVarianceSet: empty set");
  }
  const auto n = static_cast<double>(sigma2.size());
  auto idx = static_cast<std::size_t>(rng.uniform(0.0, n));
  if (idx >= sigma2.size()) {
    idx = sigma2.size() - 1;
  }
  return sigma2[idx];
}

NoiseVarianceSet make_snr_mixture(double lo_db, double hi_db, int count) {
  if (count < 1 || hi_db < lo_db) {
    throw InvalidArgument("make_snr_mixture: empty SNR range");
  }
  NoiseVarianceSet v;
  for (int i = 0; i < count; ++i) {
    const double snr = count == 1 ? lo_db : lo_db + (hi_db - lo_db) * i / (count - 1);
    v.snr_db.push_back(snr);
    v.sigma2.push_back(snr_db_to_sigma2(snr));
  }
  return v;
}

std::vector<CMatrix> draw_farfield_channels(const SystemConfig& cfg,
                                            const GeometryScenario& scenario,
                                            const PathParams& paths, Rng& rng) {
  const auto zeta = sample_user_angles(scenario, cfg.K, rng);
  std::vector<CMatrix> H_bar;
  H_bar.reserve(zeta.size());
  for (double z : zeta) {
    const PathSet ps = sample_path_angles(z, paths.L, paths.sigma_aod, paths.sigma_aoa, rng);
    H_bar.push_back(gen_channel_farfield(cfg, ps));
  }
  return H_bar;
}

ChannelSample draw_farfield_sample(const SystemConfig& cfg, const GeometryScenario& scenario,
                                   const PathParams& paths, double sigma2, double sigma2_h,
                                   Rng& rng) {
  auto H_bar = draw_farfield_channels(cfg, scenario, paths, rng);
  std::vector<double> s2(H_bar.size(), sigma2);
  return normalize_and_estimate(std::move(H_bar), std::move(s2), sigma2_h, rng);
}

namespace {

constexpr char kChannelMagic[5] = "BSCH";
constexpr std::uint32_t kChannelVersion = 1;

void write_block(std::ostream& os, const CMatrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    io::write_f64(os, m.data()[i].real());
    io::write_f64(os, m.data()[i].imag());
  }
}

CMatrix read_block(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  CMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double re = io::read_f64(is);
    const double im = io::read_f64(is);
    m.data()[i] = cd(re, im);
  }
  return m;
}

}  // namespace

void write_channel_batch(const std::filesystem::path& path, std::span<const ChannelSample> batch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw ConfigError("cannot open " + path.string() + " for writing");
  }
  const std::uint32_t K = batch.empty() ? 0 : static_cast<std::uint32_t>(batch.front().K());
  const std::uint32_t M = batch.empty() ? 0 : static_cast<std::uint32_t>(batch.front().M());
  const std::uint32_t cols = batch.empty() ? 0 : static_cast<std::uint32_t>(batch.front().cols());
  io::write_magic(os, kChannelMagic);
  io::write_u32(os, kChannelVersion);
  io::write_u32(os, K);
  io::write_u32(os, M);
  io::write_u32(os, cols);
  io::write_u64(os, batch.size());
  for (const auto& s : batch) {
    if (static_cast<std::uint32_t>(s.K()) != K || static_cast<std::uint32_t>(s.M()) != M ||
        static_cast<std::uint32_t>(s.cols()) != cols) {
      throw InvalidArgument("write_channel_batch: samples have inconsistent shapes");
    }
    for (double s2 : s.sigma2) {
      io::write_f64(os, s2);
    }
    for (const auto& Hb : s.H_bar) {
      write_block(os, Hb);
    }
    for (const auto& d : s.delta_H) {
      write_block(os, d);
    }
  }
  if (!os) {
    throw ConfigError("write failed for " + path.string());
  }
}

std::vector<ChannelSample> read_channel_batch(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw ConfigError("cannot open channel batch " + path.string());
  }
  io::expect_magic(is, kChannelMagic);
  const std::uint32_t version = io::read_u32(is);
  if (version != kChannelVersion) {
    throw FramingError("unsupported channel batch version " + std::to_string(version));
  }
  const std::uint32_t K = io::read_u32(is);
  const std::uint32_t M = io::read_u32(is);
  const std::uint32_t cols = io::read_u32(is);
  const std::uint64_t count = io::read_u64(is);
  std::vector<ChannelSample> out;
  out.reserve(count);
  for (std::uint64_t n = 0; n < count; ++n) {
    std::vector<double> s2(K);
    for (auto& v : s2) {
      v = io::read_f64(is);
    }
    std::vector<CMatrix> H_bar;
    std::vector<CMatrix> delta;
    for (std::uint32_t k = 0; k < K; ++k) {
      H_bar.push_back(read_block(is, M, cols));
    }
    for (std::uint32_t k = 0; k < K; ++k) {
      delta.push_back(read_block(is, M, cols));
    }
    out.push_back(assemble_sample(std::move(H_bar), std::move(s2), std::move(delta)));
  }
  return out;
}

}  // namespace beamsim
