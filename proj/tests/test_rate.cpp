#include "doctest.h"

#include "beamsim/channel.hpp"
#include "beamsim/rate.hpp"
#include "test_support.hpp"

using namespace beamsim;
using beamsim::testing::random_beamformer;
using beamsim::testing::random_channels;

namespace {

// Brute-force log-det route: forms Sigma_k^{-1} explicitly and takes the
// determinant of I + Sigma^{-1} S through partial-pivot LU.
double oracle_sum_rate(const std::vector<CMatrix>& H, const CMatrix& W) {
  const auto K = static_cast<Eigen::Index>(H.size());
  const Eigen::Index M = H.front().rows();
  double rate = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    CMatrix interf = CMatrix::Zero(W.rows(), W.rows());
    for (Eigen::Index i = 0; i < K; ++i) {
      if (i != k) {
        const CMatrix Wi = W.middleCols(i * M, M);
        interf += Wi * Wi.adjoint();
      }
    }
    const CMatrix I = CMatrix::Identity(M, M);
    const CMatrix sigma = I + H[k] * interf * H[k].adjoint();
    const CMatrix Wk = W.middleCols(k * M, M);
    const CMatrix S = H[k] * Wk * Wk.adjoint() * H[k].adjoint();
    const cd det = (I + sigma.inverse() * S).partialPivLu().determinant();
    rate += std::log2(std::abs(det));
  }
  return rate;
}

double cosine(const CMatrix& a, const CMatrix& b) {
  const CVector av = Eigen::Map<const CVector>(a.data(), a.size());
  const CVector bv = Eigen::Map<const CVector>(b.data(), b.size());
  return std::abs(av.dot(bv)) / (av.norm() * bv.norm());
}

}  // namespace

TEST_CASE("sum rate closed forms") {
  Rng rng(1);
  auto H = random_channels(3, 1, 6, rng);
  CHECK(sum_rate_miso(H, CMatrix::Zero(6, 3)) == 0.0);
  CHECK(sum_rate_mimo(H, CMatrix::Zero(6, 3)) == 0.0);

  auto H1 = random_channels(1, 1, 5, rng);
  const CMatrix w = random_beamformer(5, 1, rng);
  const double g = std::norm((H1[0] * w)(0, 0));
  CHECK(sum_rate_miso(H1, w) == doctest::Approx(std::log2(1.0 + g)).epsilon(1e-14));

  // Orthogonal users with matched filters see no interference.
  std::vector<CMatrix> Ho(2, CMatrix::Zero(1, 4));
  Ho[0](0, 0) = cd(1.0, 0.5);
  Ho[0](0, 1) = cd(-0.3, 0.2);
  Ho[1](0, 2) = cd(0.7, -1.1);
  Ho[1](0, 3) = cd(0.4, 0.0);
  const double c = 0.8;
  CMatrix W(4, 2);
  W.col(0) = c * Ho[0].adjoint();
  W.col(1) = c * Ho[1].adjoint();
  double expected = 0.0;
  for (const auto& h : Ho) {
    expected += std::log2(1.0 + c * c * std::pow(h.squaredNorm(), 2));
  }
  CHECK(sum_rate_miso(Ho, W) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("MIMO rate with single-antenna users equals the MISO rate") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto H = random_channels(3, 1, 8, rng, 4.0);
    const CMatrix W = random_beamformer(8, 3, rng);
    CHECK(std::abs(sum_rate_mimo(H, W) - sum_rate_miso(H, W)) <= 1e-12 * sum_rate_miso(H, W));
  }
}

TEST_CASE("MIMO rate matches the brute-force log-det oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto H = random_channels(2, 2, 6, rng, 3.0);
    const CMatrix W = random_beamformer(6, 4, rng);
    CHECK(sum_rate_mimo(H, W) == doctest::Approx(oracle_sum_rate(H, W)).epsilon(1e-11));
  }
}

TEST_CASE("rate depends on W only through H_k W") {
  Rng rng(4);
  for (int M : {1, 2}) {
    auto H = random_channels(3, M, 5, rng);
    const CMatrix W = random_beamformer(5, 3 * M, rng);
    const CMatrix U = Eigen::HouseholderQR<CMatrix>(complex_gaussian_matrix(5, 5, 1.0, rng))
                          .householderQ();
    std::vector<CMatrix> HU;
    for (const auto& Hk : H) {
      HU.push_back(Hk * U);
    }
    CHECK(sum_rate(HU, U.adjoint() * W) == doctest::Approx(sum_rate(H, W)).epsilon(1e-12));
  }
}

TEST_CASE("shape mismatches are rejected") {
  Rng rng(5);
  auto H = random_channels(2, 1, 4, rng);
  CHECK_THROWS_AS(sum_rate_miso(H, CMatrix::Zero(4, 3)), InvalidArgument);
  CHECK_THROWS_AS(sum_rate_mimo(H, CMatrix::Zero(3, 2)), InvalidArgument);
  CHECK_THROWS_AS(grad_sum_rate(H, CMatrix::Zero(4, 1)), InvalidArgument);
  auto H2 = random_channels(2, 2, 4, rng);
  CHECK_THROWS_AS(sum_rate_miso(H2, CMatrix::Zero(4, 4)), InvalidArgument);
}

TEST_CASE("gradient closed forms") {
  Rng rng(6);
  std::vector<CMatrix> H0(2, CMatrix::Zero(1, 4));
  CHECK(grad_sum_rate(H0, random_beamformer(4, 2, rng)).norm() == 0.0);

  auto H = random_channels(1, 1, 5, rng);
  const CMatrix w = random_beamformer(5, 1, rng);
  const CVector h = H[0].adjoint();
  const cd hw = (H[0] * w)(0, 0);
  const CMatrix expected = (2.0 / std::log(2.0)) * h * hw / (1.0 + std::norm(hw));
  CHECK(relative_error(grad_sum_rate(H, w), expected) < 1e-13);
}

TEST_CASE("analytical gradient matches the Wirtinger oracle (MISO and MIMO)") {
  Rng rng(7);
  for (int M : {1, 2}) {
    for (int trial = 0; trial < 20; ++trial) {
      const int N = 2 + static_cast<int>(rng.next_u64() % 7);
      const int K = 1 + static_cast<int>(rng.next_u64() % 3);
      auto H = random_channels(K, M, N, rng, 2.0);
      const CMatrix W = random_beamformer(N, K * M, rng);
      const auto f = [&](const CMatrix& x) { return sum_rate(H, x); };
      CHECK(relative_error(grad_sum_rate(H, W), wirtinger_fd_oracle(f, W)) <= 1e-6);
    }
  }
}

TEST_CASE("directional derivative of the gradient matches finite differences") {
  Rng rng(8);
  for (int M : {1, 2}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto H = random_channels(2, M, 4, rng, 2.0);
      const CMatrix W = random_beamformer(4, 2 * M, rng);
      const CMatrix V = complex_gaussian_matrix(4, 2 * M, 1.0, rng);
      const double h = 1e-5;
      const CMatrix fd = (grad_sum_rate(H, W + h * V) - grad_sum_rate(H, W - h * V)) / (2 * h);
      CHECK(relative_error(grad_sum_rate_directional(H, W, V), fd) < 1e-7);
    }
  }
}

TEST_CASE("MMSE reduces to MRT for a single user") {
  Rng rng(9);
  for (double P : {0.5, 1.0, 3.0}) {
    auto H = random_channels(1, 1, 6, rng, 10.0);
    const CMatrix W = mmse_beamformer(H, P);
    const CMatrix mrt = std::sqrt(P) * H[0].adjoint() / H[0].norm();
    CHECK(relative_error(W, mrt) < 1e-12);
  }
}

TEST_CASE("MMSE power and per-block normalization") {
  Rng rng(10);
  for (int M : {1, 2}) {
    auto H = random_channels(3, M, 6, rng, 5.0);
    const double P = 2.0;
    const CMatrix W = mmse_beamformer(H, P);
    CHECK(W.squaredNorm() == doctest::Approx(P).epsilon(1e-13));
    for (int k = 0; k < 3; ++k) {
      CHECK(W.middleCols(k * M, M).norm() == doctest::Approx(std::sqrt(P / 3)).epsilon(1e-13));
    }
  }
}

TEST_CASE("MMSE on orthogonal channels is per-user MRT") {
  std::vector<CMatrix> H(2, CMatrix::Zero(1, 4));
  H[0](0, 0) = cd(2.0, 1.0);
  H[0](0, 1) = cd(0.5, -0.5);
  H[1](0, 2) = cd(-1.0, 0.3);
  H[1](0, 3) = cd(0.2, 2.0);
  const CMatrix W = mmse_beamformer(H, 1.0);
  for (int k = 0; k < 2; ++k) {
    CHECK(cosine(W.col(k), H[k].adjoint()) >= 1.0 - 1e-10);
  }
}

TEST_CASE("MMSE rejects zero channels") {
  std::vector<CMatrix> H(2, CMatrix::Zero(1, 4));
  H[0](0, 0) = 1.0;
  CHECK_THROWS_AS(mmse_beamformer(H, 1.0), DegenerateError);
  CHECK_THROWS_AS(mmse_beamformer(H, 0.0), InvalidArgument);
}

TEST_CASE("refinement trivial cases") {
  Rng rng(11);
  auto H = random_channels(2, 1, 4, rng);
  const CMatrix W0 = random_beamformer(4, 2, rng);
  const auto t0 = refine(W0, H, 1e-3, 0);
  CHECK(t0.iterates.size() == 1);
  CHECK(t0.final() == W0);
  const auto frozen = refine(W0, H, 0.0, 5);
  CHECK(frozen.steps() == 5);
  for (const auto& W : frozen.iterates) {
    CHECK(W == W0);
  }
  CHECK_THROWS_AS(refine(W0, H, -1.0, 1), InvalidArgument);
  CHECK_THROWS_AS(refine(W0, H, 1.0, -1), InvalidArgument);
}

TEST_CASE("projected refinement respects the power budget") {
  Rng rng(12);
  auto H = random_channels(3, 1, 6, rng, 100.0);
  const CMatrix W0 = random_beamformer(6, 3, rng);
  const auto t = refine(W0, H, 1e-2, 10, {true, 1.0});
  for (const auto& W : t.iterates) {
    CHECK(W.squaredNorm() <= 1.0 + 1e-9);
  }
  CHECK_THROWS_AS(unrolled_pullback(H, t, W0), UnsupportedError);
}

TEST_CASE("small-step refinement is monotone on random MISO instances") {
  int monotone = 0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(derive_seed(99, i));
    auto H = random_channels(3, 1, 8, rng);
    const CMatrix W0 = random_beamformer(8, 3, rng);
    const auto t = refine(W0, H, 1e-3, 10);
    bool ok = true;
    for (int q = 1; q <= 10; ++q) {
      ok = ok && sum_rate(H, t.iterates[q]) >= sum_rate(H, t.iterates[q - 1]);
    }
    monotone += ok;
  }
  CHECK(monotone >= 95);
}

TEST_CASE("fixed-step ascent overshoots on high-SNR normalized channels") {
  // Curvature of the rate grows like 1/sigma^4 under H = H_bar / sigma^2, so a
  // step that is safe at 5 dB is not at 20 dB when starting from MMSE.
  SystemConfig cfg{16, 1, 4, 1.0, 0.5};
  GeometryScenario sd{GeometryKind::kSpatialDivision, 0.0, kPi / 16};
  Rng rng(5);
  const auto low = draw_farfield_sample(cfg, sd, PathParams{}, snr_db_to_sigma2(5.0), 0.0, rng);
  const auto high = draw_farfield_sample(cfg, sd, PathParams{}, snr_db_to_sigma2(20.0), 0.0, rng);
  const auto t_low = refine(mmse_beamformer(low.H, 1.0), low.H, 1e-3, 10);
  const auto t_high = refine(mmse_beamformer(high.H, 1.0), high.H, 1e-3, 10);
  CHECK(sum_rate(low.H, t_low.final()) > sum_rate(low.H, t_low.initial()));
  CHECK(sum_rate(high.H, t_high.final()) < sum_rate(high.H, t_high.initial()));
}

TEST_CASE("unrolled pullback: zero step is the identity") {
  Rng rng(13);
  auto H = random_channels(2, 1, 4, rng);
  const CMatrix W0 = random_beamformer(4, 2, rng);
  const CMatrix g = complex_gaussian_matrix(4, 2, 1.0, rng);
  const auto t = refine(W0, H, 0.0, 3);
  CHECK(unrolled_pullback(H, t, g) == g);
  CHECK(relative_error(unrolled_pullback_dense(H, t, g), g) < 1e-15);
  const CMatrix J = unrolled_jacobian_dense(H, t);
  CHECK((J - CMatrix::Identity(16, 16)).norm() == 0.0);
}

TEST_CASE("one-step block Jacobian matches a finite-difference JVP") {
  Rng rng(14);
  auto H = random_channels(2, 1, 4, rng, 3.0);
  const CMatrix W0 = random_beamformer(4, 2, rng);
  const double eta = 0.05;
  const auto t = refine(W0, H, eta, 1);
  const CMatrix J = unrolled_jacobian_dense(H, t);
  const Eigen::Index n = W0.size();
  for (int trial = 0; trial < 5; ++trial) {
    const CMatrix V = complex_gaussian_matrix(4, 2, 1.0, rng);
    const double h = 1e-6;
    const CMatrix fd =
        (refine(W0 + h * V, H, eta, 1).final() - refine(W0 - h * V, H, eta, 1).final()) / (2 * h);
    const CVector v = Eigen::Map<const CVector>(V.data(), n);
    const CVector jvp = J.topLeftCorner(n, n) * v + J.topRightCorner(n, n) * v.conjugate();
    const CVector fdv = Eigen::Map<const CVector>(fd.data(), n);
    CHECK(relative_error(jvp, fdv) <= 1e-5);
    // Conjugate rows of the block Jacobian are the conjugate of the top rows.
    const CVector jvp_conj = J.bottomLeftCorner(n, n) * v + J.bottomRightCorner(n, n) * v.conjugate();
    CHECK(relative_error(jvp_conj, CVector(fdv.conjugate())) <= 1e-5);
  }
}

TEST_CASE("unrolled pullback matches end-to-end finite differences, both routes agree") {
  Rng rng(15);
  for (int M : {1, 2}) {
    auto H = random_channels(2, M, 4, rng, 3.0);
    const CMatrix W0 = random_beamformer(4, 2 * M, rng);
    const CMatrix target = random_beamformer(4, 2 * M, rng);
    const double eta = 0.01;
    const int Q = 3;
    const auto loss = [&](const CMatrix& W) {
      return -sum_rate(H, W) + 0.7 * (W - target).squaredNorm();
    };
    const auto t = refine(W0, H, eta, Q);
    const CMatrix gQ = -grad_sum_rate(H, t.final()) + 0.7 * 2.0 * (t.final() - target);
    const CMatrix reverse = unrolled_pullback(H, t, gQ);
    const CMatrix dense = unrolled_pullback_dense(H, t, gQ);
    const CMatrix fd = wirtinger_fd_oracle(
        [&](const CMatrix& W) { return loss(refine(W, H, eta, Q).final()); }, W0);
    CHECK(relative_error(reverse, fd) <= 1e-5);
    CHECK(relative_error(dense, reverse) <= 1e-8);
  }
}
