#include <filesystem>

#include "doctest.h"

#include "beamsim/nets.hpp"
#include "test_support.hpp"

using namespace beamsim;

namespace {

RMatrix random_real(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  RMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.normal(0.0, scale);
  }
  return m;
}

// Scalar probe loss sum(C .* net(x)) checked against central differences on
// every parameter and every input entry, reusing the recorded dropout masks.
void check_backward(Mlp& net, Mode mode, Eigen::Index batch, std::uint64_t seed) {
  Rng rng(seed);
  const RMatrix x = random_real(net.spec().input_dim(), batch, rng);
  const RMatrix C = random_real(net.spec().output_dim(), batch, rng);
  net.forward(x, mode, &rng);
  MlpGrads grads = net.zero_grads();
  const RMatrix gx = net.backward(C, grads);

  const RVector p0 = net.flat_parameters();
  auto loss_p = [&](const RVector& p) {
    net.set_flat_parameters(p);
    return net.replay(x).cwiseProduct(C).sum();
  };
  const RVector fd = fd_gradient(loss_p, p0, 1e-5);
  net.set_flat_parameters(p0);
  CHECK(relative_error(net.flatten(grads), fd) <= 1e-6);

  const RVector x0 = Eigen::Map<const RVector>(x.data(), x.size());
  auto loss_x = [&](const RVector& v) {
    const RMatrix xm = Eigen::Map<const RMatrix>(v.data(), x.rows(), x.cols());
    return net.replay(xm).cwiseProduct(C).sum();
  };
  const RVector fdx = fd_gradient(loss_x, x0, 1e-5);
  const RVector gxv = Eigen::Map<const RVector>(gx.data(), gx.size());
  CHECK(relative_error(gxv, fdx) <= 1e-6);
}

NetArchitecture tiny_arch() {
  NetArchitecture a;
  a.encoder_hidden = {24, 16};
  a.beamdec_hidden = {32, 32};
  a.chandec_hidden = {16, 24};
  a.d_latent = 6;
  return a;
}

}  // namespace

TEST_CASE("spec validation and descriptor") {
  MlpSpec s;
  s.name = "x";
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s.layers = {{4, 3, Activation::kLeakyRelu}, {5, 2, Activation::kTanh}};
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s.layers[1].in = 3;
  CHECK_NOTHROW(s.validate());
  s.layers[0].dropout = 1.0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s.layers[0].dropout = 0.2;
  s.layers[1].batchnorm = true;
  CHECK(s.descriptor().rfind("x:4-3Ld0.2-2Tb;", 0) == 0);
}

TEST_CASE("encoder matches a dense-forward reference") {
  NetArchitecture a;
  a.encoder_hidden = {5};
  a.d_latent = 4;
  Mlp enc(encoder_spec(8, a), 11);
  Rng rng(3);
  const CMatrix H = complex_gaussian_matrix(1, 4, 1.0, rng);
  const LatentVector z = encode(enc, H, 2);
  CHECK(z.user == 2);

  RVector x(8);
  for (int i = 0; i < 4; ++i) {
    x(i) = H(0, i).real();
    x(4 + i) = H(0, i).imag();
  }
  const auto& L = enc.layers();
  RVector h(5);
  for (int r = 0; r < 5; ++r) {
    double acc = L[0].bias(r);
    for (int c = 0; c < 8; ++c) acc += L[0].weight(r, c) * x(c);
    h(r) = acc > 0.0 ? acc : 0.01 * acc;
  }
  RVector ref(4);
  for (int r = 0; r < 4; ++r) {
    double acc = L[1].bias(r);
    for (int c = 0; c < 5; ++c) acc += L[1].weight(r, c) * h(c);
    ref(r) = std::tanh(acc);
  }
  CHECK(relative_error(z.z, ref) <= 1e-12);
}

TEST_CASE("encoder with zero parameters emits zero") {
  Mlp enc(encoder_spec(8, tiny_arch()), 1);
  enc.set_flat_parameters(RVector::Zero(static_cast<Eigen::Index>(enc.parameter_count())));
  Rng rng(2);
  CHECK(encode(enc, complex_gaussian_matrix(1, 4, 1.0, rng)).z.norm() == 0.0);
}

TEST_CASE("encoder output stays in [-1, 1] for huge inputs") {
  Mlp enc(encoder_spec(16, tiny_arch()), 5);
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const CMatrix H = complex_gaussian_matrix(2, 4, 1e12, rng);
    CHECK(encode(enc, H).z.cwiseAbs().maxCoeff() <= 1.0);
  }
}

TEST_CASE("dimension mismatches are invalid arguments") {
  const auto nets = make_networks(2, 1, 4, tiny_arch(), 7);
  Rng rng(1);
  CHECK_THROWS_AS(encode(nets.encoder, complex_gaussian_matrix(1, 5, 1.0, rng)), InvalidArgument);
  CHECK_THROWS_AS(decode_channel(nets.chandec, RVector::Zero(5), 1, 4), InvalidArgument);
  CHECK_THROWS_AS(decode_beamformer(nets.beamdec, RVector::Zero(11), 1.0, 4, 2), InvalidArgument);
}

TEST_CASE("backward requires a recorded forward") {
  Mlp net(encoder_spec(8, tiny_arch()), 1);
  MlpGrads g = net.zero_grads();
  CHECK_THROWS_AS(net.backward(RMatrix::Zero(6, 1), g), StateError);
  CHECK_THROWS_AS(net.replay(RMatrix::Zero(8, 1)), StateError);
}

TEST_CASE("single linear layer gradient is g x^T") {
  MlpSpec s;
  s.name = "lin";
  s.layers = {{3, 2, Activation::kIdentity}};
  Mlp net(s, 4);
  RMatrix x(3, 1);
  x << 1.0, -2.0, 0.5;
  RMatrix g(2, 1);
  g << 0.3, -0.7;
  net.forward(x, Mode::kEval);
  MlpGrads grads = net.zero_grads();
  const RMatrix gx = net.backward(g, grads);
  CHECK((grads.weight[0] - g * x.transpose()).norm() == 0.0);
  CHECK((grads.bias[0] - g.col(0)).norm() == 0.0);
  CHECK((gx - net.layers()[0].weight.transpose() * g).norm() <= 1e-15);
}

TEST_CASE("backward matches finite differences for all three architectures") {
  const NetArchitecture a = tiny_arch();
  SUBCASE("encoder, LeakyReLU + Tanh") {
    Mlp net(encoder_spec(16, a), 21);
    check_backward(net, Mode::kEval, 3, 100);
    check_backward(net, Mode::kTrain, 3, 101);
  }
  SUBCASE("beamformer decoder, dropout off") {
    Mlp net(beamdec_spec(2 * a.d_latent, 16, a), 22);
    check_backward(net, Mode::kEval, 3, 102);
  }
  SUBCASE("beamformer decoder, frozen dropout masks") {
    Mlp net(beamdec_spec(2 * a.d_latent, 16, a), 23);
    check_backward(net, Mode::kTrain, 4, 103);
  }
  SUBCASE("channel decoder, batchnorm eval") {
    Mlp net(chandec_spec(16, a), 24);
    Rng rng(5);
    for (auto& L : net.layers()) {
      if (L.running_var.size() > 0) {
        for (Eigen::Index i = 0; i < L.running_var.size(); ++i) {
          L.running_mean(i) = rng.normal(0.0, 0.3);
          L.running_var(i) = rng.uniform(0.5, 2.0);
          L.gamma(i) = rng.uniform(0.5, 1.5);
          L.beta(i) = rng.normal(0.0, 0.2);
        }
      }
    }
    check_backward(net, Mode::kEval, 3, 104);
  }
  SUBCASE("channel decoder, batchnorm train") {
    Mlp net(chandec_spec(16, a), 25);
    check_backward(net, Mode::kTrain, 5, 105);
  }
}

TEST_CASE("batchnorm eval with identity statistics equals the plain forward") {
  const NetArchitecture a = tiny_arch();
  MlpSpec bn_spec = chandec_spec(8, a);
  bn_spec.bn_eps = 1e-300;
  Mlp bn(bn_spec, 31);
  MlpSpec plain_spec = bn.spec();
  for (auto& l : plain_spec.layers) l.batchnorm = false;
  Mlp plain(plain_spec, 31);
  for (std::size_t i = 0; i < bn.layers().size(); ++i) {
    plain.layers()[i].weight = bn.layers()[i].weight;
    plain.layers()[i].bias = bn.layers()[i].bias;
  }
  Rng rng(8);
  const RMatrix x = random_real(a.d_latent, 4, rng);
  CHECK(relative_error(bn.infer(x), plain.infer(x)) <= 1e-12);
}

TEST_CASE("training forward updates running statistics with momentum") {
  MlpSpec s;
  s.name = "bn";
  s.layers = {{2, 2, Activation::kIdentity, 0.0, true}};
  Mlp net(s, 3);
  net.layers()[0].weight = RMatrix::Identity(2, 2);
  RMatrix x(2, 4);
  x << 1, 2, 3, 4, 0, 0, 2, 2;
  net.forward(x, Mode::kTrain);
  // batch mean (2.5, 1), unbiased var (5/3, 4/3)
  CHECK(net.layers()[0].running_mean(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(net.layers()[0].running_mean(1) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(net.layers()[0].running_var(0) == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0).epsilon(1e-12));
  CHECK(net.layers()[0].running_var(1) == doctest::Approx(0.9 + 0.1 * 4.0 / 3.0).epsilon(1e-12));
  net.forward(x, Mode::kEval);
  CHECK(net.layers()[0].running_mean(0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("inverted dropout matches the inference forward in expectation") {
  MlpSpec s;
  s.name = "lin";
  s.layers = {{6, 8, Activation::kIdentity, 0.2}, {8, 3, Activation::kIdentity}};
  Mlp net(s, 12);
  Rng rng(40);
  const RMatrix x = random_real(6, 1, rng);
  const RVector ref = net.infer(x).col(0);
  constexpr int kDraws = 10000;
  RVector sum = RVector::Zero(3);
  RVector sq = RVector::Zero(3);
  for (int t = 0; t < kDraws; ++t) {
    const RVector y = net.forward(x, Mode::kTrain, &rng).col(0);
    sum += y;
    sq += y.cwiseProduct(y);
  }
  const RVector mean = sum / kDraws;
  for (int i = 0; i < 3; ++i) {
    const double var = sq(i) / kDraws - mean(i) * mean(i);
    const double se = std::sqrt(var / kDraws);
    CHECK(std::abs(mean(i) - ref(i)) <= 3.0 * se);
  }
}

TEST_CASE("inference is deterministic") {
  const auto nets = make_networks(2, 1, 4, tiny_arch(), 7);
  Rng rng(2);
  RVector z(12);
  for (int i = 0; i < 12; ++i) z(i) = rng.uniform(-1, 1);
  const CMatrix a = decode_beamformer(nets.beamdec, z, 1.0, 4, 2);
  const CMatrix b = decode_beamformer(nets.beamdec, z, 1.0, 4, 2);
  CHECK((a - b).norm() == 0.0);
}

TEST_CASE("channel decoder reshape bookkeeping") {
  MlpSpec s;
  s.name = "id";
  s.layers = {{4, 4, Activation::kIdentity}};
  Mlp net(s, 1);
  net.layers()[0].weight = RMatrix::Identity(4, 4);
  RVector v(4);
  v << 1.0, 0.0, 0.25, 0.0;
  const CMatrix H = decode_channel(net, v, 1, 2);
  CHECK(H(0, 0) == cd(1.0, 0.25));
  CHECK(H(0, 1) == cd(0.0, 0.0));
  CHECK((realify(H) - v).norm() == 0.0);
}

TEST_CASE("normalization hits the power budget") {
  Rng rng(6);
  for (double P : {0.5, 1.0, 7.0}) {
    const RVector raw = random_real(16, 1, rng, 3.0).col(0);
    const CMatrix W = complexify(normalize_power(raw, P, 4, 2), 4, 2);
    CHECK(std::abs(W.norm() - std::sqrt(P)) <= 1e-12);
  }
  CHECK_THROWS_AS(normalize_power(RVector::Zero(16), 1.0, 4, 2), DegenerateError);
}

TEST_CASE("hybrid normalization with orthonormal analog columns equals digital") {
  Rng rng(7);
  const CMatrix G = complex_gaussian_matrix(8, 3, 1.0, rng);
  const CMatrix Q = Eigen::HouseholderQR<CMatrix>(G).householderQ() * CMatrix::Identity(8, 3);
  const RVector raw = random_real(12, 1, rng).col(0);
  const RVector dig = normalize_power(raw, 2.0, 3, 2);
  const RVector hyb = normalize_power(raw, 2.0, 3, 2, &Q);
  CHECK(relative_error(hyb, dig) <= 1e-12);
  const CMatrix WD = complexify(hyb, 3, 2);
  CHECK(std::abs((Q * WD).norm() - std::sqrt(2.0)) <= 1e-12);
}

TEST_CASE("normalization backward matches finite differences") {
  Rng rng(8);
  const CMatrix A = complex_gaussian_matrix(6, 3, 1.0, rng);
  const RVector raw = random_real(12, 1, rng).col(0);
  const RVector g = random_real(12, 1, rng).col(0);
  for (const CMatrix* analog : {static_cast<const CMatrix*>(nullptr), &A}) {
    auto f = [&](const RVector& u) { return normalize_power(u, 3.0, 3, 2, analog).dot(g); };
    const RVector fd = fd_gradient(f, raw, 1e-6);
    CHECK(relative_error(normalize_power_backward(raw, g, 3.0, 3, 2, analog), fd) <= 1e-6);
  }
}

TEST_CASE("normalization Jacobian annihilates the radial direction") {
  Rng rng(9);
  RVector w = random_real(10, 1, rng).col(0);
  w *= std::sqrt(2.0) / w.norm();
  // J is symmetric, so J w = J^T w = backward(w, upstream = w).
  const RVector Jw = normalize_power_backward(w, w, 2.0, 5, 1);
  CHECK(Jw.norm() <= 1e-12);
}

TEST_CASE("sgd with zero learning rate leaves parameters unchanged") {
  Mlp net(encoder_spec(8, tiny_arch()), 3);
  const RVector p0 = net.flat_parameters();
  MlpGrads g = net.zero_grads();
  Rng rng(1);
  net.forward(random_real(8, 2, rng), Mode::kEval);
  net.backward(RMatrix::Ones(6, 2), g);
  ParamUpdater up(net, {OptimizerKind::kSgd, 0.0});
  up.step(net, g);
  CHECK((net.flat_parameters() - p0).norm() == 0.0);
  ParamUpdater sgd(net, {OptimizerKind::kSgd, 0.1});
  sgd.step(net, g);
  CHECK(relative_error(net.flat_parameters(), RVector(p0 - 0.1 * net.flatten(g))) <= 1e-15);
}

TEST_CASE("adam first step moves each parameter by about lr") {
  Mlp net(encoder_spec(8, tiny_arch()), 3);
  const RVector p0 = net.flat_parameters();
  MlpGrads g = net.zero_grads();
  Rng rng(1);
  net.forward(random_real(8, 2, rng), Mode::kEval);
  net.backward(RMatrix::Ones(6, 2), g);
  ParamUpdater up(net, {OptimizerKind::kAdam, 1e-3});
  up.step(net, g);
  const RVector d = net.flat_parameters() - p0;
  const RVector gf = net.flatten(g);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (std::abs(gf(i)) > 1e-6) {
      CHECK(std::abs(std::abs(d(i)) - 1e-3) <= 1e-5);
    }
  }
}

TEST_CASE("checkpoint roundtrip and architecture check") {
  const auto dir = std::filesystem::temp_directory_path() / "beamsim_test_nets";
  std::filesystem::create_directories(dir);
  const auto path = dir / "ck.bin";
  EdnNetworks nets = make_networks(2, 1, 4, tiny_arch(), 77);
  nets.chandec.layers()[0].running_mean(0) = 0.5;
  CheckpointMeta meta{77, 12, 0.12, true, false};
  write_checkpoint(path, nets, meta);

  EdnNetworks other = make_networks(2, 1, 4, tiny_arch(), 1);
  const CheckpointMeta back = read_checkpoint(path, other);
  CHECK(back.seed == 77);
  CHECK(back.kd_epoch == 12);
  CHECK(back.alpha == 0.12);
  CHECK(back.beamformer_trained);
  CHECK_FALSE(back.channel_decoder_trained);
  CHECK((other.encoder.flat_parameters() - nets.encoder.flat_parameters()).norm() == 0.0);
  CHECK((other.beamdec.flat_parameters() - nets.beamdec.flat_parameters()).norm() == 0.0);
  CHECK(other.chandec.layers()[0].running_mean(0) == 0.5);
  CHECK(other.encoder.init_seed() == nets.encoder.init_seed());

  NetArchitecture wider = tiny_arch();
  wider.encoder_hidden = {24, 17};
  EdnNetworks mismatched = make_networks(2, 1, 4, wider, 1);
  CHECK_THROWS_AS(read_checkpoint(path, mismatched), ConfigError);
  CHECK_THROWS_AS(read_checkpoint(dir / "absent.bin", mismatched), ConfigError);
  std::filesystem::remove_all(dir);
}
