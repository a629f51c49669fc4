#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <random>

#include <Eigen/Dense>

#include "beamsim/errors.hpp"

namespace beamsim {

using cd = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

/// Gradient of a real-valued objective f(W) with respect to a complex matrix W.
///
/// Convention used everywhere in the library: grad = 2 * df/d(conj W), which for
/// real f equals df/dRe(W) + j * df/dIm(W). Steepest ascent is W + eta * grad.
using WirtingerGradient = CMatrix;

using RealObjective = std::function<double(const CMatrix&)>;

constexpr double kPi = 3.14159265358979323846;

/// ULA steering vector: entry q (0-based) is exp(j 2 pi d_over_lambda q sin(theta)) / sqrt(n).
CVector array_response(Eigen::Index n, double theta, double d_over_lambda);

/// Central-difference estimate of 2 * df/d(conj w), perturbing real and
/// imaginary parts of each entry independently.
WirtingerGradient wirtinger_fd_oracle(const RealObjective& f, const CMatrix& w, double h = 1e-5);

/// Central-difference gradient of a real function of a real vector.
RVector fd_gradient(const std::function<double(const RVector&)>& f, const RVector& x, double h = 1e-5);

/// ||a - b|| / max(||b||, floor). Used by every oracle comparison.
template <typename A, typename B>
double relative_error(const A& a, const B& b, double floor = 1e-300) {
  const double denom = std::max(static_cast<double>(b.norm()), floor);
  return static_cast<double>((a - b).norm()) / denom;
}

bool all_finite(const CMatrix& m);
bool all_finite(const RMatrix& m);

/// Mixes a base seed with a stream index (splitmix64). Used to give every
/// sample of a batch its own independent stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// Single-owner random stream. Identical seeds reproduce identical draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * unit_(engine_);
  }
  double normal(double mean, double stddev) {
    return mean + stddev * normal_(engine_);
  }
  // Circularly-symmetric CN(0, variance): real and imaginary parts each N(0, variance/2).
  cd complex_normal(double variance) {
    const double s = std::sqrt(variance / 2.0);
    const double re = normal_(engine_);
    const double im = normal_(engine_);
    return {s * re, s * im};
  }
  bool bernoulli(double p) { return unit_(engine_) < p; }
  std::uint64_t next_u64() { return engine_(); }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

CMatrix complex_gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double variance, Rng& rng);

// [vec Re(A); vec Im(A)], column-major.
RVector realify(const CMatrix& a);
// Inverse of realify into a rows x cols matrix.
CMatrix complexify(const Eigen::Ref<const RVector>& v, Eigen::Index rows, Eigen::Index cols);

}  // namespace beamsim
