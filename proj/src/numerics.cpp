#include "beamsim/numerics.hpp"

#include <cmath>
#include <string>

namespace beamsim {

CVector array_response(Eigen::Index n, double theta, double d_over_lambda) {
  if (n < 1) {
    throw InvalidArgument("array_response: antenna count must be >= 1");
  }
  if (!(d_over_lambda > 0.0)) {
    throw InvalidArgument("array_response: d_over_lambda must be positive");
  }
  const double phase_step = 2.0 * kPi * d_over_lambda * std::sin(theta);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  CVector a(n);
  for (Eigen::Index q = 0; q < n; ++q) {
    a(q) = scale * std::polar(1.0, phase_step * static_cast<double>(q));
  }
  return a;
}

WirtingerGradient wirtinger_fd_oracle(const RealObjective& f, const CMatrix& w, double h) {
  if (!(h > 0.0)) {
    throw InvalidArgument("wirtinger_fd_oracle: step must be positive");
  }
  CMatrix grad(w.rows(), w.cols());
  CMatrix probe = w;
  auto eval = [&](const CMatrix& x) {
    const double v = f(x);
    if (!std::isfinite(v)) {
      throw NumericFailure("wirtinger_fd_oracle: objective returned a non-finite value");
    }
    return v;
  };
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      const cd orig = w(i, j);
      probe(i, j) = orig + cd(h, 0.0);
      const double fr_plus = eval(probe);
      probe(i, j) = orig - cd(h, 0.0);
      const double fr_minus = eval(probe);
      probe(i, j) = orig + cd(0.0, h);
      const double fi_plus = eval(probe);
      probe(i, j) = orig - cd(0.0, h);
      const double fi_minus = eval(probe);
      probe(i, j) = orig;
      grad(i, j) = cd((fr_plus - fr_minus) / (2.0 * h), (fi_plus - fi_minus) / (2.0 * h));
    }
  }
  return grad;
}

RVector fd_gradient(const std::function<double(const RVector&)>& f, const RVector& x, double h) {
  RVector g(x.size());
  RVector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double plus = f(probe);
    probe(i) = x(i) - h;
    const double minus = f(probe);
    probe(i) = x(i);
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericFailure("fd_gradient: objective returned a non-finite value");
    }
    g(i) = (plus - minus) / (2.0 * h);
  }
  return g;
}

bool all_finite(const CMatrix& m) {
  return m.real().allFinite() && m.imag().allFinite();
}

bool all_finite(const RMatrix& m) { return m.allFinite(); }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

CMatrix complex_gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double variance, Rng& rng) {
  CMatrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      m(i, j) = rng.complex_normal(variance);
    }
  }
  return m;
}

RVector realify(const CMatrix& a) {
  const Eigen::Index n = a.size();
  RVector v(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v(i) = a.data()[i].real();
    v(n + i) = a.data()[i].imag();
  }
  return v;
}

CMatrix complexify(const Eigen::Ref<const RVector>& v, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index n = rows * cols;
  if (v.size() != 2 * n) {
    throw InvalidArgument("complexify: expected " + std::to_string(2 * n) + " entries, got " +
                          std::to_string(v.size()));
  }
  CMatrix a(rows, cols);
  for (Eigen::Index i = 0; i < n; ++i) {
    a.data()[i] = cd(v(i), v(n + i));
  }
  return a;
}

}  // namespace beamsim
