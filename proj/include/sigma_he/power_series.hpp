#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <initializer_list>
#include <limits>
#include <optional>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

namespace sigma_he {

template <typename T>
struct is_complex : std::false_type {};
template <typename T>
struct is_complex<std::complex<T>> : std::true_type {};

template <typename Scalar>
Scalar conj_if_complex(const Scalar& x) {
  if constexpr (is_complex<Scalar>::value) {
    return std::conj(x);
  } else {
    return x;
  }
}

/// Truncated power series f(s) = sum_n c[n] s^n with coefficients c[0..order].
template <typename Scalar>
class PowerSeries {
public:
  using Coefficients = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  PowerSeries() = default;
  explicit PowerSeries(Coefficients coeffs) : coeffs_(std::move(coeffs)) {}
  PowerSeries(std::initializer_list<Scalar> coeffs) : coeffs_(static_cast<Eigen::Index>(coeffs.size())) {
    std::copy(coeffs.begin(), coeffs.end(), coeffs_.data());
  }

  static PowerSeries zero(Eigen::Index order) {
    return PowerSeries(Coefficients::Zero(order + 1));
  }

  Eigen::Index size() const { return coeffs_.size(); }
  Eigen::Index order() const { return coeffs_.size() - 1; }
  bool empty() const { return coeffs_.size() == 0; }

  const Scalar& operator[](Eigen::Index n) const { return coeffs_[n]; }
  Scalar& operator[](Eigen::Index n) { return coeffs_[n]; }

  /// Coefficient n, or zero past the stored order.
  Scalar at(Eigen::Index n) const { return n < coeffs_.size() ? coeffs_[n] : Scalar(0); }

  const Coefficients& coeffs() const { return coeffs_; }

  /// Grows (zero-filled) or shrinks to the given order.
  void resize_order(Eigen::Index order) {
    const auto old = coeffs_.size();
    coeffs_.conservativeResize(order + 1);
    for (Eigen::Index n = old; n <= order; ++n) {
      coeffs_[n] = Scalar(0);
    }
  }

  PowerSeries truncated(Eigen::Index order) const {
    return PowerSeries(Coefficients(coeffs_.head(std::min(order + 1, coeffs_.size()))));
  }

  bool operator==(const PowerSeries& other) const {
    return coeffs_.size() == other.coeffs_.size() && coeffs_ == other.coeffs_;
  }

private:
  Coefficients coeffs_;
};

using ComplexPowerSeries = PowerSeries<std::complex<double>>;
using RealPowerSeries = PowerSeries<double>;

/// Series of f*(s*): for real s its value is conj(f(s)).
template <typename Scalar>
PowerSeries<Scalar> conj_series(const PowerSeries<Scalar>& f) {
  return PowerSeries<Scalar>(f.coeffs().unaryExpr([](const Scalar& x) { return conj_if_complex(x); }));
}

/// (f * g)[n] restricted to tau in [lo, hi]: sum f[tau] g[n - tau].
template <typename Scalar>
Scalar convolution_at(const PowerSeries<Scalar>& f, const PowerSeries<Scalar>& g, Eigen::Index n,
                      Eigen::Index lo, Eigen::Index hi) {
  Scalar acc(0);
  for (Eigen::Index tau = lo; tau <= hi; ++tau) {
    acc += f.at(tau) * g.at(n - tau);
  }
  return acc;
}

template <typename Scalar>
Scalar convolution_at(const PowerSeries<Scalar>& f, const PowerSeries<Scalar>& g, Eigen::Index n) {
  return convolution_at(f, g, n, 0, n);
}

/// Cauchy product truncated at the smaller of the two orders.
template <typename Scalar>
PowerSeries<Scalar> convolve(const PowerSeries<Scalar>& f, const PowerSeries<Scalar>& g) {
  const auto order = std::min(f.order(), g.order());
  auto out = PowerSeries<Scalar>::zero(order);
  for (Eigen::Index n = 0; n <= order; ++n) {
    out[n] = convolution_at(f, g, n);
  }
  return out;
}

/// Horner partial sum.
template <typename Scalar>
Scalar evaluate_direct(const PowerSeries<Scalar>& f, double s) {
  Scalar acc(0);
  for (Eigen::Index n = f.order(); n >= 0; --n) {
    acc = acc * s + f[n];
  }
  return acc;
}

/// p(t)/q(t) with q(0) = 1.
template <typename Scalar>
struct RationalApproximant {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> numerator;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> denominator;

  Scalar operator()(double t) const {
    Scalar p(0);
    for (Eigen::Index n = numerator.size() - 1; n >= 0; --n) {
      p = p * t + numerator[n];
    }
    Scalar q(0);
    for (Eigen::Index n = denominator.size() - 1; n >= 0; --n) {
      q = q * t + denominator[n];
    }
    return p / q;
  }
};

/// [num_degree/den_degree] Pade approximant by the SVD-based robust algorithm
/// of Gonnet, Guettel and Trefethen: spurious pole-zero pairs are removed by
/// reducing the denominator degree to the numerical rank of the Toeplitz block.
/// Returns nullopt only if the reduced denominator still vanishes at 0.
template <typename Scalar>
std::optional<RationalApproximant<Scalar>> pade_approximant(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& coeffs, Eigen::Index num_degree,
    Eigen::Index den_degree, double tol = 1e-14) {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Eigen::Index m = num_degree;
  Eigen::Index n = den_degree;
  Vector c = Vector::Zero(m + n + 1);
  const auto avail = std::min(c.size(), coeffs.size());
  c.head(avail) = coeffs.head(avail);

  RationalApproximant<Scalar> out;
  const double cnorm = c.norm();
  const double ts = tol * cnorm;
  if (c.head(m + 1).cwiseAbs().maxCoeff() <= tol * c.cwiseAbs().maxCoeff()) {
    out.numerator = Vector::Zero(1);
    out.denominator = Vector::Ones(1);
    return out;
  }

  auto toeplitz = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix z = Matrix::Zero(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols && j <= i; ++j) {
        z(i, j) = c[i - j];
      }
    }
    return z;
  };

  Vector a;
  Vector b;
  while (true) {
    if (n == 0) {
      a = c.head(m + 1);
      b = Vector::Ones(1);
      break;
    }
    const Matrix z = toeplitz(m + n + 1, n + 1);
    const Matrix block = z.middleRows(m + 1, n);
    Eigen::JacobiSVD<Matrix> svd(block, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < sv.size(); ++k) {
      if (sv[k] > ts) {
        ++rank;
      }
    }
    if (rank == n) {
      b = svd.matrixV().col(n);
      // Reweighted QR null vector for symmetry of the coefficient pattern.
      const Eigen::Matrix<double, Eigen::Dynamic, 1> weights =
          b.cwiseAbs().array() + std::sqrt(std::numeric_limits<double>::epsilon());
      const Matrix scaled = block * weights.cast<Scalar>().asDiagonal();
      Eigen::HouseholderQR<Matrix> qr(scaled.adjoint());
      const Matrix q = qr.householderQ() * Matrix::Identity(n + 1, n + 1);
      b = weights.cast<Scalar>().asDiagonal() * q.col(n);
      b /= b.norm();
      a = z.topRows(m + 1) * b;
      // Drop a common factor t^lambda.
      Eigen::Index first = 0;
      while (first < b.size() && std::abs(b[first]) <= tol) {
        ++first;
      }
      if (first == b.size()) {
        return std::nullopt;
      }
      b = Vector(b.tail(b.size() - first));
      a = Vector(a.tail(std::max<Eigen::Index>(a.size() - first, 1)));
      Eigen::Index last = b.size() - 1;
      while (last > 0 && std::abs(b[last]) <= tol) {
        --last;
      }
      b = Vector(b.head(last + 1));
      break;
    }
    m -= n - rank;
    n = rank;
  }

  Eigen::Index last = a.size() - 1;
  while (last > 0 && std::abs(a[last]) <= ts) {
    --last;
  }
  a = Vector(a.head(last + 1));
  if (std::abs(b[0]) == 0.0) {
    return std::nullopt;
  }
  out.numerator = a / b[0];
  out.denominator = b / b[0];
  return out;
}

enum class EvalMethod { Direct, Pade };

template <typename Scalar>
struct SeriesValue {
  Scalar value{};
  /// Direct: magnitude of the last term. Pade: spread against the approximants
  /// built from one and two fewer coefficients.
  double error_estimate = 0.0;
  /// Pade construction failed and the direct sum was used instead.
  bool fell_back = false;
};

/// Near-diagonal Pade approximants of one series built once and evaluated at
/// any real s. Coefficients are rescaled by a radius estimated from the tail so
/// the rank test is relative to the terms that matter near that radius.
template <typename Scalar>
class PadeEvaluator {
public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  explicit PadeEvaluator(const PowerSeries<Scalar>& f) : series_(f) {
    if (f.empty()) {
      throw std::invalid_argument("cannot evaluate an empty series");
    }
    const auto order = f.order();
    if (order < 2) {
      return;
    }
    const auto half = order / 2;
    const double tail = std::abs(f[order]);
    const double mid = std::abs(f[half]);
    if (tail > 0.0 && mid > 0.0) {
      const double r = std::pow(mid / tail, 1.0 / static_cast<double>(order - half));
      if (std::isfinite(r) && r > 0.0) {
        scale_ = r;
      }
    }
    for (Eigen::Index d = 0; d < 3; ++d) {
      const Eigen::Index n = order - d;
      Vector c(n + 1);
      double power = 1.0;
      for (Eigen::Index k = 0; k <= n; ++k) {
        c[k] = f[k] * power;
        power *= scale_;
      }
      auto approx = pade_approximant<Scalar>(c, n / 2, n - n / 2);
      if (!approx) {
        return;
      }
      approx_[static_cast<std::size_t>(d)] = std::move(*approx);
    }
    usable_ = true;
  }

  double scale() const { return scale_; }
  bool usable() const { return usable_; }

  SeriesValue<Scalar> operator()(double s, EvalMethod method) const {
    SeriesValue<Scalar> out;
    const auto order = series_.order();
    if (method == EvalMethod::Pade && s == 0.0) {
      out.value = series_[0];
      return out;
    }
    if (method == EvalMethod::Pade && usable_) {
      const double t = s / scale_;
      const Scalar full = approx_[0](t);
      const Scalar less1 = approx_[1](t);
      const Scalar less2 = approx_[2](t);
      if (std::isfinite(std::abs(full)) && std::isfinite(std::abs(less1)) &&
          std::isfinite(std::abs(less2))) {
        out.value = full;
        out.error_estimate = std::max(std::abs(full - less1), std::abs(full - less2));
        return out;
      }
    }
    out.fell_back = method == EvalMethod::Pade;
    out.value = evaluate_direct(series_, s);
    out.error_estimate =
        order == 0 ? 0.0 : std::abs(series_[order]) * std::pow(std::abs(s), static_cast<double>(order));
    return out;
  }

private:
  PowerSeries<Scalar> series_;
  double scale_ = 1.0;
  bool usable_ = false;
  std::array<RationalApproximant<Scalar>, 3> approx_{};
};

/// One-off evaluation. Pade falls back to the direct sum when construction
/// fails or fewer than three coefficients exist.
template <typename Scalar>
SeriesValue<Scalar> evaluate(const PowerSeries<Scalar>& f, double s, EvalMethod method) {
  return PadeEvaluator<Scalar>(f)(s, method);
}

/// Location of a singularity on the positive real axis from the tail of the
/// coefficients, by Domb-Sykes extrapolation of c[n] / c[n-1] linear in 1/n.
/// Empty unless the last `window` estimates are positive-real and agree to
/// within `spread`.
template <typename Scalar>
std::optional<double> real_singularity(const PowerSeries<Scalar>& f, Eigen::Index window = 5,
                                       double spread = 1e-2) {
  const auto order = f.order();
  if (order < window + 10) {
    return std::nullopt;
  }
  std::vector<double> estimates;
  for (Eigen::Index n = order - window + 1; n <= order; ++n) {
    const auto a = f[n - 2];
    const auto b = f[n - 1];
    const auto c = f[n];
    if (std::abs(a) == 0.0 || std::abs(b) == 0.0 || std::abs(c) == 0.0) {
      return std::nullopt;
    }
    const std::complex<double> r1 = std::complex<double>(c) / std::complex<double>(b);
    const std::complex<double> r0 = std::complex<double>(b) / std::complex<double>(a);
    const std::complex<double> inv = static_cast<double>(n) * r1 - static_cast<double>(n - 1) * r0;
    if (!(inv.real() > 0.0) || std::abs(inv.imag()) > spread * inv.real()) {
      return std::nullopt;
    }
    estimates.push_back(1.0 / inv.real());
  }
  const auto [lo, hi] = std::minmax_element(estimates.begin(), estimates.end());
  if (*hi - *lo > spread * *hi) {
    return std::nullopt;
  }
  return estimates.back();
}

}  // namespace sigma_he
