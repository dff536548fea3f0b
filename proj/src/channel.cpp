#include "sigma_he/channel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace sigma_he {

ComplexPowerSeries sigma_coefficients(const ComplexPowerSeries& w, const ComplexPowerSeries& m) {
  if (w.empty() || m.empty()) {
    throw ChannelError("sigma needs at least one W and M coefficient");
  }
  const std::complex<double> w0_conj = std::conj(w[0]);
  if (w0_conj == std::complex<double>(0.0, 0.0)) {
    throw ChannelError("degenerate germ: W[0] = 0");
  }
  const auto order = m.order();
  auto sigma = ComplexPowerSeries::zero(order);
  for (Eigen::Index n = 0; n <= order; ++n) {
    std::complex<double> acc = m[n];
    for (Eigen::Index tau = 0; tau < n; ++tau) {
      acc -= sigma[tau] * std::conj(w.at(n - tau));
    }
    sigma[n] = acc / w0_conj;
  }
  return sigma;
}

double boundary_delta(std::complex<double> sigma) {
  return 0.25 + sigma.real() - sigma.imag() * sigma.imag();
}

std::complex<double> two_bus_voltage(std::complex<double> sigma) {
  const double delta = boundary_delta(sigma);
  if (delta < 0.0) {
    throw ChannelError("infeasible channel: delta < 0");
  }
  return {0.5 + std::sqrt(delta), sigma.imag()};
}

std::complex<double> virtual_impedance(std::complex<double> sigma, std::complex<double> injection,
                                       std::complex<double> v_swing) {
  if (std::abs(injection) == 0.0) {
    throw ChannelError("virtual impedance undefined for zero injection");
  }
  return sigma * std::norm(v_swing) / std::conj(injection);
}

std::complex<double> sigma_from_voltage(std::complex<double> u) { return std::conj(u) * (u - 1.0); }

double distance_to_boundary(std::complex<double> sigma) {
  // Stationary points of |sigma - (t^2 - 1/4 + j t)|^2 solve
  // 2 t^3 + (1/2 - 2 x) t - y = 0 with x = Re(sigma), y = Im(sigma).
  const double x = sigma.real();
  const double y = sigma.imag();
  const double p = (0.5 - 2.0 * x) / 2.0;  // t^3 + p t + q = 0
  const double q = -y / 2.0;

  std::array<double, 3> roots{};
  int count = 0;
  const double disc = q * q / 4.0 + p * p * p / 27.0;
  if (disc > 0.0) {
    const double sq = std::sqrt(disc);
    roots[count++] = std::cbrt(-q / 2.0 + sq) + std::cbrt(-q / 2.0 - sq);
  } else {
    const double r = std::sqrt(-p / 3.0);
    const double arg = r == 0.0 ? 0.0 : std::clamp(-q / (2.0 * r * r * r), -1.0, 1.0);
    const double phi = std::acos(arg);
    for (int k = 0; k < 3; ++k) {
      roots[count++] = 2.0 * r * std::cos((phi - 2.0 * M_PI * k) / 3.0);
    }
  }
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < count; ++k) {
    const double t = roots[k];
    best = std::min(best, std::hypot(x - (t * t - 0.25), y - t));
  }
  return best;
}

}  // namespace sigma_he
