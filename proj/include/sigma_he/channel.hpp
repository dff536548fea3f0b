#pragma once

#include <complex>
#include <stdexcept>

#include "sigma_he/power_series.hpp"

namespace sigma_he {

/// Closed-form algebra of one decoupled two-bus channel. A bus with complex
/// injection S behind a virtual impedance Z from the swing has the normalized
/// voltage U = V / V_sw satisfying U = 1 + sigma / conj(U), where
/// sigma = Z conj(S) / |V_sw|^2.

class ChannelError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// sigma[n] = (M[n] - sum_{tau<n} sigma[tau] conj(W[n - tau])) / conj(W[0]),
/// i.e. the deconvolution M = sigma * W*. Throws ChannelError if W[0] = 0.
ComplexPowerSeries sigma_coefficients(const ComplexPowerSeries& w, const ComplexPowerSeries& m);

/// 1/4 + Re(sigma) - Im(sigma)^2; non-negative iff a channel voltage exists.
double boundary_delta(std::complex<double> sigma);

/// Upper-branch channel voltage 1/2 + sqrt(delta) + j Im(sigma).
/// Throws ChannelError when delta < 0.
std::complex<double> two_bus_voltage(std::complex<double> sigma);

/// Z = sigma |V_sw|^2 / conj(S). Throws ChannelError for a zero injection.
std::complex<double> virtual_impedance(std::complex<double> sigma, std::complex<double> injection,
                                       std::complex<double> v_swing);

/// sigma of a channel whose normalized voltage is u: conj(u) (u - 1).
std::complex<double> sigma_from_voltage(std::complex<double> u);

/// Euclidean distance from sigma to the parabola Re = Im^2 - 1/4.
double distance_to_boundary(std::complex<double> sigma);

}  // namespace sigma_he
