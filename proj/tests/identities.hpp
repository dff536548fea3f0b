#pragma once

#include <algorithm>
#include <complex>

#include "sigma_he/he_engine.hpp"

namespace test_support {

// V[n] = V_sw delta_n0 + |V_sw|^2 M[n]
inline std::complex<double> voltage_coeff(const sigma_he::HESolution& sol, Eigen::Index row,
                                          Eigen::Index n) {
  const auto vsw = sol.v_swing();
  std::complex<double> v = std::norm(vsw) * sol.m[static_cast<std::size_t>(row)].at(n);
  if (n == 0) v += vsw;
  return v;
}

// Worst violation over all rows and orders of the coefficient identities:
// current balance, PV magnitude, reciprocal W V = 1 and M = sigma (*) conj(W).
inline double worst_identity_residual(const sigma_he::HESolution& sol) {
  using sigma_he::BusType;
  using C = std::complex<double>;
  const auto& emb = sol.embedding();
  const Eigen::MatrixXcd y = sol.ybus().y.toDense();
  const auto rows = emb.size();
  const auto order = sol.order();
  double worst = 0.0;
  auto note = [&](C err) { worst = std::max(worst, std::abs(err)); };
  for (Eigen::Index n = 0; n <= order; ++n) {
    for (Eigen::Index i = 1; i < rows; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      const auto& w = sol.w[iu];
      C lhs = 0;
      for (Eigen::Index k = 0; k < rows; ++k) lhs += y(i, k) * voltage_coeff(sol, k, n);
      const C prev = n > 0 ? std::conj(w[n - 1]) : C(0);
      C rhs;
      if (emb.types[iu] == BusType::PV) {
        rhs = emb.scaled[i].real() * prev;
        for (Eigen::Index t = 0; t <= n; ++t) rhs -= C(0, sol.q[iu][t]) * std::conj(w[n - t]);
        C mag = 0;
        for (Eigen::Index t = 0; t <= n; ++t) {
          mag += voltage_coeff(sol, i, t) * std::conj(voltage_coeff(sol, i, n - t));
        }
        if (n == 0) mag -= emb.v_sp[i] * emb.v_sp[i];
        note(mag);
      } else {
        rhs = std::conj(emb.scaled[i]) * prev - C(0, emb.fixed_q[i]) * std::conj(w[n]);
      }
      note(lhs - rhs);

      C recip = 0;
      for (Eigen::Index t = 0; t <= n; ++t) recip += w[t] * voltage_coeff(sol, i, n - t);
      if (n == 0) recip -= 1.0;
      note(recip);

      C conv = 0;
      for (Eigen::Index t = 0; t <= n; ++t) conv += sol.sigma[iu][t] * std::conj(w[n - t]);
      note(conv - sol.m[iu][n]);
    }
  }
  return worst;
}

}  // namespace test_support
