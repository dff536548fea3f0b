#pragma once

#include <complex>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "sigma_he/network.hpp"

namespace test_support {

inline std::filesystem::path source_dir() { return SIGMA_HE_SOURCE_DIR; }
inline std::filesystem::path case_file(const std::string& name) { return source_dir() / "cases" / name; }
inline std::filesystem::path data_file(const std::string& name) {
  return source_dir() / "tests" / "data" / name;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Dense Y-bus straight from the branch list, in the case's bus order.
inline Eigen::MatrixXcd dense_ybus(const sigma_he::NetworkCase& net) {
  using C = std::complex<double>;
  const auto n = static_cast<Eigen::Index>(net.buses.size());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  auto idx = [&](int id) { return static_cast<Eigen::Index>(net.bus_position(id)); };
  for (const auto& br : net.branches) {
    if (!br.in_service) continue;
    const C ys = 1.0 / C(br.r, br.x);
    const C a = std::polar(br.tap, br.shift);
    const C half(0.0, br.b_charging / 2.0);
    const auto f = idx(br.from), t = idx(br.to);
    y(f, f) += (ys + half) / std::norm(a);
    y(t, t) += ys + half;
    y(f, t) -= ys / std::conj(a);
    y(t, f) -= ys / a;
  }
  for (const auto& b : net.buses) y(idx(b.id), idx(b.id)) += C(b.g_shunt, b.b_shunt);
  return y;
}

}  // namespace test_support
