#include "sigma_he/ybus.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace sigma_he {

std::vector<int> row_order(const NetworkCase& network) {
  std::vector<int> ids;
  ids.reserve(network.buses.size());
  ids.push_back(network.buses[network.swing_position()].id);
  for (const auto& b : network.buses) {
    if (b.type != BusType::Swing) {
      ids.push_back(b.id);
    }
  }
  return ids;
}

Eigen::Index AdmittanceMatrix::row_of(int bus_id) const {
  const auto it = std::find(bus_ids.begin(), bus_ids.end(), bus_id);
  if (it == bus_ids.end()) {
    throw std::out_of_range("bus " + std::to_string(bus_id) + " not in admittance matrix");
  }
  return static_cast<Eigen::Index>(it - bus_ids.begin());
}

AdmittanceMatrix build_ybus(const NetworkCase& network) {
  AdmittanceMatrix out;
  out.bus_ids = row_order(network);
  const auto n = static_cast<Eigen::Index>(out.bus_ids.size());

  std::vector<Eigen::Triplet<Complex>> triplets;
  triplets.reserve(network.buses.size() + 4 * network.branches.size());

  for (const auto& b : network.buses) {
    if (b.g_shunt != 0.0 || b.b_shunt != 0.0) {
      const auto r = out.row_of(b.id);
      triplets.emplace_back(r, r, Complex(b.g_shunt, b.b_shunt));
    }
  }

  for (const auto& br : network.branches) {
    if (!br.in_service) {
      continue;
    }
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex half_charging(0.0, br.b_charging / 2.0);
    const Complex tap = std::polar(br.tap, br.shift);
    const auto f = out.row_of(br.from);
    const auto t = out.row_of(br.to);
    triplets.emplace_back(f, f, (ys + half_charging) / (br.tap * br.tap));
    triplets.emplace_back(t, t, ys + half_charging);
    triplets.emplace_back(f, t, -ys / std::conj(tap));
    triplets.emplace_back(t, f, -ys / tap);
  }

  out.y.resize(n, n);
  out.y.setFromTriplets(triplets.begin(), triplets.end());
  out.y.makeCompressed();
  return out;
}

}  // namespace sigma_he
