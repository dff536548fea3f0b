#pragma once

#include <complex>
#include <vector>

#include <Eigen/Sparse>

#include "sigma_he/network.hpp"

namespace sigma_he {

using Complex = std::complex<double>;
using SparseComplexMatrix = Eigen::SparseMatrix<Complex, Eigen::ColMajor, int>;

/// Nodal admittance matrix. Row 0 is always the swing bus; the remaining rows
/// follow the case's bus order.
struct AdmittanceMatrix {
  SparseComplexMatrix y;
  std::vector<int> bus_ids;  // row -> external bus id

  Eigen::Index size() const { return y.rows(); }
  /// Row of an external bus id; throws std::out_of_range if absent.
  Eigen::Index row_of(int bus_id) const;
};

/// Pi-model assembly with off-nominal taps, phase shifters and bus shunts.
/// Out-of-service branches are skipped.
AdmittanceMatrix build_ybus(const NetworkCase& network);

/// Row order used by build_ybus (swing first).
std::vector<int> row_order(const NetworkCase& network);

}  // namespace sigma_he
