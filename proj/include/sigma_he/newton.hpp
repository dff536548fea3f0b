#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sigma_he/network.hpp"
#include "sigma_he/ybus.hpp"

namespace sigma_he::oracle {

/// Conventional polar Newton-Raphson on the s-scaled injections: loads and
/// generator real power multiplied by s, generator voltage set-points held.
/// Shares nothing with the embedding engine beyond the network types.

struct NewtonOptions {
  double tolerance = 1e-10;
  int max_iterations = 30;
  /// Switch PV buses to PQ at a violated reactive limit (and back when the
  /// voltage recovers), re-solving until the bus types settle.
  bool enforce_q_limits = false;
  int max_type_passes = 20;
};

/// Reactive limit a PV bus is held at (generator Q, per-unit).
using HeldBuses = std::map<int, double>;

struct PFSolution {
  std::vector<int> bus_ids;  // Y-bus row order
  Eigen::VectorXcd v;
  Eigen::VectorXd q_gen;  // per row; PV and swing rows
  HeldBuses held;
  int iterations = 0;
  double max_mismatch = 0.0;
  bool converged = false;
  std::string message;

  double vm(std::size_t row) const { return std::abs(v[static_cast<Eigen::Index>(row)]); }
};

/// `warm_start` (same row order) replaces the flat start when given.
PFSolution newton_solve(const NetworkCase& network, const AdmittanceMatrix& ybus, double s,
                        const NewtonOptions& options = {}, const PFSolution* warm_start = nullptr,
                        const HeldBuses& held = {});

/// Mismatch vector [dP (non-swing rows); dQ (PQ rows)] at voltages v.
Eigen::VectorXd mismatch(const NetworkCase& network, const AdmittanceMatrix& ybus, double s,
                         const Eigen::VectorXcd& v, const HeldBuses& held = {});

/// Analytic Jacobian of `mismatch` with respect to [angles (non-swing); magnitudes (PQ)].
Eigen::MatrixXd jacobian(const NetworkCase& network, const AdmittanceMatrix& ybus,
                         const Eigen::VectorXcd& v, const HeldBuses& held = {});

/// Central-difference Jacobian of the same map, for checking `jacobian`.
Eigen::MatrixXd finite_difference_jacobian(const NetworkCase& network, const AdmittanceMatrix& ybus,
                                           double s, const Eigen::VectorXcd& v, double h = 1e-6,
                                           const HeldBuses& held = {});

struct ContinuationOptions {
  bool enforce_q_limits = false;
  double s_max = 100.0;
  NewtonOptions newton;
};

struct NoseResult {
  double s_nose = 0.0;
  int weakest_bus = 0;
  double weakest_vm = 0.0;
  bool range_exhausted = false;
  int steps = 0;
  PFSolution state;
};

/// Natural-parameter stepping in s with step halving on divergence until the
/// step falls below `tol`. Returns the last convergent point.
NoseResult continuation_nose(const NetworkCase& network, const AdmittanceMatrix& ybus, double s_start,
                             double ds, double tol, const ContinuationOptions& options = {});

}  // namespace sigma_he::oracle
