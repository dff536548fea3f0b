#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sigma_he/channel.hpp"
#include "sigma_he/he_engine.hpp"

namespace sigma_he {

/// One sample of a bus channel. u = V / V_sw.
struct SigmaPoint {
  double s = 0.0;
  Complex sigma;
  double delta = 0.0;
  Complex u;
  std::optional<Complex> z_equiv;  // empty for a zero injection
  double vm = 0.0;
  double va = 0.0;  // radians
  double q_gen = 0.0;
  std::size_t stage = 0;
  /// The voltage series had not converged here; u comes from the channel
  /// closed form (or, past the boundary, the unconverged series value).
  bool voltage_from_channel = false;
};

struct SwitchMarker {
  SwitchEvent event;
  Complex sigma;
  std::string reason;  // e.g. "clamp qmax"
};

struct ChannelTrajectory {
  int bus = 0;
  std::vector<SigmaPoint> samples;
  std::vector<SwitchMarker> switches;
  std::optional<double> s_critical;  // first delta <= 0
  double converged_to = 0.0;
  /// Euclidean distance from sigma(1) to the boundary. Diagnostic only; it
  /// does not order buses by criticality.
  std::optional<double> distance_at_one;
};

struct TraceOptions {
  EvalMethod method = EvalMethod::Pade;
  double series_tolerance = 1e-10;
  double s_tolerance = 1e-6;
};

/// Samples every non-swing bus on s_from, s_from + step, ... , s_to. Each s
/// is evaluated on the stage that owns it. A bus trace ends at its first
/// unconverged sigma sample or just after its first delta <= 0.
std::vector<ChannelTrajectory> trace_trajectories(const StagedSolution& solution, double s_from,
                                                  double s_to, double step,
                                                  const TraceOptions& options = {});

enum class CriticalStatus { BoundaryCrossing, ConvergenceLimit, NoCollapseInRange, SwitchOscillation };

std::string_view to_string(CriticalStatus status);

struct CriticalResult {
  CriticalStatus status = CriticalStatus::NoCollapseInRange;
  std::optional<double> s_critical;  // empty when no collapse in range
  int limiting_bus = 0;              // 0 when none
};

/// Grid scan of min over buses of delta, then bisection to `tol`. Ties go to
/// the lower bus id. `solution` should be staged up to at least s_hi.
CriticalResult find_critical_s(const StagedSolution& solution, double s_lo, double s_hi, double tol,
                               double grid_step = 0.01, const TraceOptions& options = {});

struct RankEntry {
  int bus = 0;
  std::optional<double> s_critical;
  /// delta at the latest s every non-crossing trace reached
  double delta_at_common_s = 0.0;
  std::optional<double> distance_at_one;
};

/// Crossing buses first by ascending crossing s, then the rest by ascending
/// delta at the latest common converged s, ties by bus id.
std::vector<RankEntry> rank_weak_buses(const std::vector<ChannelTrajectory>& trajectories);

struct StabilityReport {
  std::vector<ChannelTrajectory> trajectories;
  CriticalResult critical;
  std::vector<RankEntry> ranking;
  StagePlan plan;
};

struct AssessOptions {
  QLimitOptions staging;
  TraceOptions trace;
  double step = 0.01;
  double tol = 1e-6;
};

/// Staging, tracing, critical search and ranking over [s_from, s_to].
StabilityReport assess_stability(const NetworkCase& network, const AdmittanceMatrix& ybus,
                                 double s_from, double s_to, const AssessOptions& options = {});

}  // namespace sigma_he
