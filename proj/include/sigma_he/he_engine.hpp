#pragma once

#include <complex>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sigma_he/network.hpp"
#include "sigma_he/power_series.hpp"
#include "sigma_he/ybus.hpp"

namespace sigma_he {

/// A numerical procedure failed (germ did not converge, singular recursion).
class NumericalError : public std::runtime_error {
public:
  NumericalError(const std::string& what, std::vector<double> residual_history = {})
      : std::runtime_error(what), residual_history_(std::move(residual_history)) {}

  const std::vector<double>& residual_history() const noexcept { return residual_history_; }

private:
  std::vector<double> residual_history_;
};

struct HEOptions {
  int order = 30;
  double germ_tolerance = 1e-12;
  int germ_max_iterations = 50;
  /// Per-order solve timings on std::clog.
  bool verbose = false;
};

enum class LimitSide { QMax, QMin };

std::string_view to_string(LimitSide side);

/// A PV bus held at a reactive limit (treated as PQ with constant generator Q).
struct LimitClamp {
  int bus = 0;
  LimitSide side = LimitSide::QMax;
  double q_gen = 0.0;

  bool operator==(const LimitClamp&) const = default;
};

/// Per-row injection model of one embedding. Net complex injection at bus i:
///   PQ:  S_i(s) = s * scaled[i] + j * fixed_q[i]
///   PV:  S_i(s) = s * Re(scaled[i]) + j * Q_i(s)      (Q_i net, solved for)
/// Loads and generator real power are scaled by s; shunts and line charging
/// are network elements and are not.
struct Embedding {
  Complex v_swing;
  std::vector<BusType> types;  // per Y-bus row; row 0 is the swing
  Eigen::VectorXcd scaled;
  Eigen::VectorXd fixed_q;
  Eigen::VectorXd q_load;  // to recover generator Q = net Q + s * q_load
  Eigen::VectorXd v_sp;
  std::vector<LimitClamp> clamps;

  Eigen::Index size() const { return static_cast<Eigen::Index>(types.size()); }
};

Embedding make_embedding(const NetworkCase& network, const AdmittanceMatrix& ybus,
                         std::span<const LimitClamp> clamps = {});

/// Order-0 coefficients: the no-load state with PV magnitudes enforced.
struct Germ {
  Eigen::VectorXcd w;
  Eigen::VectorXcd m;
  Eigen::VectorXd q;  // net reactive injection; zero on non-PV rows
  std::vector<double> residual_history;
  int iterations = 0;
};

Germ compute_germ(const Embedding& embedding, const AdmittanceMatrix& ybus,
                  const HEOptions& options = {});

/// Factored order-n system, shared by every solution extended from the same germ.
class RecursionSystem;

/// Series solution of one embedding. Vectors are indexed by Y-bus row; the
/// swing row carries W = 1/V_sw, M = 0 and an empty sigma. q is non-empty only
/// on PV rows.
///
///   V_i(s) = V_sw (1 + conj(V_sw) M_i(s)),   W_i = 1 / V_i,   M_i = sigma_i W_i*
struct HESolution {
  std::vector<ComplexPowerSeries> w;
  std::vector<ComplexPowerSeries> m;
  std::vector<ComplexPowerSeries> sigma;
  std::vector<RealPowerSeries> q;
  Germ germ;
  std::shared_ptr<const RecursionSystem> system;

  /// Approximants of m, sigma and q per row, rebuilt whenever the order changes.
  struct Evaluators {
    std::vector<std::optional<PadeEvaluator<Complex>>> m;
    std::vector<std::optional<PadeEvaluator<Complex>>> sigma;
    std::vector<std::optional<PadeEvaluator<double>>> q;
  };
  std::shared_ptr<const Evaluators> evaluators;

  Eigen::Index order() const { return w.empty() ? -1 : w.front().order(); }
  const Embedding& embedding() const;
  const AdmittanceMatrix& ybus() const;
  Complex v_swing() const { return embedding().v_swing; }
};

/// Germ plus factorization; the returned solution has order 0.
HESolution initialize(const Embedding& embedding, const AdmittanceMatrix& ybus,
                      const HEOptions& options = {});

/// Recursion up to target_order, reusing the factorization held by `solution`.
HESolution extend_series(HESolution solution, int target_order, const HEOptions& options = {});

/// Germ and recursion for the declared bus types in one call.
HESolution solve_series(const NetworkCase& network, const AdmittanceMatrix& ybus,
                        const HEOptions& options = {}, std::span<const LimitClamp> clamps = {});

/// Evaluated state of a solution at a real load scale.
struct StateSample {
  double s = 0.0;
  Eigen::VectorXcd v;
  Eigen::VectorXcd sigma;  // sigma(0) is unused (swing)
  Eigen::VectorXd q_net;   // non-PV rows carry the fixed/derived net Q
  Eigen::VectorXd q_gen;
  Eigen::VectorXd v_error;      // per row, over the m and q series
  Eigen::VectorXd sigma_error;  // per row, sigma series only
  double error_estimate = 0.0;  // max over the evaluated series
  bool fell_back = false;
};

/// `with_sigma = false` skips the sigma series (sigma and sigma_error stay zero).
StateSample evaluate_state(const HESolution& solution, double s, EvalMethod method,
                           bool with_sigma = true);

/// Max of |S_calc - S_spec| (P everywhere, Q on PQ rows and against the Q
/// series on PV rows) and | |V|^2 - v_sp^2 | on PV rows.
double max_mismatch(const HESolution& solution, const StateSample& sample);

/// A sample counts as converged when every evaluated series agrees with its
/// lower-order approximants to within `series_tolerance`.
struct ConvergenceCriteria {
  EvalMethod method = EvalMethod::Pade;
  double series_tolerance = 1e-10;
};

bool is_converged(const StateSample& sample, const ConvergenceCriteria& criteria);

/// Nearest positive real singularity over the voltage series, if the
/// coefficient tails agree on one.
std::optional<double> series_singularity(const HESolution& solution);

/// Largest s in [s_lo, s_hi] at which the solution is converged, by grid scan
/// then bisection to s_tol. Returns s_lo if s_lo itself is not converged.
/// When sampling stalls below a positive real series singularity the
/// singularity is returned instead.
double convergence_limit(const HESolution& solution, double s_lo, double s_hi,
                         const ConvergenceCriteria& criteria, double grid_step = 0.01,
                         double s_tol = 1e-6);

// ---------------------------------------------------------------------------
// Reactive-limit staging.
// ---------------------------------------------------------------------------

enum class SwitchKind { Clamp, Release };

struct SwitchEvent {
  int bus = 0;
  SwitchKind kind = SwitchKind::Clamp;
  LimitSide side = LimitSide::QMax;
  double s = 0.0;
};

struct Stage {
  std::vector<LimitClamp> clamps;
  double s_start = 0.0;
  double s_end = 0.0;
};

enum class StageStatus {
  Completed,      // reached s_max
  NonConvergent,  // the last stage stopped converging before s_max
  Oscillating,    // a bus switched more than the allowed number of times
};

std::string_view to_string(StageStatus status);

struct StagePlan {
  std::vector<Stage> stages;
  std::vector<SwitchEvent> events;
  StageStatus status = StageStatus::Completed;
  double last_valid_s = 0.0;
  /// last_valid_s, or the series singularity of the last stage when sampling
  /// stalled just short of it.
  double convergence_limit = 0.0;
  std::string diagnostic;
};

struct QLimitOptions {
  HEOptions he;
  ConvergenceCriteria convergence;
  bool enforce_limits = true;
  double grid_step = 0.01;
  double s_tolerance = 1e-6;
  int max_switches_per_bus = 4;
};

struct StagedSolution {
  std::vector<HESolution> stages;
  StagePlan plan;

  /// Index of the stage whose interval contains s (the later stage at a
  /// boundary). Throws std::out_of_range past the last valid s.
  std::size_t stage_index(double s) const;
  const HESolution& at(double s) const { return stages[stage_index(s)]; }
};

/// Re-embeds from s = 0 after every limit switch; each stage is used only on
/// its own [s_start, s_end] interval.
StagedSolution solve_with_qlimits(const NetworkCase& network, const AdmittanceMatrix& ybus,
                                  double s_max, const QLimitOptions& options = {});

}  // namespace sigma_he
