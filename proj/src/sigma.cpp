#include "sigma_he/sigma.hpp"

#include "sigma_he/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sigma_he {

std::string_view to_string(CriticalStatus status) {
  switch (status) {
    case CriticalStatus::BoundaryCrossing:
      return "boundary crossing";
    case CriticalStatus::ConvergenceLimit:
      return "collapse ~ convergence limit";
    case CriticalStatus::NoCollapseInRange:
      return "no collapse in range";
    case CriticalStatus::SwitchOscillation:
      return "switch oscillation";
  }
  return "unknown";
}

namespace {

struct Located {
  StateSample sample;
  std::size_t stage = 0;
};

// Past the last valid s only a non-convergent final stage is still usable;
// per-bus sigma convergence then decides.
std::optional<Located> sample_at(const StagedSolution& sol, double s, EvalMethod method) {
  if (sol.stages.empty()) {
    return std::nullopt;
  }
  std::size_t idx = sol.stages.size() - 1;
  if (s <= sol.plan.last_valid_s + 1e-12) {
    idx = sol.stage_index(s);
  } else if (sol.plan.status == StageStatus::Oscillating) {
    return std::nullopt;
  }
  return Located{evaluate_state(sol.stages[idx], s, method), idx};
}

bool sigma_ok(const StateSample& smp, Eigen::Index row, double tol) {
  return std::isfinite(smp.sigma_error[row]) && smp.sigma_error[row] <= tol &&
         std::isfinite(std::abs(smp.sigma[row]));
}

SigmaPoint make_point(const HESolution& sol, const Located& at, Eigen::Index row, double tol) {
  const auto& smp = at.sample;
  const auto& emb = sol.embedding();
  const Complex v_sw = emb.v_swing;
  SigmaPoint p;
  p.s = smp.s;
  p.stage = at.stage;
  p.sigma = smp.sigma[row];
  p.delta = boundary_delta(p.sigma);
  p.u = smp.v[row] / v_sw;
  if (!(smp.v_error[row] <= tol)) {
    p.voltage_from_channel = true;
    if (p.delta >= 0.0) {
      p.u = two_bus_voltage(p.sigma);
    }
  }
  const Complex v = p.u * v_sw;
  p.vm = std::abs(v);
  p.va = std::arg(v);
  p.q_gen = smp.q_gen[row];
  const Complex injection(smp.s * emb.scaled[row].real(), smp.q_net[row]);
  if (std::abs(injection) > 0.0) {
    p.z_equiv = virtual_impedance(p.sigma, injection, v_sw);
  }
  return p;
}

std::vector<double> grid(double s_from, double s_to, double step) {
  if (!(s_from <= s_to) || !(step > 0.0)) {
    throw std::invalid_argument("need s_from <= s_to and step > 0");
  }
  const auto count = static_cast<long>(std::floor((s_to - s_from) / step + 1e-9));
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count) + 2);
  for (long k = 0; k <= count; ++k) {
    out.push_back(s_from + static_cast<double>(k) * step);
  }
  if (out.back() < s_to - 1e-12) {
    out.push_back(s_to);
  }
  return out;
}

// Non-swing rows sorted by bus id.
std::vector<Eigen::Index> rows_by_id(const HESolution& sol) {
  const auto& ids = sol.ybus().bus_ids;
  std::vector<Eigen::Index> rows(ids.size() - 1);
  std::iota(rows.begin(), rows.end(), Eigen::Index{1});
  std::sort(rows.begin(), rows.end(), [&](auto a, auto b) {
    return ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
  });
  return rows;
}

std::vector<std::optional<Located>> sample_grid(const StagedSolution& sol, const std::vector<double>& points,
                                                EvalMethod method) {
  std::vector<std::optional<Located>> out(points.size());
  parallel_for(points.size(), [&](std::size_t i) { out[i] = sample_at(sol, points[i], method); });
  return out;
}

// Bisection between a point where `positive` holds and one where it does not.
template <typename F>
double bisect(F&& positive, double good, double bad, double tol) {
  while (bad - good > tol) {
    const double mid = 0.5 * (good + bad);
    (positive(mid) ? good : bad) = mid;
  }
  return bad;
}

}  // namespace

std::vector<ChannelTrajectory> trace_trajectories(const StagedSolution& sol, double s_from, double s_to,
                                                  double step, const TraceOptions& options) {
  const auto points = grid(s_from, s_to, step);
  if (sol.stages.empty()) {
    return {};
  }
  const auto& first = sol.stages.front();
  const auto& ids = first.ybus().bus_ids;
  const auto rows = rows_by_id(first);
  const double tol = options.series_tolerance;

  std::vector<ChannelTrajectory> out(rows.size());
  std::vector<bool> active(rows.size(), true);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    out[b].bus = ids[static_cast<std::size_t>(rows[b])];
    out[b].converged_to = std::numeric_limits<double>::quiet_NaN();
  }

  const auto samples = sample_grid(sol, points, options.method);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) {
      break;
    }
    const double s = points[i];
    const auto& at = samples[i];
    for (std::size_t b = 0; b < rows.size(); ++b) {
      if (!active[b]) continue;
      const auto row = rows[b];
      if (!at || !sigma_ok(at->sample, row, tol)) {
        active[b] = false;
        continue;
      }
      auto& tr = out[b];
      const SigmaPoint p = make_point(sol.stages[at->stage], *at, row, tol);
      if (p.delta <= 0.0) {
        if (tr.samples.empty()) {
          tr.s_critical = s;
        } else {
          tr.s_critical = bisect(
              [&](double x) {
                const auto a = sample_at(sol, x, options.method);
                return a && sigma_ok(a->sample, row, tol) && boundary_delta(a->sample.sigma[row]) > 0.0;
              },
              tr.samples.back().s, s, options.s_tolerance);
        }
        active[b] = false;
      }
      tr.samples.push_back(p);
      tr.converged_to = s;
    }
  }

  for (const auto& ev : sol.plan.events) {
    if (ev.s < s_from || ev.s > s_to) continue;
    for (auto& tr : out) {
      if (tr.bus != ev.bus || tr.samples.empty() || ev.s > tr.converged_to) continue;
      const auto at = sample_at(sol, ev.s, options.method);
      if (!at) continue;
      const auto row = sol.stages[at->stage].ybus().row_of(ev.bus);
      const std::string kind = ev.kind == SwitchKind::Clamp ? "clamp " : "release ";
      tr.switches.push_back({ev, at->sample.sigma[row], kind + std::string(to_string(ev.side))});
    }
  }

  const double one = 1.0;
  std::optional<Located> at_one;
  for (std::size_t b = 0; b < rows.size(); ++b) {
    auto& tr = out[b];
    if (tr.samples.empty() || one < s_from || one > tr.converged_to) continue;
    if (!at_one) at_one = sample_at(sol, one, options.method);
    if (at_one && sigma_ok(at_one->sample, rows[b], tol)) {
      tr.distance_at_one = distance_to_boundary(at_one->sample.sigma[rows[b]]);
    }
  }
  return out;
}

CriticalResult find_critical_s(const StagedSolution& sol, double s_lo, double s_hi, double tol,
                               double grid_step, const TraceOptions& options) {
  if (!(tol > 0.0)) {
    throw std::invalid_argument("tol must be positive");
  }
  CriticalResult out;
  if (sol.stages.empty()) {
    return out;
  }
  const auto& ids = sol.stages.front().ybus().bus_ids;
  const auto rows = rows_by_id(sol.stages.front());
  const double stol = options.series_tolerance;

  // Min delta over buses and its bus, or nullopt if any sigma is unconverged.
  struct MinDelta {
    double delta;
    int bus;
  };
  auto min_of = [&](const std::optional<Located>& at) -> std::optional<MinDelta> {
    if (!at) return std::nullopt;
    MinDelta best{std::numeric_limits<double>::infinity(), 0};
    for (const auto row : rows) {
      if (!sigma_ok(at->sample, row, stol)) return std::nullopt;
      const double d = boundary_delta(at->sample.sigma[row]);
      if (d < best.delta) {
        best = {d, ids[static_cast<std::size_t>(row)]};
      }
    }
    return best;
  };
  auto min_delta = [&](double s) { return min_of(sample_at(sol, s, options.method)); };

  const auto points = grid(s_lo, s_hi, grid_step);
  const auto samples = sample_grid(sol, points, options.method);
  std::optional<MinDelta> prev;
  double prev_s = s_lo;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double s = points[i];
    if (sol.plan.status == StageStatus::Oscillating && s > sol.plan.last_valid_s) {
      out.status = CriticalStatus::SwitchOscillation;
      out.s_critical = sol.plan.last_valid_s;
      out.limiting_bus = prev ? prev->bus : 0;
      return out;
    }
    const auto cur = min_of(samples[i]);
    if (!cur) {
      double limit = s_lo;
      if (prev) {
        limit = bisect([&](double x) { return min_delta(x).has_value(); }, prev_s, s, tol);
        limit = std::max(prev_s, limit - tol);
      }
      if (sol.plan.status == StageStatus::NonConvergent && limit >= sol.plan.stages.back().s_start) {
        limit = std::max(limit, sol.plan.convergence_limit);
      }
      out.status = CriticalStatus::ConvergenceLimit;
      out.s_critical = std::min(limit, s_hi);
      out.limiting_bus = prev ? prev->bus : 0;
      return out;
    }
    if (cur->delta <= 0.0) {
      out.status = CriticalStatus::BoundaryCrossing;
      if (!prev) {
        out.s_critical = s;
        out.limiting_bus = cur->bus;
        return out;
      }
      const double hi = bisect(
          [&](double x) {
            const auto m = min_delta(x);
            return m && m->delta > 0.0;
          },
          prev_s, s, tol);
      const auto at_hi = min_delta(hi);
      out.s_critical = hi;
      out.limiting_bus = at_hi ? at_hi->bus : cur->bus;
      return out;
    }
    prev = cur;
    prev_s = s;
  }
  out.status = CriticalStatus::NoCollapseInRange;
  return out;
}

std::vector<RankEntry> rank_weak_buses(const std::vector<ChannelTrajectory>& trajectories) {
  double common = std::numeric_limits<double>::infinity();
  for (const auto& tr : trajectories) {
    if (!tr.s_critical && !tr.samples.empty()) {
      common = std::min(common, tr.converged_to);
    }
  }
  std::vector<RankEntry> out;
  out.reserve(trajectories.size());
  for (const auto& tr : trajectories) {
    RankEntry e;
    e.bus = tr.bus;
    e.s_critical = tr.s_critical;
    e.distance_at_one = tr.distance_at_one;
    e.delta_at_common_s = std::numeric_limits<double>::infinity();
    for (const auto& p : tr.samples) {
      if (p.s > common + 1e-12) break;
      e.delta_at_common_s = p.delta;
    }
    out.push_back(e);
  }
  std::sort(out.begin(), out.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.s_critical.has_value() != b.s_critical.has_value()) {
      return a.s_critical.has_value();
    }
    if (a.s_critical && *a.s_critical != *b.s_critical) {
      return *a.s_critical < *b.s_critical;
    }
    if (!a.s_critical && a.delta_at_common_s != b.delta_at_common_s) {
      return a.delta_at_common_s < b.delta_at_common_s;
    }
    return a.bus < b.bus;
  });
  return out;
}

StabilityReport assess_stability(const NetworkCase& network, const AdmittanceMatrix& ybus, double s_from,
                                 double s_to, const AssessOptions& options) {
  StabilityReport out;
  const double s_max = std::max(s_to, options.step);
  const StagedSolution staged = solve_with_qlimits(network, ybus, s_max, options.staging);
  out.trajectories = trace_trajectories(staged, s_from, s_to, options.step, options.trace);
  out.critical = find_critical_s(staged, s_from, s_to, options.tol, options.step, options.trace);
  out.ranking = rank_weak_buses(out.trajectories);
  out.plan = staged.plan;
  return out;
}

}  // namespace sigma_he
