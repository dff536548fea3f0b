#include "sigma_he/he_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>

#include <Eigen/SparseLU>

#include "sigma_he/channel.hpp"

namespace sigma_he {

namespace {

constexpr Complex kJ{0.0, 1.0};
using RealSparse = Eigen::SparseMatrix<double>;
using RealTriplet = Eigen::Triplet<double>;

// Accumulates real-valued entries of a complex equation written in terms of
// complex unknowns z = x_re + j x_im, their conjugates, and real unknowns.
class RealLinearizer {
public:
  explicit RealLinearizer(std::vector<RealTriplet>& out) : out_(out) {}

  // coef * z on equation rows (row, row + 1), unknown columns (col, col + 1).
  void add(Eigen::Index row, Eigen::Index col, Complex coef) {
    push(row, col, coef.real());
    push(row, col + 1, -coef.imag());
    push(row + 1, col, coef.imag());
    push(row + 1, col + 1, coef.real());
  }

  // coef * conj(z)
  void add_conj(Eigen::Index row, Eigen::Index col, Complex coef) {
    push(row, col, coef.real());
    push(row, col + 1, coef.imag());
    push(row + 1, col, coef.imag());
    push(row + 1, col + 1, -coef.real());
  }

  // coef * q for a real unknown q.
  void add_real_unknown(Eigen::Index row, Eigen::Index col, Complex coef) {
    push(row, col, coef.real());
    push(row + 1, col, coef.imag());
  }

  void push(Eigen::Index row, Eigen::Index col, double value) {
    if (value != 0.0) {
      out_.emplace_back(static_cast<int>(row), static_cast<int>(col), value);
    }
  }

private:
  std::vector<RealTriplet>& out_;
};

Complex swing_voltage(const NetworkCase& network) {
  const auto& sw = network.buses[network.swing_position()];
  return std::polar(sw.v_sp, sw.v_angle_sp);
}

}  // namespace

std::string_view to_string(LimitSide side) { return side == LimitSide::QMax ? "qmax" : "qmin"; }

std::string_view to_string(StageStatus status) {
  switch (status) {
    case StageStatus::Completed: return "completed";
    case StageStatus::NonConvergent: return "non-convergent stage";
    case StageStatus::Oscillating: return "oscillating switch";
  }
  return "?";
}

Embedding make_embedding(const NetworkCase& network, const AdmittanceMatrix& ybus,
                         std::span<const LimitClamp> clamps) {
  const auto n = ybus.size();
  Embedding emb;
  emb.v_swing = swing_voltage(network);
  emb.types.resize(static_cast<std::size_t>(n));
  emb.scaled = Eigen::VectorXcd::Zero(n);
  emb.fixed_q = Eigen::VectorXd::Zero(n);
  emb.q_load = Eigen::VectorXd::Zero(n);
  emb.v_sp = Eigen::VectorXd::Zero(n);
  emb.clamps.assign(clamps.begin(), clamps.end());

  for (Eigen::Index r = 0; r < n; ++r) {
    const int id = ybus.bus_ids[static_cast<std::size_t>(r)];
    const Bus& bus = network.bus(id);
    BusType type = bus.type;
    const auto clamp = std::find_if(clamps.begin(), clamps.end(),
                                    [&](const LimitClamp& c) { return c.bus == id; });
    if (clamp != clamps.end()) {
      if (type != BusType::PV) {
        throw std::invalid_argument("only PV buses can be clamped (bus " + std::to_string(id) + ")");
      }
      type = BusType::PQ;
      emb.fixed_q[r] = clamp->q_gen;
    }
    emb.types[static_cast<std::size_t>(r)] = type;
    emb.q_load[r] = bus.q_load;
    emb.v_sp[r] = bus.type == BusType::PQ ? 0.0 : bus.v_sp;
    if (type != BusType::Swing) {
      emb.scaled[r] = Complex(network.generated_p(id) - bus.p_load, -bus.q_load);
    }
  }
  return emb;
}

// ---------------------------------------------------------------------------
// Germ: damped Newton in rectangular coordinates on the s = 0 equations
//   V_i conj(sum_k Y_ik V_k) = j Q0_i   (fixed_q on PQ rows, unknown on PV rows)
//   |V_i|^2 = v_sp^2                     (PV rows)
// ---------------------------------------------------------------------------

Germ compute_germ(const Embedding& emb, const AdmittanceMatrix& ybus, const HEOptions& options) {
  const auto n = emb.size();
  const Complex v = emb.v_swing;

  std::vector<Eigen::Index> q_col(static_cast<std::size_t>(n), -1);
  Eigen::Index dim = 2 * (n - 1);
  for (Eigen::Index r = 1; r < n; ++r) {
    if (emb.types[static_cast<std::size_t>(r)] == BusType::PV) {
      q_col[static_cast<std::size_t>(r)] = dim++;
    }
  }

  Eigen::VectorXcd volt(n);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
  volt[0] = v;
  for (Eigen::Index r = 1; r < n; ++r) {
    const bool pv = emb.types[static_cast<std::size_t>(r)] == BusType::PV;
    volt[r] = pv ? std::polar(emb.v_sp[r], std::arg(v)) : v;
  }

  auto residual = [&](const Eigen::VectorXcd& vv, const Eigen::VectorXd& qq) {
    const Eigen::VectorXcd current = ybus.y * vv;
    Eigen::VectorXd f(dim);
    for (Eigen::Index r = 1; r < n; ++r) {
      const Complex s_calc = vv[r] * std::conj(current[r]);
      const bool pv = emb.types[static_cast<std::size_t>(r)] == BusType::PV;
      const double q_spec = pv ? qq[r] : emb.fixed_q[r];
      f[2 * (r - 1)] = s_calc.real();
      f[2 * (r - 1) + 1] = s_calc.imag() - q_spec;
      if (pv) {
        f[q_col[static_cast<std::size_t>(r)]] = std::norm(vv[r]) - emb.v_sp[r] * emb.v_sp[r];
      }
    }
    return f;
  };

  Germ germ;
  Eigen::VectorXd f = residual(volt, q);
  double norm = dim == 0 ? 0.0 : f.cwiseAbs().maxCoeff();
  germ.residual_history.push_back(norm);

  Eigen::SparseLU<RealSparse> lu;
  while (norm > options.germ_tolerance) {
    if (germ.iterations >= options.germ_max_iterations) {
      throw NumericalError("germ did not converge in " + std::to_string(options.germ_max_iterations) +
                               " iterations (residual " + std::to_string(norm) + ")",
                           germ.residual_history);
    }
    ++germ.iterations;

    const Eigen::VectorXcd current = ybus.y * volt;
    std::vector<RealTriplet> trip;
    trip.reserve(static_cast<std::size_t>(8 * ybus.y.nonZeros() + 4 * n));
    for (Eigen::Index col = 0; col < ybus.y.outerSize(); ++col) {
      for (SparseComplexMatrix::InnerIterator it(ybus.y, col); it; ++it) {
        const Eigen::Index r = it.row();
        const Eigen::Index k = it.col();
        if (r == 0 || k == 0) {
          continue;
        }
        // dS_r/de_k = V_r conj(Y_rk), dS_r/df_k = -j V_r conj(Y_rk)
        const Complex de = volt[r] * std::conj(it.value());
        const Complex df = -kJ * volt[r] * std::conj(it.value());
        trip.emplace_back(2 * (r - 1), 2 * (k - 1), de.real());
        trip.emplace_back(2 * (r - 1) + 1, 2 * (k - 1), de.imag());
        trip.emplace_back(2 * (r - 1), 2 * (k - 1) + 1, df.real());
        trip.emplace_back(2 * (r - 1) + 1, 2 * (k - 1) + 1, df.imag());
      }
    }
    for (Eigen::Index r = 1; r < n; ++r) {
      // dV_r/de_r = 1, dV_r/df_r = j contribute conj(I_r), j conj(I_r)
      const Complex de = std::conj(current[r]);
      const Complex df = kJ * std::conj(current[r]);
      trip.emplace_back(2 * (r - 1), 2 * (r - 1), de.real());
      trip.emplace_back(2 * (r - 1) + 1, 2 * (r - 1), de.imag());
      trip.emplace_back(2 * (r - 1), 2 * (r - 1) + 1, df.real());
      trip.emplace_back(2 * (r - 1) + 1, 2 * (r - 1) + 1, df.imag());
      const auto qc = q_col[static_cast<std::size_t>(r)];
      if (qc >= 0) {
        trip.emplace_back(2 * (r - 1) + 1, qc, -1.0);
        trip.emplace_back(qc, 2 * (r - 1), 2.0 * volt[r].real());
        trip.emplace_back(qc, 2 * (r - 1) + 1, 2.0 * volt[r].imag());
      }
    }
    RealSparse jac(dim, dim);
    jac.setFromTriplets(trip.begin(), trip.end());
    jac.makeCompressed();
    lu.compute(jac);
    if (lu.info() != Eigen::Success) {
      throw NumericalError("singular germ Jacobian", germ.residual_history);
    }
    const Eigen::VectorXd step = lu.solve(-f);

    double alpha = 1.0;
    while (true) {
      Eigen::VectorXcd v_try = volt;
      Eigen::VectorXd q_try = q;
      for (Eigen::Index r = 1; r < n; ++r) {
        v_try[r] += alpha * Complex(step[2 * (r - 1)], step[2 * (r - 1) + 1]);
        const auto qc = q_col[static_cast<std::size_t>(r)];
        if (qc >= 0) {
          q_try[r] += alpha * step[qc];
        }
      }
      const Eigen::VectorXd f_try = residual(v_try, q_try);
      const double norm_try = f_try.cwiseAbs().maxCoeff();
      if (norm_try < norm || alpha < 1.0 / 1024.0) {
        volt = v_try;
        q = q_try;
        f = f_try;
        norm = norm_try;
        break;
      }
      alpha /= 2.0;
    }
    germ.residual_history.push_back(norm);
  }

  germ.w = volt.cwiseInverse();
  germ.m.resize(n);
  germ.m[0] = 0.0;
  for (Eigen::Index r = 1; r < n; ++r) {
    germ.m[r] = (volt[r] / v - 1.0) / std::conj(v);
  }
  germ.q = q;
  return germ;
}

// ---------------------------------------------------------------------------
// Order-n recursion. Per non-swing row r the unknowns are
//   W_r[n] (2 reals), M_r[n] (2 reals) and, on PV rows, Q_r[n] (1 real).
// Equations (n >= 1):
//   network   |v|^2 sum_k Y_rk M_k[n] + j Q0 conj(W_r[n]) [+ j conj(W_r[0]) Q_r[n]]
//                 = conj(S_r) conj(W_r[n-1]) - j sum_{0<t<n} Q_r[t] conj(W_r[n-t])
//   reciprocal  v W_r[n] + |v|^2 (M_r[n] W_r[0] + M_r[0] W_r[n])
//                 = -|v|^2 sum_{0<t<n} M_r[t] W_r[n-t]
//   magnitude   2 Re(conj(v) conj(A_r[0]) M_r[n]) = -|v|^2 Re sum_{0<t<n} M_r[t] conj(M_r[n-t])
// with A_r[0] = 1 + conj(v) M_r[0]. The matrix depends only on the germ.
// ---------------------------------------------------------------------------

class RecursionSystem {
public:
  RecursionSystem(Embedding emb, AdmittanceMatrix ybus, const Germ& germ)
      : emb_(std::move(emb)), ybus_(std::move(ybus)) {
    const auto n = emb_.size();
    offset_.assign(static_cast<std::size_t>(n), -1);
    dim_ = 0;
    for (Eigen::Index r = 1; r < n; ++r) {
      offset_[static_cast<std::size_t>(r)] = dim_;
      dim_ += is_pv(r) ? 5 : 4;
    }

    const Complex v = emb_.v_swing;
    const double v2 = std::norm(v);
    std::vector<RealTriplet> trip;
    RealLinearizer lin(trip);
    for (Eigen::Index col = 0; col < ybus_.y.outerSize(); ++col) {
      for (SparseComplexMatrix::InnerIterator it(ybus_.y, col); it; ++it) {
        if (it.row() == 0 || it.col() == 0) {
          continue;
        }
        lin.add(off(it.row()), off(it.col()) + 2, v2 * it.value());
      }
    }
    for (Eigen::Index r = 1; r < n; ++r) {
      const Eigen::Index o = off(r);
      if (is_pv(r)) {
        lin.add_conj(o, o, kJ * germ.q[r]);
        lin.add_real_unknown(o, o + 4, kJ * std::conj(germ.w[r]));
        const Complex a0 = 1.0 + std::conj(v) * germ.m[r];
        const Complex c = std::conj(v) * std::conj(a0);
        lin.push(o + 4, o + 2, 2.0 * c.real());
        lin.push(o + 4, o + 3, -2.0 * c.imag());
      } else if (emb_.fixed_q[r] != 0.0) {
        lin.add_conj(o, o, kJ * emb_.fixed_q[r]);
      }
      lin.add(o + 2, o, v + v2 * germ.m[r]);
      lin.add(o + 2, o + 2, v2 * germ.w[r]);
    }
    RealSparse a(dim_, dim_);
    a.setFromTriplets(trip.begin(), trip.end());
    a.makeCompressed();
    lu_.analyzePattern(a);
    lu_.factorize(a);
    if (lu_.info() != Eigen::Success) {
      throw NumericalError("singular recursion matrix (degenerate germ)");
    }
  }

  const Embedding& embedding() const { return emb_; }
  const AdmittanceMatrix& ybus() const { return ybus_; }
  bool is_pv(Eigen::Index r) const { return emb_.types[static_cast<std::size_t>(r)] == BusType::PV; }

  /// Solves order n given coefficients 0..n-1 already stored in `sol`.
  void solve_order(HESolution& sol, Eigen::Index n) const {
    const auto rows = emb_.size();
    const Complex v = emb_.v_swing;
    const double v2 = std::norm(v);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim_);
    for (Eigen::Index r = 1; r < rows; ++r) {
      const Eigen::Index o = off(r);
      const auto& w = sol.w[static_cast<std::size_t>(r)];
      const auto& m = sol.m[static_cast<std::size_t>(r)];

      Complex network;
      if (is_pv(r)) {
        const auto& q = sol.q[static_cast<std::size_t>(r)];
        network = emb_.scaled[r].real() * std::conj(w[n - 1]);
        for (Eigen::Index t = 1; t < n; ++t) {
          network -= kJ * q[t] * std::conj(w[n - t]);
        }
      } else {
        network = std::conj(emb_.scaled[r]) * std::conj(w[n - 1]);
      }
      Complex reciprocal(0.0);
      Complex magnitude(0.0);
      for (Eigen::Index t = 1; t < n; ++t) {
        reciprocal -= v2 * m[t] * w[n - t];
        magnitude -= v2 * m[t] * std::conj(m[n - t]);
      }
      rhs[o] = network.real();
      rhs[o + 1] = network.imag();
      rhs[o + 2] = reciprocal.real();
      rhs[o + 3] = reciprocal.imag();
      if (is_pv(r)) {
        rhs[o + 4] = magnitude.real();
      }
    }

    const Eigen::VectorXd x = lu_.solve(rhs);
    for (Eigen::Index r = 1; r < rows; ++r) {
      const Eigen::Index o = off(r);
      sol.w[static_cast<std::size_t>(r)][n] = Complex(x[o], x[o + 1]);
      sol.m[static_cast<std::size_t>(r)][n] = Complex(x[o + 2], x[o + 3]);
      if (is_pv(r)) {
        sol.q[static_cast<std::size_t>(r)][n] = x[o + 4];
      }
    }
    sol.w[0][n] = 0.0;
    sol.m[0][n] = 0.0;
  }

private:
  Eigen::Index off(Eigen::Index r) const { return offset_[static_cast<std::size_t>(r)]; }

  Embedding emb_;
  AdmittanceMatrix ybus_;
  std::vector<Eigen::Index> offset_;
  Eigen::Index dim_ = 0;
  Eigen::SparseLU<RealSparse> lu_;
};

const Embedding& HESolution::embedding() const { return system->embedding(); }
const AdmittanceMatrix& HESolution::ybus() const { return system->ybus(); }

namespace {

void refresh_evaluators(HESolution& sol) {
  auto ev = std::make_shared<HESolution::Evaluators>();
  const auto n = sol.w.size();
  ev->m.resize(n);
  ev->sigma.resize(n);
  ev->q.resize(n);
  for (std::size_t k = 1; k < n; ++k) {
    ev->m[k].emplace(sol.m[k]);
    ev->sigma[k].emplace(sol.sigma[k]);
    if (!sol.q[k].empty()) {
      ev->q[k].emplace(sol.q[k]);
    }
  }
  sol.evaluators = std::move(ev);
}

}  // namespace

HESolution initialize(const Embedding& emb, const AdmittanceMatrix& ybus, const HEOptions& options) {
  HESolution sol;
  sol.germ = compute_germ(emb, ybus, options);
  sol.system = std::make_shared<const RecursionSystem>(emb, ybus, sol.germ);

  const auto n = emb.size();
  sol.w.resize(static_cast<std::size_t>(n));
  sol.m.resize(static_cast<std::size_t>(n));
  sol.sigma.resize(static_cast<std::size_t>(n));
  sol.q.resize(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto k = static_cast<std::size_t>(r);
    sol.w[k] = ComplexPowerSeries{sol.germ.w[r]};
    sol.m[k] = ComplexPowerSeries{sol.germ.m[r]};
    if (emb.types[k] == BusType::PV) {
      sol.q[k] = RealPowerSeries{sol.germ.q[r]};
    }
    if (r > 0) {
      sol.sigma[k] = sigma_coefficients(sol.w[k], sol.m[k]);
    }
  }
  refresh_evaluators(sol);
  return sol;
}

HESolution extend_series(HESolution sol, int target_order, const HEOptions& options) {
  const auto current = sol.order();
  if (target_order < current) {
    throw std::invalid_argument("target order below the current order");
  }
  if (target_order == current) {
    return sol;
  }
  for (auto& s : sol.w) s.resize_order(target_order);
  for (auto& s : sol.m) s.resize_order(target_order);
  for (auto& s : sol.q) {
    if (!s.empty()) s.resize_order(target_order);
  }
  for (Eigen::Index n = current + 1; n <= target_order; ++n) {
    const auto t0 = std::chrono::steady_clock::now();
    sol.system->solve_order(sol, n);
    if (options.verbose) {
      const auto dt = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0);
      std::clog << "order " << n << ": " << dt.count() << " us\n";
    }
  }
  for (std::size_t k = 1; k < sol.w.size(); ++k) {
    sol.sigma[k] = sigma_coefficients(sol.w[k], sol.m[k]);
  }
  refresh_evaluators(sol);
  return sol;
}

HESolution solve_series(const NetworkCase& network, const AdmittanceMatrix& ybus,
                        const HEOptions& options, std::span<const LimitClamp> clamps) {
  const Embedding emb = make_embedding(network, ybus, clamps);
  return extend_series(initialize(emb, ybus, options), options.order, options);
}

StateSample evaluate_state(const HESolution& sol, double s, EvalMethod method, bool with_sigma) {
  const auto& emb = sol.embedding();
  const auto& ev = *sol.evaluators;
  const auto n = emb.size();
  const Complex v = emb.v_swing;
  StateSample out;
  out.s = s;
  out.v.resize(n);
  out.sigma = Eigen::VectorXcd::Zero(n);
  out.q_net = Eigen::VectorXd::Zero(n);
  out.q_gen = Eigen::VectorXd::Zero(n);
  out.v_error = Eigen::VectorXd::Zero(n);
  out.sigma_error = Eigen::VectorXd::Zero(n);
  out.v[0] = v;
  for (Eigen::Index r = 1; r < n; ++r) {
    const auto k = static_cast<std::size_t>(r);
    const auto m = (*ev.m[k])(s, method);
    out.v[r] = v * (1.0 + std::conj(v) * m.value);
    out.v_error[r] = m.error_estimate;
    out.fell_back = out.fell_back || m.fell_back;
    if (with_sigma) {
      const auto sig = (*ev.sigma[k])(s, method);
      out.sigma[r] = sig.value;
      out.sigma_error[r] = sig.error_estimate;
      out.fell_back = out.fell_back || sig.fell_back;
    }
    if (emb.types[k] == BusType::PV) {
      const auto q = (*ev.q[k])(s, method);
      out.q_net[r] = q.value;
      out.v_error[r] = std::max(out.v_error[r], q.error_estimate);
      out.fell_back = out.fell_back || q.fell_back;
    } else {
      out.q_net[r] = s * emb.scaled[r].imag() + emb.fixed_q[r];
    }
    out.q_gen[r] = out.q_net[r] + s * emb.q_load[r];
    out.error_estimate = std::max({out.error_estimate, out.v_error[r], out.sigma_error[r]});
  }
  return out;
}

double max_mismatch(const HESolution& sol, const StateSample& sample) {
  const auto& emb = sol.embedding();
  const Eigen::VectorXcd current = sol.ybus().y * sample.v;
  double worst = 0.0;
  for (Eigen::Index r = 1; r < emb.size(); ++r) {
    const Complex s_calc = sample.v[r] * std::conj(current[r]);
    const double p_spec = sample.s * emb.scaled[r].real();
    worst = std::max(worst, std::abs(s_calc.real() - p_spec));
    worst = std::max(worst, std::abs(s_calc.imag() - sample.q_net[r]));
    if (emb.types[static_cast<std::size_t>(r)] == BusType::PV) {
      worst = std::max(worst, std::abs(std::norm(sample.v[r]) - emb.v_sp[r] * emb.v_sp[r]));
    }
  }
  return worst;
}

bool is_converged(const StateSample& sample, const ConvergenceCriteria& criteria) {
  return std::isfinite(sample.error_estimate) && sample.error_estimate <= criteria.series_tolerance &&
         sample.v.allFinite();
}

std::optional<double> series_singularity(const HESolution& sol) {
  std::optional<double> nearest;
  for (std::size_t k = 1; k < sol.m.size(); ++k) {
    const auto est = real_singularity(sol.m[k]);
    if (est && (!nearest || *est < *nearest)) {
      nearest = est;
    }
  }
  return nearest;
}

namespace {

double extend_to_singularity(const HESolution& sol, double sampled, double s_hi) {
  if (sampled >= s_hi) {
    return sampled;
  }
  const auto sing = series_singularity(sol);
  if (sing && *sing > sampled) {
    return std::min(*sing, s_hi);
  }
  return sampled;
}

}  // namespace

double convergence_limit(const HESolution& sol, double s_lo, double s_hi,
                         const ConvergenceCriteria& criteria, double grid_step, double s_tol) {
  auto ok = [&](double s) { return is_converged(evaluate_state(sol, s, criteria.method, false), criteria); };
  if (!ok(s_lo)) {
    return s_lo;
  }
  double good = s_lo;
  double bad = std::numeric_limits<double>::quiet_NaN();
  for (double s = s_lo + grid_step;; s += grid_step) {
    const double probe = std::min(s, s_hi);
    if (!ok(probe)) {
      bad = probe;
      break;
    }
    good = probe;
    if (probe >= s_hi) {
      return s_hi;
    }
  }
  while (bad - good > s_tol) {
    const double mid = 0.5 * (good + bad);
    (ok(mid) ? good : bad) = mid;
  }
  return extend_to_singularity(sol, good, s_hi);
}

// ---------------------------------------------------------------------------
// Reactive-limit staging
// ---------------------------------------------------------------------------

std::size_t StagedSolution::stage_index(double s) const {
  if (stages.empty() || s > plan.last_valid_s + 1e-12) {
    throw std::out_of_range("s = " + std::to_string(s) + " is beyond the last valid load scale");
  }
  for (std::size_t k = plan.stages.size(); k-- > 0;) {
    if (s >= plan.stages[k].s_start) {
      return k;
    }
  }
  return 0;
}

namespace {

struct Candidate {
  int bus;
  Eigen::Index row;
  SwitchKind kind;
  LimitSide side;
  double limit;  // q limit for clamps
};

// Positive when the candidate's switching condition is met at this sample.
double switch_indicator(const Candidate& c, const StateSample& sample, const Embedding& emb) {
  if (c.kind == SwitchKind::Clamp) {
    const double q = sample.q_gen[c.row];
    return c.side == LimitSide::QMax ? q - c.limit : c.limit - q;
  }
  const double vm = std::abs(sample.v[c.row]);
  return c.side == LimitSide::QMax ? vm - emb.v_sp[c.row] : emb.v_sp[c.row] - vm;
}

std::vector<Candidate> candidates(const NetworkCase& network, const HESolution& sol) {
  const auto& emb = sol.embedding();
  const auto& ids = sol.ybus().bus_ids;
  std::vector<Candidate> out;
  for (Eigen::Index r = 1; r < emb.size(); ++r) {
    const int id = ids[static_cast<std::size_t>(r)];
    if (emb.types[static_cast<std::size_t>(r)] == BusType::PV) {
      const double qmax = network.q_max(id);
      const double qmin = network.q_min(id);
      if (std::isfinite(qmax)) out.push_back({id, r, SwitchKind::Clamp, LimitSide::QMax, qmax});
      if (std::isfinite(qmin)) out.push_back({id, r, SwitchKind::Clamp, LimitSide::QMin, qmin});
    }
  }
  for (const auto& clamp : emb.clamps) {
    out.push_back({clamp.bus, sol.ybus().row_of(clamp.bus), SwitchKind::Release, clamp.side, clamp.q_gen});
  }
  return out;
}

}  // namespace

StagedSolution solve_with_qlimits(const NetworkCase& network, const AdmittanceMatrix& ybus,
                                  double s_max, const QLimitOptions& options) {
  if (!(s_max > 0.0)) {
    throw std::invalid_argument("s_max must be positive");
  }
  constexpr double kSwitchThreshold = 1e-9;
  const auto& crit = options.convergence;

  StagedSolution out;
  std::vector<LimitClamp> clamps;
  std::map<int, int> switch_count;
  double s_start = 0.0;

  while (true) {
    HESolution sol = solve_series(network, ybus, options.he, clamps);
    const auto cands = options.enforce_limits ? candidates(network, sol) : std::vector<Candidate>{};

    auto sample_at = [&](double s) { return evaluate_state(sol, s, crit.method, false); };
    auto first_violation = [&](const StateSample& smp) {
      for (const auto& c : cands) {
        if (switch_indicator(c, smp, sol.embedding()) > kSwitchThreshold) return true;
      }
      return false;
    };

    // Scan this stage's interval for loss of convergence or a switching condition.
    double prev = s_start;
    double stop = s_max;
    bool diverged = false;
    bool switched = false;
    const StateSample at_start = sample_at(s_start);
    if (!is_converged(at_start, crit)) {
      diverged = true;
      stop = s_start;
    } else if (first_violation(at_start)) {
      switched = true;
      stop = s_start;
    } else {
      for (double s = s_start + options.grid_step;; s += options.grid_step) {
        const double probe = std::min(s, s_max);
        const StateSample smp = sample_at(probe);
        if (!is_converged(smp, crit)) {
          diverged = true;
          stop = probe;
          break;
        }
        if (first_violation(smp)) {
          switched = true;
          stop = probe;
          break;
        }
        prev = probe;
        if (probe >= s_max) {
          break;
        }
      }
    }

    if (diverged) {
      double good = prev;
      double bad = stop;
      if (bad > good) {
        while (bad - good > options.s_tolerance) {
          const double mid = 0.5 * (good + bad);
          (is_converged(sample_at(mid), crit) ? good : bad) = mid;
        }
      }
      // A violation may still precede the divergence inside (prev, good].
      if (!cands.empty() && good > prev && first_violation(sample_at(good))) {
        stop = good;
        switched = true;
        diverged = false;
      } else {
        out.plan.stages.push_back({clamps, s_start, good});
        out.stages.push_back(std::move(sol));
        out.plan.status = StageStatus::NonConvergent;
        out.plan.last_valid_s = good;
        out.plan.convergence_limit = extend_to_singularity(out.stages.back(), good, s_max);
        out.plan.diagnostic = "stage " + std::to_string(out.plan.stages.size()) +
                              " stopped converging at s = " + std::to_string(good);
        return out;
      }
    }

    if (!switched) {
      out.plan.stages.push_back({clamps, s_start, s_max});
      out.stages.push_back(std::move(sol));
      out.plan.status = StageStatus::Completed;
      out.plan.last_valid_s = s_max;
      out.plan.convergence_limit = s_max;
      return out;
    }

    // Locate each active candidate's crossing in [prev, stop]; keep the earliest.
    const Candidate* chosen = nullptr;
    double s_cross = std::numeric_limits<double>::infinity();
    const StateSample at_stop = sample_at(stop);
    for (const auto& c : cands) {
      if (switch_indicator(c, at_stop, sol.embedding()) <= kSwitchThreshold) {
        continue;
      }
      double lo = prev;
      double hi = stop;
      if (stop == s_start || switch_indicator(c, sample_at(lo), sol.embedding()) > kSwitchThreshold) {
        hi = lo;
      }
      while (hi - lo > options.s_tolerance) {
        const double mid = 0.5 * (lo + hi);
        (switch_indicator(c, sample_at(mid), sol.embedding()) > kSwitchThreshold ? hi : lo) = mid;
      }
      if (hi < s_cross || (hi == s_cross && chosen != nullptr && c.bus < chosen->bus)) {
        s_cross = hi;
        chosen = &c;
      }
    }

    if (chosen == nullptr) {
      throw std::logic_error("switching condition met but no crossing located");
    }
    const SwitchEvent event{chosen->bus, chosen->kind, chosen->side, s_cross};
    out.plan.events.push_back(event);
    out.plan.stages.push_back({clamps, s_start, s_cross});
    out.stages.push_back(std::move(sol));

    if (++switch_count[event.bus] > options.max_switches_per_bus) {
      out.plan.status = StageStatus::Oscillating;
      out.plan.last_valid_s = s_cross;
      out.plan.convergence_limit = s_cross;
      out.plan.diagnostic = "bus " + std::to_string(event.bus) + " switched more than " +
                            std::to_string(options.max_switches_per_bus) + " times";
      return out;
    }
    if (event.kind == SwitchKind::Clamp) {
      clamps.push_back({event.bus, event.side, chosen->limit});
    } else {
      std::erase_if(clamps, [&](const LimitClamp& c) { return c.bus == event.bus; });
    }
    s_start = s_cross;
  }
}

}  // namespace sigma_he
