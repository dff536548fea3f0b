#include "sigma_he/newton.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sigma_he::oracle {

namespace {

using Complex = std::complex<double>;
constexpr Complex kJ{0.0, 1.0};

// Row layout of the reduced Newton system for one set of bus types.
struct Layout {
  std::vector<BusType> types;   // per row after holding
  std::vector<Eigen::Index> pq;  // rows with a magnitude unknown
  Eigen::VectorXd p_spec_unit;   // P at s = 1
  Eigen::VectorXd q_spec_unit;   // Q at s = 1 (PQ rows, load part)
  Eigen::VectorXd q_fixed;       // held generator Q
  Eigen::VectorXd q_load;
  Eigen::Index n = 0;

  Eigen::Index dim() const { return (n - 1) + static_cast<Eigen::Index>(pq.size()); }
};

Layout make_layout(const NetworkCase& net, const AdmittanceMatrix& ybus, const HeldBuses& held) {
  Layout lay;
  lay.n = ybus.size();
  lay.types.resize(static_cast<std::size_t>(lay.n));
  lay.p_spec_unit = Eigen::VectorXd::Zero(lay.n);
  lay.q_spec_unit = Eigen::VectorXd::Zero(lay.n);
  lay.q_fixed = Eigen::VectorXd::Zero(lay.n);
  lay.q_load = Eigen::VectorXd::Zero(lay.n);
  for (Eigen::Index r = 0; r < lay.n; ++r) {
    const int id = ybus.bus_ids[static_cast<std::size_t>(r)];
    const Bus& bus = net.bus(id);
    BusType t = bus.type;
    if (auto it = held.find(id); it != held.end() && t == BusType::PV) {
      t = BusType::PQ;
      lay.q_fixed[r] = it->second;
    }
    lay.types[static_cast<std::size_t>(r)] = t;
    lay.p_spec_unit[r] = net.generated_p(id) - bus.p_load;
    lay.q_spec_unit[r] = -bus.q_load;
    lay.q_load[r] = bus.q_load;
    if (r > 0 && t == BusType::PQ) {
      lay.pq.push_back(r);
    }
  }
  return lay;
}

Eigen::MatrixXcd dense(const AdmittanceMatrix& ybus) { return Eigen::MatrixXcd(ybus.y); }

Eigen::VectorXd mismatch_for(const Layout& lay, const Eigen::MatrixXcd& y, double s,
                             const Eigen::VectorXcd& v) {
  const Eigen::VectorXcd power = v.cwiseProduct((y * v).conjugate());
  Eigen::VectorXd f(lay.dim());
  for (Eigen::Index r = 1; r < lay.n; ++r) {
    f[r - 1] = power[r].real() - s * lay.p_spec_unit[r];
  }
  for (std::size_t k = 0; k < lay.pq.size(); ++k) {
    const auto r = lay.pq[k];
    f[lay.n - 1 + static_cast<Eigen::Index>(k)] =
        power[r].imag() - (s * lay.q_spec_unit[r] + lay.q_fixed[r]);
  }
  return f;
}

Eigen::MatrixXd jacobian_for(const Layout& lay, const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v) {
  const Eigen::VectorXcd current = y * v;
  const Eigen::VectorXcd v_unit = v.cwiseQuotient(v.cwiseAbs().cast<Complex>());
  // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
  // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
  Eigen::MatrixXcd ds_dvm = v.asDiagonal() * (y * v_unit.asDiagonal()).conjugate();
  ds_dvm.diagonal() += current.conjugate().cwiseProduct(v_unit);
  Eigen::MatrixXcd inner = -(y * v.asDiagonal());
  inner.diagonal() += current;
  const Eigen::MatrixXcd ds_dva = kJ * (v.asDiagonal() * inner.conjugate());

  const auto n = lay.n;
  const auto npq = static_cast<Eigen::Index>(lay.pq.size());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(lay.dim(), lay.dim());
  for (Eigen::Index i = 1; i < n; ++i) {
    for (Eigen::Index k = 1; k < n; ++k) {
      jac(i - 1, k - 1) = ds_dva(i, k).real();
    }
    for (Eigen::Index c = 0; c < npq; ++c) {
      jac(i - 1, n - 1 + c) = ds_dvm(i, lay.pq[static_cast<std::size_t>(c)]).real();
    }
  }
  for (Eigen::Index rr = 0; rr < npq; ++rr) {
    const auto i = lay.pq[static_cast<std::size_t>(rr)];
    for (Eigen::Index k = 1; k < n; ++k) {
      jac(n - 1 + rr, k - 1) = ds_dva(i, k).imag();
    }
    for (Eigen::Index c = 0; c < npq; ++c) {
      jac(n - 1 + rr, n - 1 + c) = ds_dvm(i, lay.pq[static_cast<std::size_t>(c)]).imag();
    }
  }
  return jac;
}

Eigen::VectorXcd flat_start(const NetworkCase& net, const AdmittanceMatrix& ybus) {
  const auto& sw = net.buses[net.swing_position()];
  Eigen::VectorXcd v(ybus.size());
  for (Eigen::Index r = 0; r < ybus.size(); ++r) {
    const Bus& bus = net.bus(ybus.bus_ids[static_cast<std::size_t>(r)]);
    const double vm = bus.type == BusType::PQ ? sw.v_sp : bus.v_sp;
    v[r] = std::polar(vm, sw.v_angle_sp);
  }
  return v;
}

struct InnerResult {
  Eigen::VectorXcd v;
  int iterations = 0;
  double max_mismatch = 0.0;
  bool converged = false;
};

InnerResult newton_inner(const Layout& lay, const Eigen::MatrixXcd& y, double s, Eigen::VectorXcd v,
                         const NewtonOptions& options) {
  InnerResult out;
  Eigen::VectorXd vm = v.cwiseAbs();
  Eigen::VectorXd va = v.unaryExpr([](const Complex& z) { return std::arg(z); }).real();
  for (int it = 0;; ++it) {
    Eigen::VectorXd f = mismatch_for(lay, y, s, v);
    out.max_mismatch = f.size() == 0 ? 0.0 : f.cwiseAbs().maxCoeff();
    if (!std::isfinite(out.max_mismatch) || out.max_mismatch > 1e10) {
      break;
    }
    if (out.max_mismatch < options.tolerance) {
      out.converged = true;
      out.iterations = it;
      break;
    }
    if (it >= options.max_iterations) {
      out.iterations = it;
      break;
    }
    const Eigen::MatrixXd jac = jacobian_for(lay, y, v);
    const Eigen::VectorXd dx = jac.partialPivLu().solve(-f);
    for (Eigen::Index r = 1; r < lay.n; ++r) {
      va[r] += dx[r - 1];
    }
    for (std::size_t k = 0; k < lay.pq.size(); ++k) {
      vm[lay.pq[k]] += dx[lay.n - 1 + static_cast<Eigen::Index>(k)];
    }
    for (Eigen::Index r = 0; r < lay.n; ++r) {
      v[r] = std::polar(vm[r], va[r]);
    }
  }
  out.v = std::move(v);
  return out;
}

}  // namespace

Eigen::VectorXd mismatch(const NetworkCase& network, const AdmittanceMatrix& ybus, double s,
                         const Eigen::VectorXcd& v, const HeldBuses& held) {
  return mismatch_for(make_layout(network, ybus, held), dense(ybus), s, v);
}

Eigen::MatrixXd jacobian(const NetworkCase& network, const AdmittanceMatrix& ybus,
                         const Eigen::VectorXcd& v, const HeldBuses& held) {
  return jacobian_for(make_layout(network, ybus, held), dense(ybus), v);
}

Eigen::MatrixXd finite_difference_jacobian(const NetworkCase& network, const AdmittanceMatrix& ybus,
                                           double s, const Eigen::VectorXcd& v, double h,
                                           const HeldBuses& held) {
  const Layout lay = make_layout(network, ybus, held);
  const Eigen::MatrixXcd y = dense(ybus);
  const Eigen::VectorXd vm = v.cwiseAbs();
  const Eigen::VectorXd va = v.unaryExpr([](const Complex& z) { return std::arg(z); }).real();

  auto eval = [&](Eigen::Index col, double delta) {
    Eigen::VectorXd m = vm;
    Eigen::VectorXd a = va;
    if (col < lay.n - 1) {
      a[col + 1] += delta;
    } else {
      m[lay.pq[static_cast<std::size_t>(col - (lay.n - 1))]] += delta;
    }
    Eigen::VectorXcd vv(lay.n);
    for (Eigen::Index r = 0; r < lay.n; ++r) {
      vv[r] = std::polar(m[r], a[r]);
    }
    return mismatch_for(lay, y, s, vv);
  };

  Eigen::MatrixXd jac(lay.dim(), lay.dim());
  for (Eigen::Index c = 0; c < lay.dim(); ++c) {
    jac.col(c) = (eval(c, h) - eval(c, -h)) / (2.0 * h);
  }
  return jac;
}

PFSolution newton_solve(const NetworkCase& network, const AdmittanceMatrix& ybus, double s,
                        const NewtonOptions& options, const PFSolution* warm_start,
                        const HeldBuses& held_in) {
  const Eigen::MatrixXcd y = dense(ybus);
  HeldBuses held = held_in;
  Eigen::VectorXcd start = warm_start != nullptr ? warm_start->v : flat_start(network, ybus);

  PFSolution out;
  out.bus_ids = ybus.bus_ids;
  for (int pass = 0;; ++pass) {
    const Layout lay = make_layout(network, ybus, held);
    // Held magnitudes move; released buses go back to their set-point.
    for (Eigen::Index r = 1; r < lay.n; ++r) {
      const Bus& bus = network.bus(ybus.bus_ids[static_cast<std::size_t>(r)]);
      if (lay.types[static_cast<std::size_t>(r)] == BusType::PV) {
        start[r] = std::polar(bus.v_sp, std::arg(start[r]));
      }
    }
    const InnerResult inner = newton_inner(lay, y, s, start, options);
    out.v = inner.v;
    out.iterations += inner.iterations;
    out.max_mismatch = inner.max_mismatch;
    out.converged = inner.converged;
    out.held = held;

    const Eigen::VectorXcd power = out.v.cwiseProduct((y * out.v).conjugate());
    out.q_gen = Eigen::VectorXd::Zero(lay.n);
    for (Eigen::Index r = 0; r < lay.n; ++r) {
      const auto t = lay.types[static_cast<std::size_t>(r)];
      const Bus& bus = network.bus(ybus.bus_ids[static_cast<std::size_t>(r)]);
      if (t != BusType::PQ || bus.type == BusType::PV) {
        out.q_gen[r] = power[r].imag() + s * lay.q_load[r];
      }
    }
    if (!out.converged) {
      out.message = "oracle diverged";
      return out;
    }
    if (!options.enforce_q_limits) {
      return out;
    }

    bool changed = false;
    for (Eigen::Index r = 1; r < lay.n; ++r) {
      const int id = ybus.bus_ids[static_cast<std::size_t>(r)];
      const Bus& bus = network.bus(id);
      if (bus.type != BusType::PV) {
        continue;
      }
      const double qmax = network.q_max(id);
      const double qmin = network.q_min(id);
      if (auto it = held.find(id); it != held.end()) {
        const bool at_max = it->second == qmax;
        const double vm = std::abs(out.v[r]);
        if ((at_max && vm > bus.v_sp) || (!at_max && vm < bus.v_sp)) {
          held.erase(it);
          changed = true;
        }
      } else if (out.q_gen[r] > qmax) {
        held[id] = qmax;
        changed = true;
      } else if (out.q_gen[r] < qmin) {
        held[id] = qmin;
        changed = true;
      }
    }
    if (!changed) {
      return out;
    }
    if (pass + 1 >= options.max_type_passes) {
      out.converged = false;
      out.message = "reactive-limit switching did not settle";
      return out;
    }
    start = out.v;
  }
}

NoseResult continuation_nose(const NetworkCase& network, const AdmittanceMatrix& ybus, double s_start,
                             double ds, double tol, const ContinuationOptions& options) {
  NewtonOptions nopt = options.newton;
  nopt.enforce_q_limits = options.enforce_q_limits;

  NoseResult out;
  PFSolution current = newton_solve(network, ybus, s_start, nopt);
  if (!current.converged) {
    out.s_nose = s_start;
    out.state = current;
    return out;
  }
  double s = s_start;
  PFSolution previous;
  double s_prev = std::numeric_limits<double>::quiet_NaN();
  double step = ds;

  while (step >= tol) {
    if (s >= options.s_max) {
      out.range_exhausted = true;
      break;
    }
    const double s_try = std::min(s + step, options.s_max);
    // Secant predictor in polar coordinates once two points are known.
    PFSolution guess = current;
    if (std::isfinite(s_prev) && previous.held == current.held) {
      const double ratio = (s_try - s) / (s - s_prev);
      for (Eigen::Index r = 0; r < guess.v.size(); ++r) {
        const double vm = std::abs(current.v[r]) + ratio * (std::abs(current.v[r]) - std::abs(previous.v[r]));
        const double va = std::arg(current.v[r]) + ratio * (std::arg(current.v[r]) - std::arg(previous.v[r]));
        guess.v[r] = std::polar(vm, va);
      }
    }
    PFSolution next = newton_solve(network, ybus, s_try, nopt, &guess, current.held);
    if (!next.converged && std::isfinite(s_prev)) {
      next = newton_solve(network, ybus, s_try, nopt, &current, current.held);
    }
    if (next.converged) {
      previous = std::move(current);
      s_prev = s;
      current = std::move(next);
      s = s_try;
      ++out.steps;
    } else {
      step /= 2.0;
    }
  }

  out.s_nose = s;
  out.state = current;
  double vmin = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 1; r < current.v.size(); ++r) {
    if (std::abs(current.v[r]) < vmin) {
      vmin = std::abs(current.v[r]);
      out.weakest_bus = current.bus_ids[static_cast<std::size_t>(r)];
    }
  }
  out.weakest_vm = vmin;
  return out;
}

}  // namespace sigma_he::oracle
