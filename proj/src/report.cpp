#include "sigma_he/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unistd.h>

#include <json.hpp>

#include "sigma_he/he_engine.hpp"
#include "sigma_he/newton.hpp"
#include "sigma_he/sigma.hpp"

namespace sigma_he {

using json = nlohmann::ordered_json;

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

double round12(double x) {
  if (!std::isfinite(x)) return x;
  return std::strtod(format_number(x).c_str(), nullptr);
}

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

json num(double x) { return std::isfinite(x) ? json(round12(x)) : json(nullptr); }

json num(const std::optional<double>& x) { return x ? num(*x) : json(nullptr); }

std::string method_name(EvalMethod m) { return m == EvalMethod::Pade ? "pade" : "direct"; }

QLimitOptions staging_options(const RunOptions& o) {
  QLimitOptions q;
  q.he.order = o.order;
  q.convergence.method = o.method;
  q.convergence.series_tolerance = o.series_tolerance;
  q.enforce_limits = o.qlimits;
  q.s_tolerance = o.s_tolerance;
  return q;
}

TraceOptions trace_options(const RunOptions& o) {
  TraceOptions t;
  t.method = o.method;
  t.series_tolerance = o.series_tolerance;
  t.s_tolerance = o.s_tolerance;
  return t;
}

json header(const NetworkCase& net, std::string_view command, const RunOptions& o) {
  json doc;
  doc["case"] = net.name;
  doc["command"] = command;
  doc["order"] = o.order;
  doc["method"] = method_name(o.method);
  doc["qlimits"] = o.qlimits;
  return doc;
}

json events_json(const std::vector<SwitchEvent>& events, double up_to) {
  json out = json::array();
  for (const auto& e : events) {
    if (e.s > up_to) continue;
    out.push_back({{"bus", e.bus},
                   {"kind", e.kind == SwitchKind::Clamp ? "switch" : "release"},
                   {"limit", std::string(to_string(e.side))},
                   {"s", num(e.s)}});
  }
  return out;
}

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

// Staged state at one s: the owning stage, or the last one past a
// non-convergent end.
struct PointState {
  StagedSolution staged;
  std::size_t stage = 0;
  StateSample sample;
  bool available = false;
};

PointState state_at(const NetworkCase& net, const AdmittanceMatrix& ybus, double s, const RunOptions& o) {
  PointState out;
  const double s_max = std::max(s, 0.01);
  out.staged = solve_with_qlimits(net, ybus, s_max, staging_options(o));
  const auto& plan = out.staged.plan;
  if (s <= plan.last_valid_s) {
    out.stage = out.staged.stage_index(s);
  } else if (plan.status == StageStatus::NonConvergent) {
    out.stage = out.staged.stages.size() - 1;
  } else {
    return out;
  }
  out.sample = evaluate_state(out.staged.stages[out.stage], s, o.method);
  out.available = true;
  return out;
}

double swing_q_gen(const NetworkCase& net, const AdmittanceMatrix& ybus, const Eigen::VectorXcd& v,
                   double s) {
  const Eigen::VectorXcd current = ybus.y * v;
  const Complex injected = v[0] * std::conj(current[0]);
  return injected.imag() + s * net.bus(ybus.bus_ids[0]).q_load;
}

std::vector<std::size_t> positions_by_id(const std::vector<int>& ids) {
  std::vector<std::size_t> pos(ids.size());
  for (std::size_t k = 0; k < pos.size(); ++k) pos[k] = k;
  std::sort(pos.begin(), pos.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });
  return pos;
}

bool trace_incomplete(const std::vector<ChannelTrajectory>& trs, double s_to) {
  return std::any_of(trs.begin(), trs.end(), [&](const ChannelTrajectory& t) {
    return t.s_critical.has_value() || t.samples.empty() || t.converged_to < s_to - 1e-12;
  });
}

}  // namespace

Document solve_report(const NetworkCase& net, double s, const RunOptions& o) {
  if (!(s >= 0.0)) throw std::invalid_argument("s must be non-negative");
  const auto ybus = build_ybus(net);
  const PointState st = state_at(net, ybus, s, o);

  json doc = header(net, "solve", o);
  doc["s"] = num(s);
  Document out;
  if (!st.available) {
    doc["status"] = "infeasible";
    doc["detail"] = st.staged.plan.diagnostic;
    doc["switches"] = events_json(st.staged.plan.events, s);
    out.text = dump(doc);
    out.exit_code = exit_code::infeasible;
    return out;
  }
  const auto& sol = st.staged.stages[st.stage];
  const auto& smp = st.sample;
  const auto& emb = sol.embedding();
  const double tol = o.series_tolerance;
  const bool converged = smp.v_error.maxCoeff() <= tol && smp.v.allFinite();
  if (!converged) {
    doc["status"] = "infeasible";
    doc["detail"] = "series not converged at this s; convergence limit ~ " +
                    format_number(st.staged.plan.convergence_limit);
    doc["switches"] = events_json(st.staged.plan.events, s);
    out.text = dump(doc);
    out.exit_code = exit_code::infeasible;
    return out;
  }

  json buses = json::array();
  bool past_boundary = false;
  for (const auto r : positions_by_id(ybus.bus_ids)) {
    const auto row = static_cast<Eigen::Index>(r);
    const int id = ybus.bus_ids[r];
    const Complex v = smp.v[row];
    json b;
    b["bus"] = id;
    b["type"] = std::string(to_string(net.bus(id).type));
    const auto clamp = std::find_if(emb.clamps.begin(), emb.clamps.end(),
                                    [&](const LimitClamp& c) { return c.bus == id; });
    b["clamped"] = clamp == emb.clamps.end() ? json(nullptr) : json(std::string(to_string(clamp->side)));
    b["vm"] = num(std::abs(v));
    b["va_deg"] = num(std::arg(v) * kDeg);
    if (row == 0) {
      b["sigma_re"] = nullptr;
      b["sigma_im"] = nullptr;
      b["delta"] = nullptr;
      b["q_gen"] = num(swing_q_gen(net, ybus, smp.v, s));
      b["z_equiv_re"] = nullptr;
      b["z_equiv_im"] = nullptr;
    } else {
      const Complex sig = smp.sigma[row];
      const double delta = boundary_delta(sig);
      past_boundary = past_boundary || delta < 0.0;
      b["sigma_re"] = num(sig.real());
      b["sigma_im"] = num(sig.imag());
      b["delta"] = num(delta);
      b["q_gen"] = num(smp.q_gen[row]);
      const Complex injection(s * emb.scaled[row].real(), smp.q_net[row]);
      if (std::abs(injection) > 0.0) {
        const Complex z = virtual_impedance(sig, injection, emb.v_swing);
        b["z_equiv_re"] = num(z.real());
        b["z_equiv_im"] = num(z.imag());
      } else {
        b["z_equiv_re"] = nullptr;
        b["z_equiv_im"] = nullptr;
      }
    }
    buses.push_back(b);
  }

  doc["status"] = past_boundary ? "collapsed" : "ok";
  doc["stage"] = st.stage + 1;
  doc["max_mismatch"] = num(max_mismatch(sol, smp));
  doc["error_estimate"] = num(smp.error_estimate);
  doc["buses"] = buses;
  doc["switches"] = events_json(st.staged.plan.events, s);
  out.text = dump(doc);
  out.exit_code = past_boundary ? exit_code::infeasible : exit_code::ok;
  return out;
}

Document trace_csv(const NetworkCase& net, double s_from, double s_to, double step, const RunOptions& o) {
  const auto ybus = build_ybus(net);
  const auto staged = solve_with_qlimits(net, ybus, std::max(s_to, step), staging_options(o));
  const auto trs = trace_trajectories(staged, s_from, s_to, step, trace_options(o));

  std::ostringstream os;
  os << "s,bus,sigma_re,sigma_im,delta,vm,va_deg,q_gen,stage\n";
  const auto& events = staged.plan.events;
  std::size_t next_event = 0;
  auto flush_events = [&](double up_to) {
    while (next_event < events.size() && events[next_event].s <= up_to) {
      const auto& e = events[next_event++];
      os << "# " << (e.kind == SwitchKind::Clamp ? "switch" : "release") << " bus=" << e.bus
         << " s=" << format_number(e.s) << " limit=" << to_string(e.side) << "\n";
    }
  };
  std::size_t longest = 0;
  for (const auto& t : trs) longest = std::max(longest, t.samples.size());
  for (std::size_t k = 0; k < longest; ++k) {
    bool first = true;
    for (const auto& t : trs) {
      if (k >= t.samples.size()) continue;
      const auto& p = t.samples[k];
      if (first) {
        flush_events(p.s);
        first = false;
      }
      os << format_number(p.s) << ',' << t.bus << ',' << format_number(p.sigma.real()) << ','
         << format_number(p.sigma.imag()) << ',' << format_number(p.delta) << ',' << format_number(p.vm)
         << ',' << format_number(p.va * kDeg) << ',' << format_number(p.q_gen) << ',' << p.stage + 1
         << '\n';
    }
  }
  flush_events(std::numeric_limits<double>::infinity());
  return {os.str(), trace_incomplete(trs, s_to) ? exit_code::infeasible : exit_code::ok};
}

Document margin_report(const NetworkCase& net, double s_from, double s_to, double step,
                       const RunOptions& o) {
  const auto ybus = build_ybus(net);
  AssessOptions a;
  a.staging = staging_options(o);
  a.trace = trace_options(o);
  a.step = step;
  a.tol = o.s_tolerance;
  const auto rep = assess_stability(net, ybus, s_from, s_to, a);

  json doc = header(net, "margin", o);
  doc["from"] = num(s_from);
  doc["to"] = num(s_to);
  doc["step"] = num(step);
  doc["status"] = std::string(to_string(rep.critical.status));
  doc["s_critical"] = num(rep.critical.s_critical);
  doc["limiting_bus"] = rep.critical.limiting_bus == 0 ? json(nullptr) : json(rep.critical.limiting_bus);
  doc["stages"] = rep.plan.stages.size();
  doc["stage_status"] = std::string(to_string(rep.plan.status));
  json ranking = json::array();
  int rank = 0;
  for (const auto& e : rep.ranking) {
    ranking.push_back({{"rank", ++rank},
                       {"bus", e.bus},
                       {"s_critical", num(e.s_critical)},
                       {"delta_at_common_s", num(e.delta_at_common_s)},
                       {"distance_at_one", num(e.distance_at_one)}});
  }
  doc["ranking"] = ranking;
  doc["ranking_note"] =
      "ordered by trajectory crossing s, then delta at the latest common converged s; "
      "distance_at_one is a non-authoritative diagnostic";
  doc["switches"] = events_json(rep.plan.events, std::numeric_limits<double>::infinity());
  return {dump(doc), rep.critical.status == CriticalStatus::NoCollapseInRange ? exit_code::ok
                                                                              : exit_code::infeasible};
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
                                    "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173",
                                    "#3182bd", "#e6550d", "#31a354", "#756bb1", "#636363"};

std::string xml_escape(std::string_view s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

Document plot_svg(const NetworkCase& net, double s_from, double s_to, double step, const RunOptions& o) {
  const auto ybus = build_ybus(net);
  const auto staged = solve_with_qlimits(net, ybus, std::max(s_to, step), staging_options(o));
  const auto trs = trace_trajectories(staged, s_from, s_to, step, trace_options(o));

  // Window: every sample and marker plus the parabola vertex and the origin.
  double x_lo = -0.25, x_hi = 0.0, y_lo = 0.0, y_hi = 0.0;
  for (const auto& t : trs) {
    for (const auto& p : t.samples) {
      x_lo = std::min(x_lo, p.sigma.real());
      x_hi = std::max(x_hi, p.sigma.real());
      y_lo = std::min(y_lo, p.sigma.imag());
      y_hi = std::max(y_hi, p.sigma.imag());
    }
  }
  const double x_span = std::max(x_hi - x_lo, 0.1);
  const double y_span = std::max(y_hi - y_lo, 0.1);
  x_lo -= 0.08 * x_span;
  x_hi += 0.08 * x_span;
  y_lo -= 0.08 * y_span;
  y_hi += 0.08 * y_span;

  constexpr double W = 760, H = 560, left = 70, right = 130, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return format_number(left + (x - x_lo) / (x_hi - x_lo) * pw); };
  auto py = [&](double y) { return format_number(top + (y_hi - y) / (y_hi - y_lo) * ph); };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<title>" << xml_escape(net.name) << " sigma plane</title>\n"
     << "<defs><clipPath id=\"plot\"><rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw
     << "\" height=\"" << ph << "\"/></clipPath></defs>\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
     << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  // Ticks.
  for (int k = 0; k <= 4; ++k) {
    const double x = x_lo + (x_hi - x_lo) * k / 4.0;
    const double y = y_lo + (y_hi - y_lo) * k / 4.0;
    char label[32];
    std::snprintf(label, sizeof label, "%.3g", x);
    os << "<text x=\"" << px(x) << "\" y=\"" << format_number(top + ph + 18)
       << "\" text-anchor=\"middle\">" << label << "</text>\n";
    std::snprintf(label, sizeof label, "%.3g", y);
    os << "<text x=\"" << format_number(left - 6) << "\" y=\"" << py(y)
       << "\" text-anchor=\"end\" dominant-baseline=\"middle\">" << label << "</text>\n";
  }
  os << "<text x=\"" << format_number(left + pw / 2) << "\" y=\"" << format_number(H - 10)
     << "\" text-anchor=\"middle\">Re σ</text>\n"
     << "<text x=\"16\" y=\"" << format_number(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << format_number(top + ph / 2) << ")\">Im σ</text>\n";

  os << "<g clip-path=\"url(#plot)\">\n";
  if (x_lo < 0.0 && x_hi > 0.0) {
    os << "<line class=\"axis\" x1=\"" << px(0) << "\" y1=\"" << top << "\" x2=\"" << px(0) << "\" y2=\""
       << top + ph << "\" stroke=\"#bbbbbb\"/>\n";
  }
  if (y_lo < 0.0 && y_hi > 0.0) {
    os << "<line class=\"axis\" x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << left + pw
       << "\" y2=\"" << py(0) << "\" stroke=\"#bbbbbb\"/>\n";
  }
  os << "<path class=\"boundary\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" d=\"";
  constexpr int kBoundaryPoints = 200;
  for (int k = 0; k <= kBoundaryPoints; ++k) {
    const double y = y_lo + (y_hi - y_lo) * k / kBoundaryPoints;
    os << (k == 0 ? "M" : " L") << px(y * y - 0.25) << ',' << py(y);
  }
  os << "\"/>\n";

  std::size_t color = 0;
  for (const auto& t : trs) {
    const char* c = kPalette[color++ % std::size(kPalette)];
    if (t.samples.empty()) continue;
    os << "<polyline class=\"trajectory\" data-bus=\"" << t.bus << "\" fill=\"none\" stroke=\"" << c
       << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < t.samples.size(); ++k) {
      os << (k ? " " : "") << px(t.samples[k].sigma.real()) << ',' << py(t.samples[k].sigma.imag());
    }
    os << "\"/>\n";
  }
  for (const auto& t : trs) {
    for (const auto& m : t.switches) {
      os << "<circle class=\"switch\" data-bus=\"" << t.bus << "\" data-s=\"" << format_number(m.event.s)
         << "\" cx=\"" << px(m.sigma.real()) << "\" cy=\"" << py(m.sigma.imag())
         << "\" r=\"5\" fill=\"none\" stroke=\"purple\" stroke-width=\"2\"><title>bus " << t.bus << ' '
         << m.reason << " at s=" << format_number(m.event.s) << "</title></circle>\n";
    }
  }
  os << "</g>\n";

  // Legend.
  os << "<g class=\"legend\">\n";
  color = 0;
  double ly = top + 8;
  for (const auto& t : trs) {
    const char* c = kPalette[color++ % std::size(kPalette)];
    if (t.samples.empty()) continue;
    const double lx = left + pw + 14;
    os << "<line x1=\"" << format_number(lx) << "\" y1=\"" << format_number(ly) << "\" x2=\""
       << format_number(lx + 22) << "\" y2=\"" << format_number(ly) << "\" stroke=\"" << c
       << "\" stroke-width=\"2\"/><text x=\"" << format_number(lx + 28) << "\" y=\"" << format_number(ly)
       << "\" dominant-baseline=\"middle\">bus " << t.bus << "</text>\n";
    ly += 16;
  }
  if (!staged.plan.events.empty()) {
    const double lx = left + pw + 25;
    os << "<circle cx=\"" << format_number(lx) << "\" cy=\"" << format_number(ly) << "\" r=\"5\" fill=\"none\" "
       << "stroke=\"purple\" stroke-width=\"2\"/><text x=\"" << format_number(lx + 17) << "\" y=\""
       << format_number(ly) << "\" dominant-baseline=\"middle\">PV→PQ</text>\n";
  }
  os << "</g>\n</svg>\n";
  return {os.str(), trace_incomplete(trs, s_to) ? exit_code::infeasible : exit_code::ok};
}

Document oracle_report(const NetworkCase& net, double s, const RunOptions& o) {
  if (!(s >= 0.0)) throw std::invalid_argument("s must be non-negative");
  const auto ybus = build_ybus(net);
  const PointState st = state_at(net, ybus, s, o);
  oracle::NewtonOptions nopts;
  nopts.enforce_q_limits = o.qlimits;
  const auto nr = oracle::newton_solve(net, ybus, s, nopts);

  json doc = header(net, "oracle", o);
  doc["s"] = num(s);
  doc["status"] = nr.converged ? "ok" : "oracle diverged";
  doc["oracle_iterations"] = nr.iterations;
  doc["oracle_mismatch"] = num(nr.max_mismatch);
  const bool he_ok = st.available && st.sample.v_error.maxCoeff() <= o.series_tolerance;
  doc["he_status"] = he_ok ? "ok" : "not converged";
  if (st.available) {
    doc["he_max_mismatch"] = num(max_mismatch(st.staged.stages[st.stage], st.sample));
  } else {
    doc["he_max_mismatch"] = nullptr;
  }
  json buses = json::array();
  double worst = 0.0;
  for (const auto r : positions_by_id(ybus.bus_ids)) {
    const auto row = static_cast<Eigen::Index>(r);
    json b;
    b["bus"] = ybus.bus_ids[r];
    if (st.available) {
      const Complex v = st.sample.v[row];
      b["vm_he"] = num(std::abs(v));
      b["va_he_deg"] = num(std::arg(v) * kDeg);
    } else {
      b["vm_he"] = nullptr;
      b["va_he_deg"] = nullptr;
    }
    if (nr.converged) {
      const Complex v = nr.v[row];
      b["vm_nr"] = num(std::abs(v));
      b["va_nr_deg"] = num(std::arg(v) * kDeg);
    } else {
      b["vm_nr"] = nullptr;
      b["va_nr_deg"] = nullptr;
    }
    if (nr.converged && st.available) {
      const double d = std::abs(st.sample.v[row] - nr.v[row]);
      worst = std::max(worst, d);
      b["deviation"] = num(d);
    } else {
      b["deviation"] = nullptr;
    }
    buses.push_back(b);
  }
  doc["max_deviation"] = nr.converged && st.available ? num(worst) : json(nullptr);
  doc["buses"] = buses;
  return {dump(doc), exit_code::ok};
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const auto tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot rename onto " + path.string() + ": " + ec.message());
  }
}

}  // namespace sigma_he
