#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "identities.hpp"
#include "sigma_he/channel.hpp"
#include "sigma_he/newton.hpp"
#include "sigma_he/report.hpp"
#include "sigma_he/sigma.hpp"
#include "support.hpp"

using namespace sigma_he;
using test_support::case_file;
using test_support::data_file;
using C = std::complex<double>;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Outcome two_bus_exactness() {
  const auto t0 = Clock::now();
  const auto net = load_case(case_file("two_bus.m"));
  const auto ybus = build_ybus(net);
  const auto sol = solve_series(net, ybus);
  double worst = std::abs(sol.sigma[1][1] - C(0.05, 0.10));
  for (Eigen::Index n = 0; n <= sol.sigma[1].order(); ++n) {
    if (n != 1) worst = std::max(worst, std::abs(sol.sigma[1][n]));
  }
  const auto pf = oracle::newton_solve(net, ybus, 1.0);
  const double v_err = std::abs(pf.v[1] - two_bus_voltage(C(0.05, 0.10)));
  const auto report = assess_stability(net, ybus, 0.1, 10.0);
  const double s_crit = report.critical.s_critical.value_or(0.0);
  const auto nose = oracle::continuation_nose(net, ybus, 0.1, 0.1, 1e-6);
  const double elapsed = seconds_since(t0);
  Outcome o;
  o.pass = worst < 1e-12 && pf.converged && v_err < 1e-10 &&
           report.critical.status == CriticalStatus::BoundaryCrossing && std::abs(s_crit - 8.0902) <= 1e-3 &&
           std::abs(s_crit - nose.s_nose) <= 0.01 * nose.s_nose && elapsed < 1.0;
  o.detail = "sigma coeff err " + fmt("%.2e", worst) + ", |V-Vclosed| " + fmt("%.2e", v_err) + ", s_crit " +
             fmt("%.6f", s_crit) + ", nose " + fmt("%.6f", nose.s_nose) + ", " + fmt("%.3f", elapsed) + " s";
  return o;
}

Outcome germ_correctness() {
  const auto net = load_case(case_file("ieee14.m"));
  const auto ybus = build_ybus(net);
  const auto sol = extend_series(initialize(make_embedding(net, ybus), ybus), 0);
  const double residual = test_support::worst_identity_residual(sol);
  const auto pf = oracle::newton_solve(net, ybus, 0.0);
  double dev = 0.0;
  for (Eigen::Index i = 0; i < ybus.size(); ++i) {
    dev = std::max(dev, std::abs(test_support::voltage_coeff(sol, i, 0) - pf.v[i]));
  }
  return {residual < 1e-10 && pf.converged && dev < 1e-10,
          "germ residual " + fmt("%.2e", residual) + ", |germ - Newton(0)| " + fmt("%.2e", dev)};
}

Outcome series_identities() {
  const auto net = load_case(case_file("ieee14.m"));
  const auto ybus = build_ybus(net);
  const auto sol = solve_series(net, ybus);
  const double worst = test_support::worst_identity_residual(sol);
  return {sol.order() == 30 && worst < 1e-12,
          "order " + std::to_string(sol.order()) + ", worst coefficient residual " + fmt("%.2e", worst)};
}

Outcome full_residual() {
  const auto t0 = Clock::now();
  const auto net = load_case(case_file("ieee14.m"));
  const auto ybus = build_ybus(net);
  const auto sol = solve_series(net, ybus);
  double mismatch = 0.0, dev = 0.0;
  bool ok = true;
  for (double s : {0.1, 0.5, 1.0}) {
    const auto sample = evaluate_state(sol, s, EvalMethod::Pade);
    mismatch = std::max(mismatch, max_mismatch(sol, sample));
    const auto pf = oracle::newton_solve(net, ybus, s);
    ok = ok && pf.converged && is_converged(sample, {});
    dev = std::max(dev, (sample.v - pf.v).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(t0);
  return {ok && mismatch < 1e-8 && dev < 1e-6 && elapsed < 5.0,
          "max mismatch " + fmt("%.2e", mismatch) + ", HE vs Newton " + fmt("%.2e", dev) + ", " +
              fmt("%.3f", elapsed) + " s"};
}

Outcome channel_consistency() {
  const auto net = load_case(case_file("ieee14.m"));
  const auto ybus = build_ybus(net);
  QLimitOptions opts;
  opts.enforce_limits = false;
  const auto staged = solve_with_qlimits(net, ybus, 3.0, opts);
  const auto traj = trace_trajectories(staged, 0.06, 3.0, 0.06);
  double worst = 0.0;
  std::size_t samples = 0;
  bool ok = traj.size() == 13;
  for (const auto& t : traj) {
    ok = ok && t.samples.size() == 50;
    for (const auto& p : t.samples) {
      ok = ok && !p.voltage_from_channel;
      worst = std::max(worst, std::abs(p.u.imag() - p.sigma.imag()));
      worst = std::max(worst, std::abs(std::norm(p.u) - p.u.real() - p.sigma.real()));
      ++samples;
    }
  }
  return {ok && worst < 1e-8,
          std::to_string(traj.size()) + " buses x " + std::to_string(traj.empty() ? 0 : traj[0].samples.size()) +
              " s values, worst " + fmt("%.2e", worst)};
}

struct Ieee14Runs {
  StabilityReport on, off;
  oracle::NoseResult nose_on, nose_off;
};

const Ieee14Runs& ieee14_runs() {
  static const Ieee14Runs runs = [] {
    const auto net = load_case(case_file("ieee14.m"));
    const auto ybus = build_ybus(net);
    Ieee14Runs r;
    AssessOptions on, off;
    off.staging.enforce_limits = false;
    r.on = assess_stability(net, ybus, 0.1, 10.0, on);
    r.off = assess_stability(net, ybus, 0.1, 10.0, off);
    oracle::ContinuationOptions c_on, c_off;
    c_on.enforce_q_limits = true;
    r.nose_on = oracle::continuation_nose(net, ybus, 0.1, 0.1, 1e-6, c_on);
    r.nose_off = oracle::continuation_nose(net, ybus, 0.1, 0.1, 1e-6, c_off);
    return r;
  }();
  return runs;
}

Outcome collapse_estimate() {
  const auto& r = ieee14_runs();
  const double off = r.off.critical.s_critical.value_or(0.0);
  const double on = r.on.critical.s_critical.value_or(0.0);
  const double rel = std::abs(off - r.nose_off.s_nose) / r.nose_off.s_nose;
  std::size_t clamps = 0;
  for (const auto& e : r.on.plan.events) clamps += e.kind == SwitchKind::Clamp;
  return {r.off.critical.s_critical.has_value() && r.on.critical.s_critical.has_value() && rel < 0.02 &&
              on < off && clamps >= 1,
          "limits off " + fmt("%.5f", off) + " (" + std::string(to_string(r.off.critical.status)) + ") vs nose " +
              fmt("%.5f", r.nose_off.s_nose) + ", rel " + fmt("%.2e", rel) + "; limits on " + fmt("%.5f", on) +
              ", " + std::to_string(clamps) + " PV->PQ switches"};
}

Outcome weak_bus_ranking() {
  const auto& r = ieee14_runs();
  const int top = r.on.ranking.empty() ? 0 : r.on.ranking.front().bus;
  const int top_off = r.off.ranking.empty() ? 0 : r.off.ranking.front().bus;

  const auto star = load_case(data_file("star3.m"));
  const auto ybus = build_ybus(star);
  const auto rep = assess_stability(star, ybus, 0.1, 3.0);
  bool fig3 = rep.ranking.size() == 2 && rep.trajectories.size() == 2;
  if (fig3) {
    const auto& a = rep.trajectories[0];
    const auto& b = rep.trajectories[1];
    fig3 = rep.ranking[0].bus == 2 && a.s_critical && b.s_critical && *a.s_critical < *b.s_critical &&
           a.distance_at_one && b.distance_at_one && *a.distance_at_one > *b.distance_at_one;
  }
  return {top == r.nose_on.weakest_bus && fig3,
          "limits on: top " + std::to_string(top) + ", nose weakest " + std::to_string(r.nose_on.weakest_bus) +
              "; limits off (diagnostic): top " + std::to_string(top_off) + ", nose weakest " +
              std::to_string(r.nose_off.weakest_bus) + "; crossing-before-distance case " +
              (fig3 ? "reproduced" : "not reproduced")};
}

Outcome oracle_jacobian() {
  const auto net = load_case(case_file("ieee14.m"));
  const auto ybus = build_ybus(net);
  const auto pf = oracle::newton_solve(net, ybus, 0.5);
  const auto ja = oracle::jacobian(net, ybus, pf.v);
  const auto jf = oracle::finite_difference_jacobian(net, ybus, 0.5, pf.v);
  const double rel = (ja - jf).cwiseAbs().cwiseQuotient(ja.cwiseAbs().cwiseMax(1.0)).maxCoeff();
  return {pf.converged && rel < 1e-6, "max relative error " + fmt("%.2e", rel)};
}

std::string capture(const std::string& args, int& code) {
  const std::string cmd = std::string(SIGMA_HE_CLI) + " " + args + " 2>/dev/null";
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    code = -1;
    return out;
  }
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = pclose(pipe);
  code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return out;
}

Outcome determinism_and_formats() {
  const std::string c14 = "\"" + case_file("ieee14.m").string() + "\"";
  bool identical = true;
  int code = 0;
  for (const std::string args : {"trace " + c14 + " --qlimits on", "solve " + c14, "margin " + c14 + " --to 3",
                                 "plot " + c14 + " --qlimits on", "oracle " + c14}) {
    int c1 = 0, c2 = 0;
    identical = identical && capture(args, c1) == capture(args, c2) && c1 == c2;
  }
  const auto csv = capture("trace " + c14, code);
  const auto header = csv.substr(0, csv.find('\n'));
  const bool header_ok = header == "s,bus,sigma_re,sigma_im,delta,vm,va_deg,q_gen,stage";
  const auto svg = capture("plot " + c14, code);
  std::size_t polylines = 0;
  for (auto p = svg.find("<polyline class=\"trajectory\""); p != std::string::npos;
       p = svg.find("<polyline class=\"trajectory\"", p + 1)) {
    ++polylines;
  }
  return {identical && header_ok && polylines == 13,
          std::string("repeat runs ") + (identical ? "identical" : "differ") + ", header " +
              (header_ok ? "ok" : "wrong") + ", " + std::to_string(polylines) + " trajectory polylines"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"two-bus exactness", two_bus_exactness},
      {"germ correctness", germ_correctness},
      {"series identities", series_identities},
      {"full power-flow residual", full_residual},
      {"channel consistency", channel_consistency},
      {"collapse estimate", collapse_estimate},
      {"weak-bus ranking", weak_bus_ranking},
      {"oracle Jacobian", oracle_jacobian},
      {"determinism and formats", determinism_and_formats},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
