#pragma once

#include <filesystem>
#include <string>

#include "sigma_he/network.hpp"
#include "sigma_he/power_series.hpp"

namespace sigma_he {

/// Settings shared by every command.
struct RunOptions {
  int order = 30;
  EvalMethod method = EvalMethod::Pade;
  bool qlimits = false;
  double series_tolerance = 1e-10;
  double s_tolerance = 1e-6;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int input_error = 1;
inline constexpr int infeasible = 2;
}  // namespace exit_code

/// Rendered output plus the process exit code it implies.
struct Document {
  std::string text;
  int exit_code = exit_code::ok;
};

/// %.12g text of x ("nan", "inf" and "-inf" for non-finite values).
std::string format_number(double x);

/// x rounded to 12 significant digits, so JSON prints at most 12.
double round12(double x);

/// Per-bus state at one s. Exit 2 when the series has not converged there or
/// a channel is past the boundary.
Document solve_report(const NetworkCase& network, double s, const RunOptions& options = {});

/// Header s,bus,sigma_re,sigma_im,delta,vm,va_deg,q_gen,stage; rows ordered by s
/// then bus id; switch events as "# switch bus=<id> s=<val> limit=<qmax|qmin>"
/// (releases as "# release ...") placed before the first row at or past them.
/// Exit 2 when a trace ends before s_to.
Document trace_csv(const NetworkCase& network, double s_from, double s_to, double step,
                   const RunOptions& options = {});

/// Critical s, limiting bus, status and ranking. Exit 2 unless no collapse in range.
Document margin_report(const NetworkCase& network, double s_from, double s_to, double step,
                       const RunOptions& options = {});

/// Sigma-plane SVG: boundary parabola, one polyline per bus, circles at limit
/// switches, legend by bus id. Exit codes as trace_csv.
Document plot_svg(const NetworkCase& network, double s_from, double s_to, double step,
                  const RunOptions& options = {});

/// HE against the Newton oracle at one s. Oracle divergence is a status, not
/// an error.
Document oracle_report(const NetworkCase& network, double s, const RunOptions& options = {});

/// Writes through a temporary file in the same directory and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace sigma_he
