#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "sigma_he/he_engine.hpp"
#include "sigma_he/report.hpp"

using namespace sigma_he;

namespace {

struct Config {
  std::string case_path;
  std::string output;
  double s = 1.0;
  double from = 0.1;
  double to = 1.0;
  double step = 0.01;
  RunOptions run;
};

void add_common(CLI::App* cmd, Config& cfg) {
  cmd->add_option("case", cfg.case_path, "case file (.m or .json)")->required();
  cmd->add_option("--order", cfg.run.order, "series order")->check(CLI::PositiveNumber);
  const std::map<std::string, EvalMethod> methods{{"pade", EvalMethod::Pade}, {"direct", EvalMethod::Direct}};
  cmd->add_option("--method", cfg.run.method, "series evaluation: pade or direct")
      ->transform(CLI::CheckedTransformer(methods, CLI::ignore_case));
  const std::map<std::string, bool> onoff{{"on", true}, {"off", false}};
  cmd->add_option("--qlimits", cfg.run.qlimits, "generator reactive limits: on or off")
      ->transform(CLI::CheckedTransformer(onoff, CLI::ignore_case));
  cmd->add_option("--tol", cfg.run.series_tolerance, "series convergence tolerance")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--s-tol", cfg.run.s_tolerance, "tolerance on located s values")
      ->check(CLI::PositiveNumber);
  cmd->add_option("-o,--output", cfg.output, "output file (default stdout)");
}

CLI::Option* add_range(CLI::App* cmd, Config& cfg, double to) {
  cmd->add_option("--from", cfg.from, "first load scale")->check(CLI::NonNegativeNumber);
  auto* opt = cmd->add_option("--to", cfg.to, "last load scale (default " + format_number(to) + ")")
                  ->check(CLI::NonNegativeNumber);
  cmd->add_option("--step", cfg.step, "grid step in s")->check(CLI::PositiveNumber);
  return opt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Holomorphic-embedding power flow with the sigma voltage-stability index"};
  app.require_subcommand(1);
  Config cfg;

  auto* solve = app.add_subcommand("solve", "per-bus V, sigma, delta and Q at one s (JSON)");
  add_common(solve, cfg);
  solve->add_option("--s", cfg.s, "load scale")->check(CLI::NonNegativeNumber);

  auto* trace = app.add_subcommand("trace", "sigma trajectories over an s range (CSV)");
  add_common(trace, cfg);

  auto* margin = app.add_subcommand("margin", "critical s, limiting bus and weak-bus ranking (JSON)");
  add_common(margin, cfg);

  auto* plot = app.add_subcommand("plot", "sigma-plane trajectories with the boundary (SVG)");
  add_common(plot, cfg);

  auto* oracle = app.add_subcommand("oracle", "HE against Newton-Raphson at one s (JSON)");
  add_common(oracle, cfg);
  oracle->add_option("--s", cfg.s, "load scale")->check(CLI::NonNegativeNumber);

  auto* trace_to = add_range(trace, cfg, 1.0);
  auto* plot_to = add_range(plot, cfg, 1.0);
  auto* margin_to = add_range(margin, cfg, 10.0);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code::input_error;
  }
  if (*margin && margin_to->count() == 0) cfg.to = 10.0;
  if ((*trace && trace_to->count() == 0) || (*plot && plot_to->count() == 0)) cfg.to = 1.0;
  if (cfg.from > cfg.to) {
    std::cerr << "error: --from must not exceed --to\n";
    return exit_code::input_error;
  }

  NetworkCase net;
  try {
    std::vector<std::string> warnings;
    net = load_case(cfg.case_path, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code::input_error;
  }

  Document doc;
  try {
    if (*solve) {
      doc = solve_report(net, cfg.s, cfg.run);
    } else if (*trace) {
      doc = trace_csv(net, cfg.from, cfg.to, cfg.step, cfg.run);
    } else if (*margin) {
      doc = margin_report(net, cfg.from, cfg.to, cfg.step, cfg.run);
    } else if (*plot) {
      doc = plot_svg(net, cfg.from, cfg.to, cfg.step, cfg.run);
    } else {
      doc = oracle_report(net, cfg.s, cfg.run);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code::input_error;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code::infeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code::infeasible;
  }

  try {
    if (cfg.output.empty() || cfg.output == "-") {
      std::cout << doc.text;
    } else {
      write_atomic(cfg.output, doc.text);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code::input_error;
  }
  return doc.exit_code;
}
