#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sys/wait.h>

#include <json.hpp>

#include "support.hpp"

namespace fs = std::filesystem;
using test_support::case_file;
using test_support::data_file;
using test_support::slurp;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

fs::path scratch_dir() {
  const auto dir = fs::temp_directory_path() / "sigma_he_cli_test";
  fs::create_directories(dir);
  return dir;
}

Run run(const std::string& args) {
  static int counter = 0;
  const auto out = scratch_dir() / ("out" + std::to_string(counter++));
  fs::remove(out);
  const std::string cmd = std::string(SIGMA_HE_CLI) + " " + args + " -o " + out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (fs::exists(out)) r.out = slurp(out);
  return r;
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("solve") {
  const auto r = run("solve " + quoted(case_file("ieee14.m")));
  REQUIRE(r.code == 0);
  const auto doc = nlohmann::json::parse(r.out);
  CHECK(doc["status"] == "ok");
  CHECK(doc["buses"].size() == 14);
  CHECK(doc["max_mismatch"].get<double>() < 1e-8);
  CHECK(doc["buses"][0]["vm"].get<double>() == doctest::Approx(1.06));
}

TEST_CASE("exit codes") {
  CHECK(run("solve " + quoted(case_file("two_bus.m"))).code == 0);
  CHECK(run("solve " + quoted(case_file("missing.m"))).code == 1);
  CHECK(run("solve " + quoted(case_file("ieee14.m")) + " --order -3").code == 1);
  CHECK(run("frobnicate").code == 1);
  const auto bad = scratch_dir() / "bad.m";
  {
    std::ofstream(bad) << "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;\n";
  }
  CHECK(run("solve " + quoted(bad)).code == 1);
  // past the collapse point
  CHECK(run("solve " + quoted(case_file("two_bus.m")) + " --s 9").code == 2);
  CHECK(run("margin " + quoted(case_file("two_bus.m"))).code == 2);
  CHECK(run("margin " + quoted(data_file("no_load.m"))).code == 0);
  CHECK(run("trace " + quoted(case_file("two_bus.m")) + " --from 0.1 --to 9").code == 2);
}

TEST_CASE("trace format") {
  const auto r = run("trace " + quoted(case_file("two_bus.m")) + " --from 0.1 --to 1 --step 0.1");
  REQUIRE(r.code == 0);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  CHECK(line == "s,bus,sigma_re,sigma_im,delta,vm,va_deg,q_gen,stage");
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    ++rows;
  }
  CHECK(rows == 10);
  CHECK(r.out.find("\n1,2,0.05,0.1,") != std::string::npos);
}

TEST_CASE("switch events in the trace") {
  const auto r = run("trace " + quoted(case_file("ieee14.m")) + " --qlimits on --from 0.1 --to 1.3 --step 0.05");
  REQUIRE(r.code == 0);
  const std::regex marker(R"(# (switch|release) bus=\d+ s=[0-9.e-]+ limit=(qmax|qmin))");
  CHECK(std::regex_search(r.out, marker));
}

TEST_CASE("plot") {
  const auto r = run("plot " + quoted(case_file("ieee14.m")));
  REQUIRE(r.code == 0);
  CHECK(count(r.out, "<polyline class=\"trajectory\"") == 13);
  CHECK(count(r.out, "class=\"boundary\"") == 1);
  const auto two = run("plot " + quoted(case_file("two_bus.m")));
  CHECK(count(two.out, "<polyline class=\"trajectory\"") == 1);
}

TEST_CASE("oracle") {
  const auto r = run("oracle " + quoted(case_file("ieee14.m")));
  REQUIRE(r.code == 0);
  const auto doc = nlohmann::json::parse(r.out);
  CHECK(doc["status"] == "ok");
  CHECK(doc["max_deviation"].get<double>() < 1e-6);
}

TEST_CASE("outputs are byte-identical across runs") {
  const auto c14 = quoted(case_file("ieee14.m"));
  for (const std::string args : {"solve " + c14, "trace " + c14 + " --qlimits on", "plot " + c14 + " --qlimits on",
                                 "margin " + c14 + " --to 3", "oracle " + c14}) {
    CAPTURE(args);
    const auto a = run(args);
    const auto b = run(args);
    CHECK_FALSE(a.out.empty());
    CHECK(a.out == b.out);
  }
}

TEST_CASE("json and matpower inputs agree") {
  const auto a = run("solve " + quoted(case_file("ieee14.m")));
  const auto b = run("solve " + quoted(case_file("ieee14.json")));
  CHECK(a.out == b.out);
}
