#include <doctest.h>

#include <algorithm>
#include <random>

#include "sigma_he/network.hpp"
#include "sigma_he/ybus.hpp"
#include "support.hpp"

using namespace sigma_he;
using test_support::case_file;

namespace {

const char* kTwoBus = R"(function mpc = t
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1.0 0 0 1 1.1 0.9;
  2 1 50 20 0 0 1 1.0 0 0 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 Inf -Inf 1.0 100 1 Inf 0;
];
mpc.branch = [
  1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
];
)";

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  text.replace(pos, from.size(), to);
  return text;
}

}  // namespace

TEST_CASE("ieee14 parses with the standard counts") {
  const auto net = load_case(case_file("ieee14.m"));
  CHECK(net.buses.size() == 14);
  CHECK(net.branches.size() == 20);
  CHECK(net.generators.size() == 5);
  CHECK(net.buses[net.swing_position()].id == 1);
  CHECK(net.count(BusType::PV) == 4);
  CHECK(net.count(BusType::PQ) == 9);
  CHECK(net.bus(9).b_shunt == doctest::Approx(0.19));
  CHECK(net.bus(2).p_load == doctest::Approx(0.217));
  CHECK(net.q_max(2) == doctest::Approx(0.5));
  CHECK(net.name == "ieee14");
}

TEST_CASE("minimal two-bus case") {
  const auto net = parse_case(kTwoBus, CaseFormat::Matpower);
  CHECK(net.count(BusType::PQ) == 1);
  CHECK(net.count(BusType::PV) == 0);
  CHECK(net.bus(2).p_load == doctest::Approx(0.5));
  CHECK(net.branches[0].tap == 1.0);
}

TEST_CASE("validation errors") {
  SUBCASE("two swing buses") {
    const auto text = replace(kTwoBus, "2 1 50 20", "2 3 50 20");
    CHECK_THROWS_WITH_AS(parse_case(text, CaseFormat::Matpower), "multiple swing buses", ValidationError);
  }
  SUBCASE("no swing bus") {
    const auto text = replace(kTwoBus, "1 3 0 0", "1 1 0 0");
    CHECK_THROWS_AS(parse_case(text, CaseFormat::Matpower), ValidationError);
  }
  SUBCASE("dangling branch") {
    const auto text = replace(kTwoBus, "1 2 0 0.1", "1 7 0 0.1");
    CHECK_THROWS_AS(parse_case(text, CaseFormat::Matpower), ValidationError);
  }
  SUBCASE("non-positive swing magnitude") {
    const auto text = replace(kTwoBus, "1 0 0 Inf -Inf 1.0", "1 0 0 Inf -Inf 0");
    CHECK_THROWS_AS(parse_case(text, CaseFormat::Matpower), ValidationError);
  }
  SUBCASE("zero impedance branch") {
    const auto text = replace(kTwoBus, "1 2 0 0.1", "1 2 0 0");
    CHECK_THROWS_AS(parse_case(text, CaseFormat::Matpower), ValidationError);
  }
}

TEST_CASE("syntax errors report a position") {
  const auto text = replace(kTwoBus, "2 1 50 20", "2 1 5?0 20");
  try {
    parse_case(text, CaseFormat::Matpower);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 5);
    CHECK(e.column() > 0);
  }
  try {
    parse_case("{\"base_mva\": 100,\n \"buses\": [", CaseFormat::Json);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() >= 1);
  }
}

TEST_CASE("extra columns are ignored with a warning") {
  const auto text = replace(kTwoBus, "1 2 0 0.1 0 0 0 0 0 0 1 -360 360;", "1 2 0 0.1 0 0 0 0 0 0 1 -360 360 7 8;");
  std::vector<std::string> warnings;
  const auto net = parse_case(text, CaseFormat::Matpower, &warnings);
  CHECK(net.branches.size() == 1);
  CHECK_FALSE(warnings.empty());
}

TEST_CASE("native json round trip") {
  for (const char* name : {"ieee14.m", "two_bus.m"}) {
    const auto net = load_case(case_file(name));
    const auto again = parse_case(to_json(net), CaseFormat::Json);
    CHECK(again == net);
    CHECK(to_json(again) == to_json(net));
  }
  CHECK(load_case(case_file("ieee14.json")) == load_case(case_file("ieee14.m")));
}

TEST_CASE("json null limits are unbounded") {
  const auto net = parse_case(R"({"base_mva": 100,
    "buses": [{"id": 1, "type": "SWING", "v_sp": 1.0}, {"id": 2, "type": "PV", "v_sp": 1.01}],
    "generators": [{"bus": 1}, {"bus": 2, "p_gen": 0.2, "q_min": null, "q_max": 0.4}],
    "branches": [{"from": 1, "to": 2, "x": 0.1}]})",
                              CaseFormat::Json);
  CHECK(std::isinf(net.q_min(2)));
  CHECK(net.q_max(2) == doctest::Approx(0.4));
}

TEST_CASE("single branch admittance") {
  auto net = parse_case(kTwoBus, CaseFormat::Matpower);
  auto y = build_ybus(net).y.toDense();
  CHECK(std::abs(y(0, 0) - Complex(0, -10)) < 1e-12);
  CHECK(std::abs(y(1, 1) - Complex(0, -10)) < 1e-12);
  CHECK(std::abs(y(0, 1) - Complex(0, 10)) < 1e-12);
  net.branches[0].b_charging = 0.2;
  y = build_ybus(net).y.toDense();
  CHECK(std::abs(y(0, 0) - Complex(0, -9.9)) < 1e-12);
}

TEST_CASE("ieee14 admittance matches an independent assembly") {
  const auto net = load_case(case_file("ieee14.m"));
  const auto ybus = build_ybus(net);
  const Eigen::MatrixXcd ref = test_support::dense_ybus(net);
  const Eigen::MatrixXcd y = ybus.y.toDense();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const auto ri = static_cast<Eigen::Index>(net.bus_position(ybus.bus_ids[static_cast<std::size_t>(i)]));
      const auto rj = static_cast<Eigen::Index>(net.bus_position(ybus.bus_ids[static_cast<std::size_t>(j)]));
      worst = std::max(worst, std::abs(y(i, j) - ref(ri, rj)));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("shunt-free nominal network has zero row sums and is symmetric") {
  const auto net = load_case(test_support::data_file("pq4.m"));
  const Eigen::MatrixXcd y = build_ybus(net).y.toDense();
  CHECK(y.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
  CHECK((y - y.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("branch order does not change the admittance matrix") {
  auto net = load_case(case_file("ieee14.m"));
  const Eigen::MatrixXcd y0 = build_ybus(net).y.toDense();
  std::mt19937 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(net.branches.begin(), net.branches.end(), rng);
    const Eigen::MatrixXcd y = build_ybus(net).y.toDense();
    CHECK((y - y0).cwiseAbs().maxCoeff() < 1e-12);
  }
}
