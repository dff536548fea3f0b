#include <doctest.h>

#include <random>

#include "sigma_he/channel.hpp"

using namespace sigma_he;
using C = std::complex<double>;

TEST_CASE("boundary delta") {
  CHECK(boundary_delta(C(0, 0)) == 0.25);
  CHECK(boundary_delta(C(-0.25, 0)) == 0.0);
  CHECK(boundary_delta(C(0.75, 1.0)) == doctest::Approx(0.0));
  CHECK(boundary_delta(C(-0.3, 0)) < 0.0);
}

TEST_CASE("two-bus voltage") {
  CHECK(std::abs(two_bus_voltage(C(0, 0)) - C(1, 0)) < 1e-15);
  CHECK(std::abs(two_bus_voltage(C(-0.25, 0)) - C(0.5, 0)) < 1e-15);
  const C u = two_bus_voltage(C(0.75, 1.0));
  CHECK(std::abs(u - C(0.5, 1.0)) < 1e-12);
  CHECK(std::norm(u) == doctest::Approx(u.real() + 0.75));
  CHECK_THROWS_AS(two_bus_voltage(C(-0.3, 0)), ChannelError);
}

TEST_CASE("channel identity holds on the feasible region") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> re(-0.25, 2.0), im(-1.5, 1.5);
  int tried = 0;
  while (tried < 200) {
    const C sigma(re(rng), im(rng));
    if (boundary_delta(sigma) < 0) continue;
    ++tried;
    const C u = two_bus_voltage(sigma);
    CHECK(std::abs(u.imag() - sigma.imag()) < 1e-12);
    CHECK(std::abs(std::norm(u) - u.real() - sigma.real()) < 1e-12);
    CHECK(std::abs(sigma_from_voltage(u) - sigma) < 1e-12);
    CHECK(u.real() >= 0.5);
  }
}

TEST_CASE("virtual impedance") {
  const C z = virtual_impedance(C(0.05, 0.10), C(1, 0.5), C(1, 0));
  CHECK(std::abs(z - C(0, 0.1)) < 1e-15);
  CHECK(std::abs(virtual_impedance(C(0, 0), C(0.3, -0.1), C(1, 0))) == 0.0);
  const C z106 = virtual_impedance(C(0.05, 0.10), C(1, 0.5), C(1.06, 0));
  CHECK(std::abs(z106 / z - 1.1236) < 1e-12);
  // only the magnitude of the swing voltage enters
  const C zrot = virtual_impedance(C(0.05, 0.10), C(1, 0.5), std::polar(1.06, 0.3));
  CHECK(std::abs(zrot - z106) < 1e-14);
  CHECK_THROWS_AS(virtual_impedance(C(0.1, 0), C(0, 0), C(1, 0)), ChannelError);
}

TEST_CASE("distance to the boundary") {
  CHECK(distance_to_boundary(C(-0.25, 0)) == doctest::Approx(0.0));
  CHECK(distance_to_boundary(C(0.75, 1.0)) < 1e-9);
  CHECK(distance_to_boundary(C(0, 0)) == doctest::Approx(0.25));
  // (1, 0): nearest parabola point (t^2 - 1/4, t) minimizes (t^2 - 5/4)^2 + t^2
  const double t = std::sqrt(0.75);
  CHECK(distance_to_boundary(C(1, 0)) == doctest::Approx(std::hypot(t * t - 1.25, t)));
  // infeasible side is also measured
  CHECK(distance_to_boundary(C(-0.5, 0)) == doctest::Approx(0.25));
  // a point deep inside along the imaginary direction
  CHECK(distance_to_boundary(C(0, 0.5)) == doctest::Approx(0.0));
}
