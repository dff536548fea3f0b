#include <doctest.h>

#include <random>

#include "sigma_he/channel.hpp"
#include "sigma_he/power_series.hpp"

using namespace sigma_he;
using C = std::complex<double>;

namespace {

ComplexPowerSeries random_series(std::mt19937& rng, Eigen::Index order) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto f = ComplexPowerSeries::zero(order);
  for (Eigen::Index n = 0; n <= order; ++n) f[n] = C(u(rng), u(rng));
  return f;
}

RealPowerSeries geometric(Eigen::Index order, double ratio = 1.0) {
  auto f = RealPowerSeries::zero(order);
  double c = 1.0;
  for (Eigen::Index n = 0; n <= order; ++n, c *= ratio) f[n] = c;
  return f;
}

}  // namespace

TEST_CASE("convolution is the product of the sums") {
  std::mt19937 rng(11);
  const auto f = random_series(rng, 12);
  const auto g = random_series(rng, 12);
  const auto h = convolve(f, g);
  // exact for the truncated product below order 13 only, so compare at small s
  for (double s : {0.01, 0.05}) {
    const C lhs = evaluate_direct(h, s);
    const C rhs = evaluate_direct(f, s) * evaluate_direct(g, s);
    CHECK(std::abs(lhs - rhs) < 1e-12);
  }
  for (Eigen::Index n = 0; n <= 12; ++n) {
    C acc = 0;
    for (Eigen::Index k = 0; k <= n; ++k) acc += f[k] * g[n - k];
    CHECK(std::abs(h[n] - acc) < 1e-14);
  }
}

TEST_CASE("constant series") {
  const RealPowerSeries one{1.0, 0.0, 0.0, 0.0, 0.0};
  for (double s : {0.0, 0.5, 3.0, 100.0}) {
    CHECK(evaluate(one, s, EvalMethod::Direct).value == 1.0);
    CHECK(evaluate(one, s, EvalMethod::Pade).value == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("geometric series recovered by Pade") {
  const auto f = geometric(10);
  const auto pade = evaluate(f, 0.9, EvalMethod::Pade);
  CHECK_FALSE(pade.fell_back);
  CHECK(std::abs(pade.value - 10.0) < 1e-6);
  // the truncated sum is far off
  CHECK(std::abs(evaluate(f, 0.9, EvalMethod::Direct).value - 10.0) > 1.0);
  // beyond the radius too
  CHECK(std::abs(evaluate(f, 1.5, EvalMethod::Pade).value + 2.0) < 1e-6);
}

TEST_CASE("Pade approximant of a rational function") {
  // (1 + s) / (1 - 0.5 s)
  auto f = RealPowerSeries::zero(12);
  f[0] = 1.0;
  for (Eigen::Index n = 1; n <= 12; ++n) f[n] = 1.5 * std::pow(0.5, static_cast<double>(n - 1));
  const auto approx = pade_approximant<double>(f.coeffs(), 6, 6);
  REQUIRE(approx.has_value());
  for (double s : {0.3, 1.0, 1.9}) CHECK((*approx)(s) == doctest::Approx((1 + s) / (1 - 0.5 * s)));
}

TEST_CASE("real singularity from the coefficient ratios") {
  const auto f = geometric(30, 1.0 / 4.0);
  const auto sing = real_singularity(f);
  REQUIRE(sing.has_value());
  CHECK(*sing == doctest::Approx(4.0).epsilon(1e-9));
  // square-root branch point at s = 2
  auto g = RealPowerSeries::zero(30);
  g[0] = 1.0;
  for (Eigen::Index n = 1; n <= 30; ++n) {
    g[n] = g[n - 1] * (static_cast<double>(n) - 1.5) / static_cast<double>(n) / 2.0;
  }
  const auto branch = real_singularity(g);
  REQUIRE(branch.has_value());
  CHECK(*branch == doctest::Approx(2.0).epsilon(1e-3));
  // alternating signs: nearest singularity on the negative axis
  CHECK_FALSE(real_singularity(geometric(30, -0.5)).has_value());
  CHECK_FALSE(real_singularity(geometric(8, 0.5)).has_value());
}

TEST_CASE("sigma coefficients") {
  SUBCASE("unit reciprocal") {
    const ComplexPowerSeries w{C(1, 0)};
    const ComplexPowerSeries m{C(0, 0), C(0.3, -0.2)};
    const auto sigma = sigma_coefficients(w, m);
    REQUIRE(sigma.order() >= 1);
    CHECK(std::abs(sigma[0]) < 1e-15);
    CHECK(std::abs(sigma[1] - C(0.3, -0.2)) < 1e-15);
    for (Eigen::Index n = 2; n <= sigma.order(); ++n) CHECK(std::abs(sigma[n]) < 1e-15);
  }
  SUBCASE("order zero") {
    const ComplexPowerSeries w{C(0.8, 0.6)};
    const ComplexPowerSeries m{C(0.1, 0.2)};
    const auto sigma = sigma_coefficients(w, m);
    CHECK(std::abs(sigma[0] - C(0.1, 0.2) / std::conj(C(0.8, 0.6))) < 1e-15);
  }
  SUBCASE("random order ten") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      auto w = random_series(rng, 10);
      if (std::abs(w[0]) < 0.5) w[0] = w[0] / std::abs(w[0]) * 0.75;
      const auto m = random_series(rng, 10);
      const auto sigma = sigma_coefficients(w, m);
      const auto back = convolve(sigma, conj_series(w));
      for (Eigen::Index n = 0; n <= 10; ++n) CHECK(std::abs(back[n] - m[n]) < 1e-12);
    }
  }
  SUBCASE("degenerate germ") {
    const ComplexPowerSeries w{C(0, 0), C(1, 0)};
    const ComplexPowerSeries m{C(0, 0), C(1, 0)};
    CHECK_THROWS_AS(sigma_coefficients(w, m), ChannelError);
  }
}
