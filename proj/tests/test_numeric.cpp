#include <cmath>

#include "doctest.h"
#include "mixlab/numeric.hpp"
#include "mixlab/gibbs_markov.hpp"
#include "mixlab/rng.hpp"

using namespace mixlab;

TEST_CASE("chebyshev interpolation reproduces polynomials at off-grid points") {
  int n = 16;
  auto nodes = chebyshev_lobatto(n);
  auto bw = barycentric_weights(n);
  auto f = [](double x) { return 1.0 - 3.0 * x + 2.0 * x * x * x; };
  std::vector<double> row(n + 1);
  for (double x : {0.0, 0.123, 0.5, 0.87654, 1.0}) {
    barycentric_row(nodes, bw, x, row);
    double acc = 0.0;
    for (int k = 0; k <= n; ++k) acc += row[k] * f(nodes[k]);
    CHECK(acc == doctest::Approx(f(x)).epsilon(1e-12));
  }
}

TEST_CASE("clenshaw-curtis and gauss-legendre integrate monomials on [0,1]") {
  int n = 32;
  auto nodes = chebyshev_lobatto(n);
  auto cc = clenshaw_curtis(n);
  for (int k = 0; k <= 8; ++k) {
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) acc += cc[i] * std::pow(nodes[i], k);
    CHECK(acc == doctest::Approx(1.0 / (k + 1)).epsilon(1e-12));
  }
  std::vector<double> gx, gw;
  gauss_legendre(12, gx, gw);
  for (int k = 0; k <= 10; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < gx.size(); ++i) acc += gw[i] * std::pow(gx[i], k);
    CHECK(acc == doctest::Approx(1.0 / (k + 1)).epsilon(1e-12));
  }
}

TEST_CASE("weighted line fit recovers exact coefficients") {
  std::vector<double> x, y, w;
  for (int i = 0; i < 20; ++i) {
    x.push_back(0.3 * i);
    y.push_back(2.5 - 1.75 * x.back());
    w.push_back(1.0 + i % 3);
  }
  auto f = fit_line(x, y, w);
  CHECK(f.slope == doctest::Approx(-1.75).epsilon(1e-12));
  CHECK(f.intercept == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("chi-squared survival function against reference quantiles") {
  CHECK(chi2_sf(3.841, 1) == doctest::Approx(0.05).epsilon(2e-3));
  CHECK(chi2_sf(6.635, 1) == doctest::Approx(0.01).epsilon(2e-3));
  CHECK(chi2_sf(92.010, 63) == doctest::Approx(0.01).epsilon(2e-2));
  CHECK(chi2_sf(0.0, 5) == doctest::Approx(1.0));
}

TEST_CASE("two-sample KS statistic and p-value behave sensibly") {
  Rng rng(42);
  std::vector<double> a, b;
  for (int i = 0; i < 4000; ++i) {
    a.push_back(rng.uniform());
    b.push_back(rng.uniform());
  }
  double d = ks_statistic(a, b);
  CHECK(ks_two_sample_pvalue(d, a.size(), b.size()) > 0.01);
  for (auto& v : b) v += 0.2;  // clearly different
  d = ks_statistic(a, b);
  CHECK(ks_two_sample_pvalue(d, a.size(), b.size()) < 1e-6);
}

TEST_CASE("continued fractions: golden mean, rational, sqrt(2)") {
  double golden = 0.5 * (1.0 + std::sqrt(5.0));
  auto cf = continued_fraction(golden, 20, 1e-16);
  REQUIRE(cf.quotients.size() >= 10);
  for (std::size_t k = 0; k < 10; ++k) CHECK(cf.quotients[k] == 1);

  auto cf2 = continued_fraction(2.0, 10, 1e-16);
  REQUIRE(cf2.quotients.size() == 1);
  CHECK(cf2.quotients[0] == 2);
  CHECK(cf2.terminated);

  auto cf3 = continued_fraction(std::sqrt(2.0), 12, 1e-16);
  REQUIRE(cf3.quotients.size() >= 6);
  CHECK(cf3.quotients[0] == 1);
  for (std::size_t k = 1; k < 6; ++k) CHECK(cf3.quotients[k] == 2);
}

TEST_CASE("zeta tail formula matches a direct sum") {
  for (double s : {2.5, 3.0, 4.0}) {
    double direct = 0.0;
    for (long n = 51; n <= 40000000; ++n) direct += std::pow(double(n), -s);
    CHECK(gm::zeta_tail(s, 50.0) == doctest::Approx(direct).epsilon(1e-9));
  }
}

TEST_CASE("nelder-mead minimizes a shifted quadratic") {
  auto f = [](std::span<const double> p) {
    return sqr(p[0] - 1.2) + 3.0 * sqr(p[1] + 0.4) + 0.7;
  };
  double fb = 0.0;
  auto best = nelder_mead(f, {0.0, 0.0}, 0.5, 500, 1e-15, &fb);
  CHECK(best[0] == doctest::Approx(1.2).epsilon(1e-5));
  CHECK(best[1] == doctest::Approx(-0.4).epsilon(1e-5));
  CHECK(fb == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("rng streams are deterministic and split independently") {
  Rng a = Rng::derive(123, 7), b = Rng::derive(123, 7), c = Rng::derive(123, 8);
  for (int i = 0; i < 16; ++i) {
    auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
}
