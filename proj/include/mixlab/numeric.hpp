#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mixlab/common.hpp"

namespace mixlab {

// ---------------------------------------------------------------------------
// Chebyshev collocation on [0,1]
// ---------------------------------------------------------------------------

/// Chebyshev-Lobatto points mapped to [0,1], ascending, size n+1.
std::vector<double> chebyshev_lobatto(int n);

/// Barycentric weights for the Lobatto grid (w_i = (-1)^i, halved at ends).
std::vector<double> barycentric_weights(int n);

/// Row of the interpolation operator: values of the Lagrange basis at x.
/// Exact (delta row) when x coincides with a node.
void barycentric_row(std::span<const double> nodes, std::span<const double> weights,
                     double x, std::span<double> out);

/// Clenshaw-Curtis quadrature weights on [0,1] for the Lobatto grid.
std::vector<double> clenshaw_curtis(int n);

/// Gauss-Legendre nodes/weights on [0,1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

// ---------------------------------------------------------------------------
// Fits
// ---------------------------------------------------------------------------

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double intercept_se = 0.0;
  double rss = 0.0;
  int n = 0;
};

/// Weighted least squares line y = a + b x; weights are 1/sigma_i^2.
LineFit fit_line(std::span<const double> x, std::span<const double> y,
                 std::span<const double> w);
LineFit fit_line(std::span<const double> x, std::span<const double> y);

/// Weighted quadratic fit; returns coefficients (c0,c1,c2) and the
/// standard error of c2 (used as a curvature significance test).
struct QuadFit {
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  double c2_se = 0.0;
};
QuadFit fit_quadratic(std::span<const double> x, std::span<const double> y,
                      std::span<const double> w);

/// Nelder-Mead in low dimension (used for small nonlinear fits).
/// Returns best point; `fbest` receives the objective value there.
std::vector<double> nelder_mead(const std::function<double(std::span<const double>)>& f,
                                std::vector<double> start, double scale, int max_iter,
                                double tol, double* fbest);

// ---------------------------------------------------------------------------
// Probability helpers
// ---------------------------------------------------------------------------

/// Regularized upper incomplete gamma Q(a,x).
double gamma_q(double a, double x);

/// Survival function of a chi-squared with df degrees of freedom.
double chi2_sf(double x, double df);

/// Asymptotic two-sample Kolmogorov-Smirnov p-value for samples of sizes n, m
/// with statistic d (sup of ECDF difference).
double ks_two_sample_pvalue(double d, std::size_t n, std::size_t m);

/// Two-sample KS statistic for scalar samples (inputs get sorted copies).
double ks_statistic(std::vector<double> a, std::vector<double> b);

/// Pooled two-sample chi-squared test on prebinned counts.
/// Returns the p-value; bins with too few pooled counts are merged into the
/// final bin.
double chi2_two_sample_pvalue(std::span<const double> counts_a,
                              std::span<const double> counts_b);

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

/// FNV-1a 64-bit hash; stable across runs, used for config and file checksums.
uint64_t fnv1a64(std::span<const unsigned char> bytes);
uint64_t fnv1a64(const std::string& s);

/// Shortest-round-trip float formatting with 17 significant digits.
std::string format_g17(double v);

/// Wrap an angle to (-pi, pi].
double wrap_pi(double a);

/// Continued fraction expansion of x with floating-precision accounting.
struct ContinuedFraction {
  std::vector<long long> quotients;
  int exhaustion_index = -1;  // index at which precision ran out (-1: terminated exactly)
  bool terminated = false;    // rational within precision
  long long max_quotient = 0;
};
ContinuedFraction continued_fraction(double x, int depth, double abs_err);

}  // namespace mixlab
