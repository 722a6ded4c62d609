#include "mixlab/numeric.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <numeric>

namespace mixlab {

const char* errc_name(errc c) {
  switch (c) {
    case errc::grazing: return "Grazing";
    case errc::cap_exceeded: return "CapExceeded";
    case errc::unsupported_variant: return "UnsupportedVariant";
    case errc::bad_params: return "BadParams";
    case errc::truncation_too_coarse: return "TruncationTooCoarse";
    case errc::no_gap: return "NoGap";
    case errc::empty_subsystem: return "EmptySubsystem";
    case errc::no_convergence: return "NoConvergence";
    case errc::induce_power_needed: return "InducePowerNeeded";
    case errc::degenerate_range: return "DegenerateRange";
    case errc::precision_exhausted: return "PrecisionExhausted";
    case errc::fit_diverged: return "FitDiverged";
    case errc::budget_too_small: return "BudgetTooSmall";
    case errc::empty_window: return "EmptyWindow";
    case errc::noise_dominated: return "NoiseDominated";
    case errc::series_not_decaying: return "SeriesNotDecaying";
    case errc::grid_mismatch: return "GridMismatch";
    case errc::config_invalid: return "ConfigInvalid";
  }
  return "Error";
}

static constexpr double kPi = 3.14159265358979323846264338327950288;

std::vector<double> chebyshev_lobatto(int n) {
  std::vector<double> x(n + 1);
  for (int i = 0; i <= n; ++i) x[i] = 0.5 * (1.0 - std::cos(kPi * i / n));
  return x;
}

std::vector<double> barycentric_weights(int n) {
  std::vector<double> w(n + 1);
  for (int i = 0; i <= n; ++i) w[i] = (i % 2 == 0) ? 1.0 : -1.0;
  w[0] *= 0.5;
  w[n] *= 0.5;
  return w;
}

void barycentric_row(std::span<const double> nodes, std::span<const double> weights,
                     double x, std::span<double> out) {
  const std::size_t m = nodes.size();
  double denom = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double d = x - nodes[i];
    if (d == 0.0) {
      std::fill(out.begin(), out.end(), 0.0);
      out[i] = 1.0;
      return;
    }
    out[i] = weights[i] / d;
    denom += out[i];
  }
  for (std::size_t i = 0; i < m; ++i) out[i] /= denom;
}

std::vector<double> clenshaw_curtis(int n) {
  // Exact weights via the cosine-sum formula, mapped from [-1,1] to [0,1].
  std::vector<double> w(n + 1, 0.0);
  for (int i = 0; i <= n; ++i) {
    double c = (i == 0 || i == n) ? 1.0 : 2.0;
    double sum = 1.0;
    for (int k = 1; k <= n / 2; ++k) {
      double bk = (2 * k == n) ? 1.0 : 2.0;
      sum -= bk * std::cos(2.0 * k * kPi * i / n) / (4.0 * k * k - 1.0);
    }
    w[i] = 0.5 * c * sum / n;  // 0.5: interval length ratio
  }
  return w;
}

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    // Newton from the Chebyshev initial guess, on [-1,1].
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      double dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    double dp = n * (x * p1 - p0) / (x * x - 1.0);
    nodes[i] = 0.5 * (x + 1.0);
    weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);  // already includes the 1/2 map factor
  }
  std::sort(nodes.begin(), nodes.end());
}

LineFit fit_line(std::span<const double> x, std::span<const double> y,
                 std::span<const double> w) {
  LineFit f;
  double S = 0, Sx = 0, Sy = 0, Sxx = 0, Sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    S += w[i];
    Sx += w[i] * x[i];
    Sy += w[i] * y[i];
    Sxx += w[i] * x[i] * x[i];
    Sxy += w[i] * x[i] * y[i];
  }
  double det = S * Sxx - Sx * Sx;
  f.n = int(x.size());
  if (det == 0.0 || f.n < 2) throw Error(errc::empty_window, "degenerate line fit");
  f.slope = (S * Sxy - Sx * Sy) / det;
  f.intercept = (Sxx * Sy - Sx * Sxy) / det;
  for (std::size_t i = 0; i < x.size(); ++i)
    f.rss += w[i] * sqr(y[i] - f.intercept - f.slope * x[i]);
  // Parameter covariance from the weighted normal equations, inflated by the
  // reduced chi-square when the scatter exceeds the nominal weights.
  double scale = (f.n > 2) ? std::max(1.0, f.rss / (f.n - 2)) : 1.0;
  f.slope_se = std::sqrt(scale * S / det);
  f.intercept_se = std::sqrt(scale * Sxx / det);
  return f;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  std::vector<double> w(x.size(), 1.0);
  return fit_line(x, y, w);
}

QuadFit fit_quadratic(std::span<const double> x, std::span<const double> y,
                      std::span<const double> w) {
  // Normal equations for [1, x, x^2]; solved by Cramer on the 3x3 system.
  double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  double b[3] = {0, 0, 0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    double p[3] = {1.0, x[i], x[i] * x[i]};
    for (int r = 0; r < 3; ++r) {
      b[r] += w[i] * p[r] * y[i];
      for (int c = 0; c < 3; ++c) m[r][c] += w[i] * p[r] * p[c];
    }
  }
  auto det3 = [](double a[3][3]) {
    return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
           a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
           a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  };
  double D = det3(m);
  if (D == 0.0) throw Error(errc::empty_window, "degenerate quadratic fit");
  QuadFit q;
  double co[3];
  for (int k = 0; k < 3; ++k) {
    double t[3][3];
    std::memcpy(t, m, sizeof(t));
    for (int r = 0; r < 3; ++r) t[r][k] = b[r];
    co[k] = det3(t) / D;
  }
  q.c0 = co[0];
  q.c1 = co[1];
  q.c2 = co[2];
  // Var(c2) = (M^-1)_{22}, scaled by reduced chi-square.
  double minor = m[0][0] * m[1][1] - m[0][1] * m[1][0];
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    rss += w[i] * sqr(y[i] - q.c0 - q.c1 * x[i] - q.c2 * x[i] * x[i]);
  double scale = (x.size() > 3) ? std::max(1.0, rss / (double(x.size()) - 3)) : 1.0;
  q.c2_se = std::sqrt(scale * minor / D);
  return q;
}

std::vector<double> nelder_mead(const std::function<double(std::span<const double>)>& f,
                                std::vector<double> start, double scale, int max_iter,
                                double tol, double* fbest) {
  const int n = int(start.size());
  std::vector<std::vector<double>> pts(n + 1, start);
  std::vector<double> fv(n + 1);
  for (int i = 0; i < n; ++i) pts[i + 1][i] += scale;
  for (int i = 0; i <= n; ++i) fv[i] = f(pts[i]);
  for (int it = 0; it < max_iter; ++it) {
    // order
    std::vector<int> idx(n + 1);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    std::vector<std::vector<double>> np(n + 1);
    std::vector<double> nf(n + 1);
    for (int i = 0; i <= n; ++i) {
      np[i] = pts[idx[i]];
      nf[i] = fv[idx[i]];
    }
    pts.swap(np);
    fv.swap(nf);
    if (std::abs(fv[n] - fv[0]) < tol * (std::abs(fv[0]) + tol)) break;
    std::vector<double> centroid(n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) centroid[k] += pts[i][k] / n;
    auto blend = [&](double t) {
      std::vector<double> p(n);
      for (int k = 0; k < n; ++k) p[k] = centroid[k] + t * (pts[n][k] - centroid[k]);
      return p;
    };
    auto refl = blend(-1.0);
    double fr = f(refl);
    if (fr < fv[0]) {
      auto exp_ = blend(-2.0);
      double fe = f(exp_);
      if (fe < fr) {
        pts[n] = exp_;
        fv[n] = fe;
      } else {
        pts[n] = refl;
        fv[n] = fr;
      }
    } else if (fr < fv[n - 1]) {
      pts[n] = refl;
      fv[n] = fr;
    } else {
      auto con = blend(0.5);
      double fc = f(con);
      if (fc < fv[n]) {
        pts[n] = con;
        fv[n] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          for (int k = 0; k < n; ++k) pts[i][k] = 0.5 * (pts[i][k] + pts[0][k]);
          fv[i] = f(pts[i]);
        }
      }
    }
  }
  int best = int(std::min_element(fv.begin(), fv.end()) - fv.begin());
  if (fbest) *fbest = fv[best];
  return pts[best];
}

// --- incomplete gamma (series + continued fraction, Numerical-Recipes style) ---

static double gamma_p_series(double a, double x) {
  double sum = 1.0 / a, term = sum;
  for (int n = 1; n < 800; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

static double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 800; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw Error(errc::bad_params, "gamma_q domain");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_cf(a, x);
}

double chi2_sf(double x, double df) { return gamma_q(0.5 * df, 0.5 * x); }

double ks_two_sample_pvalue(double d, std::size_t n, std::size_t m) {
  double ne = double(n) * double(m) / double(n + m);
  double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::min(1.0, std::max(0.0, sum));
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

double chi2_two_sample_pvalue(std::span<const double> counts_a,
                              std::span<const double> counts_b) {
  if (counts_a.size() != counts_b.size())
    throw Error(errc::grid_mismatch, "chi2 two-sample bin counts");
  double na = std::accumulate(counts_a.begin(), counts_a.end(), 0.0);
  double nb = std::accumulate(counts_b.begin(), counts_b.end(), 0.0);
  if (na == 0.0 || nb == 0.0) throw Error(errc::bad_params, "empty sample");
  double ka = std::sqrt(nb / na), kb = std::sqrt(na / nb);
  double stat = 0.0;
  int used = 0;
  double resa = 0.0, resb = 0.0;  // bins pooled below the count floor
  for (std::size_t i = 0; i < counts_a.size(); ++i) {
    if (counts_a[i] + counts_b[i] < 10.0) {
      resa += counts_a[i];
      resb += counts_b[i];
      continue;
    }
    stat += sqr(ka * counts_a[i] - kb * counts_b[i]) / (counts_a[i] + counts_b[i]);
    ++used;
  }
  if (resa + resb >= 10.0) {
    stat += sqr(ka * resa - kb * resb) / (resa + resb);
    ++used;
  }
  if (used < 2) throw Error(errc::bad_params, "not enough occupied bins");
  return chi2_sf(stat, used - 1);
}

uint64_t fnv1a64(std::span<const unsigned char> bytes) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double wrap_pi(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a > kPi) a -= 2.0 * kPi;
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

ContinuedFraction continued_fraction(double x, int depth, double abs_err) {
  ContinuedFraction cf;
  double err = std::max(abs_err, std::abs(x) * 1e-16);
  double v = x;
  for (int k = 0; k < depth; ++k) {
    double a = std::floor(v);
    double frac = v - a;
    if (k > 0 && frac > 1.0 - err) {  // rounding pushed v just below an integer
      a += 1.0;
      frac = 0.0;
    }
    cf.quotients.push_back((long long)a);
    cf.max_quotient = std::max(cf.max_quotient, (long long)a);
    if (frac <= err) {
      cf.terminated = frac <= 0.0 || err >= frac;  // rational within precision
      return cf;
    }
    v = 1.0 / frac;
    err = err * v * v;  // d(1/u) = -du/u^2
    if (err > 0.5) {
      cf.exhaustion_index = k + 1;
      return cf;
    }
  }
  return cf;
}

}  // namespace mixlab
