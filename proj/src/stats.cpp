#include "mixlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mixlab/numeric.hpp"
#include "mixlab/parallel.hpp"

namespace mixlab::stats {

namespace {

constexpr double kTwoPi = 6.28318530717958647692528676655900577;

double adaptive_simpson(const std::function<double(double)>& f, double a, double fa,
                        double m, double fm, double b, double fb, double whole,
                        double tol, int depth) {
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, fa, lm, flm, m, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, fm, rm, frm, b, fb, right, 0.5 * tol, depth - 1);
}

double integrate_segment(const std::function<double(double)>& f, double a, double b,
                         bool affine, double tol = 1e-10) {
  if (b <= a) return 0.0;
  double fa = f(a), fb = f(b);
  if (affine) return 0.5 * (fa + fb) * (b - a);  // trapezoid is exact
  double m = 0.5 * (a + b), fm = f(m);
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, a, fa, m, fm, b, fb, whole, tol * std::max(1.0, b - a), 24);
}

uint64_t poisson_draw(Rng& rng, double mean) {
  if (mean <= 0.0) return 0;
  if (mean < 30.0) {
    double l = std::exp(-mean), p = 1.0;
    uint64_t k = 0;
    do {
      ++k;
      p *= rng.uniform();
    } while (p > l);
    return k - 1;
  }
  double v = mean + std::sqrt(mean) * rng.normal();
  return v <= 0.0 ? 0 : uint64_t(std::llround(v));
}

void check_grid(std::span<const double> t) {
  if (t.empty()) throw Error(errc::bad_params, "empty time grid");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 0.0) throw Error(errc::bad_params, "time grid must be nonnegative");
    if (i && t[i] <= t[i - 1])
      throw Error(errc::bad_params, "time grid must be strictly increasing");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

std::string BilliardFlowSystem::name() const {
  switch (table_.variant()) {
    case billiard::Variant::lorentz_torus: return reversed_ ? "lorentz-reversed" : "lorentz";
    case billiard::Variant::semidispersing: return "semidispersing";
    case billiard::Variant::stadium: return "stadium";
  }
  return "billiard";
}

PhasePoint BilliardFlowSystem::sample(Rng& rng) const {
  auto m = billiard::sample_liouville_one(table_, rng);
  return {m.q.x, m.q.y, m.v.x, m.v.y};
}

PhasePoint BilliardFlowSystem::evolve(const PhasePoint& x, double dt) const {
  billiard::FlowState m{{x.a, x.b}, {x.c, x.d}};
  if (reversed_) m.v = -m.v;
  m = billiard::flow(table_, m, dt);
  if (reversed_) m.v = -m.v;
  return {m.q.x, m.q.y, m.v.x, m.v.y};
}

void BilliardFlowSystem::birkhoff(const PhasePoint& x0, std::span<const double> t_grid,
                                  const Observable& v, std::span<double> out) const {
  billiard::FlowState m{{x0.a, x0.b}, {x0.c, x0.d}};
  if (reversed_) m.v = -m.v;
  const double sign = 1.0;  // reversal handled by flipping velocities at eval
  double tcur = 0.0, acc = 0.0;
  std::size_t gi = 0;
  const double t_final = t_grid.back();
  while (gi < t_grid.size()) {
    double remaining = t_final - tcur;
    auto hit = billiard::first_hit(table_, m, remaining);
    double seg = hit ? hit->t : remaining;
    auto eval_at = [&](double s) {
      Vec2 q = table_.wrap(m.q + s * m.v);
      Vec2 vel = reversed_ ? -m.v : m.v;
      return v.eval({q.x, q.y, vel.x, vel.y});
    };
    while (gi < t_grid.size() && t_grid[gi] <= tcur + seg) {
      out[gi] = acc + sign * integrate_segment(eval_at, 0.0, t_grid[gi] - tcur,
                                               v.flight_affine);
      ++gi;
    }
    if (!hit) break;
    acc += sign * integrate_segment(eval_at, 0.0, seg, v.flight_affine);
    m.q = table_.wrap(hit->point);
    m.v = (m.v - 2.0 * m.v.dot(hit->normal_in) * hit->normal_in).normalized();
    tcur += seg;
  }
}

PhasePoint GMSemiflowSystem::sample(Rng& rng) const {
  auto p = sf_.sample_mu_phi(rng);
  return {p.y, p.u, sf_.roof_at(p.y), 0.0};
}

PhasePoint GMSemiflowSystem::evolve(const PhasePoint& x, double dt) const {
  auto p = sf_.flow({x.a, x.b}, dt);
  return {p.y, p.u, sf_.roof_at(p.y), 0.0};
}

void GMSemiflowSystem::birkhoff(const PhasePoint& x0, std::span<const double> t_grid,
                                const Observable& v, std::span<double> out) const {
  double y = x0.a, u = x0.b;
  double phi = sf_.roof_at(y);
  double tcur = 0.0, acc = 0.0;
  std::size_t gi = 0;
  auto fiber = [&](double ua, double ub) {
    auto f = [&](double uu) { return v.eval({y, uu, phi, 0.0}); };
    if (v.fiber_constant) return f(ua) * (ub - ua);
    return integrate_segment(f, ua, ub, false);
  };
  while (gi < t_grid.size()) {
    double seg_end = tcur + (phi - u);
    while (gi < t_grid.size() && t_grid[gi] <= seg_end) {
      out[gi] = acc + fiber(u, u + (t_grid[gi] - tcur));
      ++gi;
    }
    if (gi >= t_grid.size()) break;
    acc += fiber(u, phi);
    y = sf_.base().apply(y);
    u = 0.0;
    tcur = seg_end;
    phi = sf_.roof_at(y);
  }
}

PhasePoint TwoSidedFlowSystem::sample(Rng& rng) const {
  auto p = f_.sample_mu_phi(rng);
  return {p.y.ybar, p.y.z, p.u, f_.roof().eval(p.y)};
}

PhasePoint TwoSidedFlowSystem::evolve(const PhasePoint& x, double dt) const {
  auto p = f_.flow({{x.a, x.b}, x.c}, dt);
  return {p.y.ybar, p.y.z, p.u, f_.roof().eval(p.y)};
}

void TwoSidedFlowSystem::birkhoff(const PhasePoint& x0, std::span<const double> t_grid,
                                  const Observable& v, std::span<double> out) const {
  susp::Point y{x0.a, x0.b};
  double u = x0.c;
  double phi = f_.roof().eval(y);
  double tcur = 0.0, acc = 0.0;
  std::size_t gi = 0;
  auto fiber = [&](double ua, double ub) {
    auto f = [&](double uu) { return v.eval({y.ybar, y.z, uu, phi}); };
    if (v.fiber_constant) return f(ua) * (ub - ua);
    return integrate_segment(f, ua, ub, false);
  };
  while (gi < t_grid.size()) {
    double seg_end = tcur + (phi - u);
    while (gi < t_grid.size() && t_grid[gi] <= seg_end) {
      out[gi] = acc + fiber(u, u + (t_grid[gi] - tcur));
      ++gi;
    }
    if (gi >= t_grid.size()) break;
    acc += fiber(u, phi);
    y = f_.model().apply(y);
    u = 0.0;
    tcur = seg_end;
    phi = f_.roof().eval(y);
  }
}

// ---------------------------------------------------------------------------
// Correlation
// ---------------------------------------------------------------------------

CorrelationSeries correlation(const FlowSystem& flow, const Observable& v,
                              const Observable& w, std::vector<double> t_grid,
                              std::size_t budget, uint64_t seed, EventLedger* ledger) {
  if (budget < 10000) throw Error(errc::budget_too_small, "correlation needs budget >= 1e4");
  check_grid(t_grid);
  const std::size_t T = t_grid.size();
  const std::size_t C = kParallelChunks;
  std::vector<double> vw(C * T, 0.0), vs(C, 0.0), ws(C, 0.0), cnt(C, 0.0);

  parallel_chunks(budget, [&](std::size_t chunk, std::size_t beg, std::size_t end) {
    std::vector<double> local_vw(T, 0.0);
    std::vector<double> wt(T);
    double local_v = 0.0, local_w = 0.0, local_n = 0.0;
    for (std::size_t i = beg; i < end; ++i) {
      Rng rng = Rng::derive(seed, i);
      for (int attempt = 0; attempt < 64; ++attempt) {
        PhasePoint x0 = flow.sample(rng);
        try {
          PhasePoint x = x0;
          double tprev = 0.0;
          for (std::size_t k = 0; k < T; ++k) {
            if (t_grid[k] > tprev) x = flow.evolve(x, t_grid[k] - tprev);
            tprev = t_grid[k];
            wt[k] = w.eval(x);
          }
          double v0 = v.eval(x0);
          double w0 = w.eval(x0);
          for (std::size_t k = 0; k < T; ++k) local_vw[k] += v0 * wt[k];
          local_v += v0;
          local_w += w0;
          local_n += 1.0;
          break;
        } catch (const Error& e) {
          if (ledger) {
            if (e.code() == errc::grazing) ledger->grazing_discarded.fetch_add(1);
            if (e.code() == errc::cap_exceeded) ledger->cap_exceeded.fetch_add(1);
          }
          continue;  // resample this trajectory
        }
      }
    }
    for (std::size_t k = 0; k < T; ++k) vw[chunk * T + k] = local_vw[k];
    vs[chunk] = local_v;
    ws[chunk] = local_w;
    cnt[chunk] = local_n;
  });

  double n_tot = std::accumulate(cnt.begin(), cnt.end(), 0.0);
  if (n_tot < double(budget) * 0.5)
    throw Error(errc::grazing, "more than half of the ensemble was discarded");
  double vbar = std::accumulate(vs.begin(), vs.end(), 0.0) / n_tot;
  double wbar = std::accumulate(ws.begin(), ws.end(), 0.0) / n_tot;

  CorrelationSeries out;
  out.t = t_grid;
  out.rho.resize(T);
  out.se.resize(T);
  out.n_samples = long(n_tot);
  out.v_name = v.name;
  out.w_name = w.name;
  out.flow_name = flow.name();
  out.seed = seed;
  const std::size_t B = 64;  // batches = groups of chunks
  for (std::size_t k = 0; k < T; ++k) {
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) total += vw[c * T + k];
    double mean = total / n_tot;
    out.rho[k] = mean - vbar * wbar;
    // batch means over chunk groups
    double bm[64], bn[64];
    std::fill(bm, bm + B, 0.0);
    std::fill(bn, bn + B, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      bm[c * B / C] += vw[c * T + k];
      bn[c * B / C] += cnt[c];
    }
    double var = 0.0;
    int nb = 0;
    for (std::size_t b = 0; b < B; ++b) {
      if (bn[b] <= 0.0) continue;
      double rb = bm[b] / bn[b] - vbar * wbar;
      var += sqr(rb - out.rho[k]);
      ++nb;
    }
    out.se[k] = (nb > 1) ? std::sqrt(var / (nb * (nb - 1.0))) : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tail survival
// ---------------------------------------------------------------------------

namespace {

double tail_slope_from_counts(std::span<const double> t_grid,
                              std::span<const double> surv, double n, double lo,
                              double hi) {
  std::vector<double> x, y, wts;
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    if (t_grid[k] < lo || t_grid[k] > hi) continue;
    double S = surv[k];
    if (S <= 0.0 || S * n < 10.0) continue;
    x.push_back(std::log(t_grid[k]));
    y.push_back(std::log(S));
    wts.push_back(n * S / std::max(1e-12, 1.0 - S));
  }
  if (x.size() < 3) throw Error(errc::empty_window, "too few usable tail points");
  return fit_line(x, y, wts).slope;
}

}  // namespace

TailEstimate tail_survival(std::span<const double> samples, std::vector<double> t_grid,
                           double window_lo, double window_hi, uint64_t seed) {
  if (samples.size() < 100000)
    throw Error(errc::budget_too_small, "tail fit needs >= 1e5 samples");
  check_grid(t_grid);
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = double(sorted.size());
  TailEstimate est;
  est.t = t_grid;
  est.window_lo = window_lo;
  est.window_hi = window_hi;
  for (double t : t_grid) {
    auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
    double S = double(sorted.end() - it) / n;
    est.survival.push_back(S);
    est.se.push_back(std::sqrt(std::max(0.0, S * (1.0 - S) / n)));
  }
  est.slope = tail_slope_from_counts(t_grid, est.survival, n, window_lo, window_hi);

  // Poisson bootstrap on the inter-threshold counts
  std::vector<double> counts(t_grid.size() + 1, 0.0);
  {
    std::size_t prev = 0;
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
      auto it = std::upper_bound(sorted.begin(), sorted.end(), t_grid[k]);
      std::size_t below = it - sorted.begin();
      counts[k] = double(below - prev);  // mass in (t_{k-1}, t_k]
      prev = below;
    }
    counts[t_grid.size()] = double(sorted.size() - prev);  // above the last threshold
  }
  Rng rng(seed);
  std::vector<double> slopes;
  for (int rep = 0; rep < 60; ++rep) {
    std::vector<double> c(counts.size());
    double tot = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      c[k] = double(poisson_draw(rng, counts[k]));
      tot += c[k];
    }
    std::vector<double> surv(t_grid.size());
    double above = tot;
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
      above -= c[k];
      surv[k] = above / tot;
    }
    try {
      slopes.push_back(tail_slope_from_counts(t_grid, surv, tot, window_lo, window_hi));
    } catch (const Error&) {
      continue;
    }
  }
  if (slopes.size() >= 10) {
    std::sort(slopes.begin(), slopes.end());
    est.ci_lo = slopes[std::size_t(0.025 * slopes.size())];
    est.ci_hi = slopes[std::size_t(0.975 * slopes.size()) - 1];
  } else {
    est.ci_lo = est.ci_hi = est.slope;
  }

  // curvature (non-power-law) test on the window
  std::vector<double> x, y, wts;
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    if (t_grid[k] < window_lo || t_grid[k] > window_hi) continue;
    double S = est.survival[k];
    if (S <= 0.0 || S * n < 10.0) continue;
    x.push_back(std::log(t_grid[k]));
    y.push_back(std::log(S));
    wts.push_back(n * S / std::max(1e-12, 1.0 - S));
  }
  if (x.size() >= 5) {
    QuadFit q = fit_quadratic(x, y, wts);
    est.curvature_z = q.c2 / std::max(1e-300, q.c2_se);
    est.power_law_ok = std::abs(est.curvature_z) < 3.0;
  }
  return est;
}

ExponentFit decay_exponent_fit(const CorrelationSeries& series, double window_lo,
                               double window_hi) {
  std::vector<double> x, y, wts;
  int excluded = 0;
  for (std::size_t k = 0; k < series.t.size(); ++k) {
    double t = series.t[k];
    if (t < window_lo || t > window_hi || t <= 0.0) continue;
    double r = std::abs(series.rho[k]);
    double se = series.se[k];
    if (r <= 2.0 * se || r == 0.0) {  // noise floor
      ++excluded;
      continue;
    }
    x.push_back(std::log(t));
    y.push_back(std::log(r));
    double sigma_log = se / r;
    wts.push_back(1.0 / sqr(std::max(1e-12, sigma_log)));
  }
  if (x.empty())
    throw Error(errc::noise_dominated, "all window points within 2 SE of zero");
  if (x.size() < 3) throw Error(errc::empty_window, "too few usable points in window");
  LineFit lf = fit_line(x, y, wts);
  ExponentFit fit;
  fit.exponent = lf.slope;
  fit.ci_lo = lf.slope - 2.0 * lf.slope_se;
  fit.ci_hi = lf.slope + 2.0 * lf.slope_se;
  fit.window_lo = window_lo;
  fit.window_hi = window_hi;
  fit.n_used = int(x.size());
  fit.n_excluded = excluded;
  return fit;
}

// ---------------------------------------------------------------------------
// Variance growth
// ---------------------------------------------------------------------------

VarianceSeries variance_growth(const FlowSystem& flow, const Observable& v,
                               std::vector<double> t_grid, std::size_t ensemble,
                               uint64_t seed, double fit_window_lo, EventLedger* ledger) {
  if (ensemble < 100) throw Error(errc::budget_too_small, "ensemble too small");
  check_grid(t_grid);
  const std::size_t T = t_grid.size();
  const std::size_t C = kParallelChunks;

  // centering constant from an independent stream family
  double vbar = 0.0;
  {
    std::vector<double> sums(C, 0.0);
    std::size_t m = std::max<std::size_t>(ensemble, 20000);
    std::vector<double> cnts(C, 0.0);
    parallel_chunks(m, [&](std::size_t chunk, std::size_t beg, std::size_t end) {
      double acc = 0.0, cc = 0.0;
      for (std::size_t i = beg; i < end; ++i) {
        Rng rng = Rng::derive(seed ^ 0x5eedc0ffeeULL, i);
        try {
          acc += v.eval(flow.sample(rng));
          cc += 1.0;
        } catch (const Error&) {
        }
      }
      sums[chunk] = acc;
      cnts[chunk] = cc;
    });
    vbar = std::accumulate(sums.begin(), sums.end(), 0.0) /
           std::accumulate(cnts.begin(), cnts.end(), 0.0);
  }

  std::vector<double> sq(C * T, 0.0), cnt(C, 0.0);
  parallel_chunks(ensemble, [&](std::size_t chunk, std::size_t beg, std::size_t end) {
    std::vector<double> local(T, 0.0), I(T);
    double local_n = 0.0;
    for (std::size_t i = beg; i < end; ++i) {
      Rng rng = Rng::derive(seed, i);
      for (int attempt = 0; attempt < 64; ++attempt) {
        try {
          PhasePoint x0 = flow.sample(rng);
          flow.birkhoff(x0, t_grid, v, I);
          for (std::size_t k = 0; k < T; ++k) local[k] += sqr(I[k] - vbar * t_grid[k]);
          local_n += 1.0;
          break;
        } catch (const Error& e) {
          if (ledger) {
            if (e.code() == errc::grazing) ledger->grazing_discarded.fetch_add(1);
            if (e.code() == errc::cap_exceeded) ledger->cap_exceeded.fetch_add(1);
          }
          continue;
        }
      }
    }
    for (std::size_t k = 0; k < T; ++k) sq[chunk * T + k] = local[k];
    cnt[chunk] = local_n;
  });

  double n_tot = std::accumulate(cnt.begin(), cnt.end(), 0.0);
  VarianceSeries out;
  out.t = t_grid;
  out.var.resize(T);
  out.se.resize(T);
  out.ensemble = long(n_tot);
  const std::size_t B = 64;
  for (std::size_t k = 0; k < T; ++k) {
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) total += sq[c * T + k];
    out.var[k] = total / n_tot;
    double bm[64], bn[64];
    std::fill(bm, bm + B, 0.0);
    std::fill(bn, bn + B, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      bm[c * B / C] += sq[c * T + k];
      bn[c * B / C] += cnt[c];
    }
    double var = 0.0;
    int nb = 0;
    for (std::size_t b = 0; b < B; ++b) {
      if (bn[b] <= 0.0) continue;
      var += sqr(bm[b] / bn[b] - out.var[k]);
      ++nb;
    }
    out.se[k] = (nb > 1) ? std::sqrt(var / (nb * (nb - 1.0))) : 0.0;
  }

  // model fits c*t and c*t*log t on the tail window (LSQ through the origin)
  double lo = (fit_window_lo > 0.0) ? fit_window_lo : t_grid[T / 2];
  out.window_lo = lo;
  out.window_hi = t_grid.back();
  double stt = 0.0, svt = 0.0, sff = 0.0, svf = 0.0;
  for (std::size_t k = 0; k < T; ++k) {
    if (t_grid[k] < lo) continue;
    double f = t_grid[k] * std::log(std::max(2.0, t_grid[k]));
    stt += sqr(t_grid[k]);
    svt += out.var[k] * t_grid[k];
    sff += sqr(f);
    svf += out.var[k] * f;
  }
  out.c_lin = svt / stt;
  out.c_tlogt = svf / sff;
  for (std::size_t k = 0; k < T; ++k) {
    if (t_grid[k] < lo) continue;
    double f = t_grid[k] * std::log(std::max(2.0, t_grid[k]));
    out.rss_lin += sqr(out.var[k] - out.c_lin * t_grid[k]);
    out.rss_tlogt += sqr(out.var[k] - out.c_tlogt * f);
  }
  return out;
}

IdentityReport variance_correlation_identity(const CorrelationSeries& series,
                                             const VarianceSeries& var) {
  if (series.t.empty() || var.t.empty()) throw Error(errc::grid_mismatch, "empty series");
  if (series.t.front() > 1e-9)
    throw Error(errc::grid_mismatch, "rho grid must start at t = 0");
  IdentityReport rep;
  for (std::size_t k = 0; k < var.t.size(); ++k) {
    double t = var.t[k];
    if (t > series.t.back() + 1e-12)
      throw Error(errc::grid_mismatch, "rho grid does not reach t = " + format_g17(t));
    // 2 int_0^t (t - r) rho(r) dr with piecewise-linear rho
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < series.t.size(); ++i) {
      double a = series.t[i], b = std::min(series.t[i + 1], t);
      if (b <= a) break;
      double p = series.rho[i];
      double q = (series.rho[i + 1] - series.rho[i]) / (series.t[i + 1] - a);
      double L = b - a, c = t - a;
      acc += p * c * L + (q * c - p) * L * L / 2.0 - q * L * L * L / 3.0;
    }
    rep.t.push_back(t);
    rep.var.push_back(var.var[k]);
    rep.quad.push_back(2.0 * acc);
    double denom = std::max(std::abs(var.var[k]), 1e-300);
    rep.rel_err.push_back(std::abs(var.var[k] - 2.0 * acc) / denom);
    rep.max_rel_err = std::max(rep.max_rel_err, rep.rel_err.back());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Laplace-domain series
// ---------------------------------------------------------------------------

std::vector<LaplaceResult> laplace_series(const susp::GMSemiflow& sf, const Observable& v,
                                          const Observable& w, std::span<const cplx> s_list,
                                          int n_max, std::size_t budget, uint64_t seed) {
  if (n_max < 1) throw Error(errc::bad_params, "n_max >= 1");
  if (budget < 1000) throw Error(errc::budget_too_small, "laplace budget too small");
  const auto& gm = sf.base();
  const auto& roof = sf.roof();
  const double intphi = roof.integral;

  std::vector<double> gl_x, gl_w;
  gauss_legendre(32, gl_x, gl_w);
  std::vector<double> g2_x, g2_w;
  gauss_legendre(20, g2_x, g2_w);

  // centering constant for v over mu^phi
  double cv = 0.0, vsup = 0.0, wsup = 0.0;
  {
    const std::size_t C = kParallelChunks;
    std::vector<double> sums(C, 0.0), sups(C, 0.0), wsups(C, 0.0);
    parallel_chunks(budget, [&](std::size_t chunk, std::size_t beg, std::size_t end) {
      double acc = 0.0, sv = 0.0, sw = 0.0;
      for (std::size_t i = beg; i < end; ++i) {
        Rng rng = Rng::derive(seed ^ 0xcafef00dULL, i);
        double y = gm.sample_mu(rng);
        double phi = roof.eval(y);
        for (std::size_t q = 0; q < gl_x.size(); ++q) {
          double u = phi * gl_x[q];
          double vv = v.eval({y, u, phi, 0.0});
          double ww = w.eval({y, u, phi, 0.0});
          acc += gl_w[q] * phi * vv;
          sv = std::max(sv, std::abs(vv));
          sw = std::max(sw, std::abs(ww));
        }
      }
      sums[chunk] = acc;
      sups[chunk] = sv;
      wsups[chunk] = sw;
    });
    cv = std::accumulate(sums.begin(), sums.end(), 0.0) / (double(budget) * intphi);
    for (double s : sups) vsup = std::max(vsup, s);
    for (double s : wsups) wsup = std::max(wsup, s);
    vsup += std::abs(cv);
  }
  auto vc = [&](double y, double u, double phi) { return v.eval({y, u, phi, 0.0}) - cv; };
  auto we = [&](double y, double u, double phi) { return w.eval({y, u, phi, 0.0}); };

  std::vector<LaplaceResult> results;
  for (cplx s : s_list) {
    const std::size_t C = kParallelChunks;
    std::vector<cplx> zsum(C, cplx(0.0));
    std::vector<cplx> termsum(C * std::size_t(n_max + 1), cplx(0.0));
    std::vector<cplx> zb(C, cplx(0.0));  // per-chunk batch of z_i for SE

    parallel_chunks(budget, [&](std::size_t chunk, std::size_t beg, std::size_t end) {
      std::vector<cplx> terms(n_max + 1);
      cplx zacc = 0.0;
      std::vector<cplx> tacc(n_max + 1, cplx(0.0));
      for (std::size_t i = beg; i < end; ++i) {
        Rng rng = Rng::derive(seed, i);
        double y = gm.sample_mu(rng);
        double phi0 = roof.eval(y);
        // fiber transforms at the orbit points
        // J0: int_0^phi e^{su} v(y,u) int_u^phi e^{-su'} w(y,u') du' du
        cplx j0 = 0.0;
        for (std::size_t qa = 0; qa < g2_x.size(); ++qa) {
          double u = phi0 * g2_x[qa];
          cplx inner = 0.0;
          for (std::size_t qb = 0; qb < g2_x.size(); ++qb) {
            double up = u + (phi0 - u) * g2_x[qb];
            inner += g2_w[qb] * (phi0 - u) * std::exp(-s * up) * we(y, up, phi0);
          }
          j0 += g2_w[qa] * phi0 * std::exp(s * u) * vc(y, u, phi0) * inner;
        }
        terms[0] = j0 / intphi;
        // v_s at y
        cplx v_s = 0.0;
        for (std::size_t q = 0; q < gl_x.size(); ++q) {
          double u = phi0 * gl_x[q];
          v_s += gl_w[q] * phi0 * std::exp(s * u) * vc(y, u, phi0);
        }
        // orbit and w_hat at images
        double phin = phi0;
        double yk = y;
        for (int n = 1; n <= n_max; ++n) {
          yk = gm.apply(yk);
          double phik = roof.eval(yk);
          cplx w_hat = 0.0;
          for (std::size_t q = 0; q < gl_x.size(); ++q) {
            double u = phik * gl_x[q];
            w_hat += gl_w[q] * phik * std::exp(-s * u) * we(yk, u, phik);
          }
          terms[n] = std::exp(-s * phin) * v_s * w_hat / intphi;
          phin += phik;
        }
        cplx z = 0.0;
        for (int n = 0; n <= n_max; ++n) {
          z += terms[n];
          tacc[n] += terms[n];
        }
        zacc += z;
      }
      zsum[chunk] = zacc;
      zb[chunk] = zacc / double(end - beg);
      for (int n = 0; n <= n_max; ++n) termsum[chunk * (n_max + 1) + n] = tacc[n];
    });

    LaplaceResult res;
    res.s = s;
    res.n_max = n_max;
    cplx tot = 0.0;
    for (auto& zc : zsum) tot += zc;
    res.rho_hat = tot / double(budget);
    // batch SEs over chunk means
    double vr = 0.0, vi = 0.0;
    int nb = 0;
    for (std::size_t c = 0; c < C; ++c) {
      vr += sqr(zb[c].real() - res.rho_hat.real());
      vi += sqr(zb[c].imag() - res.rho_hat.imag());
      ++nb;
    }
    res.se_re = std::sqrt(vr / (nb * double(nb - 1)));
    res.se_im = std::sqrt(vi / (nb * double(nb - 1)));
    res.term_abs.resize(n_max + 1);
    for (int n = 0; n <= n_max; ++n) {
      cplx tn = 0.0;
      for (std::size_t c = 0; c < C; ++c) tn += termsum[c * (n_max + 1) + n];
      res.term_abs[n] = std::abs(tn) / double(budget);
    }
    double a = s.real();
    if (a > 0.0) {
      res.tail_bound = (2.0 / intphi) * vsup * wsup / (a * a) *
                       std::exp(-a * double(n_max)) / (1.0 - std::exp(-a));
    } else {
      // justify truncation by the observed decay of the terms
      double ratio = 0.0;
      int cnt2 = 0;
      for (int n = std::max(2, n_max / 2); n < n_max; ++n) {
        if (res.term_abs[n] > 0.0) {
          ratio = std::max(ratio, res.term_abs[n + 1] / res.term_abs[n]);
          ++cnt2;
        }
      }
      if (cnt2 == 0 || ratio >= 0.98)
        throw Error(errc::series_not_decaying,
                    "terms do not decay geometrically at s = i" + format_g17(s.imag()));
      res.tail_bound = res.term_abs[n_max] * ratio / (1.0 - ratio);
    }
    results.push_back(std::move(res));
  }
  return results;
}

std::pair<double, double> laplace_of_series(const CorrelationSeries& series, double s) {
  if (series.t.size() < 3) throw Error(errc::grid_mismatch, "series too short");
  double val = 0.0, var = 0.0;
  for (std::size_t i = 0; i + 1 < series.t.size(); ++i) {
    double h = series.t[i + 1] - series.t[i];
    double f0 = std::exp(-s * series.t[i]) * series.rho[i];
    double f1 = std::exp(-s * series.t[i + 1]) * series.rho[i + 1];
    val += 0.5 * h * (f0 + f1);
    var += sqr(0.5 * h * std::exp(-s * series.t[i]) * series.se[i]) +
           sqr(0.5 * h * std::exp(-s * series.t[i + 1]) * series.se[i + 1]);
  }
  // truncated-tail and quadrature error allowances
  double T = series.t.back();
  double tail = (std::abs(series.rho.back()) + series.se.back()) * std::exp(-s * T) / s;
  double hmax = 0.0;
  for (std::size_t i = 0; i + 1 < series.t.size(); ++i)
    hmax = std::max(hmax, series.t[i + 1] - series.t[i]);
  // composite-trapezoid curvature allowance: (h^2/12) int |f''| ~ (h^2/12) s^2 |val|
  double quad = sqr(hmax) / 12.0 * s * s * std::abs(val);
  return {val, std::sqrt(var) + tail + quad};
}

RoofTailCheck roof_tail_inequality(const gm::GMSystem& gm, const gm::Roof& roof, double eta,
                                   int i, int n, double t, std::size_t budget,
                                   uint64_t seed) {
  if (n < 1 || i < 0) throw Error(errc::bad_params, "need i >= 0, n >= 1");
  const std::size_t C = kParallelChunks;
  std::vector<double> ls(C, 0.0), rs(C, 0.0), l2(C, 0.0), r2(C, 0.0), cnt(C, 0.0);
  parallel_chunks(budget, [&](std::size_t chunk, std::size_t beg, std::size_t end) {
    double la = 0.0, ra = 0.0, lb = 0.0, rb = 0.0, cc = 0.0;
    for (std::size_t k = beg; k < end; ++k) {
      Rng rng = Rng::derive(seed, k);
      double y = gm.sample_mu(rng);
      double phin = 0.0, phii = 0.0, phi0 = 0.0;
      double yy = y;
      int steps = std::max(i + 1, n);
      for (int m = 0; m < steps; ++m) {
        double ph = roof.eval(yy);
        if (m == 0) phi0 = ph;
        if (m < n) phin += ph;
        if (m == i) phii = ph;
        yy = gm.apply(yy);
      }
      double lhs = (phin > t) ? std::pow(phii, eta) : 0.0;
      double rhs = (phi0 > t / n) ? (n + 1.0) * std::pow(phi0, eta) : 0.0;
      la += lhs;
      ra += rhs;
      lb += lhs * lhs;
      rb += rhs * rhs;
      cc += 1.0;
    }
    ls[chunk] = la;
    rs[chunk] = ra;
    l2[chunk] = lb;
    r2[chunk] = rb;
    cnt[chunk] = cc;
  });
  double n_tot = std::accumulate(cnt.begin(), cnt.end(), 0.0);
  RoofTailCheck out;
  out.lhs = std::accumulate(ls.begin(), ls.end(), 0.0) / n_tot;
  out.rhs = std::accumulate(rs.begin(), rs.end(), 0.0) / n_tot;
  double lvar = std::accumulate(l2.begin(), l2.end(), 0.0) / n_tot - sqr(out.lhs);
  double rvar = std::accumulate(r2.begin(), r2.end(), 0.0) / n_tot - sqr(out.rhs);
  out.lhs_se = std::sqrt(std::max(0.0, lvar) / n_tot);
  out.rhs_se = std::sqrt(std::max(0.0, rvar) / n_tot);
  return out;
}

std::vector<double> sample_flight_times(const billiard::Table& table, std::size_t n,
                                        uint64_t seed, EventLedger* ledger) {
  const std::size_t orbit_len = 1000;
  const std::size_t orbits = (n + orbit_len - 1) / orbit_len;
  std::vector<double> out(orbits * orbit_len, 0.0);
  parallel_chunks(orbits, [&](std::size_t, std::size_t beg, std::size_t end) {
    for (std::size_t o = beg; o < end; ++o) {
      Rng rng = Rng::derive(seed, o);
      std::size_t made = 0;
      while (made < orbit_len) {
        billiard::CollisionState x = billiard::sample_invariant_one(table, rng);
        try {
          while (made < orbit_len) {
            double h;
            x = billiard::billiard_step(table, x, &h, nullptr, nullptr);
            out[o * orbit_len + made] = h;
            ++made;
            if (ledger) ledger->collisions.fetch_add(1);
          }
        } catch (const Error& e) {
          if (ledger) {
            if (e.code() == errc::grazing) ledger->grazing_discarded.fetch_add(1);
            if (e.code() == errc::cap_exceeded) ledger->cap_exceeded.fetch_add(1);
          }
          continue;  // restart from a fresh invariant sample
        }
      }
    }
  });
  out.resize(n);
  return out;
}

std::vector<double> sample_roof(const gm::GMSystem& gm, const gm::Roof& roof, std::size_t n,
                                uint64_t seed) {
  std::vector<double> out(n);
  parallel_chunks(n, [&](std::size_t, std::size_t beg, std::size_t end) {
    for (std::size_t i = beg; i < end; ++i) {
      Rng rng = Rng::derive(seed, i);
      out[i] = roof.eval(gm.sample_mu(rng));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Observable catalogs
// ---------------------------------------------------------------------------

Observable billiard_observable(const std::string& name) {
  Observable o;
  o.name = name;
  if (name == "vel_x") {
    o.eval = [](const PhasePoint& p) { return p.c; };
    o.flight_affine = true;
  } else if (name == "vel_y") {
    o.eval = [](const PhasePoint& p) { return p.d; };
    o.flight_affine = true;
  } else if (name == "pos_x") {
    o.eval = [](const PhasePoint& p) { return p.a; };
  } else if (name == "pos_y") {
    o.eval = [](const PhasePoint& p) { return p.b; };
  } else if (name == "dir_harmonic") {
    o.eval = [](const PhasePoint& p) { return p.c * p.c - p.d * p.d; };  // cos(2 angle)
    o.flight_affine = true;
  } else {
    throw Error(errc::bad_params, "unknown billiard observable '" + name + "'");
  }
  return o;
}

Observable semiflow_observable(const std::string& name) {
  Observable o;
  o.name = name;
  if (name == "base_sin") {
    o.eval = [](const PhasePoint& p) { return std::sin(kTwoPi * p.a); };
    o.fiber_constant = true;
  } else if (name == "base_cos") {
    o.eval = [](const PhasePoint& p) { return std::cos(kTwoPi * p.a); };
    o.fiber_constant = true;
  } else if (name == "flow_phase_sin") {
    o.eval = [](const PhasePoint& p) { return std::sin(kTwoPi * p.b / p.c); };
  } else if (name == "flow_phase_cos") {
    o.eval = [](const PhasePoint& p) { return std::cos(kTwoPi * p.b / p.c); };
  } else if (name == "flow_bump_sin") {
    // half-period bump: vanishes at both identification endpoints but its
    // lagged self-products do not integrate to zero over a flight
    o.eval = [](const PhasePoint& p) { return std::sin(0.5 * kTwoPi * p.b / p.c); };
  } else if (name == "u_frac") {
    o.eval = [](const PhasePoint& p) { return p.b / p.c - 0.5; };
  } else if (name == "one") {
    o.eval = [](const PhasePoint&) { return 1.0; };
    o.fiber_constant = true;
  } else if (name == "zero") {
    o.eval = [](const PhasePoint&) { return 0.0; };
    o.fiber_constant = true;
  } else {
    throw Error(errc::bad_params, "unknown semiflow observable '" + name + "'");
  }
  return o;
}

Observable twosided_observable(const std::string& name) {
  Observable o;
  o.name = name;
  if (name == "base_sin") {
    o.eval = [](const PhasePoint& p) { return std::sin(kTwoPi * p.a); };
    o.fiber_constant = true;
  } else if (name == "fiber_z") {
    o.eval = [](const PhasePoint& p) { return p.b; };
    o.fiber_constant = true;
  } else if (name == "flow_phase_cos") {
    o.eval = [](const PhasePoint& p) { return std::cos(kTwoPi * p.c / p.d); };
  } else {
    throw Error(errc::bad_params, "unknown two-sided observable '" + name + "'");
  }
  return o;
}

}  // namespace mixlab::stats
