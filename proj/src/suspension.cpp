#include "mixlab/suspension.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

namespace mixlab::susp {

// ---------------------------------------------------------------------------
// GMSemiflow
// ---------------------------------------------------------------------------

GMSemiflow::GMSemiflow(gm::GMSystem base, gm::Roof roof)
    : gm_(std::move(base)), roof_(std::move(roof)) {
  ensure_weights();
}

void GMSemiflow::ensure_weights() const {
  if (!wcum_.empty()) return;
  std::vector<double> xs, ws;
  gauss_legendre(8, xs, ws);
  const auto& fam = gm_.family();
  wcum_.resize(fam.count());
  double acc = 0.0;
  for (int j = 0; j < fam.count(); ++j) {
    double wj = 0.0;
    for (std::size_t q = 0; q < xs.size(); ++q)
      wj += ws[q] * fam.weight(j, xs[q]) * roof_.on_branch(j, xs[q]) *
            gm_.invariant_density(xs[q]);
    acc += wj;
    wcum_[j] = acc;
  }
  wtotal_ = acc;
}

GMSemiflow::Pt GMSemiflow::flow(Pt p, double t, long* steps) const {
  if (t < 0.0) throw Error(errc::bad_params, "flow time must be nonnegative");
  double phi = roof_.eval(p.y);
  long n = 0;
  while (p.u + t >= phi) {
    t -= phi - p.u;
    p.y = gm_.apply(p.y);
    p.u = 0.0;
    phi = roof_.eval(p.y);
    ++n;
  }
  p.u += t;
  if (steps) *steps = n;
  return p;
}

GMSemiflow::Pt GMSemiflow::sample_mu_phi(Rng& rng) const {
  // branch size-biased by int_j phi dmu, then rejection against the branch sup
  double u = rng.uniform() * wtotal_;
  auto it = std::lower_bound(wcum_.begin(), wcum_.end(), u);
  int j = int(it - wcum_.begin());
  j = std::min(j, int(wcum_.size()) - 1);
  const auto& fam = gm_.family();
  double sup = roof_.branch_sup(j);
  double y, phi;
  for (;;) {
    y = fam.sample_branch(rng, j);
    phi = roof_.eval(y);
    if (rng.uniform() * sup <= phi) break;
  }
  return {y, rng.uniform() * phi};
}

double GMSemiflow::mass_above(double N) const {
  const auto& fam = gm_.family();
  double acc = 0.0;
  for (int j = 0; j < fam.count(); ++j)
    if (roof_.branch_inf(j) >= N) acc += fam.mass(j);
  return acc;
}

gm::Roof truncate_roof(const gm::GMSystem& base, const gm::Roof& roof, double N,
                       const TruncateOptions& opts) {
  if (N < opts.n_min)
    throw Error(errc::bad_params, "truncation level below configured minimum");
  const gm::BranchFamily* fam = &base.family();
  auto binf = roof.branch_inf;
  auto bsup = roof.branch_sup;
  auto ev = roof.eval;
  auto ob = roof.on_branch;
  gm::Roof r = roof;
  r.eval = [fam, binf, ev, N](double y) {
    return binf(fam->branch_of(y)) >= N ? N : ev(y);
  };
  r.on_branch = [binf, ob, N](int j, double w) { return binf(j) >= N ? N : ob(j, w); };
  r.branch_inf = [binf, N](int j) { return std::min(binf(j), N); };
  r.branch_sup = [binf, bsup, N](int j) { return binf(j) >= N ? N : bsup(j); };
  r.bounded = true;
  r.sup = std::min(roof.sup, 2.0 * roof.C1 * N);
  // integral: subtract the excess over the truncated branches
  std::vector<double> xs, ws;
  gauss_legendre(8, xs, ws);
  double excess = 0.0;
  for (int j = 0; j < fam->count(); ++j) {
    if (binf(j) < N) continue;
    double wj = 0.0, mj = 0.0;
    for (std::size_t q = 0; q < xs.size(); ++q) {
      double base_w = fam->weight(j, xs[q]) * 1.0;
      wj += ws[q] * base_w * ob(j, xs[q]);
      mj += ws[q] * base_w;
    }
    excess += wj - N * mj;
  }
  r.integral = roof.integral - excess;
  r.name = roof.name + "|trunc:" + format_g17(N);
  return r;
}

// ---------------------------------------------------------------------------
// TwoSidedModel
// ---------------------------------------------------------------------------

TwoSidedModel::TwoSidedModel(gm::GMSystem base, std::vector<double> rates,
                             std::vector<double> offsets)
    : gm_(std::move(base)), rate_(std::move(rates)), off_(std::move(offsets)) {
  const int B = gm_.branch_count();
  if (int(rate_.size()) != B || int(off_.size()) != B)
    throw Error(errc::bad_params, "fiber map count mismatch");
  for (int j = 0; j < B; ++j) {
    if (!(rate_[j] > 0.0 && rate_[j] < 1.0))
      throw Error(errc::bad_params, "fiber rates must lie in (0,1)");
    if (off_[j] < 0.0 || off_[j] + rate_[j] > 1.0 + 1e-12)
      throw Error(errc::bad_params, "fiber maps must send [0,1] into itself");
    gamma_ = std::max(gamma_, rate_[j]);
  }
  // Bernoulli symbols require branch-constant weights
  const auto& fam = gm_.family();
  mass_cum_.resize(B);
  double acc = 0.0;
  for (int j = 0; j < B; ++j) {
    if (std::abs(fam.weight(j, 0.25) - fam.weight(j, 0.75)) >
        1e-12 * std::abs(fam.weight(j, 0.25)))
      throw Error(errc::bad_params,
                  "two-sided model needs branch-constant weights (Bernoulli base)");
    acc += fam.mass(j);
    mass_cum_[j] = acc;
  }
  z_tilde_ = off_[0] / (1.0 - rate_[0]);
}

TwoSidedModel TwoSidedModel::fattened(gm::GMSystem base) {
  const int B = base.branch_count();
  std::vector<double> rates(B, 1.0 / B), offs(B);
  for (int j = 0; j < B; ++j) offs[j] = double(j) / B;
  return TwoSidedModel(std::move(base), std::move(rates), std::move(offs));
}

TwoSidedModel TwoSidedModel::fattened_skewed(gm::GMSystem base) {
  // images remain disjoint but contraction rates differ per branch; with a
  // homogeneous fattening the temporal distance function degenerates to zero
  // for affine roofs
  const int B = base.branch_count();
  std::vector<double> rates(B), offs(B);
  double cursor = 0.0;
  for (int j = 0; j < B; ++j) {
    rates[j] = (0.5 + 0.4 * (j % 2 == 0 ? -1.0 : 1.0)) / B;  // alternate 0.1/B, 0.9/B
    offs[j] = cursor;
    cursor += 1.0 / B;
  }
  return TwoSidedModel(std::move(base), std::move(rates), std::move(offs));
}

Point TwoSidedModel::apply(Point p, int& branch) const {
  double ynext = gm_.apply(p.ybar, branch);
  return {ynext, fiber_map(branch, p.z)};
}

Point TwoSidedModel::apply(Point p) const {
  int b;
  return apply(p, b);
}

double TwoSidedModel::fiber_from_past(std::span<const int> past) const {
  double z = z_tilde_;
  for (std::size_t i = past.size(); i-- > 0;) z = fiber_map(past[i], z);
  return z;
}

int TwoSidedModel::sample_symbol(Rng& rng) const {
  double u = rng.uniform() * mass_cum_.back();
  auto it = std::lower_bound(mass_cum_.begin(), mass_cum_.end(), u);
  return std::min(int(it - mass_cum_.begin()), int(mass_cum_.size()) - 1);
}

TwoSidedModel::Sampled TwoSidedModel::sample(Rng& rng, int past_depth) const {
  Sampled s;
  s.past.resize(past_depth);
  for (int i = 0; i < past_depth; ++i) s.past[i] = sample_symbol(rng);
  s.p.ybar = gm_.sample_mu(rng);
  s.p.z = fiber_from_past(s.past);
  return s;
}

// ---------------------------------------------------------------------------
// Roofs on the two-sided space
// ---------------------------------------------------------------------------

RoofYZ roofyz_affine(const TwoSidedModel& m, double a, double by, double bz) {
  RoofYZ r;
  r.eval = [a, by, bz](Point p) { return a + by * p.ybar + bz * p.z; };
  r.inf = a + std::min(0.0, by) + std::min(0.0, bz);
  r.sup = a + std::max(0.0, by) + std::max(0.0, bz);
  if (!(r.inf > 0.0)) throw Error(errc::bad_params, "roof must stay positive");
  r.bounded = true;
  r.fiber_constant = (bz == 0.0);
  r.stable_lip = std::abs(bz);
  r.base_lip = std::abs(by);
  const gm::BranchFamily* fam = &m.base().family();
  r.branch_inf = [a, by, bz, fam](int j) {
    double l = fam->lo(j), h = fam->hi(j);
    return a + std::min(by * l, by * h) + std::min(0.0, bz);
  };
  r.branch_sup = [a, by, bz, fam](int j) {
    double l = fam->lo(j), h = fam->hi(j);
    return a + std::max(by * l, by * h) + std::max(0.0, bz);
  };
  // int phi dmu: base mean by quadrature, fiber mean from the affine IFS
  std::vector<double> xs, ws;
  gauss_legendre(64, xs, ws);
  double ey = 0.0;
  for (std::size_t q = 0; q < xs.size(); ++q)
    ey += ws[q] * xs[q] * m.base().invariant_density(xs[q]);
  double sum_mo = 0.0, sum_mr = 0.0;
  for (int j = 0; j < m.branch_count(); ++j) {
    double mass = fam->mass(j);
    sum_mo += mass * (a * 0.0 + m.fiber_map(j, 0.0));
    sum_mr += mass * (m.fiber_map(j, 1.0) - m.fiber_map(j, 0.0));
  }
  double ez = sum_mo / (1.0 - sum_mr);
  r.integral = a + by * ey + bz * ez;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "yzaffine:%g+%gy+%gz", a, by, bz);
  r.name = buf;
  return r;
}

RoofYZ make_roofyz(const TwoSidedModel& m, const std::string& spec) {
  // "yzaffine:a:by:bz"
  if (spec.rfind("yzaffine:", 0) == 0) {
    auto rest = spec.substr(9);
    auto c1 = rest.find(':');
    auto c2 = rest.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw Error(errc::bad_params, "roof spec " + spec);
    return roofyz_affine(m, std::stod(rest.substr(0, c1)),
                         std::stod(rest.substr(c1 + 1, c2 - c1 - 1)),
                         std::stod(rest.substr(c2 + 1)));
  }
  throw Error(errc::bad_params, "unknown two-sided roof spec '" + spec + "'");
}

// ---------------------------------------------------------------------------
// chi and the coboundary reduction
// ---------------------------------------------------------------------------

double chi(const TwoSidedModel& m, const RoofYZ& roof, Point y, int K, double tol) {
  if (K < 1) throw Error(errc::bad_params, "K must be >= 1");
  double g = m.gamma();
  double dz0 = std::abs(y.z - m.z_tilde());
  double bound =
      roof.stable_lip * m.contraction_C2() * std::pow(g, K) / (1.0 - g) * dz0;
  if (bound > tol)
    throw Error(errc::no_convergence, "chi remainder bound " + format_g17(bound) +
                                          " above tol at K = " + std::to_string(K));
  double acc = 0.0;
  double ybar = y.ybar, za = m.z_tilde(), zb = y.z;
  for (int n = 0; n < K; ++n) {
    acc += roof.eval({ybar, za}) - roof.eval({ybar, zb});
    int j;
    double ynext = m.base().apply(ybar, j);
    za = m.fiber_map(j, za);
    zb = m.fiber_map(j, zb);
    ybar = ynext;
  }
  return acc;
}

int chi_depth(const TwoSidedModel& m, const RoofYZ& roof, double tol) {
  if (roof.stable_lip == 0.0) return 1;
  double g = m.gamma();
  double k = std::log(tol * (1.0 - g) / (roof.stable_lip * m.contraction_C2())) / std::log(g);
  return std::clamp(int(std::ceil(k)) + 1, 1, 4000);
}

double chi_auto(const TwoSidedModel& m, const RoofYZ& roof, Point y, double tol) {
  return chi(m, roof, y, chi_depth(m, roof, tol), tol);
}

double tilde_phi(const TwoSidedModel& m, const RoofYZ& roof, Point y, double tol) {
  Point fy = m.apply(y);
  return roof.eval(y) + chi_auto(m, roof, y, tol) - chi_auto(m, roof, fy, tol);
}

Conjugacies::Conjugacies(const TwoSidedModel& m, const RoofYZ& roof, uint64_t seed,
                         std::size_t n_estimate, double tol)
    : m_(&m), roof_(&roof), tol_(tol) {
  Rng rng(seed);
  double sup = 0.0;
  for (std::size_t i = 0; i < n_estimate; ++i) {
    auto s = m.sample(rng, 48);
    sup = std::max(sup, std::abs(chi_auto(m, roof, s.p, tol)));
  }
  chi_inf_ = sup * 1.1;  // sample supremum plus safety margin
  if (roof.inf < 4.0 * chi_inf_ + 1.0)
    throw Error(errc::induce_power_needed,
                "inf roof " + format_g17(roof.inf) + " < 4|chi|+1 = " +
                    format_g17(4.0 * chi_inf_ + 1.0) +
                    " (replace the base map by a power)");
}

double Conjugacies::tphi(Point y) const { return tilde_phi(*m_, *roof_, y, tol_); }

SuspPoint Conjugacies::g_plus(SuspPoint x) const {
  double u = x.u + chi_auto(*m_, *roof_, x.y, tol_) + chi_inf_;
  if (u < 0.0) throw Error(errc::no_convergence, "chi exceeded its estimated supremum");
  Point y = x.y;
  double ph = tphi(y);
  while (u >= ph) {
    u -= ph;
    y = m_->apply(y);
    ph = tphi(y);
  }
  return {y, u};
}

SuspPoint Conjugacies::g_minus(SuspPoint x) const {
  double u = x.u - chi_auto(*m_, *roof_, x.y, tol_) + chi_inf_;
  if (u < 0.0) throw Error(errc::no_convergence, "chi exceeded its estimated supremum");
  Point y = x.y;
  double ph = roof_->eval(y);
  while (u >= ph) {
    u -= ph;
    y = m_->apply(y);
    ph = roof_->eval(y);
  }
  return {y, u};
}

SuspPoint Conjugacies::flow_phi(SuspPoint x, double t) const {
  double u = x.u + t;
  Point y = x.y;
  double ph = roof_->eval(y);
  while (u >= ph) {
    u -= ph;
    y = m_->apply(y);
    ph = roof_->eval(y);
  }
  return {y, u};
}

// ---------------------------------------------------------------------------
// TwoSidedFlow
// ---------------------------------------------------------------------------

TwoSidedFlow::TwoSidedFlow(TwoSidedModel m, RoofYZ roof)
    : m_(std::move(m)), roof_(std::move(roof)) {
  if (!roof_.bounded)
    throw Error(errc::bad_params, "two-sided flow sampling needs a bounded roof");
}

SuspPoint TwoSidedFlow::flow(SuspPoint p, double t, long* steps) const {
  if (t < 0.0) throw Error(errc::bad_params, "flow time must be nonnegative");
  double ph = roof_.eval(p.y);
  long n = 0;
  while (p.u + t >= ph) {
    t -= ph - p.u;
    p.y = m_.apply(p.y);
    p.u = 0.0;
    ph = roof_.eval(p.y);
    ++n;
  }
  p.u += t;
  if (steps) *steps = n;
  return p;
}

SuspPoint TwoSidedFlow::sample_mu_phi(Rng& rng) const {
  // global rejection: density of y under mu^phi is proportional to phi(y)
  for (;;) {
    auto s = m_.sample(rng, 48);
    double ph = roof_.eval(s.p);
    if (rng.uniform() * roof_.sup <= ph) return {s.p, rng.uniform() * ph};
  }
}

// ---------------------------------------------------------------------------
// Temporal distance
// ---------------------------------------------------------------------------

TemporalDistance temporal_distance(const TwoSidedModel& m, const RoofYZ& roof,
                                   const TwoSidedModel::Sampled& y1,
                                   const TwoSidedModel::Sampled& y4, int K) {
  if (K < 1) throw Error(errc::bad_params, "K must be >= 1");
  if (int(y1.past.size()) < K || int(y4.past.size()) < K)
    throw Error(errc::no_convergence, "recorded pasts shallower than K");
  const auto& fam = m.base().family();
  // product bracket: y2 shares the base of y1 and the past (hence fiber) of
  // y4; y3 the other way round
  double fwd = 0.0;
  {
    double yb1 = y1.p.ybar, yb4 = y4.p.ybar;
    double z1 = y1.p.z, z2 = y4.p.z;  // fibers over yb1
    double z3 = y1.p.z, z4 = y4.p.z;  // fibers over yb4
    for (int n = 0; n < K; ++n) {
      fwd += roof.eval({yb1, z1}) - roof.eval({yb1, z2}) - roof.eval({yb4, z3}) +
             roof.eval({yb4, z4});
      int j1, j4;
      double n1 = m.base().apply(yb1, j1);
      double n4 = m.base().apply(yb4, j4);
      z1 = m.fiber_map(j1, z1);
      z2 = m.fiber_map(j1, z2);
      z3 = m.fiber_map(j4, z3);
      z4 = m.fiber_map(j4, z4);
      yb1 = n1;
      yb4 = n4;
    }
  }
  // backward: pairs (y1,y3) share the past of y1; (y2,y4) share the past of
  // y4; fibers along a shared past coincide exactly
  double bwd = 0.0;
  double back_rate = 0.0;
  for (int j = 0; j < fam.count(); ++j)
    back_rate = std::max({back_rate, fam.inv_deriv(j, 0.0), fam.inv_deriv(j, 1.0),
                          fam.inv_deriv(j, 0.5)});
  {
    double b1 = y1.p.ybar, b3 = y4.p.ybar;  // past of y1
    double b2 = y1.p.ybar, b4 = y4.p.ybar;  // past of y4
    for (int n = 1; n <= K; ++n) {
      b1 = fam.inv(y1.past[n - 1], b1);
      b3 = fam.inv(y1.past[n - 1], b3);
      b2 = fam.inv(y4.past[n - 1], b2);
      b4 = fam.inv(y4.past[n - 1], b4);
      double z13 = m.fiber_from_past(std::span<const int>(y1.past).subspan(n));
      double z24 = m.fiber_from_past(std::span<const int>(y4.past).subspan(n));
      bwd += roof.eval({b1, z13}) - roof.eval({b2, z24}) - roof.eval({b3, z13}) +
             roof.eval({b4, z24});
    }
  }
  TemporalDistance out;
  out.value = fwd + bwd;
  double g = m.gamma();
  double dz = std::abs(y1.p.z - y4.p.z);
  double dy = std::abs(y1.p.ybar - y4.p.ybar);
  out.remainder_bound =
      2.0 * roof.stable_lip * std::pow(g, K) / (1.0 - g) * dz +
      2.0 * roof.base_lip * std::pow(back_rate, K + 1) / (1.0 - back_rate) * dy;
  return out;
}

BoxDimensionFit tdf_range_dimension(std::span<const double> values,
                                    std::span<const double> scales) {
  if (values.size() < 1000)
    throw Error(errc::bad_params, "need at least 1e3 sampled values");
  if (scales.size() < 2) throw Error(errc::bad_params, "need at least 2 scales");
  BoxDimensionFit fit;
  bool any_spread = false;
  for (double eps : scales) {
    std::unordered_set<long long> boxes;
    for (double v : values) boxes.insert((long long)std::floor(v / eps));
    fit.scales.push_back(eps);
    fit.counts.push_back(double(boxes.size()));
    if (boxes.size() > 1) any_spread = true;
  }
  if (!any_spread)
    throw Error(errc::degenerate_range, "all values coincide at every scale");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < fit.scales.size(); ++i) {
    x.push_back(std::log(1.0 / fit.scales[i]));
    y.push_back(std::log(fit.counts[i]));
  }
  LineFit lf = fit_line(x, y);
  fit.slope = lf.slope;
  fit.slope_se = lf.slope_se;
  return fit;
}

// ---------------------------------------------------------------------------
// Periodic data
// ---------------------------------------------------------------------------

PeriodicOrbitRecord periodic_orbit(const gm::GMSystem& gm, const gm::Roof& roof,
                                   const std::vector<int>& word) {
  if (word.empty()) throw Error(errc::bad_params, "empty word");
  for (int j : word)
    if (j < 0 || j >= gm.branch_count()) throw Error(errc::bad_params, "word symbol range");
  const auto& fam = gm.family();
  const int p = int(word.size());
  auto fixed_point_of_rotation = [&](int k) {
    double y = 0.5;
    for (int it = 0; it < 400; ++it) {
      double prev = y;
      for (int i = p; i-- > 0;) y = fam.inv(word[(i + k) % p], y);
      if (std::abs(y - prev) < 1e-16) break;
    }
    return y;
  };
  PeriodicOrbitRecord rec;
  rec.word = word;
  rec.p = p;
  rec.y = fixed_point_of_rotation(0);
  for (int k = 0; k < p; ++k) rec.T += roof.eval(fixed_point_of_rotation(k));
  return rec;
}

DiophantineReport diophantine_ratio(double T1, double T2, double T3, int depth,
                                    long long flag_threshold) {
  if (std::abs(T2 - T3) < 1e-300) throw Error(errc::bad_params, "T2 == T3");
  DiophantineReport rep;
  rep.ratio = (T1 - T3) / (T2 - T3);
  double abs_err = 4e-16 * (std::abs(T1) + std::abs(T3) +
                            std::abs(rep.ratio) * (std::abs(T2) + std::abs(T3))) /
                   std::abs(T2 - T3);
  rep.cf = continued_fraction(rep.ratio, depth, abs_err);
  if (rep.cf.exhaustion_index >= 0 && rep.cf.quotients.size() < 3)
    throw Error(errc::precision_exhausted,
                "only " + std::to_string(rep.cf.quotients.size()) +
                    " partial quotients resolved");
  for (std::size_t k = 1; k < rep.cf.quotients.size(); ++k)
    if (rep.cf.quotients[k] > flag_threshold) rep.liouville_suspicious = true;
  return rep;
}

namespace {

// LSQ of D_N = kappa + gamma^N (A cos N omega + B sin N omega) for fixed
// (gamma, omega): 3x3 (or 2x2 when omega ~ 0 or pi) normal equations.
double solve_kab(std::span<const int> N, std::span<const double> D, double gamma,
                 double omega, double out[3]) {
  bool use_b = std::abs(std::sin(omega)) > 1e-9;
  int dim = use_b ? 3 : 2;
  double M[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  double rhs[3] = {0, 0, 0};
  for (std::size_t i = 0; i < N.size(); ++i) {
    double gn = std::pow(gamma, N[i]);
    double basis[3] = {1.0, gn * std::cos(N[i] * omega), gn * std::sin(N[i] * omega)};
    for (int r = 0; r < dim; ++r) {
      rhs[r] += basis[r] * D[i];
      for (int c = 0; c < dim; ++c) M[r][c] += basis[r] * basis[c];
    }
  }
  // Gaussian elimination with partial pivoting
  int idx[3] = {0, 1, 2};
  for (int c = 0; c < dim; ++c) {
    int piv = c;
    for (int r = c + 1; r < dim; ++r)
      if (std::abs(M[idx[r]][c]) > std::abs(M[idx[piv]][c])) piv = r;
    std::swap(idx[c], idx[piv]);
    if (std::abs(M[idx[c]][c]) < 1e-14) return std::numeric_limits<double>::infinity();
    for (int r = c + 1; r < dim; ++r) {
      double f = M[idx[r]][c] / M[idx[c]][c];
      for (int k = c; k < dim; ++k) M[idx[r]][k] -= f * M[idx[c]][k];
      rhs[idx[r]] -= f * rhs[idx[c]];
    }
  }
  double sol[3] = {0, 0, 0};
  for (int c = dim - 1; c >= 0; --c) {
    double v = rhs[idx[c]];
    for (int k = c + 1; k < dim; ++k) v -= M[idx[c]][k] * sol[k];
    sol[c] = v / M[idx[c]][c];
  }
  out[0] = sol[0];
  out[1] = sol[1];
  out[2] = use_b ? sol[2] : 0.0;
  double rss = 0.0;
  for (std::size_t i = 0; i < N.size(); ++i) {
    double gn = std::pow(gamma, N[i]);
    double fit = out[0] + gn * (out[1] * std::cos(N[i] * omega) + out[2] * std::sin(N[i] * omega));
    rss += sqr(D[i] - fit);
  }
  return rss;
}

}  // namespace

GoodAsymptoticsFit good_asymptotics_fit(double T0, std::span<const int> N,
                                        std::span<const double> T) {
  if (N.size() != T.size() || N.size() < 6)
    throw Error(errc::bad_params, "need >= 6 records");
  std::vector<double> D(N.size());
  double dscale = 0.0;
  for (std::size_t i = 0; i < N.size(); ++i) {
    D[i] = T[i] - double(N[i]) * T0;
    dscale = std::max(dscale, std::abs(D[i]));
  }
  const double pi = 3.14159265358979323846;
  double best_rss = std::numeric_limits<double>::infinity();
  double best_g = 0.5, best_w = 0.0, kab[3] = {0, 0, 0};
  for (double g = 0.05; g < 0.96; g += 0.02) {
    for (double w = 0.0; w < pi + 1e-9; w += pi / 48) {
      double tmp[3];
      double rss = solve_kab(N, D, g, w, tmp);
      if (rss < best_rss) {
        best_rss = rss;
        best_g = g;
        best_w = w;
        std::copy(tmp, tmp + 3, kab);
      }
    }
  }
  if (!std::isfinite(best_rss)) throw Error(errc::fit_diverged, "grid search failed");
  // refine (gamma, omega) by Nelder-Mead on a logit/clamped parametrization
  auto obj = [&](std::span<const double> p) {
    double g = 1.0 / (1.0 + std::exp(-p[0]));
    double w = std::clamp(p[1], 0.0, pi);
    double tmp[3];
    return solve_kab(N, D, g, w, tmp);
  };
  double fb = 0.0;
  auto bestp = nelder_mead(obj, {std::log(best_g / (1.0 - best_g)), best_w}, 0.15, 400,
                           1e-14, &fb);
  GoodAsymptoticsFit fit;
  fit.gamma = 1.0 / (1.0 + std::exp(-bestp[0]));
  fit.omega = std::clamp(bestp[1], 0.0, pi);
  best_rss = solve_kab(N, D, fit.gamma, fit.omega, kab);
  if (!std::isfinite(best_rss)) throw Error(errc::fit_diverged, "refinement failed");
  fit.kappa = kab[0];
  fit.amplitude = std::hypot(kab[1], kab[2]);
  fit.omega0 = (fit.amplitude > 0.0) ? std::atan2(-kab[2], kab[1]) : 0.0;
  fit.degenerate = fit.amplitude < 1e-8 * std::max(1.0, dscale);
  for (std::size_t i = 0; i < N.size(); ++i) {
    double gn = std::pow(fit.gamma, N[i]);
    double model = fit.kappa + gn * (kab[1] * std::cos(N[i] * fit.omega) +
                                     kab[2] * std::sin(N[i] * fit.omega));
    fit.residuals.push_back(T[i] - double(N[i]) * T0 - model);
    fit.envelope.push_back((D[i] - fit.kappa) / gn);
  }
  double mt = std::numeric_limits<double>::infinity();
  for (std::size_t i = N.size() / 2; i < N.size(); ++i)
    mt = std::min(mt, std::abs(fit.envelope[i]));
  fit.min_tail_envelope = mt;
  return fit;
}

// ---------------------------------------------------------------------------
// Billiard-backed suspension utilities
// ---------------------------------------------------------------------------

double BilliardSectionFlow::roof(const billiard::CollisionState& x) const {
  return billiard::next_collision(table_, table_.outgoing(x)).h;
}

billiard::FlowState BilliardSectionFlow::project(const billiard::CollisionState& x,
                                                 double u) const {
  return billiard::flow(table_, table_.outgoing(x), u);
}

ObservableNorms lift_observable(const BilliardSectionFlow& flow,
                                const std::function<double(const billiard::FlowState&)>& v,
                                double eta, double gamma, uint64_t seed,
                                std::size_t n_pairs) {
  const auto& tab = flow.table();
  Rng rng(seed);
  ObservableNorms norms;
  norms.eta = eta;
  norms.gamma = gamma;
  const double eta2 = eta * eta;
  std::size_t done = 0;
  while (done < n_pairs) {
    billiard::CollisionState x = billiard::sample_invariant_one(tab, rng);
    billiard::CollisionState xp = x;
    xp.r += rng.uniform(-1e-3, 1e-3);
    xp.phi += rng.uniform(-1e-3, 1e-3);
    if (xp.r < 0.0 || xp.r > tab.component_length(x.component)) continue;
    if (std::abs(xp.phi) > 1.55) continue;
    try {
      double h1 = flow.roof(x), h2 = flow.roof(xp);
      double d = tab.phase_distance(x, xp);
      if (d == 0.0) continue;
      int s = billiard::itinerary_separation(tab, x, xp, 30);
      double u = rng.uniform() * std::min(h1, h2);
      auto p1 = flow.project(x, u);
      auto p2 = flow.project(xp, u);
      double v1 = v(p1), v2 = v(p2);
      norms.sup = std::max({norms.sup, std::abs(v1), std::abs(v2)});
      double denom = h1 * (std::pow(d, eta2) + std::pow(gamma, s));
      if (denom > 0.0)
        norms.gamma_seminorm = std::max(norms.gamma_seminorm, std::abs(v1 - v2) / denom);
      // flow-direction regularity at the same base point
      double du = rng.uniform(1e-4, std::max(2e-4, 0.5 * h1));
      if (u + du < h1) {
        double v1b = v(flow.project(x, u + du));
        norms.u_holder = std::max(norms.u_holder, std::abs(v1b - v1) / std::pow(du, eta));
      }
      double fd = 1e-4;
      if (u > fd && u + fd < h1) {
        double vm = v(flow.project(x, u - fd));
        double vp = v(flow.project(x, u + fd));
        norms.dt1 = std::max(norms.dt1, std::abs(vp - vm) / (2 * fd));
        norms.dt2 = std::max(norms.dt2, std::abs(vp - 2 * v1 + vm) / (fd * fd));
      }
      ++done;
    } catch (const Error&) {
      continue;  // grazing pair: resample
    }
  }
  norms.pairs = done;
  return norms;
}

std::string HolderReport::text() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "holder diagnostics (two-sided)\n"
                "  samples                %zu\n"
                "  stable-pair constant   %.6g\n"
                "  unstable-pair constant %.6g\n"
                "  contraction rate       %.6g\n"
                "  contraction prefactor  %.6g\n",
                samples, stable_roof_const, unstable_roof_const, contraction_rate,
                contraction_C);
  return buf;
}

HolderReport holder_diagnostics(const TwoSidedModel& m, const RoofYZ& roof, uint64_t seed,
                                std::size_t n) {
  Rng rng(seed);
  HolderReport rep;
  rep.samples = n;
  double theta = m.base().theta();
  std::vector<double> ns, logd;
  for (std::size_t i = 0; i < n; ++i) {
    // stable pair: same base, fibers from independent pasts
    auto s1 = m.sample(rng, 48);
    auto s2 = m.sample(rng, 48);
    Point a = s1.p, b{s1.p.ybar, s2.p.z};
    if (std::abs(a.z - b.z) > 1e-12) {
      rep.stable_roof_const =
          std::max(rep.stable_roof_const,
                   std::abs(roof.eval(a) - roof.eval(b)) / std::abs(a.z - b.z));
    }
    // contraction along the fiber
    Point fa = a, fb = b;
    double d0 = std::abs(fa.z - fb.z);
    if (d0 > 1e-14 && i < 200) {
      for (int k = 1; k <= 20; ++k) {
        int j;
        double yn = m.base().apply(fa.ybar, j);
        fa = {yn, m.fiber_map(j, fa.z)};
        fb = {yn, m.fiber_map(j, fb.z)};
        double d = std::abs(fa.z - fb.z);
        if (d <= 0.0) break;
        ns.push_back(double(k));
        logd.push_back(std::log(d / d0));
      }
    }
    // unstable pair: same past (same fiber), different base points
    auto s3 = m.sample(rng, 48);
    Point c{s3.p.ybar, s1.p.z};
    int s = gm::separation_time(m.base(), a.ybar, c.ybar, 40);
    if (s > 0 && s < 40) {
      rep.unstable_roof_const =
          std::max(rep.unstable_roof_const,
                   std::abs(roof.eval(a) - roof.eval(c)) / std::pow(theta, s));
    }
  }
  if (ns.size() >= 2) {
    LineFit lf = fit_line(ns, logd);
    rep.contraction_rate = std::exp(lf.slope);
    double cmax = 0.0;
    for (std::size_t i = 0; i < ns.size(); ++i)
      cmax = std::max(cmax, std::exp(logd[i] - ns[i] * lf.slope));
    rep.contraction_C = cmax;
  }
  return rep;
}

std::string BilliardHolderReport::text() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "holder diagnostics (billiard section)\n"
                "  pairs                %zu\n"
                "  flight-sum constant  %.6g\n"
                "  contraction rate     %.6g\n"
                "  shadowing constant   %.6g\n",
                pairs, flight_sum_const, gamma_hat, shadow_const);
  return buf;
}

BilliardHolderReport billiard_holder_diagnostics(const billiard::Table& table,
                                                 uint64_t seed, std::size_t n_pairs,
                                                 int ell_max) {
  Rng rng(seed);
  BilliardHolderReport rep;
  // expansion rate from pair separation growth; gamma_hat = 1/expansion
  std::vector<double> ks, logd;
  std::size_t done = 0;
  double flight_const = 0.0, shadow = 0.0;
  while (done < n_pairs) {
    billiard::CollisionState x = billiard::sample_invariant_one(table, rng);
    billiard::CollisionState xp = x;
    double scale = 1e-6;
    xp.r += rng.uniform(-scale, scale);
    xp.phi += rng.uniform(-scale, scale);
    if (std::abs(xp.phi) > 1.55) continue;
    try {
      double d0 = table.phase_distance(x, xp);
      if (d0 == 0.0) continue;
      int s = billiard::itinerary_separation(table, x, xp, 25);
      billiard::CollisionState a = x, b = xp;
      double ha = 0.0, hb = 0.0;
      for (int l = 1; l <= std::min(ell_max, s); ++l) {
        double fa, fb;
        a = billiard::billiard_step(table, a, &fa, nullptr, nullptr);
        b = billiard::billiard_step(table, b, &fb, nullptr, nullptr);
        ha += fa;
        hb += fb;
        double d = table.phase_distance(a, b);
        if (d > 0 && l <= 12) {
          ks.push_back(double(l));
          logd.push_back(std::log(d / d0));
        }
        double gamma_ref = 0.5;
        double denom = d0 + std::pow(gamma_ref, s);
        flight_const = std::max(flight_const, std::abs(ha - hb) / denom);
      }
      // shadowing: reparametrized closeness along the first flight
      double h1 = billiard::next_collision(table, table.outgoing(x)).h;
      double h2 = billiard::next_collision(table, table.outgoing(xp)).h;
      double u = rng.uniform() * std::min(h1, h2);
      auto pu = billiard::flow(table, table.outgoing(x), u);
      double win = std::max(10.0 * d0, 1e-9);
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k <= 32; ++k) {
        double t = u + win * (2.0 * k / 32.0 - 1.0);
        if (t < 0.0 || t > h2) continue;
        auto pt = billiard::flow(table, table.outgoing(xp), t);
        Vec2 dq = pu.q - pt.q;
        if (table.variant() == billiard::Variant::lorentz_torus) {
          dq.x -= std::round(dq.x);
          dq.y -= std::round(dq.y);
        }
        best = std::min(best, std::sqrt(dq.norm2() + (pu.v - pt.v).norm2()));
      }
      if (std::isfinite(best)) {
        double denom = d0 + std::pow(0.5, s);
        shadow = std::max(shadow, best / denom);
      }
      ++done;
    } catch (const Error&) {
      continue;
    }
  }
  rep.pairs = done;
  rep.flight_sum_const = flight_const;
  rep.shadow_const = shadow;
  if (ks.size() >= 2) {
    LineFit lf = fit_line(ks, logd);
    rep.gamma_hat = std::exp(-lf.slope);  // 1/expansion
  }
  return rep;
}

}  // namespace mixlab::susp
