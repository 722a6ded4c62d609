#include "mixlab/gibbs_markov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mixlab/numeric.hpp"

namespace mixlab::gm {

namespace {

double trigamma(double z) {
  // psi'(z) by the asymptotic series after pushing z above 20.
  double acc = 0.0;
  while (z < 20.0) {
    acc += 1.0 / (z * z);
    z += 1.0;
  }
  double iz = 1.0 / z, iz2 = iz * iz;
  // 1/z + 1/(2 z^2) + 1/(6 z^3) - 1/(30 z^5) + 1/(42 z^7) - 1/(30 z^9)
  return acc + iz * (1.0 + iz * (0.5 + iz * (1.0 / 6.0 + iz2 * (-1.0 / 30.0 + iz2 * (1.0 / 42.0 - iz2 / 30.0)))));
}

class DoublingFamily final : public BranchFamily {
 public:
  int count() const override { return 2; }
  double lo(int j) const override { return j * 0.5; }
  double hi(int j) const override { return (j + 1) * 0.5; }
  double mass(int) const override { return 0.5; }
  double inv(int j, double w) const override { return (w + j) * 0.5; }
  double inv_deriv(int, double) const override { return 0.5; }
  double weight(int, double) const override { return 0.5; }
  double fwd(int j, double y) const override { return 2.0 * y - j; }
  int branch_of(double y) const override { return y < 0.5 ? 0 : 1; }
  double sample_branch(Rng& rng, int j) const override { return 0.5 * (j + rng.uniform()); }
};

class GaussFamily final : public BranchFamily {
 public:
  explicit GaussFamily(int jmax) : jmax_(jmax) {}
  int count() const override { return jmax_; }
  // branch index idx corresponds to the digit j = idx + 1
  double lo(int idx) const override { return 1.0 / (idx + 2.0); }
  double hi(int idx) const override { return 1.0 / (idx + 1.0); }
  double mass(int idx) const override {
    double j = idx + 1.0;
    return std::log2(1.0 + 1.0 / (j * (j + 2.0)));
  }
  double inv(int idx, double w) const override { return 1.0 / (idx + 1.0 + w); }
  double inv_deriv(int idx, double w) const override { return 1.0 / sqr(idx + 1.0 + w); }
  double weight(int idx, double w) const override {
    double j = idx + 1.0;
    return (1.0 + w) / ((j + w) * (j + w + 1.0));
  }
  double fwd(int idx, double y) const override { return 1.0 / y - (idx + 1.0); }
  int branch_of(double y) const override {
    if (y <= 0.0) return jmax_ - 1;  // endpoint convention: deepest stored branch
    if (y > 1.0) throw Error(errc::bad_params, "gauss: y outside (0,1]");
    double j = std::floor(1.0 / y);
    int idx = int(j) - 1;
    return std::clamp(idx, 0, jmax_ - 1);
  }
  double sample_branch(Rng& rng, int idx) const override {
    // invariant CDF on a branch is logarithmic: exact inverse
    double l = lo(idx), h = hi(idx);
    return (1.0 + l) * std::pow((1.0 + h) / (1.0 + l), rng.uniform()) - 1.0;
  }
  bool has_tail_node() const override { return true; }
  double tail_weight(double w) const override { return (1.0 + w) / (jmax_ + 1.0 + w); }
  double tail_point(double w) const override {
    double z = jmax_ + 1.0 + w;
    // first-moment matched preimage: sum w_j h_j / sum w_j over j > jmax
    return (trigamma(z) - 1.0 / z) * z;
  }
  double tail_mass() const override { return std::log2(1.0 + 1.0 / (jmax_ + 1.0)); }

 private:
  int jmax_;
};

class PowerTailFamily final : public BranchFamily {
 public:
  PowerTailFamily(double alpha, double mass_target, int j_cap) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(errc::bad_params, "alpha in (0,1)");
    ex_ = 1.0 + 1.0 / alpha;
    // zeta(ex) = partial sum + Euler-Maclaurin tail
    const int N = 2000;
    zeta_ = 0.0;
    for (int n = 1; n <= N; ++n) zeta_ += std::pow(double(n), -ex_);
    zeta_ += zeta_tail(ex_, double(N));
    int J = 2;
    while (J < j_cap && zeta_tail(ex_, double(J)) / zeta_ > mass_target) J *= 2;
    // tighten by bisection
    int lo = J / 2, hi = J;
    while (lo + 1 < hi) {
      int mid = (lo + hi) / 2;
      (zeta_tail(ex_, double(mid)) / zeta_ > mass_target ? lo : hi) = mid;
    }
    J = std::min(hi, j_cap);
    cut_.resize(J + 1);
    masses_.resize(J);
    cut_[0] = 0.0;
    for (int n = 1; n <= J; ++n) {
      masses_[n - 1] = std::pow(double(n), -ex_) / zeta_;
      cut_[n] = cut_[n - 1] + masses_[n - 1];
    }
    defect_ = zeta_tail(ex_, double(J)) / zeta_;
  }
  int count() const override { return int(masses_.size()); }
  double lo(int j) const override { return cut_[j]; }
  double hi(int j) const override { return cut_[j + 1]; }
  double mass(int j) const override { return masses_[j]; }
  double inv(int j, double w) const override { return cut_[j] + masses_[j] * w; }
  double inv_deriv(int j, double) const override { return masses_[j]; }
  double weight(int j, double) const override { return masses_[j]; }
  double fwd(int j, double y) const override { return (y - cut_[j]) / masses_[j]; }
  int branch_of(double y) const override {
    auto it = std::upper_bound(cut_.begin(), cut_.end(), y);
    int j = int(it - cut_.begin()) - 1;
    return std::clamp(j, 0, count() - 1);
  }
  double sample_branch(Rng& rng, int j) const override {
    return cut_[j] + masses_[j] * rng.uniform();
  }
  double mass_defect() const override { return defect_; }
  double zeta() const { return zeta_; }
  double exponent() const { return ex_; }

 private:
  double alpha_, ex_, zeta_, defect_ = 0.0;
  std::vector<double> cut_;
  std::vector<double> masses_;
};

}  // namespace

double zeta_tail(double s, double j) {
  // sum_{n>j} n^-s; Euler-Maclaurin about x = j.
  double js = std::pow(j, -s);
  return j * js / (s - 1.0) - 0.5 * js + s * js / (12.0 * j) -
         s * (s + 1.0) * (s + 2.0) * js / (720.0 * j * j * j);
}

GMSystem::GMSystem(std::string name, std::shared_ptr<const BranchFamily> fam, double theta,
                   double potential_lipschitz, std::function<double(double)> density,
                   std::function<double(Rng&)> sampler)
    : name_(std::move(name)),
      fam_(std::move(fam)),
      theta_(theta),
      pot_lip_(potential_lipschitz),
      density_(std::move(density)),
      sampler_(std::move(sampler)) {}

GMSystem make_doubling() {
  return GMSystem("doubling", std::make_shared<DoublingFamily>(), 0.5, 0.0,
                  [](double) { return 1.0; }, [](Rng& r) { return r.uniform(); });
}

GMSystem make_gauss(int j_max) {
  if (j_max < 8) throw Error(errc::bad_params, "gauss: j_max too small");
  const double ln2 = std::log(2.0);
  return GMSystem("gauss", std::make_shared<GaussFamily>(j_max), 0.62, 10.0,
                  [ln2](double x) { return 1.0 / ((1.0 + x) * ln2); },
                  [](Rng& r) { return std::exp2(r.uniform()) - 1.0; });
}

GMSystem make_lsv_induced(double alpha, double mass_target, int j_cap) {
  auto fam = std::make_shared<PowerTailFamily>(alpha, mass_target, j_cap);
  double theta = fam->mass(0);  // largest branch measure bounds cylinder ratios
  return GMSystem("lsv_induced", fam, theta, 0.0, [](double) { return 1.0; },
                  [](Rng& r) { return r.uniform(); });
}

GMSystem make_builtin(const std::string& name, double alpha) {
  if (name == "doubling") return make_doubling();
  if (name == "gauss") return make_gauss();
  if (name == "lsv_induced") return make_lsv_induced(alpha);
  throw Error(errc::bad_params, "unknown builtin '" + name + "'");
}

// ---------------------------------------------------------------------------
// Roofs
// ---------------------------------------------------------------------------

namespace {

double integral_mu(const GMSystem& gm, const std::function<double(double)>& f) {
  // Gauss-Legendre against the invariant density; the builtin densities and
  // roofs are analytic so 64 nodes is plenty.
  std::vector<double> xs, ws;
  gauss_legendre(64, xs, ws);
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    acc += ws[i] * f(xs[i]) * gm.invariant_density(xs[i]);
  return acc;
}

}  // namespace

Roof roof_constant(const GMSystem& gm, double c) {
  if (!(c > 0.0)) throw Error(errc::bad_params, "roof must be positive");
  Roof r;
  r.eval = [c](double) { return c; };
  r.on_branch = [c](int, double) { return c; };
  r.branch_inf = [c](int) { return c; };
  r.branch_sup = [c](int) { return c; };
  r.inf = r.sup = c;
  r.bounded = true;
  r.C1 = 1.0;
  r.integral = c;
  r.name = "const:" + format_g17(c);
  (void)gm;
  return r;
}

Roof roof_affine(const GMSystem& gm, double a, double b) {
  if (!(a + std::min(0.0, b) > 0.0))
    throw Error(errc::bad_params, "affine roof must stay positive");
  Roof r;
  r.eval = [a, b](double y) { return a + b * y; };
  const BranchFamily* fam = &gm.family();
  r.on_branch = [a, b, fam](int j, double w) { return a + b * fam->inv(j, w); };
  r.branch_inf = [a, b, fam](int j) {
    return std::min(a + b * fam->lo(j), a + b * fam->hi(j));
  };
  r.branch_sup = [a, b, fam](int j) {
    return std::max(a + b * fam->lo(j), a + b * fam->hi(j));
  };
  r.inf = std::min(a, a + b);
  r.sup = std::max(a, a + b);
  r.bounded = true;
  r.C1 = std::max(1.0, std::abs(b) / (gm.theta() * r.inf));
  r.integral = integral_mu(gm, r.eval);
  r.name = "affine:" + format_g17(a) + "+" + format_g17(b) + "y";
  return r;
}

Roof roof_return_time(const GMSystem& gm) {
  if (gm.name() != "lsv_induced")
    throw Error(errc::bad_params, "return-time roof is defined for lsv_induced");
  const BranchFamily* fam = &gm.family();
  Roof r;
  r.eval = [fam](double y) {
    int j = fam->branch_of(y);
    return (j + 1) + fam->fwd(j, y);
  };
  r.on_branch = [](int j, double w) { return (j + 1) + w; };
  r.branch_inf = [](int j) { return double(j + 1); };
  r.branch_sup = [](int j) { return double(j + 2); };
  r.inf = 1.0;
  r.bounded = false;
  r.sup = std::numeric_limits<double>::infinity();
  r.C1 = std::max(2.0, 1.0 / gm.theta());
  // int phi dmu = sum_n m_n (n + 1/2), tail by Euler-Maclaurin
  const auto* pf = dynamic_cast<const PowerTailFamily*>(fam);
  double acc = 0.0;
  for (int j = 0; j < fam->count(); ++j) acc += fam->mass(j) * (j + 1.5);
  acc += (zeta_tail(pf->exponent() - 1.0, double(fam->count())) +
          0.5 * zeta_tail(pf->exponent(), double(fam->count()))) /
         pf->zeta();
  r.integral = acc;
  r.name = "return_time";
  return r;
}

Roof make_roof(const GMSystem& gm, const std::string& spec) {
  // "const:c" | "affine:a:b" | "return_time"
  if (spec.rfind("const:", 0) == 0) return roof_constant(gm, std::stod(spec.substr(6)));
  if (spec.rfind("affine:", 0) == 0) {
    auto rest = spec.substr(7);
    auto colon = rest.find(':');
    if (colon == std::string::npos) throw Error(errc::bad_params, "roof spec " + spec);
    return roof_affine(gm, std::stod(rest.substr(0, colon)), std::stod(rest.substr(colon + 1)));
  }
  if (spec == "return_time") return roof_return_time(gm);
  throw Error(errc::bad_params, "unknown roof spec '" + spec + "'");
}

int separation_time(const GMSystem& gm, double y, double yp, int n_cap) {
  for (int n = 0; n < n_cap; ++n) {
    int ba = gm.branch_of(y), bb = gm.branch_of(yp);
    if (ba != bb) return n;
    y = gm.family().fwd(ba, y);
    yp = gm.family().fwd(bb, yp);
  }
  return n_cap;
}

// ---------------------------------------------------------------------------
// Transfer operator
// ---------------------------------------------------------------------------

TransferMatrix build_transfer(const GMSystem& gm, const Roof& roof, cplx s, int resolution,
                              const TransferOptions& opt) {
  if (resolution < 8) throw Error(errc::bad_params, "resolution must be >= 8");
  if (s.real() < 0.0 && !roof.bounded)
    throw Error(errc::bad_params, "Re s < 0 requires a bounded roof");
  if (gm.mass_defect() > opt.defect_bound)
    throw Error(errc::truncation_too_coarse,
                "branch mass defect " + format_g17(gm.mass_defect()) + " above bound " +
                    format_g17(opt.defect_bound));
  TransferMatrix tm;
  tm.resolution = resolution;
  tm.s = s;
  tm.nodes = chebyshev_lobatto(resolution);
  tm.mass_defect = gm.mass_defect();
  auto bw = barycentric_weights(resolution);
  const int m = resolution + 1;
  tm.mat = Eigen::MatrixXcd::Zero(m, m);
  const BranchFamily& fam = gm.family();
  std::vector<double> row(m);
  for (int i = 0; i < m; ++i) {
    double x = tm.nodes[i];
    for (int j = 0; j < fam.count(); ++j) {
      cplx coeff = fam.weight(j, x) * std::exp(-s * roof.on_branch(j, x));
      double pt = fam.inv(j, x);
      barycentric_row(tm.nodes, bw, pt, row);
      for (int k = 0; k < m; ++k)
        if (row[k] != 0.0) tm.mat(i, k) += coeff * row[k];
    }
    if (fam.has_tail_node()) {
      double pt = fam.tail_point(x);
      cplx coeff = fam.tail_weight(x) * std::exp(-s * roof.eval(pt));
      barycentric_row(tm.nodes, bw, pt, row);
      for (int k = 0; k < m; ++k)
        if (row[k] != 0.0) tm.mat(i, k) += coeff * row[k];
    }
  }
  auto cc = clenshaw_curtis(resolution);
  tm.quad_mu.resize(m);
  for (int i = 0; i < m; ++i) tm.quad_mu[i] = cc[i] * gm.invariant_density(tm.nodes[i]);
  return tm;
}

namespace {

struct PowerResult {
  cplx lambda;
  Eigen::VectorXcd vec;
  double residual;
  int iterations;
  std::vector<double> history;
  bool converged;
};

PowerResult power_iterate(const Eigen::MatrixXcd& A, Eigen::VectorXcd v, int max_iter,
                          double target) {
  PowerResult r;
  v /= v.norm();
  cplx lambda = 0.0;
  double res = 1.0;
  int it = 0;
  for (; it < max_iter; ++it) {
    Eigen::VectorXcd Av = A * v;
    lambda = v.dot(Av);  // Rayleigh quotient (v normalized)
    res = (Av - lambda * v).norm();
    if ((it & 7) == 0 || res < target) r.history.push_back(res);
    if (res < target) {
      v = Av / Av.norm();
      break;
    }
    double n = Av.norm();
    if (!(n > 0.0)) break;
    v = Av / n;
  }
  r.lambda = lambda;
  r.vec = v;
  r.residual = res;
  r.iterations = it;
  r.converged = res < target;
  return r;
}

}  // namespace

SpectralSample leading_eigenvalue(const GMSystem& gm, const Roof& roof, cplx s,
                                  const SpectralOptions& opt) {
  if (std::abs(s) >= opt.delta_spec)
    throw Error(errc::bad_params, "|s| outside the spectral window delta_spec = " +
                                      format_g17(opt.delta_spec));
  TransferMatrix tm = build_transfer(gm, roof, s, opt.resolution, {opt.defect_bound});
  const int m = opt.resolution + 1;
  Eigen::VectorXcd v0 = Eigen::VectorXcd::Ones(m);
  PowerResult lead = power_iterate(tm.mat, v0, opt.max_iter, opt.residual_target);
  if (!lead.converged)
    throw Error(errc::no_gap, "power iteration stalled, residual " + format_g17(lead.residual));
  SpectralSample out;
  out.s = s;
  out.lambda = lead.lambda;
  out.eigfun = lead.vec;
  out.residual = lead.residual;
  out.iterations = lead.iterations;
  out.residual_history = lead.history;
  if (opt.measure_gap) {
    // left eigenvector, then deflate and measure |lambda2|
    PowerResult left =
        power_iterate(tm.mat.adjoint(), Eigen::VectorXcd::Ones(m), opt.max_iter, 1e-8);
    cplx denom = left.vec.dot(lead.vec);
    if (std::abs(denom) < 1e-12) throw Error(errc::no_gap, "defective leading eigenvalue");
    Eigen::MatrixXcd defl =
        tm.mat - (lead.lambda / denom) * (lead.vec * left.vec.adjoint());
    Eigen::VectorXcd w0(m);
    for (int i = 0; i < m; ++i) w0(i) = cplx(std::cos(1.7 * i + 0.3), std::sin(0.9 * i));
    PowerResult second = power_iterate(defl, w0, opt.max_iter, 1e-6);
    out.gap = std::abs(second.lambda) / std::abs(lead.lambda);
    if (out.gap > 1.0 - opt.gap_tol)
      throw Error(errc::no_gap, "second eigenvalue too close: gap ratio " +
                                    format_g17(out.gap));
  }
  return out;
}

cplx lambda_derivative_at_zero(const GMSystem& gm, const Roof& roof, double step,
                               const SpectralOptions& opt) {
  auto lam = [&](double a) { return leading_eigenvalue(gm, roof, cplx(a, 0.0), opt).lambda; };
  if (roof.bounded) return (lam(step) - lam(-step)) / (2.0 * step);
  // one-sided second-order scheme for unbounded roofs
  return (-3.0 * lam(0.0) + 4.0 * lam(step) - lam(2.0 * step)) / (2.0 * step);
}

std::vector<cplx> twisted_iterate(const GMSystem& gm, const Roof& roof, double b,
                                  const std::function<cplx(double)>& v,
                                  std::span<const double> grid) {
  std::vector<cplx> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double y = grid[i];
    out[i] = std::polar(1.0, b * roof.eval(y)) * v(gm.apply(y));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Approximate eigenfunction defect
// ---------------------------------------------------------------------------

DefectResult approx_eigenfunction_defect(const GMSystem& gm, const Roof& roof,
                                         const std::vector<int>& z0, double b, double xi,
                                         const DefectOptions& opt) {
  if (z0.empty()) throw Error(errc::empty_subsystem, "Z0 has no branches");
  if (b == 0.0) throw Error(errc::bad_params, "b must be nonzero");
  if (!(xi > 0.0)) throw Error(errc::bad_params, "xi must be positive");
  for (int j : z0)
    if (j < 0 || j >= gm.branch_count())
      throw Error(errc::bad_params, "Z0 branch out of range");
  const int B = int(z0.size());
  const BranchFamily& fam = gm.family();

  int n = std::max(1, int(std::floor(xi * std::log(std::abs(b)))));
  // representation depth for u, capped so |Z0|^(L+n) stays affordable
  int L = 1;
  auto powi = [](int base, int e) {
    long long p = 1;
    for (int i = 0; i < e; ++i) p *= base;
    return p;
  };
  while (powi(B, L + 1 + n) <= opt.max_points) ++L;

  // anchor: fixed point of the first subsystem branch
  double anchor = 0.5;
  for (int it = 0; it < 200; ++it) anchor = fam.inv(z0[0], anchor);

  auto word_points = [&](int len) {
    // canonical point of each word w (symbols indexing z0), plus the roof sum
    // over the first `n` orbit points when requested
    std::vector<double> pts(std::size_t(powi(B, len)));
    std::vector<double> phin(pts.size(), 0.0);
    std::vector<int> w(len);
    for (std::size_t idx = 0; idx < pts.size(); ++idx) {
      std::size_t t = idx;
      for (int i = len - 1; i >= 0; --i) {
        w[i] = int(t % B);
        t /= B;
      }
      double y = anchor;
      double acc = 0.0;
      for (int i = len - 1; i >= 0; --i) {
        y = fam.inv(z0[w[i]], y);
        if (i < n && len > L) acc += roof.eval(y);  // phi at y_{W[i..]}
      }
      pts[idx] = y;
      phin[idx] = acc;
    }
    return std::pair(std::move(pts), std::move(phin));
  };

  auto [rep_pts, rep_unused] = word_points(L);
  (void)rep_unused;

  // normalized power iteration of M_b on the representation grid
  const std::size_t R = rep_pts.size();
  std::vector<cplx> u(R, cplx(1.0, 0.0));
  std::vector<cplx> nxt(R);
  const std::size_t mod = R / B;  // B^(L-1)
  for (int it = 0; it < opt.power_iters; ++it) {
    for (std::size_t idx = 0; idx < R; ++idx) {
      std::size_t shifted = (idx % mod) * B;  // drop first symbol, append z0[0]
      cplx val = std::polar(1.0, b * roof.eval(rep_pts[idx])) * u[shifted];
      double a = std::abs(val);
      nxt[idx] = (a > 0.0) ? val / a : cplx(1.0, 0.0);
    }
    u.swap(nxt);
  }

  // defect over depth-(L+n) words
  auto [eval_pts, eval_phin] = word_points(L + n);
  const std::size_t E = eval_pts.size();
  const std::size_t pref_div = powi(B, n);  // idx / pref_div = prefix word
  const std::size_t suff_mod = R;           // idx % B^L = suffix word of length L
  std::vector<cplx> z(E);
  for (std::size_t idx = 0; idx < E; ++idx) {
    cplx mu = std::polar(1.0, b * eval_phin[idx]) * u[idx % suff_mod];
    z[idx] = mu * std::conj(u[idx / pref_div]);
  }

  auto sup_dist = [&](cplx e) {
    double m = 0.0;
    for (const cplx& zz : z) m = std::max(m, std::abs(zz - e));
    return m;
  };
  // candidate phases: the first point's value (exact in degenerate cases),
  // the L2-optimal phase, and a golden-section refinement around it
  cplx best_e = z[0];
  double best = sup_dist(best_e);
  cplx zsum = 0.0;
  for (const cplx& zz : z) zsum += zz;
  if (std::abs(zsum) > 0.0) {
    double psi0 = std::arg(zsum);
    double lo = psi0 - 1.0, hi = psi0 + 1.0;
    const double gr = 0.61803398874989484820;
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = sup_dist(std::polar(1.0, c)), fd = sup_dist(std::polar(1.0, d));
    for (int it = 0; it < 60; ++it) {
      if (fc < fd) {
        hi = d;
        d = c;
        fd = fc;
        c = hi - gr * (hi - lo);
        fc = sup_dist(std::polar(1.0, c));
      } else {
        lo = c;
        c = d;
        fc = fd;
        d = lo + gr * (hi - lo);
        fd = sup_dist(std::polar(1.0, d));
      }
    }
    for (double cand : {psi0, 0.5 * (lo + hi)}) {
      double s = sup_dist(std::polar(1.0, cand));
      if (s < best) {
        best = s;
        best_e = std::polar(1.0, cand);
      }
    }
  }
  DefectResult out;
  out.defect = best;
  out.psi = wrap_pi(std::arg(best_e));
  out.n = n;
  out.rep_depth = L;
  out.u = std::move(u);
  return out;
}

}  // namespace mixlab::gm
