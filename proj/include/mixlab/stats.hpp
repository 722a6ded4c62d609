#pragma once

#include <atomic>
#include <complex>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mixlab/billiard.hpp"
#include "mixlab/common.hpp"
#include "mixlab/rng.hpp"
#include "mixlab/suspension.hpp"

namespace mixlab::stats {

using cplx = std::complex<double>;

/// Phase point shared by all flow backends.
///   billiard:  (qx, qy, vx, vy)
///   semiflow:  (y, u, phi(y), -)
///   two-sided: (ybar, z, u, phi(y))
struct PhasePoint {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
};

struct Observable {
  std::string name;
  std::function<double(const PhasePoint&)> eval;
  bool flight_affine = false;   // affine along straight billiard flights
  bool fiber_constant = false;  // independent of the flow coordinate u
};

/// Counters for discarded trajectories (grazing tolerance policy).
struct EventLedger {
  std::atomic<uint64_t> collisions{0};
  std::atomic<uint64_t> grazing_discarded{0};
  std::atomic<uint64_t> cap_exceeded{0};
};

/// Ensemble-capable measure-preserving flow.
class FlowSystem {
 public:
  virtual ~FlowSystem() = default;
  virtual std::string name() const = 0;
  virtual PhasePoint sample(Rng& rng) const = 0;
  virtual PhasePoint evolve(const PhasePoint& x, double dt) const = 0;
  /// Birkhoff integrals int_0^{t_k} v(T_s x) ds at the (sorted) grid times.
  virtual void birkhoff(const PhasePoint& x0, std::span<const double> t_grid,
                        const Observable& v, std::span<double> out) const = 0;
};

class BilliardFlowSystem final : public FlowSystem {
 public:
  explicit BilliardFlowSystem(billiard::Table t, bool time_reversed = false)
      : table_(std::move(t)), reversed_(time_reversed) {}
  std::string name() const override;
  PhasePoint sample(Rng& rng) const override;
  PhasePoint evolve(const PhasePoint& x, double dt) const override;
  void birkhoff(const PhasePoint& x0, std::span<const double> t_grid, const Observable& v,
                std::span<double> out) const override;
  const billiard::Table& table() const { return table_; }

 private:
  billiard::Table table_;
  bool reversed_;
};

class GMSemiflowSystem final : public FlowSystem {
 public:
  explicit GMSemiflowSystem(susp::GMSemiflow sf) : sf_(std::move(sf)) {}
  std::string name() const override { return "gm-semiflow"; }
  PhasePoint sample(Rng& rng) const override;
  PhasePoint evolve(const PhasePoint& x, double dt) const override;
  void birkhoff(const PhasePoint& x0, std::span<const double> t_grid, const Observable& v,
                std::span<double> out) const override;
  const susp::GMSemiflow& semiflow() const { return sf_; }

 private:
  susp::GMSemiflow sf_;
};

class TwoSidedFlowSystem final : public FlowSystem {
 public:
  explicit TwoSidedFlowSystem(susp::TwoSidedFlow f) : f_(std::move(f)) {}
  std::string name() const override { return "two-sided-flow"; }
  PhasePoint sample(Rng& rng) const override;
  PhasePoint evolve(const PhasePoint& x, double dt) const override;
  void birkhoff(const PhasePoint& x0, std::span<const double> t_grid, const Observable& v,
                std::span<double> out) const override;

 private:
  susp::TwoSidedFlow f_;
};

// ---------------------------------------------------------------------------
// Series types
// ---------------------------------------------------------------------------

struct CorrelationSeries {
  std::vector<double> t;
  std::vector<double> rho;
  std::vector<double> se;
  long n_samples = 0;
  std::string v_name, w_name, flow_name;
  uint64_t seed = 0;
};

struct TailEstimate {
  std::vector<double> t;
  std::vector<double> survival;
  std::vector<double> se;
  double slope = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  double window_lo = 0.0, window_hi = 0.0;
  bool power_law_ok = true;  // curvature test
  double curvature_z = 0.0;
};

struct VarianceSeries {
  std::vector<double> t;
  std::vector<double> var;
  std::vector<double> se;
  long ensemble = 0;
  double c_lin = 0.0, rss_lin = 0.0;
  double c_tlogt = 0.0, rss_tlogt = 0.0;
  double window_lo = 0.0, window_hi = 0.0;
};

struct ExponentFit {
  double exponent = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  double window_lo = 0.0, window_hi = 0.0;
  int n_used = 0, n_excluded = 0;
};

struct IdentityReport {
  std::vector<double> t;
  std::vector<double> var;
  std::vector<double> quad;     // 2 int_0^t (t - r) rho(r) dr
  std::vector<double> rel_err;
  double max_rel_err = 0.0;
};

struct LaplaceResult {
  cplx s;
  cplx rho_hat;
  double se_re = 0.0, se_im = 0.0;
  std::vector<double> term_abs;  // |J_n| for n = 0..n_max
  int n_max = 0;
  double tail_bound = 0.0;       // geometric bound on the dropped tail
};

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

/// Correlation rho_{v,w}(t) by invariant-measure ensemble sampling with
/// batch-mean standard errors; centering performed once from the same
/// ensemble. budget = ensemble size (>= 1e4).
CorrelationSeries correlation(const FlowSystem& flow, const Observable& v,
                              const Observable& w, std::vector<double> t_grid,
                              std::size_t budget, uint64_t seed,
                              EventLedger* ledger = nullptr);

/// Empirical survival with a weighted log-log slope fit over the window and a
/// Poisson-bootstrap confidence interval. Needs >= 1e5 samples.
TailEstimate tail_survival(std::span<const double> samples, std::vector<double> t_grid,
                           double window_lo, double window_hi, uint64_t seed = 1);

/// Slope of log|rho| vs log t with error-in-variables weighting; points
/// within 2 SE of zero are excluded (NoiseDominated when none survive).
ExponentFit decay_exponent_fit(const CorrelationSeries& series, double window_lo,
                               double window_hi);

/// Ensemble variance of Birkhoff integrals with c*t and c*t*log(t) fits on
/// the tail window (least squares through the origin in the model function).
VarianceSeries variance_growth(const FlowSystem& flow, const Observable& v,
                               std::vector<double> t_grid, std::size_t ensemble,
                               uint64_t seed, double fit_window_lo = 0.0,
                               EventLedger* ledger = nullptr);

/// Var(t) against 2 int_0^t (t-r) rho(r) dr (piecewise-linear quadrature).
IdentityReport variance_correlation_identity(const CorrelationSeries& series,
                                             const VarianceSeries& var);

/// Laplace-domain series rho_hat(s) = J_0 + sum_n J_n for the quotient
/// semiflow, per-fiber Gauss-Legendre quadrature and Monte Carlo over the
/// base. v is centered to mean zero over mu^phi from the same budget.
std::vector<LaplaceResult> laplace_series(const susp::GMSemiflow& sf, const Observable& v,
                                          const Observable& w, std::span<const cplx> s_list,
                                          int n_max, std::size_t budget, uint64_t seed);

/// Numerical Laplace transform of a measured correlation series; returns
/// value and a combined error estimate (quadrature noise + truncated tail).
std::pair<double, double> laplace_of_series(const CorrelationSeries& series, double s);

/// Monte Carlo check data for the roof-tail inequality
/// int phi^eta o F^i 1{phi_n > t} dmu <= (n+1) int phi^eta 1{phi > t/n} dmu.
struct RoofTailCheck {
  double lhs = 0.0, lhs_se = 0.0;
  double rhs = 0.0, rhs_se = 0.0;
};
RoofTailCheck roof_tail_inequality(const gm::GMSystem& gm, const gm::Roof& roof, double eta,
                                   int i, int n, double t, std::size_t budget, uint64_t seed);

/// Free-flight times along invariant-sampled orbits (ensemble of short
/// orbits; grazing orbits are discarded and counted).
std::vector<double> sample_flight_times(const billiard::Table& table, std::size_t n,
                                        uint64_t seed, EventLedger* ledger = nullptr);

/// Roof samples phi(y), y ~ mu (for tail fits of suspension roofs).
std::vector<double> sample_roof(const gm::GMSystem& gm, const gm::Roof& roof, std::size_t n,
                                uint64_t seed);

/// Observable catalogs per backend family.
Observable billiard_observable(const std::string& name);
Observable semiflow_observable(const std::string& name);
Observable twosided_observable(const std::string& name);

}  // namespace mixlab::stats
