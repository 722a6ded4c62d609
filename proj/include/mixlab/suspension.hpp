#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mixlab/billiard.hpp"
#include "mixlab/common.hpp"
#include "mixlab/gibbs_markov.hpp"
#include "mixlab/numeric.hpp"
#include "mixlab/rng.hpp"

namespace mixlab::susp {

// ---------------------------------------------------------------------------
// Quotient suspension semiflow
// ---------------------------------------------------------------------------

/// Suspension semiflow over a Gibbs-Markov base map: points (y, u) with
/// 0 <= u < phi(y) and (y, phi(y)) ~ (F y, 0). The identification uses the
/// half-open convention everywhere.
class GMSemiflow {
 public:
  GMSemiflow(gm::GMSystem base, gm::Roof roof);

  struct Pt {
    double y = 0.0;
    double u = 0.0;
  };

  const gm::GMSystem& base() const { return gm_; }
  const gm::Roof& roof() const { return roof_; }
  double roof_at(double y) const { return roof_.eval(y); }
  double mean_roof() const { return roof_.integral; }

  /// Flow by t >= 0; *steps receives the number of base-map steps.
  Pt flow(Pt p, double t, long* steps = nullptr) const;

  /// Exact sample from the invariant measure mu^phi (size-biased branch,
  /// within-branch rejection, u uniform under the roof).
  Pt sample_mu_phi(Rng& rng) const;

  /// mu-mass of Y(N) (branches with inf phi >= N) over stored branches.
  double mass_above(double N) const;

 private:
  void ensure_weights() const;
  gm::GMSystem gm_;
  gm::Roof roof_;
  mutable std::vector<double> wcum_;  // cumulative per-branch int phi dmu
  mutable double wtotal_ = 0.0;
};

/// Roof truncation: phi_N = N on Y(N) = union of branches with
/// inf_j phi >= N, phi elsewhere. N must be >= opts.n_min.
struct TruncateOptions {
  double n_min = 1.0;
};
gm::Roof truncate_roof(const gm::GMSystem& base, const gm::Roof& roof, double N,
                       const TruncateOptions& opts = {});

// ---------------------------------------------------------------------------
// Two-sided (stable-fibered) model
// ---------------------------------------------------------------------------

/// Point of the two-sided space Y = [0,1] x fiber.
struct Point {
  double ybar = 0.0;
  double z = 0.0;
};

/// Skew product over a Gibbs-Markov base with uniformly contracting affine
/// fiber maps g_j(z) = off_j + rate_j z: F(ybar, z) = (F ybar, g_{j(ybar)} z).
/// Stable leaves are the vertical fibers; a point's fiber coordinate is
/// determined by its symbolic past, so unstable leaves are horizontal.
/// The reference leaf Ytilde is {z = z_tilde} (fixed point of g_0) and
/// pi(ybar, z) = (ybar, z_tilde).
///
/// Requires a base whose branch weights are constant (Bernoulli symbols), so
/// pasts can be sampled i.i.d. by branch mass.
class TwoSidedModel {
 public:
  TwoSidedModel(gm::GMSystem base, std::vector<double> rates, std::vector<double> offsets);
  /// Baker-like fattening: g_j(z) = (z + j) / branch_count.
  static TwoSidedModel fattened(gm::GMSystem base);
  /// Branch-dependent contraction rates (nondegenerate temporal distance).
  static TwoSidedModel fattened_skewed(gm::GMSystem base);

  const gm::GMSystem& base() const { return gm_; }
  int branch_count() const { return gm_.branch_count(); }
  double gamma() const { return gamma_; }
  double contraction_C2() const { return 1.0; }
  double z_tilde() const { return z_tilde_; }

  Point apply(Point p) const;
  Point apply(Point p, int& branch) const;
  Point project(Point p) const { return {p.ybar, z_tilde_}; }
  /// Metric d = |dybar| + |dz|.
  double metric(Point a, Point b) const {
    return std::abs(a.ybar - b.ybar) + std::abs(a.z - b.z);
  }
  double fiber_map(int j, double z) const { return off_[j] + rate_[j] * z; }
  /// Fiber coordinate of the point with the given past word
  /// (past[0] = most recent symbol); exact up to gamma^depth.
  double fiber_from_past(std::span<const int> past) const;

  struct Sampled {
    Point p;
    std::vector<int> past;
  };
  /// ybar from the base invariant measure; past symbols i.i.d. by branch
  /// mass; z the IFS point of the past.
  Sampled sample(Rng& rng, int past_depth = 64) const;
  int sample_symbol(Rng& rng) const;

 private:
  gm::GMSystem gm_;
  std::vector<double> rate_, off_;
  std::vector<double> mass_cum_;
  double gamma_ = 0.0;
  double z_tilde_ = 0.0;
};

/// Roof on the two-sided space with recorded fiber/base regularity data.
struct RoofYZ {
  std::function<double(Point)> eval;
  double inf = 1.0;
  double sup = 1.0;
  bool bounded = true;
  bool fiber_constant = false;
  double stable_lip = 0.0;  // |phi(y,z)-phi(y,z')| <= stable_lip |z - z'|
  double base_lip = 0.0;    // |phi(y,z)-phi(y',z)| <= base_lip |y - y'|
  std::function<double(int)> branch_inf;  // over Y_j (full fiber)
  std::function<double(int)> branch_sup;
  double integral = 1.0;  // int phi dmu (exact for affine roofs)
  std::string name;
};

/// phi(ybar, z) = a + by*ybar + bz*z.
RoofYZ roofyz_affine(const TwoSidedModel& m, double a, double by, double bz);
RoofYZ make_roofyz(const TwoSidedModel& m, const std::string& spec);

// ---------------------------------------------------------------------------
// Coboundary reduction (chi, tilde phi, conjugacies)
// ---------------------------------------------------------------------------

/// chi(y) = sum_{n<K} (phi(F^n pi y) - phi(F^n y)) plus a geometric remainder
/// bound from the recorded (C2, gamma, stable_lip). Throws NoConvergence when
/// the bound at K exceeds tol.
double chi(const TwoSidedModel& m, const RoofYZ& roof, Point y, int K, double tol);
/// Same, choosing K adaptively from the remainder bound target.
double chi_auto(const TwoSidedModel& m, const RoofYZ& roof, Point y, double tol = 1e-10);
/// K needed for the remainder bound to fall below tol.
int chi_depth(const TwoSidedModel& m, const RoofYZ& roof, double tol);

/// tilde phi = phi + chi - chi o F (constant along stable fibers).
double tilde_phi(const TwoSidedModel& m, const RoofYZ& roof, Point y, double tol = 1e-10);

struct SuspPoint {
  Point y;
  double u = 0.0;
};

/// The pair g+ : Y^phi -> Y^tphi, g- : Y^tphi -> Y^phi with
/// g-(g+(x)) = F_{2|chi|_inf}(x). |chi|_inf is estimated by a sample
/// supremum plus a 10% margin and used consistently in both maps.
class Conjugacies {
 public:
  Conjugacies(const TwoSidedModel& m, const RoofYZ& roof, uint64_t seed,
              std::size_t n_estimate = 100000, double tol = 1e-10);

  double chi_inf() const { return chi_inf_; }
  SuspPoint g_plus(SuspPoint x) const;
  SuspPoint g_minus(SuspPoint x) const;
  /// Flow by time t in Y^phi (used for the round-trip identity).
  SuspPoint flow_phi(SuspPoint x, double t) const;
  double phi(Point y) const { return roof_->eval(y); }
  double tphi(Point y) const;

 private:
  const TwoSidedModel* m_;
  const RoofYZ* roof_;
  double chi_inf_ = 0.0;
  double tol_;
};

/// Suspension flow over the two-sided model (mu^phi sampling + flow).
class TwoSidedFlow {
 public:
  TwoSidedFlow(TwoSidedModel m, RoofYZ roof);
  const TwoSidedModel& model() const { return m_; }
  const RoofYZ& roof() const { return roof_; }
  SuspPoint flow(SuspPoint p, double t, long* steps = nullptr) const;
  SuspPoint sample_mu_phi(Rng& rng) const;

 private:
  TwoSidedModel m_;
  RoofYZ roof_;
};

// ---------------------------------------------------------------------------
// Temporal distance function
// ---------------------------------------------------------------------------

struct TemporalDistance {
  double value = 0.0;
  double remainder_bound = 0.0;
};

/// D(y1, y4) over the product bracket y2 = W^s(y1) cap W^u(y4),
/// y3 = W^u(y1) cap W^s(y4), truncated at K forward and backward steps with
/// backward branches taken along the recorded pasts.
TemporalDistance temporal_distance(const TwoSidedModel& m, const RoofYZ& roof,
                                   const TwoSidedModel::Sampled& y1,
                                   const TwoSidedModel::Sampled& y4, int K);

struct BoxDimensionFit {
  double slope = 0.0;
  double slope_se = 0.0;
  std::vector<double> scales;
  std::vector<double> counts;
};

/// Box-counting slope of a sampled value set over the scale grid.
BoxDimensionFit tdf_range_dimension(std::span<const double> values,
                                    std::span<const double> scales);

// ---------------------------------------------------------------------------
// Periodic data
// ---------------------------------------------------------------------------

struct PeriodicOrbitRecord {
  std::vector<int> word;
  double y = 0.0;  // fixed point of h_{w0} o ... o h_{wp-1}
  int p = 0;
  double T = 0.0;  // flow period phi_p(y)
};

PeriodicOrbitRecord periodic_orbit(const gm::GMSystem& gm, const gm::Roof& roof,
                                   const std::vector<int>& word);

struct DiophantineReport {
  ContinuedFraction cf;
  double ratio = 0.0;
  bool liouville_suspicious = false;
};

/// Partial quotients of (T1-T3)/(T2-T3) with precision accounting.
/// PrecisionExhausted when fewer than 3 quotients are resolved.
DiophantineReport diophantine_ratio(double T1, double T2, double T3, int depth,
                                    long long flag_threshold = 10000);

struct GoodAsymptoticsFit {
  double kappa = 0.0;
  double gamma = 0.0;
  double omega = 0.0;
  double omega0 = 0.0;
  double amplitude = 0.0;       // fitted |E|
  std::vector<double> residuals;
  std::vector<double> envelope;  // (T_N - N T0 - kappa) / gamma^N
  double min_tail_envelope = 0.0;
  bool degenerate = false;
};

/// Fit T_N - N T0 = kappa + E gamma^N cos(N omega + omega0) by grid search
/// plus Nelder-Mead refinement (linear in kappa, E for fixed gamma, omega).
GoodAsymptoticsFit good_asymptotics_fit(double T0, std::span<const int> N,
                                        std::span<const double> T);

// ---------------------------------------------------------------------------
// Billiard-backed section suspension, observable lifting, Hoelder diagnostics
// ---------------------------------------------------------------------------

/// The billiard flow presented as a suspension over its collision section
/// with roof h (free flight) and projection pi(x, u) = T_u x.
class BilliardSectionFlow {
 public:
  explicit BilliardSectionFlow(billiard::Table table) : table_(std::move(table)) {}
  const billiard::Table& table() const { return table_; }
  double roof(const billiard::CollisionState& x) const;
  billiard::FlowState project(const billiard::CollisionState& x, double u) const;

 private:
  billiard::Table table_;
};

struct ObservableNorms {
  double sup = 0.0;
  double gamma_seminorm = 0.0;  // fitted C in |v(y,u)-v(y',u)| <= C phi(y)(d^eta2 + g^s)
  double u_holder = 0.0;        // eta-Hoelder constant in the flow direction
  double dt1 = 0.0, dt2 = 0.0;  // centered-difference flow derivative sups
  std::size_t pairs = 0;
  double eta = 1.0;
  double gamma = 0.5;
};

/// Lift v on the ambient space to the section suspension and estimate its
/// norms over sampled pairs (reported values are lower bounds of the true
/// suprema).
ObservableNorms lift_observable(const BilliardSectionFlow& flow,
                                const std::function<double(const billiard::FlowState&)>& v,
                                double eta, double gamma, uint64_t seed, std::size_t n_pairs);

struct HolderReport {
  double stable_roof_const = 0.0;
  double unstable_roof_const = 0.0;
  double contraction_rate = 0.0;
  double contraction_C = 0.0;
  std::size_t samples = 0;
  std::string text() const;
};

/// Empirical regularity constants of a two-sided roof: stable-pair Lipschitz
/// constant, unstable-pair symbolic Hoelder constant, and the fitted
/// contraction rate along stable fibers.
HolderReport holder_diagnostics(const TwoSidedModel& m, const RoofYZ& roof, uint64_t seed,
                                std::size_t n);

struct BilliardHolderReport {
  double flight_sum_const = 0.0;  // C in |h_l(y)-h_l(y')| <= C (d + gamma^s)
  double gamma_hat = 0.0;         // fitted itinerary contraction rate
  double shadow_const = 0.0;      // reparametrized-closeness constant
  std::size_t pairs = 0;
  std::string text() const;
};

/// Sampled-pair diagnostics on a billiard section: cumulative-flight Hoelder
/// constant and the reparametrized shadowing check along flights.
BilliardHolderReport billiard_holder_diagnostics(const billiard::Table& table, uint64_t seed,
                                                 std::size_t n_pairs, int ell_max);

}  // namespace mixlab::susp
