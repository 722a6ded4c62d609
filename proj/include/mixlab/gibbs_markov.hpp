#pragma once

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mixlab/common.hpp"
#include "mixlab/rng.hpp"

namespace mixlab::gm {

using cplx = std::complex<double>;

/// Branch family of a full-branch Gibbs-Markov map F on [0,1]: branch j maps
/// [lo_j, hi_j) bijectively onto [0,1], with inverse h_j. `weight` is the
/// transfer-operator weight with respect to the invariant measure
/// (exp of the potential evaluated at h_j(w)); weights sum to 1 over branches
/// plus the aggregated tail.
///
/// Countable families are stored up to a truncation index. A family may carry
/// an aggregated tail pseudo-branch (exact total weight, moment-matched
/// preimage point) so that operator row sums stay exact; any mass that is
/// neither stored nor aggregated is the mass defect.
class BranchFamily {
 public:
  virtual ~BranchFamily() = default;
  virtual int count() const = 0;
  virtual double lo(int j) const = 0;
  virtual double hi(int j) const = 0;
  virtual double mass(int j) const = 0;
  virtual double inv(int j, double w) const = 0;
  virtual double inv_deriv(int j, double w) const = 0;  // |h_j'(w)|
  virtual double weight(int j, double w) const = 0;
  virtual double fwd(int j, double y) const = 0;  // F restricted to branch j
  virtual int branch_of(double y) const = 0;
  /// Draw y from the invariant measure conditioned on branch j.
  virtual double sample_branch(Rng& rng, int j) const = 0;

  virtual bool has_tail_node() const { return false; }
  virtual double tail_weight(double) const { return 0.0; }
  virtual double tail_point(double) const { return 0.0; }
  virtual double tail_mass() const { return 0.0; }   // aggregated into the tail node
  virtual double mass_defect() const { return 0.0; } // dropped entirely
};

/// Full-branch Gibbs-Markov map with symbolic metric parameter theta and
/// recorded distortion data.
class GMSystem {
 public:
  GMSystem(std::string name, std::shared_ptr<const BranchFamily> fam, double theta,
           double potential_lipschitz,
           std::function<double(double)> density,
           std::function<double(Rng&)> sampler);

  const std::string& name() const { return name_; }
  const BranchFamily& family() const { return *fam_; }
  int branch_count() const { return fam_->count(); }
  double theta() const { return theta_; }
  double potential_lipschitz() const { return pot_lip_; }
  double mass_defect() const { return fam_->mass_defect(); }
  double aggregated_tail_mass() const { return fam_->tail_mass(); }

  int branch_of(double y) const { return fam_->branch_of(y); }
  double apply(double y) const { return fam_->fwd(fam_->branch_of(y), y); }
  double apply(double y, int& branch) const {
    branch = fam_->branch_of(y);
    return fam_->fwd(branch, y);
  }
  /// Invariant density with respect to Lebesgue.
  double invariant_density(double x) const { return density_(x); }
  /// Draw y distributed by the invariant measure (exact inverse CDF).
  double sample_mu(Rng& rng) const { return sampler_(rng); }
  /// log weight (potential at h_j(w)); convenience for diagnostics.
  double log_weight(int j, double w) const { return std::log(fam_->weight(j, w)); }

 private:
  std::string name_;
  std::shared_ptr<const BranchFamily> fam_;
  double theta_;
  double pot_lip_;
  std::function<double(double)> density_;
  std::function<double(Rng&)> sampler_;
};

/// Builtin model systems.
GMSystem make_doubling();
GMSystem make_gauss(int j_max = 20000);
/// Designed induced-map model with power-law branch masses
/// m_n ~ n^-(1+1/alpha) (piecewise affine, Lebesgue invariant) whose natural
/// return-time roof has survival ~ t^(-1/alpha).
GMSystem make_lsv_induced(double alpha, double mass_target = 1e-8, int j_cap = 200000);
/// Dispatch by name: doubling | gauss | lsv_induced.
GMSystem make_builtin(const std::string& name, double alpha = 0.5);

/// Roof function over a Gibbs-Markov base with recorded per-branch and
/// Hoelder data.
struct Roof {
  std::function<double(double)> eval;
  std::function<double(int, double)> on_branch;  // phi(h_j(w))
  std::function<double(int)> branch_inf;
  std::function<double(int)> branch_sup;
  double inf = 1.0;
  double sup = 1.0;          // meaningful only when bounded
  bool bounded = true;
  double C1 = 1.0;           // |1_j phi|_theta <= C1 inf_j phi
  double integral = 1.0;     // int phi dmu
  std::string name;
};

Roof roof_constant(const GMSystem& gm, double c);
Roof roof_affine(const GMSystem& gm, double a, double b);  // a + b*y
/// Natural return-time roof of the designed induced map: n + F(y) on branch n.
Roof roof_return_time(const GMSystem& gm);
Roof make_roof(const GMSystem& gm, const std::string& spec);

/// Separation time s(y,y'): least n <= n_cap with F^n y, F^n y' in different
/// partition elements; n_cap when saturated.
int separation_time(const GMSystem& gm, double y, double yp, int n_cap);

/// Matrix of the twisted transfer operator R_s v = R(e^{-s phi} v) in global
/// Chebyshev-Lobatto collocation (degree = resolution).
struct TransferMatrix {
  int resolution = 0;
  cplx s;
  std::vector<double> nodes;
  Eigen::MatrixXcd mat;
  std::vector<double> quad_mu;  // node weights approximating int . dmu
  double mass_defect = 0.0;
};

struct TransferOptions {
  double defect_bound = 1e-6;
};

TransferMatrix build_transfer(const GMSystem& gm, const Roof& roof, cplx s, int resolution,
                              const TransferOptions& opt = {});

struct SpectralOptions {
  int resolution = 32;
  double delta_spec = 0.2;    // |s| window with a guaranteed spectral gap
  int max_iter = 10000;
  double residual_target = 1e-10;
  double gap_tol = 1e-3;      // NoGap when |lambda2/lambda1| > 1 - gap_tol
  double defect_bound = 1e-6;
  bool measure_gap = false;   // deflate and estimate |lambda2| as well
};

struct SpectralSample {
  cplx s;
  cplx lambda;
  Eigen::VectorXcd eigfun;   // node values
  double residual = 0.0;
  double gap = 0.0;          // |lambda2|/|lambda1| when measured
  int iterations = 0;
  std::vector<double> residual_history;
};

/// Dominant eigenvalue of R_s by power iteration (deflation for the gap).
SpectralSample leading_eigenvalue(const GMSystem& gm, const Roof& roof, cplx s,
                                  const SpectralOptions& opt = {});

/// d(lambda)/ds at 0 by second-order differences (central when the roof is
/// bounded, one-sided otherwise).
cplx lambda_derivative_at_zero(const GMSystem& gm, const Roof& roof, double step,
                               const SpectralOptions& opt = {});

/// One application of the twist operator M_b v = e^{i b phi} v o F at the
/// given evaluation points.
std::vector<cplx> twisted_iterate(const GMSystem& gm, const Roof& roof, double b,
                                  const std::function<cplx(double)>& v,
                                  std::span<const double> grid);

struct DefectOptions {
  int max_points = 1 << 16;  // cap on |Z0|^(rep_depth + n)
  int power_iters = 128;
};

struct DefectResult {
  double defect = 0.0;
  double psi = 0.0;
  int n = 0;
  int rep_depth = 0;
  std::vector<cplx> u;  // values on rep_depth-words (lexicographic in Z0 symbols)
};

/// Approximate-eigenfunction defect on the finite subsystem spanned by the
/// branches in z0: n = floor(xi ln|b|); u from normalized power iteration of
/// M_b restricted to the subsystem (|u| = 1 pointwise); the phase psi
/// minimizes the reported sup defect |M_b^n u - e^{i psi} u|.
DefectResult approx_eigenfunction_defect(const GMSystem& gm, const Roof& roof,
                                         const std::vector<int>& z0, double b, double xi,
                                         const DefectOptions& opt = {});

/// Sum_{n>j} n^{-s} via Euler-Maclaurin (s > 1).
double zeta_tail(double s, double j);

}  // namespace mixlab::gm
