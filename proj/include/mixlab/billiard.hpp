#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mixlab/common.hpp"
#include "mixlab/rng.hpp"

namespace mixlab::billiard {

/// Circular scatterer; for the torus variant the center lives in [0,1)^2.
struct Scatterer {
  Vec2 center;
  double radius = 0.0;
};

enum class Variant { lorentz_torus, semidispersing, stadium };

/// Boundary coordinates of an outgoing collision: component id, arclength
/// position r along the component, and angle phi in [-pi/2, pi/2] between the
/// outgoing velocity and the inward normal (sign toward the arclength
/// tangent). Internally positions are held as angles/offsets and converted to
/// arclength only here.
struct CollisionState {
  int component = 0;
  double r = 0.0;
  double phi = 0.0;
};

/// Full phase point: position in the billiard domain (torus-wrapped for the
/// Lorentz variant) and unit velocity.
struct FlowState {
  Vec2 q;
  Vec2 v;
};

struct FlightSegment {
  FlowState start;
  CollisionState end;
  double h = 0.0;
};

/// Empty-strip direction for the periodic Lorentz configuration.
struct Corridor {
  int p = 0;
  int q = 0;
  double width = 0.0;
};

struct CorridorScan {
  std::vector<Corridor> corridors;  // width > 0 only
  bool infinite_horizon = false;
  bool degenerate_touch = false;  // some direction closes with exactly zero width
};

struct FirstReturn {
  CollisionState state;
  int steps = 0;     // number of plain billiard-map steps taken
  double flight = 0.0;
};

/// Numerical policy knobs. Defaults follow the project conventions:
/// grazing tolerance 1e-10 on |cos phi|, flight cap 1e4.
struct Tolerances {
  double graze = 1e-10;
  double t_cap = 1e4;
  double t_min = 1e-9;  // exclusion window after leaving the boundary
};

class Table {
 public:
  static Table lorentz_torus(std::vector<Scatterer> scatterers);
  static Table semidispersing(double width, double height, std::vector<Scatterer> scatterers);
  static Table stadium(double a, double rho);
  /// Parse from the structured config text (JSON with keys variant,
  /// scatterers[], rect{}, stadium{a,rho}).
  static Table from_config(const std::string& json_text);

  Variant variant() const { return variant_; }
  const std::vector<Scatterer>& scatterers() const { return scatterers_; }
  double rect_width() const { return rect_w_; }
  double rect_height() const { return rect_h_; }
  double stadium_a() const { return stad_a_; }
  double stadium_rho() const { return stad_rho_; }

  int component_count() const;
  bool component_curved(int c) const;
  double component_length(int c) const;
  double boundary_length() const;
  double max_radius() const { return max_radius_; }

  // --- coordinate conversions -----------------------------------------
  Vec2 point_on(int comp, double r) const;
  Vec2 inward_normal(int comp, double r) const;
  Vec2 tangent(int comp, double r) const;  // direction of increasing r
  /// Outgoing phase point of a collision state (position snapped exactly to
  /// the component).
  FlowState outgoing(const CollisionState& x) const;
  /// (r, phi) coordinates of a hit at point p on component comp with
  /// outgoing velocity v.
  CollisionState collision_coords(int comp, Vec2 p, Vec2 v_out) const;

  /// Euclidean phase-space distance between two collision states in the
  /// (position, velocity) embedding (minimum-image positions on the torus).
  double phase_distance(const CollisionState& a, const CollisionState& b) const;

  /// Wrap a position into the fundamental cell (torus variant only).
  Vec2 wrap(Vec2 q) const;

  const Tolerances& tol() const { return tol_; }
  Tolerances& tol() { return tol_; }

 private:
  Table() = default;
  void validate() const;

  Variant variant_ = Variant::lorentz_torus;
  std::vector<Scatterer> scatterers_;
  double rect_w_ = 0.0, rect_h_ = 0.0;
  double stad_a_ = 0.0, stad_rho_ = 0.0;
  double max_radius_ = 0.0;
  Tolerances tol_;
};

/// One resolved collision event, with the lattice cell of the hit image
/// (torus variant; zero otherwise). The (component, cell) pair labels the
/// continuity branch of the collision map and doubles as the itinerary
/// symbol.
struct Hit {
  double t = 0.0;
  int component = -1;
  std::array<int, 2> cell = {0, 0};
  Vec2 point;          // hit position (unwrapped for the torus)
  Vec2 normal_in;      // inward (domain-side) unit normal at the hit
};

/// First boundary intersection along the ray, or nullopt when none occurs
/// within `cap`. Throws Grazing when the first hit is too tangential.
std::optional<Hit> first_hit(const Table& table, const FlowState& state, double cap);

/// First collision with specular outgoing data. Errors: Grazing, CapExceeded.
FlightSegment next_collision(const Table& table, const FlowState& state, double t_cap);
FlightSegment next_collision(const Table& table, const FlowState& state);

/// The billiard map f applied to a nonsingular collision state.
CollisionState billiard_map(const Table& table, const CollisionState& x);
/// Ditto, also reporting flight time and itinerary symbol of the step.
CollisionState billiard_step(const Table& table, const CollisionState& x, double* flight,
                             int* comp, std::array<int, 2>* cell);

/// Billiard flow T_t. Chains flight segments; speed is preserved exactly.
FlowState flow(const Table& table, FlowState m, double t);

/// Time-reversal involution in boundary coordinates.
inline CollisionState reversed(const CollisionState& x) { return {x.component, x.r, -x.phi}; }

/// Empty-strip scan over coprime directions |p|,|q| <= max_dir.
CorridorScan detect_corridors(const Table& table, int max_dir);

/// First return to the designated section X (stadium: first bounces on arcs;
/// semidispersing: collisions on curved scatterers). `step_cap` bounds the
/// number of plain billiard-map steps.
FirstReturn first_return(const Table& table, const CollisionState& x, int step_cap = 1000000);

/// Whether x belongs to the designated first-return section X.
bool in_first_return_section(const Table& table, const CollisionState& x);

/// i.i.d. samples from the billiard-map invariant measure, density
/// proportional to cos(phi) dr dphi on the full boundary (exact inverse-CDF:
/// arclength uniform, sin(phi) uniform). Deterministic given seed.
std::vector<CollisionState> sample_invariant(const Table& table, uint64_t seed, std::size_t n);
CollisionState sample_invariant_one(const Table& table, Rng& rng);
/// Sample restricted to the first-return section X (stadium/semidispersing).
CollisionState sample_section_one(const Table& table, Rng& rng);

/// Uniform sample from the flow-invariant Liouville measure on Q x S^1
/// (position uniform in the billiard domain, direction uniform).
FlowState sample_liouville_one(const Table& table, Rng& rng);

/// Itinerary separation time: least n <= n_cap such that the n-th collision
/// symbols (component, image cell) of the two orbits differ; n_cap when the
/// orbits stay together (saturated).
int itinerary_separation(const Table& table, CollisionState a, CollisionState b, int n_cap);

}  // namespace mixlab::billiard
