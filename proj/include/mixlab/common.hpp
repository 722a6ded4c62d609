#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace mixlab {

/// Failure modes surfaced by the library. Every thrown error carries one of
/// these codes so callers (and tests) can react to the condition rather than
/// parse message text.
enum class errc {
  grazing,                // collision with |cos phi| below the grazing tolerance
  cap_exceeded,           // no event within the configured cap
  unsupported_variant,    // operation not defined for this table/model variant
  bad_params,             // invalid construction or call parameters
  truncation_too_coarse,  // countable-branch mass defect above the allowed bound
  no_gap,                 // leading eigenvalue not numerically simple
  empty_subsystem,        // finite subsystem with no branches
  no_convergence,         // series remainder bound above tolerance
  induce_power_needed,    // inf(roof) too small relative to |chi|_inf
  degenerate_range,       // sampled value set collapses at the scale grid
  precision_exhausted,    // continued fraction ran out of floating precision
  fit_diverged,           // nonlinear fit failed
  budget_too_small,       // sample budget below the contract minimum
  empty_window,           // no usable points inside the fit window
  noise_dominated,        // all fit points indistinguishable from zero
  series_not_decaying,    // term magnitudes do not decay at the requested s
  grid_mismatch,          // incompatible time grids
  config_invalid,         // experiment config failed validation
};

const char* errc_name(errc c);

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  errc code() const { return code_; }

 private:
  errc code_;
};

/// Plain 2D vector, double precision.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2() = default;
  constexpr Vec2(double x_, double y_) : x(x_), y(y_) {}

  constexpr Vec2 operator+(Vec2 r) const { return {x + r.x, y + r.y}; }
  constexpr Vec2 operator-(Vec2 r) const { return {x - r.x, y - r.y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr double dot(Vec2 r) const { return x * r.x + y * r.y; }
  constexpr double cross(Vec2 r) const { return x * r.y - y * r.x; }
  double norm() const { return std::hypot(x, y); }
  constexpr double norm2() const { return x * x + y * y; }
  Vec2 normalized() const {
    double n = norm();
    return {x / n, y / n};
  }
  /// 90 degree counterclockwise rotation.
  constexpr Vec2 perp() const { return {-y, x}; }
};

constexpr Vec2 operator*(double s, Vec2 v) { return v * s; }

inline double sqr(double x) { return x * x; }

}  // namespace mixlab
