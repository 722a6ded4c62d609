#include "mixlab/billiard.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "mixlab/numeric.hpp"

namespace mixlab::billiard {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kTwoPi = 2.0 * kPi;

// Positive roots of |q + t v - c|^2 = R^2 for unit v. Uses the product form
// for the entering root so near-tangent rays do not lose precision to
// cancellation.
struct CircleRoots {
  bool hit = false;
  double t_enter = -1.0;
  double t_exit = -1.0;
};

CircleRoots ray_circle(Vec2 q, Vec2 v, Vec2 c, double R) {
  CircleRoots out;
  Vec2 d = c - q;
  double proj = d.dot(v);
  double perp = d.cross(v);  // signed distance of the center from the ray line
  double disc = (R - perp) * (R + perp);
  if (disc <= 0.0) return out;
  double sq = std::sqrt(disc);
  double c2 = d.norm2() - R * R;
  out.hit = true;
  if (proj > 0.0) {
    out.t_enter = c2 / (proj + sq);  // product form: stable when c2 ~ 0
    out.t_exit = proj + sq;
  } else {
    out.t_enter = proj - sq;
    out.t_exit = c2 / (proj - sq);
  }
  return out;
}

double wrap01(double x) {
  double y = x - std::floor(x);
  return (y >= 1.0) ? 0.0 : y;
}

double wrap_angle_2pi(double a) {
  double y = std::fmod(a, kTwoPi);
  if (y < 0) y += kTwoPi;
  return y;
}

struct SegmentGeom {
  Vec2 origin;
  Vec2 tang;  // unit
  Vec2 norm;  // unit inward
  double len;
};

SegmentGeom segment_geom(const Table& t, int comp) {
  SegmentGeom g;
  if (t.variant() == Variant::stadium) {
    double a = t.stadium_a(), rho = t.stadium_rho();
    if (comp == 2) g = {{-a, rho}, {1, 0}, {0, -1}, 2 * a};     // top
    else g = {{-a, -rho}, {1, 0}, {0, 1}, 2 * a};               // bottom
  } else {
    int w = comp - int(t.scatterers().size());
    double W = t.rect_width(), H = t.rect_height();
    switch (w) {
      case 0: g = {{0, 0}, {1, 0}, {0, 1}, W}; break;    // bottom
      case 1: g = {{W, 0}, {0, 1}, {-1, 0}, H}; break;   // right
      case 2: g = {{W, H}, {-1, 0}, {0, -1}, W}; break;  // top
      default: g = {{0, H}, {0, -1}, {1, 0}, H}; break;  // left
    }
  }
  return g;
}

// Center of an arc/scatterer component.
Vec2 circle_center(const Table& t, int comp) {
  if (t.variant() == Variant::stadium)
    return comp == 0 ? Vec2{t.stadium_a(), 0.0} : Vec2{-t.stadium_a(), 0.0};
  return t.scatterers()[comp].center;
}

double circle_radius(const Table& t, int comp) {
  if (t.variant() == Variant::stadium) return t.stadium_rho();
  return t.scatterers()[comp].radius;
}

// Whether theta (angle at the arc center) lies on the stadium arc `comp`.
bool on_stadium_arc(int comp, Vec2 rel, double eps) {
  return comp == 0 ? rel.x >= -eps : rel.x <= eps;
}

}  // namespace

// ---------------------------------------------------------------------------
// Table construction
// ---------------------------------------------------------------------------

Table Table::lorentz_torus(std::vector<Scatterer> scatterers) {
  Table t;
  t.variant_ = Variant::lorentz_torus;
  t.scatterers_ = std::move(scatterers);
  for (auto& s : t.scatterers_) s.center = {wrap01(s.center.x), wrap01(s.center.y)};
  t.validate();
  return t;
}

Table Table::semidispersing(double width, double height, std::vector<Scatterer> scatterers) {
  Table t;
  t.variant_ = Variant::semidispersing;
  t.rect_w_ = width;
  t.rect_h_ = height;
  t.scatterers_ = std::move(scatterers);
  t.validate();
  return t;
}

Table Table::stadium(double a, double rho) {
  Table t;
  t.variant_ = Variant::stadium;
  t.stad_a_ = a;
  t.stad_rho_ = rho;
  t.validate();
  return t;
}

void Table::validate() const {
  auto& self = const_cast<Table&>(*this);
  self.max_radius_ = 0.0;
  switch (variant_) {
    case Variant::lorentz_torus: {
      if (scatterers_.empty()) throw Error(errc::bad_params, "no scatterers");
      for (auto& s : scatterers_) {
        if (!(s.radius > 0.0)) throw Error(errc::bad_params, "radius must be positive");
        self.max_radius_ = std::max(self.max_radius_, s.radius);
      }
      // pairwise disjoint, including periodic images (touching allowed)
      for (std::size_t i = 0; i < scatterers_.size(); ++i)
        for (std::size_t j = 0; j < scatterers_.size(); ++j)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              if (i == j && di == 0 && dj == 0) continue;
              Vec2 delta = scatterers_[i].center -
                           (scatterers_[j].center + Vec2{double(di), double(dj)});
              double need = scatterers_[i].radius + scatterers_[j].radius;
              if (delta.norm() < need - 1e-12)
                throw Error(errc::bad_params, "scatterers overlap (periodic images)");
            }
      break;
    }
    case Variant::semidispersing: {
      if (!(rect_w_ > 0.0 && rect_h_ > 0.0))
        throw Error(errc::bad_params, "rectangle dimensions must be positive");
      if (scatterers_.empty()) throw Error(errc::bad_params, "no scatterers");
      for (auto& s : scatterers_) {
        if (!(s.radius > 0.0)) throw Error(errc::bad_params, "radius must be positive");
        if (s.center.x - s.radius < -1e-12 || s.center.x + s.radius > rect_w_ + 1e-12 ||
            s.center.y - s.radius < -1e-12 || s.center.y + s.radius > rect_h_ + 1e-12)
          throw Error(errc::bad_params, "scatterer not inside rectangle");
        self.max_radius_ = std::max(self.max_radius_, s.radius);
      }
      for (std::size_t i = 0; i < scatterers_.size(); ++i)
        for (std::size_t j = i + 1; j < scatterers_.size(); ++j) {
          double need = scatterers_[i].radius + scatterers_[j].radius;
          if ((scatterers_[i].center - scatterers_[j].center).norm() < need - 1e-12)
            throw Error(errc::bad_params, "scatterers overlap");
        }
      break;
    }
    case Variant::stadium:
      if (!(stad_rho_ > 0.0)) throw Error(errc::bad_params, "stadium rho must be positive");
      if (stad_a_ < 0.0) throw Error(errc::bad_params, "stadium a must be nonnegative");
      self.max_radius_ = stad_rho_;
      break;
  }
}

Table Table::from_config(const std::string& json_text) {
  using nlohmann::json;
  try {
    json j = json::parse(json_text);
    for (auto& [key, _] : j.items()) {
      if (key != "variant" && key != "scatterers" && key != "rect" && key != "stadium")
        throw Error(errc::config_invalid, "unknown table key '" + key + "'");
    }
    std::string variant = j.at("variant").get<std::string>();
    auto parse_scatterers = [&](const json& arr) {
      std::vector<Scatterer> out;
      for (auto& s : arr) {
        for (auto& [key, _] : s.items())
          if (key != "center" && key != "radius")
            throw Error(errc::config_invalid, "unknown scatterer key '" + key + "'");
        auto c = s.at("center");
        out.push_back(
            {{c.at(0).get<double>(), c.at(1).get<double>()}, s.at("radius").get<double>()});
      }
      return out;
    };
    if (variant == "lorentz-torus") return lorentz_torus(parse_scatterers(j.at("scatterers")));
    if (variant == "semidispersing-rectangle")
      return semidispersing(j.at("rect").at("width").get<double>(),
                            j.at("rect").at("height").get<double>(),
                            parse_scatterers(j.at("scatterers")));
    if (variant == "stadium")
      return stadium(j.at("stadium").at("a").get<double>(),
                     j.at("stadium").at("rho").get<double>());
    throw Error(errc::config_invalid, "unknown variant '" + variant + "'");
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(errc::config_invalid, std::string("table config: ") + e.what());
  }
}

int Table::component_count() const {
  switch (variant_) {
    case Variant::lorentz_torus: return int(scatterers_.size());
    case Variant::semidispersing: return int(scatterers_.size()) + 4;
    case Variant::stadium: return 4;
  }
  return 0;
}

bool Table::component_curved(int c) const {
  switch (variant_) {
    case Variant::lorentz_torus: return true;
    case Variant::semidispersing: return c < int(scatterers_.size());
    case Variant::stadium: return c < 2;
  }
  return false;
}

double Table::component_length(int c) const {
  if (component_curved(c)) {
    double R = circle_radius(*this, c);
    return (variant_ == Variant::stadium) ? kPi * R : kTwoPi * R;
  }
  return segment_geom(*this, c).len;
}

double Table::boundary_length() const {
  double L = 0.0;
  for (int c = 0; c < component_count(); ++c) L += component_length(c);
  return L;
}

Vec2 Table::point_on(int comp, double r) const {
  if (component_curved(comp)) {
    double R = circle_radius(*this, comp);
    Vec2 c = circle_center(*this, comp);
    double theta = r / R;
    if (variant_ == Variant::stadium) theta += (comp == 0) ? -kPi / 2 : kPi / 2;
    return c + R * Vec2{std::cos(theta), std::sin(theta)};
  }
  SegmentGeom g = segment_geom(*this, comp);
  return g.origin + r * g.tang;
}

Vec2 Table::inward_normal(int comp, double r) const {
  if (component_curved(comp)) {
    double R = circle_radius(*this, comp);
    double theta = r / R;
    if (variant_ == Variant::stadium) theta += (comp == 0) ? -kPi / 2 : kPi / 2;
    Vec2 u{std::cos(theta), std::sin(theta)};
    return (variant_ == Variant::stadium) ? -u : u;
  }
  return segment_geom(*this, comp).norm;
}

Vec2 Table::tangent(int comp, double r) const {
  if (component_curved(comp)) {
    double R = circle_radius(*this, comp);
    double theta = r / R;
    if (variant_ == Variant::stadium) theta += (comp == 0) ? -kPi / 2 : kPi / 2;
    return {-std::sin(theta), std::cos(theta)};
  }
  return segment_geom(*this, comp).tang;
}

FlowState Table::outgoing(const CollisionState& x) const {
  Vec2 n = inward_normal(x.component, x.r);
  Vec2 t = tangent(x.component, x.r);
  Vec2 v = std::cos(x.phi) * n + std::sin(x.phi) * t;
  return {point_on(x.component, x.r), v.normalized()};
}

CollisionState Table::collision_coords(int comp, Vec2 p, Vec2 v_out) const {
  double r;
  if (component_curved(comp)) {
    double R = circle_radius(*this, comp);
    Vec2 rel = p - circle_center(*this, comp);
    double theta = std::atan2(rel.y, rel.x);
    if (variant_ == Variant::stadium) {
      theta += (comp == 0) ? kPi / 2 : -kPi / 2;
      if (theta < -kPi / 2) theta += kTwoPi;
      theta = std::clamp(theta, 0.0, kPi);  // clamp junction roundoff onto the arc
    } else {
      theta = wrap_angle_2pi(theta);
    }
    r = R * theta;
  } else {
    SegmentGeom g = segment_geom(*this, comp);
    r = std::clamp((p - g.origin).dot(g.tang), 0.0, g.len);
  }
  Vec2 n = inward_normal(comp, r);
  Vec2 t = tangent(comp, r);
  double phi = std::atan2(v_out.dot(t), v_out.dot(n));
  return {comp, r, phi};
}

Vec2 Table::wrap(Vec2 q) const {
  if (variant_ != Variant::lorentz_torus) return q;
  return {wrap01(q.x), wrap01(q.y)};
}

double Table::phase_distance(const CollisionState& a, const CollisionState& b) const {
  FlowState fa = outgoing(a), fb = outgoing(b);
  Vec2 dq = fa.q - fb.q;
  if (variant_ == Variant::lorentz_torus) {
    dq.x -= std::round(dq.x);
    dq.y -= std::round(dq.y);
  }
  Vec2 dv = fa.v - fb.v;
  return std::sqrt(dq.norm2() + dv.norm2());
}

// ---------------------------------------------------------------------------
// Collision detection
// ---------------------------------------------------------------------------

namespace {

// Candidate update helper shared by the variant-specific searches.
struct Best {
  double t = std::numeric_limits<double>::infinity();
  int comp = -1;
  std::array<int, 2> cell = {0, 0};
};

// Torus search: periodic images enumerated in expanding square shells around
// the start cell; stops at the first shell whose closest conceivable hit
// lies beyond the current best (or the cap), which makes the search exact
// with cost proportional to the flight length.
Best search_torus(const Table& tab, Vec2 q, Vec2 v, double cap) {
  Best best;
  const auto& sc = tab.scatterers();
  const double rmax = tab.max_radius();
  const double tmin = tab.tol().t_min;
  int k_hard = int(std::min(cap, 2.0e7)) + 2;
  for (int k = 0; k <= k_hard; ++k) {
    if (double(k - 1) - rmax > std::min(best.t, cap)) break;
    // cells at Chebyshev distance k from the origin cell
    auto visit = [&](int i, int j) {
      for (std::size_t m = 0; m < sc.size(); ++m) {
        Vec2 c = sc[m].center + Vec2{double(i), double(j)};
        Vec2 d = c - q;
        // behind or too far off-axis: cheap rejects
        double proj = d.dot(v);
        if (proj <= 0.0 && d.norm2() > sqr(sc[m].radius)) continue;
        if (std::abs(d.cross(v)) >= sc[m].radius) continue;
        CircleRoots cr = ray_circle(q, v, c, sc[m].radius);
        if (!cr.hit) continue;
        double t = cr.t_enter;
        if (t > tmin && t < best.t) best = {t, int(m), {i, j}};
      }
    };
    if (k == 0) {
      visit(0, 0);
    } else {
      for (int i = -k; i <= k; ++i) {
        visit(i, k);
        visit(i, -k);
      }
      for (int j = -k + 1; j <= k - 1; ++j) {
        visit(k, j);
        visit(-k, j);
      }
    }
  }
  return best;
}

Best search_bounded(const Table& tab, Vec2 q, Vec2 v) {
  Best best;
  const double tmin = tab.tol().t_min;
  const int n = tab.component_count();
  for (int comp = 0; comp < n; ++comp) {
    if (tab.component_curved(comp)) {
      Vec2 c = circle_center(tab, comp);
      double R = circle_radius(tab, comp);
      CircleRoots cr = ray_circle(q, v, c, R);
      if (!cr.hit) continue;
      if (tab.variant() == Variant::stadium) {
        // arcs bound the domain from inside the circle: only the exit root
        double t = cr.t_exit;
        if (t > tmin && t < best.t) {
          Vec2 rel = q + t * v - c;
          if (on_stadium_arc(comp, rel, 1e-12)) best = {t, comp, {0, 0}};
        }
      } else {
        double t = cr.t_enter;
        if (t > tmin && t < best.t) best = {t, comp, {0, 0}};
      }
    } else {
      SegmentGeom g = segment_geom(tab, comp);
      if (g.len <= 0.0) continue;
      double vn = v.dot(g.norm);
      if (vn >= 0.0) continue;  // moving away from or parallel to the wall
      double t = (g.origin - q).dot(g.norm) / vn;
      if (t <= tmin || t >= best.t) continue;
      double s = (q + t * v - g.origin).dot(g.tang);
      if (s < -1e-12 || s > g.len + 1e-12) continue;
      best = {t, comp, {0, 0}};
    }
  }
  return best;
}

}  // namespace

std::optional<Hit> first_hit(const Table& table, const FlowState& state, double cap) {
  Vec2 q = state.q, v = state.v;
  Best best = (table.variant() == Variant::lorentz_torus) ? search_torus(table, q, v, cap)
                                                          : search_bounded(table, q, v);
  if (best.comp < 0 || best.t > cap) return std::nullopt;
  Hit hit;
  hit.t = best.t;
  hit.component = best.comp;
  hit.cell = best.cell;
  hit.point = q + best.t * v;
  if (table.component_curved(best.comp)) {
    Vec2 c = circle_center(table, best.comp) +
             Vec2{double(best.cell[0]), double(best.cell[1])};
    Vec2 u = (hit.point - c).normalized();
    hit.normal_in = (table.variant() == Variant::stadium) ? -u : u;
  } else {
    hit.normal_in = segment_geom(table, best.comp).norm;
  }
  double cosang = std::abs(v.dot(hit.normal_in));
  if (cosang < table.tol().graze)
    throw Error(errc::grazing, "tangential collision, |cos phi| = " + format_g17(cosang));
  return hit;
}

FlightSegment next_collision(const Table& table, const FlowState& state, double t_cap) {
  if (!(t_cap > 0.0)) throw Error(errc::bad_params, "t_cap must be positive");
  auto hit = first_hit(table, state, t_cap);
  if (!hit)
    throw Error(errc::cap_exceeded,
                "no collision within t_cap = " + format_g17(t_cap));
  Vec2 v_out = state.v - 2.0 * state.v.dot(hit->normal_in) * hit->normal_in;
  v_out = v_out.normalized();
  Vec2 p = table.wrap(hit->point);
  FlightSegment seg;
  seg.start = state;
  seg.end = table.collision_coords(hit->component, p, v_out);
  seg.h = hit->t;
  return seg;
}

FlightSegment next_collision(const Table& table, const FlowState& state) {
  return next_collision(table, state, table.tol().t_cap);
}

CollisionState billiard_step(const Table& table, const CollisionState& x, double* flight,
                             int* comp, std::array<int, 2>* cell) {
  FlowState out = table.outgoing(x);
  auto hit = first_hit(table, out, table.tol().t_cap);
  if (!hit)
    throw Error(errc::cap_exceeded, "no collision within t_cap");
  Vec2 v_out = out.v - 2.0 * out.v.dot(hit->normal_in) * hit->normal_in;
  v_out = v_out.normalized();
  if (flight) *flight = hit->t;
  if (comp) *comp = hit->component;
  if (cell) *cell = hit->cell;
  return table.collision_coords(hit->component, table.wrap(hit->point), v_out);
}

CollisionState billiard_map(const Table& table, const CollisionState& x) {
  return billiard_step(table, x, nullptr, nullptr, nullptr);
}

FlowState flow(const Table& table, FlowState m, double t) {
  if (t < 0.0) throw Error(errc::bad_params, "flow time must be nonnegative");
  double remaining = t;
  m.v = m.v.normalized();
  while (remaining > 0.0) {
    auto hit = first_hit(table, m, remaining);
    if (!hit) {
      m.q = table.wrap(m.q + remaining * m.v);
      return m;
    }
    m.q = table.wrap(hit->point);
    m.v = (m.v - 2.0 * m.v.dot(hit->normal_in) * hit->normal_in).normalized();
    remaining -= hit->t;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Corridors
// ---------------------------------------------------------------------------

CorridorScan detect_corridors(const Table& table, int max_dir) {
  if (table.variant() != Variant::lorentz_torus)
    throw Error(errc::unsupported_variant,
                "corridor scan is defined for the lorentz-torus variant");
  if (max_dir < 1) throw Error(errc::bad_params, "max_dir must be >= 1");
  CorridorScan scan;
  for (int p = 0; p <= max_dir; ++p) {
    for (int q = (p == 0 ? 1 : -max_dir); q <= max_dir; ++q) {
      if (p == 0 && q != 1) continue;
      if (p > 0 && std::gcd(p, std::abs(q)) != 1) continue;
      double L = std::sqrt(double(p) * p + double(q) * q);
      double g = 1.0 / L;  // lattice projection period along the normal
      // blocked intervals [proj - r, proj + r] modulo g
      std::vector<std::pair<double, double>> iv;
      bool full = false;
      for (const auto& s : table.scatterers()) {
        double proj = (-s.center.x * q + s.center.y * p) / L;
        proj -= g * std::floor(proj / g);
        if (2.0 * s.radius >= g) {
          full = true;
          if (2.0 * s.radius == g) scan.degenerate_touch = true;
          break;
        }
        iv.emplace_back(proj - s.radius, proj + s.radius);
      }
      if (full) continue;
      std::sort(iv.begin(), iv.end());
      // gap sweep on the circle of circumference g
      double width = 0.0;
      bool touch = false;
      double covered_hi = iv[0].second;
      for (std::size_t i = 1; i <= iv.size(); ++i) {
        double next_lo = (i < iv.size()) ? iv[i].first : iv[0].first + g;
        double gap = next_lo - covered_hi;
        if (gap > 1e-12) width = std::max(width, gap);
        else if (gap > -1e-12) touch = true;
        if (i < iv.size()) covered_hi = std::max(covered_hi, iv[i].second);
      }
      if (width > 0.0) {
        scan.corridors.push_back({p, q, width});
        scan.infinite_horizon = true;
      } else if (touch) {
        scan.degenerate_touch = true;
      }
    }
  }
  return scan;
}

// ---------------------------------------------------------------------------
// First-return section
// ---------------------------------------------------------------------------

bool in_first_return_section(const Table& table, const CollisionState& x) {
  switch (table.variant()) {
    case Variant::lorentz_torus:
      return true;
    case Variant::semidispersing:
      return table.component_curved(x.component);
    case Variant::stadium: {
      if (!table.component_curved(x.component)) return false;
      // previous collision component via the time-reversal involution
      int prev = -1;
      billiard_step(table, reversed(x), nullptr, &prev, nullptr);
      return prev != x.component;
    }
  }
  return false;
}

FirstReturn first_return(const Table& table, const CollisionState& x, int step_cap) {
  if (table.variant() == Variant::lorentz_torus)
    throw Error(errc::unsupported_variant,
                "first_return needs the stadium or semidispersing section");
  FirstReturn out;
  CollisionState cur = x;
  int prev_comp = x.component;
  for (int k = 0; k < step_cap; ++k) {
    double h = 0.0;
    int comp = -1;
    cur = billiard_step(table, cur, &h, &comp, nullptr);
    out.flight += h;
    out.steps += 1;
    bool in_section = table.variant() == Variant::semidispersing
                          ? table.component_curved(comp)
                          : (table.component_curved(comp) && comp != prev_comp);
    if (in_section) {
      out.state = cur;
      return out;
    }
    prev_comp = comp;
  }
  throw Error(errc::cap_exceeded, "no return to the section within step cap");
}

// ---------------------------------------------------------------------------
// Invariant sampling
// ---------------------------------------------------------------------------

CollisionState sample_invariant_one(const Table& table, Rng& rng) {
  // component by arclength, r uniform, sin(phi) uniform
  double total = table.boundary_length();
  double u = rng.uniform() * total;
  int comp = 0;
  for (; comp + 1 < table.component_count(); ++comp) {
    double len = table.component_length(comp);
    if (u < len) break;
    u -= len;
  }
  double r = std::min(u, table.component_length(comp));
  double phi = std::asin(2.0 * rng.uniform() - 1.0);
  return {comp, r, phi};
}

std::vector<CollisionState> sample_invariant(const Table& table, uint64_t seed, std::size_t n) {
  if (n < 1) throw Error(errc::bad_params, "need n >= 1");
  Rng rng(seed);
  std::vector<CollisionState> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_invariant_one(table, rng));
  return out;
}

CollisionState sample_section_one(const Table& table, Rng& rng) {
  for (int tries = 0; tries < 100000; ++tries) {
    CollisionState x = sample_invariant_one(table, rng);
    if (!table.component_curved(x.component)) continue;
    try {
      if (in_first_return_section(table, x)) return x;
    } catch (const Error&) {
      continue;  // grazing probe; resample
    }
  }
  throw Error(errc::bad_params, "section sampling failed (section too small?)");
}

FlowState sample_liouville_one(const Table& table, Rng& rng) {
  auto inside_domain = [&](Vec2 p) {
    for (const auto& s : table.scatterers()) {
      Vec2 d = p - s.center;
      if (table.variant() == Variant::lorentz_torus) {
        d.x -= std::round(d.x);
        d.y -= std::round(d.y);
      }
      if (d.norm2() < sqr(s.radius)) return false;
    }
    return true;
  };
  Vec2 p;
  switch (table.variant()) {
    case Variant::lorentz_torus:
      do p = {rng.uniform(), rng.uniform()};
      while (!inside_domain(p));
      break;
    case Variant::semidispersing:
      do p = {rng.uniform(0, table.rect_width()), rng.uniform(0, table.rect_height())};
      while (!inside_domain(p));
      break;
    case Variant::stadium: {
      double a = table.stadium_a(), rho = table.stadium_rho();
      for (;;) {
        p = {rng.uniform(-a - rho, a + rho), rng.uniform(-rho, rho)};
        if (std::abs(p.x) <= a) break;
        Vec2 c{p.x > 0 ? a : -a, 0.0};
        if ((p - c).norm2() <= rho * rho) break;
      }
      break;
    }
  }
  double ang = rng.uniform(0.0, kTwoPi);
  return {p, {std::cos(ang), std::sin(ang)}};
}

int itinerary_separation(const Table& table, CollisionState a, CollisionState b, int n_cap) {
  for (int n = 0; n < n_cap; ++n) {
    int ca = -1, cb = -1;
    std::array<int, 2> cella{}, cellb{};
    try {
      a = billiard_step(table, a, nullptr, &ca, &cella);
      b = billiard_step(table, b, nullptr, &cb, &cellb);
    } catch (const Error&) {
      return n;  // grazing or cap: treat as separated at this step
    }
    if (ca != cb || cella != cellb) return n;
  }
  return n_cap;
}

}  // namespace mixlab::billiard
