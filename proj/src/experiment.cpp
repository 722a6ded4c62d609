#include "mixlab/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "mixlab/csv.hpp"
#include "mixlab/gibbs_markov.hpp"
#include "mixlab/numeric.hpp"
#include "mixlab/parallel.hpp"
#include "mixlab/suspension.hpp"

namespace mixlab::exp {

using nlohmann::json;
namespace fs = std::filesystem;

const char* code_version() { return "mixlab 1.0.0"; }

namespace {

void require_keys(const json& j, const std::string& path,
                  std::initializer_list<const char*> allowed,
                  std::initializer_list<const char*> required = {}) {
  if (!j.is_object()) throw Error(errc::config_invalid, "expected object at '" + path + "'");
  for (auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto a : allowed)
      if (k == a) ok = true;
    if (!ok) throw Error(errc::config_invalid, "unknown key '" + path + k + "'");
  }
  for (auto r : required)
    if (!j.contains(r))
      throw Error(errc::config_invalid, "missing key '" + path + r + "'");
}

double jnum(const json& j, const std::string& path) {
  if (!j.is_number()) throw Error(errc::config_invalid, "expected number at '" + path + "'");
  return j.get<double>();
}

std::vector<double> parse_grid(const json& j, const std::string& path) {
  if (j.is_array()) {
    std::vector<double> g;
    for (auto& v : j) g.push_back(v.get<double>());
    return g;
  }
  require_keys(j, path + ".", {"kind", "lo", "hi", "n"}, {"kind", "lo", "hi", "n"});
  std::string kind = j.at("kind").get<std::string>();
  double lo = jnum(j.at("lo"), path + ".lo"), hi = jnum(j.at("hi"), path + ".hi");
  int n = int(jnum(j.at("n"), path + ".n"));
  if (n < 2 || hi <= lo) throw Error(errc::config_invalid, "bad grid at '" + path + "'");
  std::vector<double> g(n);
  if (kind == "linear") {
    for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
  } else if (kind == "log") {
    if (lo <= 0.0) throw Error(errc::config_invalid, "log grid needs lo > 0 at '" + path + "'");
    for (int i = 0; i < n; ++i)
      g[i] = lo * std::pow(hi / lo, double(i) / (n - 1));
  } else {
    throw Error(errc::config_invalid, "unknown grid kind at '" + path + "'");
  }
  return g;
}

billiard::Table parse_table(const json& j) { return billiard::Table::from_config(j.dump()); }

gm::GMSystem parse_system(const json& j, const std::string& path) {
  require_keys(j, path + ".", {"name", "alpha", "mass_target", "j_cap", "j_max"}, {"name"});
  std::string name = j.at("name").get<std::string>();
  if (name == "doubling") return gm::make_doubling();
  if (name == "gauss") return gm::make_gauss(j.value("j_max", 20000));
  if (name == "lsv_induced")
    return gm::make_lsv_induced(j.value("alpha", 0.5), j.value("mass_target", 1e-8),
                                j.value("j_cap", 200000));
  throw Error(errc::config_invalid, "unknown system at '" + path + ".name'");
}

susp::TwoSidedModel parse_model(const json& j, const std::string& path) {
  require_keys(j, path + ".", {"base", "fattening"}, {"base"});
  auto base = parse_system(j.at("base"), path + ".base");
  std::string fat = j.value("fattening", "baker");
  if (fat == "baker") return susp::TwoSidedModel::fattened(std::move(base));
  if (fat == "skewed") return susp::TwoSidedModel::fattened_skewed(std::move(base));
  throw Error(errc::config_invalid, "unknown fattening at '" + path + ".fattening'");
}

struct Backend {
  std::unique_ptr<stats::FlowSystem> flow;
  std::function<stats::Observable(const std::string&)> obs;
};

Backend parse_backend(const json& j, const std::string& path) {
  require_keys(j, path + ".",
               {"kind", "table", "system", "roof", "model", "roof_yz", "time_reversed"},
               {"kind"});
  Backend b;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "billiard") {
    auto table = parse_table(j.at("table"));
    b.flow = std::make_unique<stats::BilliardFlowSystem>(std::move(table),
                                                         j.value("time_reversed", false));
    b.obs = [](const std::string& n) { return stats::billiard_observable(n); };
  } else if (kind == "semiflow") {
    auto sys = parse_system(j.at("system"), path + ".system");
    auto roof = gm::make_roof(sys, j.at("roof").get<std::string>());
    b.flow = std::make_unique<stats::GMSemiflowSystem>(
        susp::GMSemiflow(std::move(sys), std::move(roof)));
    b.obs = [](const std::string& n) { return stats::semiflow_observable(n); };
  } else if (kind == "twosided") {
    auto model = parse_model(j.at("model"), path + ".model");
    auto roof = susp::make_roofyz(model, j.at("roof_yz").get<std::string>());
    b.flow = std::make_unique<stats::TwoSidedFlowSystem>(
        susp::TwoSidedFlow(std::move(model), std::move(roof)));
    b.obs = [](const std::string& n) { return stats::twosided_observable(n); };
  } else {
    throw Error(errc::config_invalid, "unknown backend kind at '" + path + ".kind'");
  }
  return b;
}

void validate_csv(const std::string& path, const std::vector<std::string>& columns,
                  bool text_first = false) {
  CsvTable t = read_csv(path);
  if (t.columns != columns)
    throw Error(errc::config_invalid, "output schema mismatch in " + path);
  if (t.rows.empty()) throw Error(errc::config_invalid, "empty output " + path);
  for (const auto& row : t.rows) {
    for (std::size_t i = text_first ? 1 : 0; i < row.size(); ++i)
      if (!std::isfinite(row[i]))
        throw Error(errc::config_invalid, "non-finite value in " + path);
  }
}

struct Ctx {
  json cfg;
  std::string out_dir;
  uint64_t seed = 0;
  RunResult result;
  std::vector<std::pair<std::string, std::vector<std::string>>> schemas;  // path, columns

  std::string out_path(const std::string& name) const {
    return (fs::path(out_dir) / name).string();
  }
  void note(const std::string& line) {
    result.summary += line;
    result.summary += '\n';
  }
  void add_output(const std::string& path, std::vector<std::string> columns) {
    result.outputs.push_back(path);
    schemas.emplace_back(path, std::move(columns));
  }
};

// ---------------------------------------------------------------------------
// Experiment bodies
// ---------------------------------------------------------------------------

void run_simulate(Ctx& c) {
  require_keys(c.cfg, "", {"experiment", "seed", "out", "threads", "table", "events", "state"},
               {"table", "events"});
  auto table = parse_table(c.cfg.at("table"));
  long events = long(jnum(c.cfg.at("events"), "events"));
  if (events < 1) throw Error(errc::config_invalid, "events must be >= 1");
  Rng rng(c.seed);
  billiard::CollisionState x;
  if (c.cfg.contains("state")) {
    auto& s = c.cfg.at("state");
    require_keys(s, "state.", {"component", "r", "phi"}, {"component", "r", "phi"});
    x = {int(jnum(s.at("component"), "state.component")), jnum(s.at("r"), "state.r"),
         jnum(s.at("phi"), "state.phi")};
  } else {
    x = billiard::sample_invariant_one(table, rng);
  }
  std::string path = c.out_path("trajectory.csv");
  std::vector<std::string> cols = {"event_index", "component", "r", "phi", "flight_time"};
  {
    CsvWriter csv(path, cols);
    long discarded = 0;
    for (long k = 0; k < events; ++k) {
      double h = 0.0;
      try {
        x = billiard::billiard_step(table, x, &h, nullptr, nullptr);
      } catch (const Error&) {
        ++discarded;
        x = billiard::sample_invariant_one(table, rng);
        h = 0.0;
        --k;
        if (discarded > events) throw;
        continue;
      }
      csv.row({double(k), double(x.component), x.r, x.phi, h});
    }
    c.note("events written: " + std::to_string(events) +
           ", grazing restarts: " + std::to_string(discarded));
  }
  c.add_output(path, cols);
}

void run_tail(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "table", "system", "roof",
                "collisions", "samples", "t_grid", "window"},
               {"t_grid", "window"});
  auto window = c.cfg.at("window");
  double wlo = window.at(0).get<double>(), whi = window.at(1).get<double>();
  auto grid = parse_grid(c.cfg.at("t_grid"), "t_grid");
  std::vector<double> samples;
  stats::EventLedger ledger;
  if (c.cfg.contains("table")) {
    auto table = parse_table(c.cfg.at("table"));
    std::size_t n = std::size_t(jnum(c.cfg.at("collisions"), "collisions"));
    samples = stats::sample_flight_times(table, n, c.seed, &ledger);
    c.note("collisions: " + std::to_string(samples.size()) + ", grazing discarded: " +
           std::to_string(ledger.grazing_discarded.load()));
  } else {
    auto sys = parse_system(c.cfg.at("system"), "system");
    auto roof = gm::make_roof(sys, c.cfg.at("roof").get<std::string>());
    std::size_t n = std::size_t(jnum(c.cfg.at("samples"), "samples"));
    samples = stats::sample_roof(sys, roof, n, c.seed);
  }
  auto est = stats::tail_survival(samples, grid, wlo, whi, c.seed + 1);
  std::string path = c.out_path("tail.csv");
  std::vector<std::string> cols = {"t", "survival", "se"};
  {
    CsvWriter csv(path, cols);
    for (std::size_t i = 0; i < est.t.size(); ++i)
      csv.row({est.t[i], est.survival[i], est.se[i]});
  }
  c.add_output(path, cols);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "tail slope %.4f  ci [%.4f, %.4f]  window [%g, %g]  power_law_ok %d",
                est.slope, est.ci_lo, est.ci_hi, est.window_lo, est.window_hi,
                int(est.power_law_ok));
  c.note(buf);
}

void run_correlate(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "backend", "v", "w", "t_grid",
                "budget", "window"},
               {"backend", "v", "w", "t_grid", "budget"});
  Backend b = parse_backend(c.cfg.at("backend"), "backend");
  auto v = b.obs(c.cfg.at("v").get<std::string>());
  auto w = b.obs(c.cfg.at("w").get<std::string>());
  auto grid = parse_grid(c.cfg.at("t_grid"), "t_grid");
  std::size_t budget = std::size_t(jnum(c.cfg.at("budget"), "budget"));
  stats::EventLedger ledger;
  auto series = stats::correlation(*b.flow, v, w, grid, budget, c.seed, &ledger);
  std::string path = c.out_path("correlation.csv");
  std::vector<std::string> cols = {"t", "rho", "se", "n_samples"};
  {
    CsvWriter csv(path, cols);
    for (std::size_t i = 0; i < series.t.size(); ++i)
      csv.row({series.t[i], series.rho[i], series.se[i], double(series.n_samples)});
  }
  c.add_output(path, cols);
  if (c.cfg.contains("window")) {
    auto wnd = c.cfg.at("window");
    auto fit = stats::decay_exponent_fit(series, wnd.at(0).get<double>(),
                                         wnd.at(1).get<double>());
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "decay exponent %.4f  ci [%.4f, %.4f]  used %d excluded %d",
                  fit.exponent, fit.ci_lo, fit.ci_hi, fit.n_used, fit.n_excluded);
    c.note(buf);
  }
  if (ledger.grazing_discarded.load() + ledger.cap_exceeded.load() > 0)
    c.note("discarded trajectories: grazing " +
           std::to_string(ledger.grazing_discarded.load()) + ", cap " +
           std::to_string(ledger.cap_exceeded.load()));
}

void run_variance(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "backend", "v", "t_grid", "ensemble",
                "fit_window_lo"},
               {"backend", "v", "t_grid", "ensemble"});
  Backend b = parse_backend(c.cfg.at("backend"), "backend");
  auto v = b.obs(c.cfg.at("v").get<std::string>());
  auto grid = parse_grid(c.cfg.at("t_grid"), "t_grid");
  std::size_t ens = std::size_t(jnum(c.cfg.at("ensemble"), "ensemble"));
  stats::EventLedger ledger;
  auto var = stats::variance_growth(*b.flow, v, grid, ens, c.seed,
                                    c.cfg.value("fit_window_lo", 0.0), &ledger);
  std::string path = c.out_path("variance.csv");
  std::vector<std::string> cols = {"t", "var", "se"};
  {
    CsvWriter csv(path, cols);
    for (std::size_t i = 0; i < var.t.size(); ++i)
      csv.row({var.t[i], var.var[i], var.se[i]});
  }
  c.add_output(path, cols);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "fits on [%g, %g]: c*t rss %.6g | c*t*log t rss %.6g  (%s preferred)",
                var.window_lo, var.window_hi, var.rss_lin, var.rss_tlogt,
                var.rss_tlogt < var.rss_lin ? "t*log t" : "t");
  c.note(buf);
}

void run_spectrum(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "system", "roof", "resolution",
                "axis", "s_grid", "derivative_step"},
               {"system", "roof", "s_grid"});
  auto sys = parse_system(c.cfg.at("system"), "system");
  auto roof = gm::make_roof(sys, c.cfg.at("roof").get<std::string>());
  gm::SpectralOptions opt;
  opt.resolution = int(c.cfg.value("resolution", 32.0));
  auto grid = parse_grid(c.cfg.at("s_grid"), "s_grid");
  std::string axis = c.cfg.value("axis", "imag");
  std::string path = c.out_path("spectrum.csv");
  std::vector<std::string> cols = {"s_re", "s_im", "lambda_re", "lambda_im", "residual"};
  {
    CsvWriter csv(path, cols);
    for (double b : grid) {
      gm::cplx s = (axis == "imag") ? gm::cplx(0.0, b) : gm::cplx(b, 0.0);
      auto sample = gm::leading_eigenvalue(sys, roof, s, opt);
      csv.row({s.real(), s.imag(), sample.lambda.real(), sample.lambda.imag(),
               sample.residual});
    }
  }
  c.add_output(path, cols);
  auto at0 = gm::leading_eigenvalue(sys, roof, 0.0, opt);
  double step = c.cfg.value("derivative_step", 1e-4);
  auto deriv = gm::lambda_derivative_at_zero(sys, roof, step, opt);
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "lambda(0) = %.12g %+.3gi  |lambda(0)-1| = %.3g\n"
                "lambda'(0) = %.8g  (step %g)   -int(roof) = %.8g   mismatch %.3g",
                at0.lambda.real(), at0.lambda.imag(), std::abs(at0.lambda - 1.0),
                deriv.real(), step, -roof.integral, std::abs(deriv.real() + roof.integral));
  c.note(buf);
}

void run_defect(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "system", "roof", "z0", "b_grid",
                "xi_grid", "max_points", "power_iters"},
               {"system", "roof", "b_grid", "xi_grid"});
  auto sys = parse_system(c.cfg.at("system"), "system");
  auto roof = gm::make_roof(sys, c.cfg.at("roof").get<std::string>());
  std::vector<int> z0 = {0, 1};
  if (c.cfg.contains("z0")) {
    z0.clear();
    for (auto& v : c.cfg.at("z0")) z0.push_back(v.get<int>());
  }
  gm::DefectOptions opt;
  opt.max_points = int(c.cfg.value("max_points", double(1 << 16)));
  opt.power_iters = int(c.cfg.value("power_iters", 128.0));
  auto bs = parse_grid(c.cfg.at("b_grid"), "b_grid");
  auto xis = parse_grid(c.cfg.at("xi_grid"), "xi_grid");
  std::string path = c.out_path("defect.csv");
  std::vector<std::string> cols = {"b", "xi", "n", "defect", "psi"};
  double dmax = 0.0;
  {
    CsvWriter csv(path, cols);
    for (double b : bs)
      for (double xi : xis) {
        auto res = gm::approx_eigenfunction_defect(sys, roof, z0, b, xi, opt);
        csv.row({b, xi, double(res.n), res.defect, res.psi});
        dmax = std::max(dmax, res.defect);
      }
  }
  c.add_output(path, cols);
  c.note("max defect over the sweep: " + format_g17(dmax));
}

void run_chi(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "model", "roof_yz", "n_samples",
                "tol"},
               {"model", "roof_yz", "n_samples"});
  auto model = parse_model(c.cfg.at("model"), "model");
  auto roof = susp::make_roofyz(model, c.cfg.at("roof_yz").get<std::string>());
  std::size_t n = std::size_t(jnum(c.cfg.at("n_samples"), "n_samples"));
  double tol = c.cfg.value("tol", 1e-10);
  Rng rng(c.seed);
  std::string path = c.out_path("chi.csv");
  std::vector<std::string> cols = {"ybar", "z", "chi", "tilde_phi"};
  double chimax = 0.0, fiber_var_max = 0.0;
  {
    CsvWriter csv(path, cols);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = model.sample(rng, 48);
      double ch = susp::chi_auto(model, roof, s.p, tol);
      double tp = susp::tilde_phi(model, roof, s.p, tol);
      chimax = std::max(chimax, std::abs(ch));
      csv.row({s.p.ybar, s.p.z, ch, tp});
      if (i % 16 == 0) {
        // fiber constancy of tilde phi: two points on one stable fiber
        auto s2 = model.sample(rng, 48);
        susp::Point other{s.p.ybar, s2.p.z};
        double tp2 = susp::tilde_phi(model, roof, other, tol);
        double mean = 0.5 * (tp + tp2);
        fiber_var_max = std::max(fiber_var_max, sqr(tp - mean) + sqr(tp2 - mean));
      }
    }
  }
  c.add_output(path, cols);
  c.note("max |chi| = " + format_g17(chimax) +
         ", max fiber variance of tilde phi = " + format_g17(fiber_var_max));
}

void run_tdf(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "model", "roof_yz", "n_pairs", "K",
                "scales"},
               {"model", "roof_yz", "n_pairs", "K", "scales"});
  auto model = parse_model(c.cfg.at("model"), "model");
  auto roof = susp::make_roofyz(model, c.cfg.at("roof_yz").get<std::string>());
  std::size_t n = std::size_t(jnum(c.cfg.at("n_pairs"), "n_pairs"));
  int K = int(jnum(c.cfg.at("K"), "K"));
  auto scales = parse_grid(c.cfg.at("scales"), "scales");
  Rng rng(c.seed);
  std::vector<double> values;
  std::string path = c.out_path("tdf.csv");
  std::vector<std::string> cols = {"y1_base", "y1_fiber", "y4_base",
                                   "y4_fiber", "d_value",  "remainder_bound"};
  {
    CsvWriter csv(path, cols);
    for (std::size_t i = 0; i < n; ++i) {
      auto y1 = model.sample(rng, K + 8);
      auto y4 = model.sample(rng, K + 8);
      auto d = susp::temporal_distance(model, roof, y1, y4, K);
      values.push_back(d.value);
      csv.row({y1.p.ybar, y1.p.z, y4.p.ybar, y4.p.z, d.value, d.remainder_bound});
    }
  }
  c.add_output(path, cols);
  auto fit = susp::tdf_range_dimension(values, scales);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "box-dimension slope %.4f +- %.4f over %zu scales",
                fit.slope, fit.slope_se, fit.scales.size());
  c.note(buf);
}

void run_periods(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "system", "roof", "words", "family",
                "diophantine", "good_fit_base"},
               {"system", "roof"});
  auto sys = parse_system(c.cfg.at("system"), "system");
  auto roof = gm::make_roof(sys, c.cfg.at("roof").get<std::string>());
  std::vector<std::vector<int>> words;
  if (c.cfg.contains("words")) {
    for (auto& w : c.cfg.at("words")) {
      std::vector<int> word;
      for (auto& s : w) word.push_back(s.get<int>());
      words.push_back(word);
    }
  }
  if (c.cfg.contains("family")) {
    auto& f = c.cfg.at("family");
    require_keys(f, "family.", {"kind", "min", "max"}, {"kind", "min", "max"});
    if (f.at("kind").get<std::string>() != "zero_then_one")
      throw Error(errc::config_invalid, "unknown family.kind");
    for (int N = f.at("min").get<int>(); N <= f.at("max").get<int>(); ++N) {
      std::vector<int> w(N, 0);
      w.back() = 1;
      words.push_back(w);
    }
  }
  if (words.empty()) throw Error(errc::config_invalid, "no words requested");
  std::vector<susp::PeriodicOrbitRecord> recs;
  for (auto& w : words) recs.push_back(susp::periodic_orbit(sys, roof, w));
  std::string path = c.out_path("periods.csv");
  std::vector<std::string> cols = {"word", "p", "T"};
  {
    CsvWriter csv(path, cols);
    for (auto& r : recs) {
      std::string w;
      for (int s : r.word) w += char('0' + s);
      csv.row(w, {double(r.p), r.T});
    }
  }
  c.add_output(path, cols);
  if (c.cfg.contains("diophantine")) {
    auto idx = c.cfg.at("diophantine");
    auto rep = susp::diophantine_ratio(recs.at(idx.at(0).get<int>()).T,
                                       recs.at(idx.at(1).get<int>()).T,
                                       recs.at(idx.at(2).get<int>()).T, 24);
    std::string q = "partial quotients:";
    for (auto a : rep.cf.quotients) q += " " + std::to_string(a);
    if (rep.cf.exhaustion_index >= 0)
      q += " (precision exhausted at " + std::to_string(rep.cf.exhaustion_index) + ")";
    if (rep.cf.terminated) q += " (terminates: rational within precision)";
    if (rep.liouville_suspicious) q += " [liouville-suspicious]";
    c.note(q);
  }
  if (c.cfg.contains("good_fit_base")) {
    double T0 = recs.at(c.cfg.at("good_fit_base").get<int>()).T;
    std::vector<int> Ns;
    std::vector<double> Ts;
    for (auto& r : recs)
      if (r.p >= 2) {
        Ns.push_back(r.p);
        Ts.push_back(r.T);
      }
    auto fit = susp::good_asymptotics_fit(T0, Ns, Ts);
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "good-asymptotics fit: kappa %.8g gamma %.6g omega %.4g amplitude %.4g "
                  "min tail |E| %.4g%s",
                  fit.kappa, fit.gamma, fit.omega, fit.amplitude, fit.min_tail_envelope,
                  fit.degenerate ? " (degenerate)" : "");
    c.note(buf);
  }
}

void run_laplace(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "system", "roof", "v", "w", "s_list",
                "n_max", "budget"},
               {"system", "roof", "v", "w", "s_list", "n_max", "budget"});
  auto sys = parse_system(c.cfg.at("system"), "system");
  auto roof = gm::make_roof(sys, c.cfg.at("roof").get<std::string>());
  susp::GMSemiflow sf(sys, roof);
  auto v = stats::semiflow_observable(c.cfg.at("v").get<std::string>());
  auto w = stats::semiflow_observable(c.cfg.at("w").get<std::string>());
  std::vector<stats::cplx> ss;
  for (auto& s : c.cfg.at("s_list")) {
    if (s.is_array())
      ss.emplace_back(s.at(0).get<double>(), s.at(1).get<double>());
    else
      ss.emplace_back(s.get<double>(), 0.0);
  }
  int n_max = int(jnum(c.cfg.at("n_max"), "n_max"));
  std::size_t budget = std::size_t(jnum(c.cfg.at("budget"), "budget"));
  auto results = stats::laplace_series(sf, v, w, ss, n_max, budget, c.seed);
  std::string path = c.out_path("laplace.csv");
  std::vector<std::string> cols = {"s_re", "s_im", "rho_hat_re", "rho_hat_im", "n_max",
                                   "tail_bound"};
  {
    CsvWriter csv(path, cols);
    for (auto& r : results)
      csv.row({r.s.real(), r.s.imag(), r.rho_hat.real(), r.rho_hat.imag(),
               double(r.n_max), r.tail_bound});
  }
  c.add_output(path, cols);
  for (auto& r : results) {
    char buf[200];
    std::snprintf(buf, sizeof(buf), "s = %g%+gi: rho_hat = %.6g%+.3gi (se %.2g), terms %d",
                  r.s.real(), r.s.imag(), r.rho_hat.real(), r.rho_hat.imag(),
                  std::max(r.se_re, r.se_im), r.n_max);
    c.note(buf);
  }
}

void run_identity(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "backend", "v", "rho_t_grid",
                "var_t_grid", "budget", "ensemble"},
               {"backend", "v", "rho_t_grid", "var_t_grid", "budget", "ensemble"});
  Backend b = parse_backend(c.cfg.at("backend"), "backend");
  auto v = b.obs(c.cfg.at("v").get<std::string>());
  auto rho_grid = parse_grid(c.cfg.at("rho_t_grid"), "rho_t_grid");
  auto var_grid = parse_grid(c.cfg.at("var_t_grid"), "var_t_grid");
  auto series = stats::correlation(*b.flow, v, v, rho_grid,
                                   std::size_t(jnum(c.cfg.at("budget"), "budget")), c.seed);
  auto var = stats::variance_growth(*b.flow, v, var_grid,
                                    std::size_t(jnum(c.cfg.at("ensemble"), "ensemble")),
                                    c.seed + 1);
  auto rep = stats::variance_correlation_identity(series, var);
  std::string path = c.out_path("identity.csv");
  std::vector<std::string> cols = {"t", "var", "quad", "rel_err"};
  {
    CsvWriter csv(path, cols);
    for (std::size_t i = 0; i < rep.t.size(); ++i)
      csv.row({rep.t[i], rep.var[i], rep.quad[i], rep.rel_err[i]});
  }
  c.add_output(path, cols);
  c.note("max relative identity error: " + format_g17(rep.max_rel_err));
}

void run_rooftail(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "system", "roof", "eta", "i_list",
                "n_list", "t_list", "budget"},
               {"system", "roof", "eta", "i_list", "n_list", "t_list", "budget"});
  auto sys = parse_system(c.cfg.at("system"), "system");
  auto roof = gm::make_roof(sys, c.cfg.at("roof").get<std::string>());
  double eta = jnum(c.cfg.at("eta"), "eta");
  std::size_t budget = std::size_t(jnum(c.cfg.at("budget"), "budget"));
  std::string path = c.out_path("rooftail.csv");
  std::vector<std::string> cols = {"i", "n", "t", "lhs", "lhs_se", "rhs", "rhs_se"};
  double worst = -1e300;
  {
    CsvWriter csv(path, cols);
    for (auto& ji : c.cfg.at("i_list"))
      for (auto& jn : c.cfg.at("n_list"))
        for (auto& jt : c.cfg.at("t_list")) {
          int i = ji.get<int>(), n = jn.get<int>();
          double t = jt.get<double>();
          auto r = stats::roof_tail_inequality(sys, roof, eta, i, n, t, budget,
                                               c.seed + 977 * i + 31 * n);
          csv.row({double(i), double(n), t, r.lhs, r.lhs_se, r.rhs, r.rhs_se});
          double margin =
              (r.lhs - r.rhs) / std::max(1e-300, 3.0 * std::hypot(r.lhs_se, r.rhs_se));
          worst = std::max(worst, margin);
        }
  }
  c.add_output(path, cols);
  c.note("worst (lhs-rhs)/3sigma margin: " + format_g17(worst) + " (<= 1 passes)");
}

void run_invariants(Ctx& c) {
  require_keys(c.cfg, "",
               {"experiment", "seed", "out", "threads", "table", "events", "rev_collisions",
                "pairs", "invariance_samples"},
               {"table"});
  auto table = parse_table(c.cfg.at("table"));
  auto suite = billiard_invariant_suite(
      table, c.seed, long(c.cfg.value("events", 1e6)), long(c.cfg.value("rev_collisions", 1e3)),
      long(c.cfg.value("pairs", 1e4)), std::size_t(c.cfg.value("invariance_samples", 2e5)));
  std::string path = c.out_path("invariants.csv");
  std::vector<std::string> cols = {"metric", "value"};
  {
    CsvWriter csv(path, cols);
    csv.row("speed_drift", {suite.speed_drift});
    csv.row("reflection_err", {suite.reflection_err});
    csv.row("reversibility_err", {suite.reversibility_err});
    csv.row("bilroof_violations", {double(suite.bilroof_violations)});
    csv.row("bilroof_max_slack", {suite.bilroof_max_slack});
    csv.row("invariance_pvalue", {suite.invariance_pvalue});
    csv.row("events", {double(suite.events)});
    csv.row("pairs", {double(suite.pairs)});
  }
  c.add_output(path, cols);
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "speed drift %.3g | reflection %.3g | reversibility %.3g | "
                "bilroof violations %ld (max slack %.3g) | invariance p %.4f",
                suite.speed_drift, suite.reflection_err, suite.reversibility_err,
                suite.bilroof_violations, suite.bilroof_max_slack, suite.invariance_pvalue);
  c.note(buf);
}

}  // namespace

// ---------------------------------------------------------------------------
// Invariant suite
// ---------------------------------------------------------------------------

InvariantSuite billiard_invariant_suite(const billiard::Table& table, uint64_t seed,
                                        long n_events, long n_rev, long n_pairs,
                                        std::size_t n_invariance) {
  InvariantSuite suite;
  Rng rng(seed);

  // speed conservation and the reflection law along one long event chain;
  // the state keeps |v| = 1 by renormalizing after each reflection, so the
  // drift metric is the worst raw (pre-normalization) deviation per event
  {
    billiard::FlowState m = table.outgoing(billiard::sample_invariant_one(table, rng));
    long done = 0;
    while (done < n_events) {
      auto hit_opt = [&]() -> std::optional<billiard::Hit> {
        try {
          return billiard::first_hit(table, m, table.tol().t_cap);
        } catch (const Error&) {
          return std::nullopt;
        }
      }();
      if (!hit_opt) {
        m = table.outgoing(billiard::sample_invariant_one(table, rng));
        continue;
      }
      const auto& hit = *hit_opt;
      double cin = m.v.dot(hit.normal_in);
      Vec2 vraw = m.v - 2.0 * cin * hit.normal_in;
      suite.speed_drift = std::max(suite.speed_drift, std::abs(vraw.norm() - 1.0));
      suite.reflection_err =
          std::max(suite.reflection_err, std::abs(vraw.dot(hit.normal_in) + cin));
      m.q = table.wrap(hit.point);
      m.v = vraw.normalized();
      ++done;
    }
    suite.events = done;
  }

  // time reversibility: the involution conjugacy f^-1 = I o f o I checked at
  // every collision along an orbit (a single long round trip is destroyed by
  // Lyapunov growth in any floating-point simulation)
  {
    long done = 0;
    billiard::CollisionState x{};
    bool have = false;
    while (done < n_rev) {
      try {
        if (!have) {
          x = billiard::sample_invariant_one(table, rng);
          have = true;
        }
        billiard::CollisionState x1 = billiard::billiard_map(table, x);
        billiard::CollisionState back =
            billiard::reversed(billiard::billiard_map(table, billiard::reversed(x1)));
        suite.reversibility_err =
            std::max(suite.reversibility_err, table.phase_distance(back, x));
        x = x1;
        ++done;
      } catch (const Error&) {
        have = false;
      }
    }
  }

  // flight-time regularity on same-branch pairs
  {
    long made = 0;
    while (made < n_pairs) {
      billiard::CollisionState x = billiard::sample_invariant_one(table, rng);
      billiard::CollisionState xp = x;
      xp.r += rng.uniform(-3e-5, 3e-5);
      xp.phi += rng.uniform(-3e-5, 3e-5);
      if (std::abs(xp.phi) > 1.55 || xp.r < 0.0 ||
          xp.r > table.component_length(x.component))
        continue;
      try {
        double h1, h2;
        int c1, c2;
        std::array<int, 2> cell1{}, cell2{};
        auto f1 = billiard::billiard_step(table, x, &h1, &c1, &cell1);
        auto f2 = billiard::billiard_step(table, xp, &h2, &c2, &cell2);
        if (c1 != c2 || cell1 != cell2) continue;  // different continuity branch
        double d0 = table.phase_distance(x, xp);
        double d1 = table.phase_distance(f1, f2);
        double slack = std::abs(h1 - h2) - d0 - d1;
        suite.bilroof_max_slack = std::max(suite.bilroof_max_slack, slack);
        if (slack > 1e-9) ++suite.bilroof_violations;
        ++made;
      } catch (const Error&) {
        continue;
      }
    }
    suite.pairs = made;
  }

  // pushforward invariance of the section measure (two-sample chi-squared on
  // a (component, r, sin phi) histogram)
  {
    const int RB = 6, PB = 6;
    int ncomp = table.component_count();
    std::vector<double> ca(std::size_t(ncomp) * RB * PB, 0.0), cb(ca.size(), 0.0);
    auto bin_of = [&](const billiard::CollisionState& s) {
      int rb = std::min(RB - 1, int(s.r / table.component_length(s.component) * RB));
      int pb = std::min(PB - 1, int((std::sin(s.phi) + 1.0) * 0.5 * PB));
      return (std::size_t(s.component) * RB + rb) * PB + pb;
    };
    std::size_t made = 0;
    while (made < n_invariance) {
      auto a = billiard::sample_invariant_one(table, rng);
      auto b0 = billiard::sample_invariant_one(table, rng);
      try {
        auto b1 = billiard::billiard_map(table, b0);
        ca[bin_of(a)] += 1.0;
        cb[bin_of(b1)] += 1.0;
        ++made;
      } catch (const Error&) {
        continue;
      }
    }
    suite.invariance_pvalue = chi2_two_sample_pvalue(ca, cb);
  }
  return suite;
}

// ---------------------------------------------------------------------------
// Runner and manifest
// ---------------------------------------------------------------------------

RunResult run_config_text(const std::string& json_text, const RunOverrides& ov) {
  auto t_start = std::chrono::steady_clock::now();
  json cfg;
  try {
    cfg = json::parse(json_text);
  } catch (const std::exception& e) {
    throw Error(errc::config_invalid, std::string("config parse: ") + e.what());
  }
  if (!cfg.is_object() || !cfg.contains("experiment"))
    throw Error(errc::config_invalid, "missing key 'experiment'");

  Ctx c;
  c.cfg = cfg;
  c.result.experiment = cfg.at("experiment").get<std::string>();
  c.out_dir = !ov.out.empty() ? ov.out : cfg.value("out", "out");
  c.seed = (ov.seed >= 0) ? uint64_t(ov.seed) : uint64_t(cfg.value("seed", 1.0));
  if (ov.threads > 0) thread_count() = ov.threads;
  else if (cfg.contains("threads")) thread_count() = cfg.at("threads").get<int>();
  fs::create_directories(c.out_dir);
  c.result.out_dir = c.out_dir;

  // canonical hash: config with the effective seed folded in
  json canonical = cfg;
  canonical["seed"] = c.seed;
  canonical.erase("out");
  canonical.erase("threads");
  c.result.config_hash = fnv1a64(canonical.dump());

  const std::string kind = c.result.experiment;
  if (kind == "simulate") run_simulate(c);
  else if (kind == "tail") run_tail(c);
  else if (kind == "correlate") run_correlate(c);
  else if (kind == "variance") run_variance(c);
  else if (kind == "spectrum") run_spectrum(c);
  else if (kind == "defect") run_defect(c);
  else if (kind == "chi") run_chi(c);
  else if (kind == "tdf") run_tdf(c);
  else if (kind == "periods") run_periods(c);
  else if (kind == "laplace") run_laplace(c);
  else if (kind == "identity") run_identity(c);
  else if (kind == "rooftail") run_rooftail(c);
  else if (kind == "invariants") run_invariants(c);
  else throw Error(errc::config_invalid, "unknown experiment '" + kind + "'");

  // validate outputs against their schemas
  for (auto& [path, cols] : c.schemas) {
    bool text_first = !cols.empty() && (cols[0] == "word" || cols[0] == "metric");
    validate_csv(path, cols, text_first);
  }

  // manifest
  double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  json manifest;
  char hbuf[24];
  std::snprintf(hbuf, sizeof(hbuf), "%016llx", (unsigned long long)c.result.config_hash);
  manifest["config_hash"] = hbuf;
  manifest["code_version"] = code_version();
  manifest["experiment"] = kind;
  manifest["seed"] = c.seed;
  manifest["wall_time_s"] = wall;
  json outs = json::object();
  for (auto& p : c.result.outputs) outs[fs::path(p).filename().string()] = file_checksum(p);
  manifest["outputs"] = outs;
  std::string mpath = c.out_path("manifest.json");
  {
    std::ofstream mf(mpath, std::ios::binary);
    mf << manifest.dump(2) << "\n";
  }
  c.result.outputs.push_back(mpath);
  return c.result;
}

RunResult run_config_file(const std::string& path, const RunOverrides& ov) {
  std::ifstream in(path);
  if (!in) throw Error(errc::config_invalid, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_text(ss.str(), ov);
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

const std::vector<Preset>& presets() {
  static const std::vector<Preset> table = {
      {"lorentz-flight-tail",
       "free-flight survival slope -2 on an infinite-horizon table",
       R"({"experiment":"tail","seed":7,"out":"out/lorentz-flight-tail",
           "table":{"variant":"lorentz-torus","scatterers":[{"center":[0.5,0.5],"radius":0.25}]},
           "collisions":10000000,
           "t_grid":{"kind":"log","lo":0.5,"hi":300.0,"n":48},
           "window":[5.0,100.0]})"},
      {"beta2-decay",
       "correlation decay exponent -1 for the induced-map semiflow with tail exponent 2",
       R"({"experiment":"correlate","seed":11,"out":"out/beta2-decay",
           "backend":{"kind":"semiflow","system":{"name":"lsv_induced","alpha":0.5,"mass_target":1e-12,"j_cap":700000},"roof":"return_time"},
           "v":"flow_bump_sin","w":"flow_bump_sin",
           "t_grid":{"kind":"log","lo":1.0,"hi":260.0,"n":40},
           "budget":20000000,"window":[10.0,200.0]})"},
      {"spectral-identities",
       "leading eigenvalue lambda(0)=1 and lambda'(0)=-mean(roof) for the twisted operator",
       R"({"experiment":"spectrum","seed":3,"out":"out/spectral-identities",
           "system":{"name":"doubling"},"roof":"affine:1:0.5","resolution":64,
           "axis":"imag","s_grid":{"kind":"linear","lo":-0.19,"hi":0.19,"n":50}})"},
      {"coboundary-reduction",
       "chi vanishes for fiber-constant roofs; tilde phi is fiber-constant",
       R"({"experiment":"chi","seed":5,"out":"out/coboundary-reduction",
           "model":{"base":{"name":"doubling"}},"roof_yz":"yzaffine:4:0:0.25",
           "n_samples":20000,"tol":1e-11})"},
      {"variance-tlogt",
       "superdiffusive t*log t variance growth of displacement (infinite horizon)",
       R"({"experiment":"variance","seed":13,"out":"out/variance-tlogt",
           "backend":{"kind":"billiard","table":{"variant":"lorentz-torus","scatterers":[{"center":[0.5,0.5],"radius":0.25}]}},
           "v":"vel_x","t_grid":{"kind":"log","lo":10.0,"hi":1000.0,"n":25},
           "ensemble":1000,"fit_window_lo":50.0})"},
      {"variance-diffusive",
       "linear variance growth of displacement (finite horizon)",
       R"({"experiment":"variance","seed":13,"out":"out/variance-diffusive",
           "backend":{"kind":"billiard","table":{"variant":"lorentz-torus","scatterers":[{"center":[0.0,0.0],"radius":0.36},{"center":[0.5,0.5],"radius":0.34}]}},
           "v":"vel_x","t_grid":{"kind":"log","lo":10.0,"hi":1000.0,"n":25},
           "ensemble":1000,"fit_window_lo":50.0})"},
      {"resonance-nonmixing",
       "constant roof: exact twist eigenfunction at b = 2 pi k (defect zero)",
       R"({"experiment":"defect","seed":2,"out":"out/resonance-nonmixing",
           "system":{"name":"doubling"},"roof":"const:1",
           "b_grid":[6.283185307179586,12.566370614359172,18.84955592153876],
           "xi_grid":[1.0,2.0,3.0]})"},
      {"laplace-crosscheck",
       "Laplace-domain series matches the transformed time-domain correlation",
       R"({"experiment":"laplace","seed":17,"out":"out/laplace-crosscheck",
           "system":{"name":"doubling"},"roof":"affine:1:0.5",
           "v":"flow_phase_sin","w":"flow_phase_sin",
           "s_list":[0.5,1.0,2.0],"n_max":40,"budget":200000})"},
      {"variance-correlation-identity",
       "Var(t) equals 2 int (t-r) rho(r) dr within quadrature and Monte Carlo error",
       R"({"experiment":"identity","seed":19,"out":"out/variance-correlation-identity",
           "backend":{"kind":"semiflow","system":{"name":"doubling"},"roof":"affine:1:0.5"},
           "v":"base_sin",
           "rho_t_grid":{"kind":"linear","lo":0.0,"hi":14.0,"n":141},
           "var_t_grid":[2.0,4.0,6.0,8.0,10.0],
           "budget":2000000,"ensemble":40000})"},
      {"roof-tail-inequalities",
       "roof-tail moment inequality on a 3x3x5 (i,n,t) grid",
       R"({"experiment":"rooftail","seed":23,"out":"out/roof-tail-inequalities",
           "system":{"name":"lsv_induced","alpha":0.5},"roof":"return_time","eta":0.5,
           "i_list":[0,1,2],"n_list":[1,2,3],"t_list":[5.0,10.0,20.0,40.0,80.0],
           "budget":2000000})"},
      {"billiard-invariants",
       "speed conservation, reflection law, reversibility, flight-time regularity, "
       "section-measure invariance",
       R"({"experiment":"invariants","seed":29,"out":"out/billiard-invariants",
           "table":{"variant":"lorentz-torus","scatterers":[{"center":[0.5,0.5],"radius":0.25}]},
           "events":1000000,"rev_collisions":1000,"pairs":10000,"invariance_samples":200000})"},
  };
  return table;
}

const Preset& preset_by_name(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw Error(errc::config_invalid, "unknown preset '" + name + "'");
}

}  // namespace mixlab::exp
