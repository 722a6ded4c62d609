#pragma once

#include <map>
#include <string>
#include <vector>

#include "mixlab/billiard.hpp"
#include "mixlab/common.hpp"
#include "mixlab/stats.hpp"

namespace mixlab::exp {

/// One run = one experiment config. Unknown keys are rejected with the
/// offending key path in the message.
struct RunResult {
  std::string experiment;
  std::string out_dir;
  uint64_t config_hash = 0;
  std::vector<std::string> outputs;  // file paths, manifest last
  std::string summary;               // human-readable result lines
};

struct RunOverrides {
  std::string out;      // --out
  long long seed = -1;  // --seed (>= 0 overrides)
  int threads = 0;      // --threads (> 0 overrides)
};

/// Execute the experiment described by the JSON text. Writes CSV outputs and
/// a manifest (config hash, code version, wall time, per-file checksums).
RunResult run_config_text(const std::string& json_text, const RunOverrides& ov);
RunResult run_config_file(const std::string& path, const RunOverrides& ov);

struct Preset {
  std::string name;
  std::string claim;        // the quantitative statement the preset probes
  std::string config_json;  // complete experiment config
};

/// Built-in experiment presets, one per acceptance check.
const std::vector<Preset>& presets();
const Preset& preset_by_name(const std::string& name);

/// Project version string recorded in manifests.
const char* code_version();

// ---------------------------------------------------------------------------
// Billiard invariant suite (shared by the CLI `invariants` experiment and the
// acceptance tests)
// ---------------------------------------------------------------------------

struct InvariantSuite {
  double speed_drift = 0.0;        // max | |v|-1 | without renormalization
  double reflection_err = 0.0;     // max |cos in - cos out| at collisions
  double reversibility_err = 0.0;  // round-trip distance over n_rev collisions
  long bilroof_violations = 0;     // pairs violating the flight-time bound
  double bilroof_max_slack = 0.0;  // max (|dh| - d(x,x') - d(fx,fx'))
  double invariance_pvalue = 0.0;  // two-sample pushforward test
  long events = 0;
  long pairs = 0;
};

InvariantSuite billiard_invariant_suite(const billiard::Table& table, uint64_t seed,
                                        long n_events, long n_rev, long n_pairs,
                                        std::size_t n_invariance);

}  // namespace mixlab::exp
