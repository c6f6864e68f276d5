#pragma once

// Shared plumbing for the command-line verbs: config assembly, policy
// resolution and single-episode runs.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vtmig/app/report.hpp"
#include "vtmig/env/policies.hpp"
#include "vtmig/marl/train.hpp"

namespace vtmig::app {

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "VTMIG_OUT";

/// $VTMIG_OUT when set and non-empty, else "vtmig_out".
std::string default_out_dir();

struct ConfigSource {
  std::string file;                 // --config
  std::string preset = "desk";      // used when no file is given
  std::vector<std::string> sets;    // key=value overrides, applied last
  bool no_mask = false;
  bool no_prediction = false;
  bool no_uav = false;
  bool no_satellite = false;
};

/// Loads, overrides and validates. Throws ValidationError.
env::SimConfig assemble_config(const ConfigSource& source);

/// greedy | random | random-unmasked | nearest | path to a policy checkpoint.
struct LoadedPolicy {
  std::string name;
  std::shared_ptr<const marl::ActorCritic> model;  // checkpoints only
  env::Policy policy;
};

LoadedPolicy resolve_policy(const std::string& spec, const env::SimConfig& config);

struct RunOutcome {
  env::World world;
  env::EpisodeMetrics metrics;
  Json report;
};

/// One evaluated episode. Scenario seed `seed`, policy stream mix_seed(seed, 3).
RunOutcome run_once(const env::SimConfig& config, const LoadedPolicy& policy, std::uint64_t seed,
                    const forecast::ForecastBundle* forecaster);

/// Parses "a,b,c" into positive finite numbers. Throws ValidationError.
std::vector<double> parse_values(const std::string& text);

}  // namespace vtmig::app
