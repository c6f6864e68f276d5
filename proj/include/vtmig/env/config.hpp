#pragma once

// Simulation configuration. Every physical quantity is stored in SI units
// (bits, Hz, W, m, s); megabyte-valued keys are converted at parse time with
// 1 MB = 8e6 bits.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "vtmig/forecast/forecast.hpp"
#include "vtmig/marl/config.hpp"
#include "vtmig/physics.hpp"

namespace vtmig::env {

inline constexpr double kBitsPerMegabyte = 8e6;

struct ScenarioConfig {
  int rsus = 8;
  int uavs = 2;
  int vehicles = 3;
  int slots = 200;
  double slot_seconds = 30.0;
  double center_lat = 39.90;
  double center_lon = 116.40;
  double rsu_spacing_m = 1800.0;
  double region_margin_m = 900.0;  // free mobility: vehicles may roam this far past the RSU grid
  double vehicle_speed_mps = 10.0;
  std::string mobility = "roads";  // free: random waypoint in the region; roads: RSU street grid
  std::uint64_t layout_seed = 7;  // fixes per-server flow shapes and UAV phases
  std::string layout_file;
  std::string trajectory_file;
  std::string flow_file;
};

struct FlowConfig {
  int period = 48;
  double offset = 2.0;      // mean background vehicles per slot at a unit-weight server
  double amplitude = 1.6;
  double noise_std = 0.4;
  double weight_min = 0.3;  // per-server load weights are drawn from [min, max]
  double weight_max = 1.7;
  double uav_scale = 0.0;   // UAV background relative to an RSU; 0 leaves UAVs as spare capacity
  int history_slots = 2000;  // synthetic history used to train the forecaster
};

struct ServerConfig {
  double cpu_hz = 32e9;
  double sat_cpu_hz = 80e9;
  double cache_limit_bits = 300 * kBitsPerMegabyte;
  double sat_cache_limit_bits = 1e15;
  double rsu_range_m = 1200.0;
  double uav_range_m = 1500.0;
  double uav_altitude_m = 50.0;
  double uav_speed_mps = 3.7;
  double tx_power_w = 10.0;
  double uplink_bw_hz = 300e6;
  double downlink_bw_hz = 300e6;
  double migration_bw_hz = 300e6;
  double sat_rate_bps = 1e8;
};

struct VehicleConfig {
  double tx_power_w = 1000.0;
  double gen_mb_per_s = 2.0;
  double migration_bits = 60 * kBitsPerMegabyte;
  double cycles_per_bit = 1000.0;
};

struct RewardConfig {
  double w_latency = 2.0;
  double w_load = 1.0;
  double w_failure = 1.0;
  double clip = 5.0;
  int calibration_episodes = 4;
};

struct EnvOptions {
  double distance_sentinel_m = 1e7;
  double min_distance_m = 1.0;
  bool background_first = true;
};

struct Ablations {
  bool mask = true;
  bool prediction = true;
  bool uav = true;
  bool satellite = true;
};

struct SimConfig {
  std::string preset = "desk";
  ScenarioConfig scenario;
  FlowConfig flow;
  physics::ChannelParams channel;
  ServerConfig server;
  VehicleConfig vehicle;
  RewardConfig reward;
  EnvOptions env;
  Ablations ablation;
  forecast::ForecastConfig forecast;
  marl::MarlConfig marl;

  /// Bits generated by one vehicle per slot (S_v).
  double gen_bits_per_slot() const {
    return vehicle.gen_mb_per_s * kBitsPerMegabyte * scenario.slot_seconds;
  }

  /// Throws ValidationError on any out-of-range value.
  void validate() const;

  /// Table I defaults.
  static SimConfig paper();
  /// Small scenario for desk-scale experiments and the acceptance suite.
  static SimConfig desk();
  static SimConfig from_preset(std::string_view name);
};

/// Sets one dotted key from its textual value. Unknown keys and malformed
/// values throw ValidationError.
void set_value(SimConfig& config, std::string_view key, std::string_view value);

/// Canonical key=value listing in a fixed order; the basis of the digest.
std::vector<std::pair<std::string, std::string>> to_key_values(const SimConfig& config);
std::uint64_t config_digest(const SimConfig& config);
std::vector<std::string> known_keys();

/// Parses `key = value` lines. `#` starts a comment; `[section]` headers
/// prefix following keys with `section.`. A `preset` key, if present, is
/// applied first regardless of its position.
SimConfig parse_config(std::string_view text, const std::string& origin = "<config>");
SimConfig load_config(const std::filesystem::path& path);

}  // namespace vtmig::env
