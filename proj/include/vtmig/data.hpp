#pragma once

// Trajectory and traffic-flow ingestion plus supervised-window preparation.
//
// Canonical CSV schemas (UTF-8, comma separated, header required):
//   trajectories: vehicle_id,slot_index,lat,lon
//   flow:         server_id,slot_index,flow_count

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "vtmig/physics.hpp"

namespace vtmig::data {

struct TrajectoryRecord {
  int vehicle_id = 0;
  int slot_index = 0;
  double lat_deg = 0.0;
  double lon_deg = 0.0;
};

struct FlowRecord {
  int server_id = 0;
  int slot_index = 0;
  double flow_count = 0.0;
};

/// Per-vehicle positions indexed by slot, keyed by vehicle id.
using TrajectorySet = std::map<int, std::vector<physics::GeoPosition>>;
/// Dense per-server flow series, keyed by server id.
using FlowSet = std::map<int, std::vector<double>>;

TrajectorySet load_trajectories(const std::filesystem::path& path);
void write_trajectories(const std::filesystem::path& path, const TrajectorySet& set);

FlowSet load_flow(const std::filesystem::path& path);
void write_flow(const std::filesystem::path& path, const FlowSet& set);

/// Repeats each coarse bin `repeat` times (e.g. 5-minute bins onto 30 s slots).
std::vector<double> expand_bins(std::span<const double> bins, int repeat);

struct SynthFlowParams {
  int n_servers = 8;
  int n_slots = 2000;
  int period = 48;
  double offset = 60.0;
  double amplitude = 40.0;
  double noise_std = 0.0;
  std::uint64_t seed = 1;
};

/// Sinusoid + offset + Gaussian noise per server, clipped at 0 and rounded to
/// integer counts. Each server gets its own random phase.
std::vector<std::vector<double>> synth_flow(const SynthFlowParams& params);

/// Noise standard deviation giving the requested signal-to-noise ratio (dB)
/// for a sinusoid of the given amplitude.
double noise_std_for_snr_db(double amplitude, double snr_db);

struct FlowWindow {
  std::vector<double> inputs;
  double target = 0.0;
  int server_id = 0;
  int target_index = 0;  // index of the target inside the source series
};

/// All len - T windows of T consecutive inputs paired with the next value.
std::vector<FlowWindow> make_windows(std::span<const double> series, int window,
                                     int server_id = 0);

struct ZScore {
  std::vector<double> values;
  double mean = 0.0;
  double std = 1.0;  // floored population std
};

inline constexpr double kStdFloor = 1e-6;

ZScore zscore(std::span<const double> series);

}  // namespace vtmig::data
