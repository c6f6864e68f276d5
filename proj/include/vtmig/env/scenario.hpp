#pragma once

// Static description of one episode: server layout, vehicle trajectories and
// the background flow driving server loads. Scenarios are either generated
// from a SimConfig and a seed or assembled from CSV files.

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "vtmig/env/config.hpp"
#include "vtmig/physics.hpp"

namespace vtmig::env {

enum class ServerKind { Rsu, Uav, Satellite };

std::string_view to_string(ServerKind kind);
ServerKind server_kind_from_string(std::string_view name);

struct EdgeServer {
  int id = 0;
  ServerKind kind = ServerKind::Rsu;
  physics::GeoPosition position{};  // patrol start for UAVs; unused for the satellite
  double altitude_m = 0.0;
  double cpu_hz = 0.0;
  std::int64_t cache_limit_bits = 0;
  double max_range_m = 0.0;  // infinite for the satellite
  double tx_power_w = 0.0;
  double uplink_bw_hz = 0.0;
  double downlink_bw_hz = 0.0;
  double migration_bw_hz = 0.0;
  int enter_slot = 0;
  int exit_slot = -1;  // -1: stays until the end
  std::vector<int> patrol_route;  // RSU ids visited in a loop (UAV only)
  double patrol_speed_mps = 0.0;
  double patrol_offset_m = 0.0;  // distance already flown along the loop at slot 0

  bool is_satellite() const { return kind == ServerKind::Satellite; }
  bool scheduled(int slot) const {
    return slot >= enter_slot && (exit_slot < 0 || slot < exit_slot);
  }
};

struct VehicleSpec {
  int id = 0;
  std::vector<physics::GeoPosition> trajectory;  // one point per slot from start_slot
  int start_slot = 0;

  int end_slot() const { return start_slot + static_cast<int>(trajectory.size()) - 1; }
  bool active(int slot) const { return slot >= start_slot && slot <= end_slot(); }
  const physics::GeoPosition& position(int slot) const {
    return trajectory.at(static_cast<std::size_t>(slot - start_slot));
  }
};

struct Scenario {
  std::vector<EdgeServer> servers;  // ids 0..M-1, the satellite last
  std::vector<VehicleSpec> vehicles;
  /// Background flow per server (vehicles/slot), `history` prefix slots
  /// followed by one value per episode slot. The satellite row is zeros.
  std::vector<std::vector<double>> flow;
  int history = 0;
  int slots = 0;

  std::size_t n_servers() const { return servers.size(); }
  std::size_t satellite_index() const { return servers.size() - 1; }
  double flow_at(std::size_t server, int slot) const {
    return flow[server][static_cast<std::size_t>(slot + history)];
  }
  void validate() const;
};

/// A row of the layout CSV `server_id,kind,lat,lon,altitude_m,enter_slot,exit_slot`.
struct LayoutRow {
  int server_id = 0;
  ServerKind kind = ServerKind::Rsu;
  double lat = 0.0;
  double lon = 0.0;
  double altitude_m = 0.0;
  int enter_slot = 0;
  int exit_slot = -1;
};

std::vector<LayoutRow> load_layout(const std::filesystem::path& path);
void write_layout(const std::filesystem::path& path, const std::vector<LayoutRow>& rows);
std::vector<LayoutRow> layout_rows(const Scenario& scenario);

/// Point `east_m`/`north_m` meters from `origin` (local flat-earth offset).
physics::GeoPosition offset_position(const physics::GeoPosition& origin, double east_m,
                                     double north_m, double earth_radius_m);

/// Servers for the configured grid (or layout file), with UAV patrols.
std::vector<EdgeServer> build_servers(const SimConfig& config);

/// Per-server flow shape: mean weight and phase. Fixed by the layout seed so
/// that forecasters trained on history transfer to every episode.
struct FlowShape {
  double weight = 0.0;
  double phase = 0.0;
};
std::vector<FlowShape> flow_shapes(const SimConfig& config, const std::vector<EdgeServer>& servers);

/// Synthetic flow for every server over `n_slots`, noise drawn from `seed`.
std::vector<std::vector<double>> synth_server_flow(const SimConfig& config,
                                                   const std::vector<EdgeServer>& servers,
                                                   int n_slots, std::uint64_t seed);

/// Flow history for forecaster training: non-satellite servers only.
std::vector<std::vector<double>> forecaster_history(const SimConfig& config, std::uint64_t seed);

/// Full scenario for an episode seed. Files named in the config override the
/// corresponding generated parts.
Scenario make_scenario(const SimConfig& config, std::uint64_t seed);

/// UAV position at a slot along its patrol loop.
physics::GeoPosition uav_position(const EdgeServer& uav, const std::vector<EdgeServer>& servers,
                                  int slot, double slot_seconds, double earth_radius_m);

}  // namespace vtmig::env
