#pragma once

// Closed-form channel and latency model for vehicle-twin migration.
//
// Everything here is a pure function of its arguments. Distances are in
// meters, rates in bits/s, sizes in bits, latencies in seconds.

#include <cstdint>

namespace vtmig::physics {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegToRad = kPi / 180.0;

/// A latitude/longitude point. Construct through from_degrees(), which
/// enforces lat in [-90, 90] and lon in [-180, 180].
struct GeoPosition {
  double lat_deg = 0.0;
  double lon_deg = 0.0;

  static GeoPosition from_degrees(double lat_deg, double lon_deg);

  friend bool operator==(const GeoPosition&, const GeoPosition&) = default;
};

struct ChannelParams {
  double increment_coefficient = 1.0;   // A
  double carrier_frequency_hz = 5.9e9;  // f
  double noise_power = 10.0;            // sigma^2, linear
  double light_speed_mps = 3.0e8;       // c
  double earth_radius_m = 6371393.0;    // R

  void validate() const;
};

struct LinkBudget {
  double bandwidth_hz = 0.0;
  double tx_power_w = 0.0;
  double distance_m = 0.0;

  void validate() const;
};

/// Great-circle ground distance using the haversine central angle.
double surface_distance(const GeoPosition& a, const GeoPosition& b,
                        const ChannelParams& params);

/// Distance from a ground point to a UAV hovering at altitude_m above `uav`.
double slant_distance(const GeoPosition& vehicle, const GeoPosition& uav,
                      double altitude_m, const ChannelParams& params);

/// Free-space style gain A * (c / (4 pi f D))^2. Throws for D <= 0.
double channel_gain(double distance_m, const ChannelParams& params);

/// B * log2(1 + p * gain / sigma^2).
double shannon_rate(const LinkBudget& link, double gain, double noise_power);

double transfer_latency(double size_bits, double rate_bps);

/// Compute latency with the overload fallback: when the server's load after
/// arrivals exceeds its cache limit, the task is computed on the satellite.
/// The boundary load == limit stays on the server.
double compute_latency(double load_after_arrivals_bits, double cache_limit_bits,
                       double task_bits, double cycles_per_bit,
                       double server_cpu_hz, double satellite_cpu_hz);

/// One end of an inter-server migration link.
struct LinkEndpoint {
  int server_id = 0;
  bool is_satellite = false;
  GeoPosition position{};
  double altitude_m = 0.0;
  double tx_power_w = 0.0;
  double migration_bw_hz = 0.0;
};

/// Distance between two terrestrial/aerial endpoints: ground great-circle
/// distance combined with the altitude difference.
double endpoint_distance(const LinkEndpoint& a, const LinkEndpoint& b,
                         const ChannelParams& params);

/// Latency of moving `migration_bits` of twin state from source to target.
/// Zero when source and target are the same server. Links touching the
/// satellite run at the fixed satellite rate.
double migration_latency(const LinkEndpoint& source, const LinkEndpoint& target,
                         double migration_bits, const ChannelParams& params,
                         double satellite_rate_bps);

struct LatencyBreakdown {
  double uplink_s = 0.0;
  double downlink_s = 0.0;
  double compute_s = 0.0;
  double migration_s = 0.0;

  double total() const { return uplink_s + downlink_s + compute_s + migration_s; }
};

}  // namespace vtmig::physics
