#include "vtmig/physics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "vtmig/error.hpp"

namespace vtmig::physics {

GeoPosition GeoPosition::from_degrees(double lat_deg, double lon_deg) {
  if (!std::isfinite(lat_deg) || !std::isfinite(lon_deg)) {
    throw ValidationError("GeoPosition: non-finite coordinate");
  }
  if (lat_deg < -90.0 || lat_deg > 90.0) {
    throw ValidationError("GeoPosition: latitude " + std::to_string(lat_deg) +
                          " outside [-90, 90]");
  }
  if (lon_deg < -180.0 || lon_deg > 180.0) {
    throw ValidationError("GeoPosition: longitude " + std::to_string(lon_deg) +
                          " outside [-180, 180]");
  }
  return GeoPosition{lat_deg, lon_deg};
}

void ChannelParams::validate() const {
  if (!(increment_coefficient > 0.0) || !(carrier_frequency_hz > 0.0) ||
      !(noise_power > 0.0) || !(light_speed_mps > 0.0) || !(earth_radius_m > 0.0)) {
    throw ValidationError("ChannelParams: all fields must be strictly positive");
  }
}

void LinkBudget::validate() const {
  if (!(bandwidth_hz > 0.0)) throw ValidationError("LinkBudget: bandwidth must be > 0");
  if (!(tx_power_w >= 0.0)) throw ValidationError("LinkBudget: tx power must be >= 0");
  if (!(distance_m > 0.0)) throw ValidationError("LinkBudget: distance must be > 0");
}

double surface_distance(const GeoPosition& a, const GeoPosition& b,
                        const ChannelParams& params) {
  const double phi_a = a.lat_deg * kDegToRad;
  const double phi_b = b.lat_deg * kDegToRad;
  const double dphi = (a.lat_deg - b.lat_deg) * kDegToRad;
  const double dlambda = (a.lon_deg - b.lon_deg) * kDegToRad;
  const double s_phi = std::sin(dphi / 2.0);
  const double s_lambda = std::sin(dlambda / 2.0);
  double hav = s_phi * s_phi + std::cos(phi_a) * std::cos(phi_b) * s_lambda * s_lambda;
  // round-off can push hav marginally past 1 for antipodal points
  if (hav > 1.0) hav = 1.0;
  const double central_angle = 2.0 * std::asin(std::sqrt(hav));
  return params.earth_radius_m * central_angle;
}

double slant_distance(const GeoPosition& vehicle, const GeoPosition& uav,
                      double altitude_m, const ChannelParams& params) {
  if (!(altitude_m >= 0.0)) {
    throw ValidationError("slant_distance: altitude must be >= 0");
  }
  const double ground = surface_distance(vehicle, uav, params);
  return std::hypot(ground, altitude_m);
}

double channel_gain(double distance_m, const ChannelParams& params) {
  if (!(distance_m > 0.0)) {
    throw std::domain_error("channel_gain: distance must be > 0");
  }
  const double ratio = params.light_speed_mps /
                       (4.0 * kPi * params.carrier_frequency_hz * distance_m);
  return params.increment_coefficient * ratio * ratio;
}

double shannon_rate(const LinkBudget& link, double gain, double noise_power) {
  if (!(noise_power > 0.0)) {
    throw std::domain_error("shannon_rate: noise power must be > 0");
  }
  const double snr = link.tx_power_w * gain / noise_power;
  return link.bandwidth_hz * std::log2(1.0 + snr);
}

double transfer_latency(double size_bits, double rate_bps) {
  if (!(rate_bps > 0.0)) {
    throw std::domain_error("transfer_latency: rate must be > 0");
  }
  if (size_bits < 0.0) {
    throw std::domain_error("transfer_latency: size must be >= 0");
  }
  return size_bits / rate_bps;
}

double compute_latency(double load_after_arrivals_bits, double cache_limit_bits,
                       double task_bits, double cycles_per_bit,
                       double server_cpu_hz, double satellite_cpu_hz) {
  if (!(server_cpu_hz > 0.0) || !(satellite_cpu_hz > 0.0)) {
    throw std::domain_error("compute_latency: CPU frequency must be > 0");
  }
  if (load_after_arrivals_bits <= cache_limit_bits) {
    return cycles_per_bit * load_after_arrivals_bits / server_cpu_hz;
  }
  return cycles_per_bit * task_bits / satellite_cpu_hz;
}

double endpoint_distance(const LinkEndpoint& a, const LinkEndpoint& b,
                         const ChannelParams& params) {
  const double ground = surface_distance(a.position, b.position, params);
  return std::hypot(ground, a.altitude_m - b.altitude_m);
}

double migration_latency(const LinkEndpoint& source, const LinkEndpoint& target,
                         double migration_bits, const ChannelParams& params,
                         double satellite_rate_bps) {
  if (source.server_id == target.server_id) return 0.0;
  if (source.is_satellite || target.is_satellite) {
    return transfer_latency(migration_bits, satellite_rate_bps);
  }
  const double distance = endpoint_distance(source, target, params);
  const LinkBudget link{source.migration_bw_hz, source.tx_power_w, distance};
  const double rate = shannon_rate(link, channel_gain(distance, params), params.noise_power);
  return transfer_latency(migration_bits, rate);
}

}  // namespace vtmig::physics
