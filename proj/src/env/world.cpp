#include "vtmig/env/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "vtmig/error.hpp"

namespace vtmig::env {

double shaped_reward(double latency_s, double load_bits, bool failed, const RewardNormalizer& norm,
                     const RewardConfig& weights) {
  auto z = [&](double x, double mean, double sd) {
    return std::clamp((x - mean) / std::max(sd, 1e-6), -weights.clip, weights.clip);
  };
  return -(weights.w_latency * z(latency_s, norm.latency_mean, norm.latency_std) +
           weights.w_load * z(load_bits, norm.load_mean, norm.load_std) +
           weights.w_failure * (failed ? 1.0 : 0.0));
}

std::vector<double> Observation::flat() const {
  std::vector<double> out(distances_m);
  out.insert(out.end(), predicted_loads_bits.begin(), predicted_loads_bits.end());
  return out;
}

int ActionMask::count() const {
  return static_cast<int>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

World::World(SimConfig config, Scenario scenario, RewardNormalizer normalizer, FlowPredictions predictions)
    : config_(std::move(config)),
      scenario_(std::move(scenario)),
      normalizer_(normalizer),
      predictions_(std::move(predictions)) {
  config_.validate();
  scenario_.validate();
  if (!predictions_.empty()) {
    if (predictions_.size() != scenario_.servers.size()) {
      throw ValidationError("flow predictions must cover every server");
    }
    for (const auto& row : predictions_) {
      if (row.size() < static_cast<std::size_t>(scenario_.slots)) {
        throw ValidationError("flow predictions shorter than the episode");
      }
    }
  }
  gen_bits_ = std::llround(config_.gen_bits_per_slot());
  const double e_ref = config_.vehicle.cycles_per_bit;
  for (const auto& s : scenario_.servers) {
    drain_cap_.push_back(std::llround(s.cpu_hz * config_.scenario.slot_seconds / e_ref));
  }
  reset();
}

bool World::vehicle_active(int v) const {
  return !done_ && scenario_.vehicles.at(static_cast<std::size_t>(v)).active(slot_);
}

const physics::GeoPosition& World::server_position(int m) const {
  return server_pos_.at(static_cast<std::size_t>(m));
}

const physics::GeoPosition& World::vehicle_position(int v) const {
  const auto& veh = scenario_.vehicles.at(static_cast<std::size_t>(v));
  const int t = std::clamp(slot_, veh.start_slot, veh.end_slot());
  return veh.position(t);
}

double World::distance(int v, int m) const {
  const auto& s = scenario_.servers.at(static_cast<std::size_t>(m));
  if (s.is_satellite()) return std::numeric_limits<double>::infinity();
  const auto& pv = vehicle_position(v);
  if (s.kind == ServerKind::Uav) {
    return physics::slant_distance(pv, server_pos_[static_cast<std::size_t>(m)], s.altitude_m, config_.channel);
  }
  return physics::surface_distance(pv, server_pos_[static_cast<std::size_t>(m)], config_.channel);
}

void World::refresh_slot_state() {
  const auto& ab = config_.ablation;
  const int t = std::min(slot_, scenario_.slots - 1);
  for (std::size_t m = 0; m < scenario_.servers.size(); ++m) {
    const auto& s = scenario_.servers[m];
    bool on = s.scheduled(t);
    if (s.kind == ServerKind::Uav && !ab.uav) on = false;
    if (s.is_satellite() && !ab.satellite) on = false;
    active_[m] = on ? 1 : 0;
    if (s.kind == ServerKind::Uav) {
      server_pos_[m] = uav_position(s, scenario_.servers, t, config_.scenario.slot_seconds,
                                    config_.channel.earth_radius_m);
    }
  }
  for (std::size_t m = 0; m < scenario_.servers.size(); ++m) {
    const auto& s = scenario_.servers[m];
    if (!active_[m]) {
      predicted_[m] = 0.0;
    } else if (uses_forecast()) {
      const double flow = std::max(0.0, predictions_[m][static_cast<std::size_t>(t)]);
      predicted_[m] = static_cast<double>(cache_[m]) + flow * static_cast<double>(gen_bits_);
    } else {
      // persistence: the last observed background flow repeats
      const double flow = s.is_satellite() ? 0.0 : static_cast<double>(std::llround(scenario_.flow_at(m, t - 1)));
      predicted_[m] = static_cast<double>(cache_[m]) + flow * static_cast<double>(gen_bits_);
    }
  }
}

int World::nearest_server(int v, bool require_range) const {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < scenario_.servers.size(); ++m) {
    const auto& s = scenario_.servers[m];
    if (!active_[m] || s.is_satellite()) continue;
    const double d = distance(v, static_cast<int>(m));
    if (require_range && d > s.max_range_m) continue;
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(m);
    }
  }
  return best;
}

void World::reset() {
  const std::size_t M = scenario_.servers.size();
  const std::size_t V = scenario_.vehicles.size();
  slot_ = 0;
  done_ = false;
  cache_.assign(M, 0);
  active_.assign(M, 0);
  predicted_.assign(M, 0.0);
  server_pos_.clear();
  for (const auto& s : scenario_.servers) server_pos_.push_back(s.position);
  history_.clear();
  latency_sum_.assign(V, 0.0);
  failure_count_.assign(V, 0);
  active_slots_.assign(V, 0);
  reward_sum_ = 0.0;
  decisions_ = migrations_ = fallbacks_ = infeasible_selected_ = 0;
  arrivals_total_ = drained_total_ = 0;

  // seed caches with the background arrivals of the slot preceding the episode
  for (std::size_t m = 0; m < M; ++m) {
    if (scenario_.servers[m].is_satellite() || !scenario_.servers[m].scheduled(0)) continue;
    cache_[m] = std::llround(scenario_.flow_at(m, -1)) * gen_bits_;
    arrivals_total_ += cache_[m];
  }
  refresh_slot_state();
  // the cache seed is not visible to ablated servers
  for (std::size_t m = 0; m < M; ++m) {
    if (!active_[m] && cache_[m] != 0) {
      arrivals_total_ -= cache_[m];
      cache_[m] = 0;
    }
  }
  refresh_slot_state();

  attached_.assign(V, static_cast<int>(scenario_.satellite_index()));
  for (std::size_t v = 0; v < V; ++v) {
    int m = nearest_server(static_cast<int>(v), true);
    if (m < 0) {
      m = active_[scenario_.satellite_index()] ? static_cast<int>(scenario_.satellite_index())
                                                : nearest_server(static_cast<int>(v), false);
    }
    if (m >= 0) attached_[v] = m;
  }
}

Observation World::observe(int v) const {
  if (v < 0 || static_cast<std::size_t>(v) >= scenario_.vehicles.size()) {
    throw std::out_of_range("unknown vehicle " + std::to_string(v));
  }
  Observation o;
  for (std::size_t m = 0; m + 1 < scenario_.servers.size(); ++m) {
    o.distances_m.push_back(active_[m] ? distance(v, static_cast<int>(m)) : config_.env.distance_sentinel_m);
  }
  o.predicted_loads_bits = predicted_;
  return o;
}

ActionMask World::constraint_mask(int v) const {
  ActionMask mask;
  mask.bits.assign(scenario_.servers.size(), 0);
  for (std::size_t m = 0; m < scenario_.servers.size(); ++m) {
    if (!active_[m]) continue;
    const auto& s = scenario_.servers[m];
    if (s.is_satellite()) {
      mask.bits[m] = 1;
      continue;
    }
    const bool in_range = distance(v, static_cast<int>(m)) <= s.max_range_m;
    const bool fits = predicted_[m] + static_cast<double>(gen_bits_) <= static_cast<double>(s.cache_limit_bits);
    mask.bits[m] = in_range && fits ? 1 : 0;
  }
  return mask;
}

ActionMask World::feasible_mask(int v) const {
  if (config_.ablation.mask) return constraint_mask(v);
  ActionMask mask;
  mask.bits = active_;
  return mask;
}

physics::LinkEndpoint World::endpoint(int m) const {
  const auto& s = scenario_.servers.at(static_cast<std::size_t>(m));
  return {s.id, s.is_satellite(), server_pos_[static_cast<std::size_t>(m)], s.altitude_m, s.tx_power_w,
          s.migration_bw_hz};
}

StepResult World::step(const std::vector<int>& actions) {
  if (done_) throw std::logic_error("step() called on a finished episode");
  const std::size_t M = scenario_.servers.size();
  const std::size_t V = scenario_.vehicles.size();
  if (actions.size() != V) {
    throw std::invalid_argument("expected " + std::to_string(V) + " actions, got " + std::to_string(actions.size()));
  }
  const int t = slot_;
  const double sv = static_cast<double>(gen_bits_);

  StepResult result;
  result.vehicles.resize(V);
  std::vector<std::uint8_t> forced(V, 0);
  for (std::size_t v = 0; v < V; ++v) {
    if (!scenario_.vehicles[v].active(t)) continue;
    auto& out = result.vehicles[v];
    out.active = true;
    int a = actions[v];
    if (a == kKeepAttachment) {
      a = attached_[v];
      if (!active_[static_cast<std::size_t>(a)]) a = nearest_server(static_cast<int>(v), false);
      if (a < 0) a = static_cast<int>(scenario_.satellite_index());
      out.fallback = true;
      forced[v] = 1;
      ++fallbacks_;
    } else {
      if (a < 0 || static_cast<std::size_t>(a) >= M) {
        throw std::invalid_argument("vehicle " + std::to_string(v) + ": server id " + std::to_string(a) +
                                    " out of range");
      }
      if (!active_[static_cast<std::size_t>(a)]) {
        throw std::invalid_argument("vehicle " + std::to_string(v) + ": server " + std::to_string(a) +
                                    " is not active in slot " + std::to_string(t));
      }
      if (config_.ablation.mask && !constraint_mask(static_cast<int>(v)).bits[static_cast<std::size_t>(a)]) {
        ++infeasible_selected_;
      }
    }
    out.chosen = a;
  }

  // arrivals
  std::vector<std::int64_t> background(M, 0), vehicle_in(M, 0);
  for (std::size_t m = 0; m < M; ++m) {
    if (active_[m] && !scenario_.servers[m].is_satellite()) {
      background[m] = std::llround(scenario_.flow_at(m, t)) * gen_bits_;
    }
  }
  for (std::size_t v = 0; v < V; ++v) {
    if (result.vehicles[v].active) vehicle_in[static_cast<std::size_t>(result.vehicles[v].chosen)] += gen_bits_;
  }
  std::vector<std::int64_t> load(M);
  std::vector<std::int64_t> judged(M);  // load the overload test sees
  for (std::size_t m = 0; m < M; ++m) {
    load[m] = cache_[m] + background[m] + vehicle_in[m];
    judged[m] = config_.env.background_first ? load[m] : cache_[m] + vehicle_in[m];
    arrivals_total_ += background[m] + vehicle_in[m];
  }

  // per-vehicle latency, failure and reward
  SlotRecord rec;
  rec.slot = t;
  const double e = config_.vehicle.cycles_per_bit;
  const double sat_rate = config_.server.sat_rate_bps;
  const double sat_cpu = config_.server.sat_cpu_hz;
  for (std::size_t v = 0; v < V; ++v) {
    auto& out = result.vehicles[v];
    if (!out.active) continue;
    const int m = out.chosen;
    const auto& s = scenario_.servers[static_cast<std::size_t>(m)];
    const double judged_load = static_cast<double>(judged[static_cast<std::size_t>(m)]);
    double dist = 0.0;
    if (s.is_satellite()) {
      out.latency.uplink_s = physics::transfer_latency(sv, sat_rate);
      out.latency.downlink_s = physics::transfer_latency(sv, sat_rate);
    } else {
      dist = distance(static_cast<int>(v), m);
      const double d = std::max(dist, config_.env.min_distance_m);
      const double gain = physics::channel_gain(d, config_.channel);
      const double up = physics::shannon_rate({s.uplink_bw_hz, config_.vehicle.tx_power_w, d}, gain,
                                              config_.channel.noise_power);
      const double down = physics::shannon_rate({s.downlink_bw_hz, s.tx_power_w, d}, gain,
                                                config_.channel.noise_power);
      out.latency.uplink_s = physics::transfer_latency(sv, up);
      out.latency.downlink_s = physics::transfer_latency(sv, down);
    }
    out.latency.compute_s = physics::compute_latency(judged_load, static_cast<double>(s.cache_limit_bits), sv, e,
                                                     s.cpu_hz, sat_cpu);
    if (m != attached_[v]) {
      out.latency.migration_s = physics::migration_latency(endpoint(attached_[v]), endpoint(m),
                                                           config_.vehicle.migration_bits, config_.channel, sat_rate);
      out.migrated = true;
      ++migrations_;
      ++rec.migrations;
      attached_[v] = m;
    }
    out.failed = forced[v] || (!s.is_satellite() && dist > s.max_range_m) ||
                 judged_load > static_cast<double>(s.cache_limit_bits);
    out.load_bits = static_cast<double>(load[static_cast<std::size_t>(m)]);
    out.reward = shaped_reward(out.latency.total(), out.load_bits, out.failed, normalizer_, config_.reward);

    latency_sum_[v] += out.latency.total();
    failure_count_[v] += out.failed ? 1 : 0;
    active_slots_[v] += 1;
    reward_sum_ += out.reward;
    ++decisions_;
    rec.latency_s += out.latency.total();
    rec.failures += out.failed ? 1 : 0;
  }

  // workload variance over active servers
  double mean = 0.0;
  int n_active = 0;
  for (std::size_t m = 0; m < M; ++m) {
    if (active_[m]) {
      mean += static_cast<double>(load[m]);
      ++n_active;
    }
  }
  if (n_active > 0) {
    mean /= n_active;
    double ss = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      if (active_[m]) ss += (static_cast<double>(load[m]) - mean) * (static_cast<double>(load[m]) - mean);
    }
    rec.variance = ss / n_active;
  }
  rec.loads = load;
  rec.active = active_;
  history_.push_back(std::move(rec));

  // drain
  for (std::size_t m = 0; m < M; ++m) {
    const std::int64_t drained = std::min(load[m], drain_cap_[m]);
    drained_total_ += drained;
    cache_[m] = load[m] - drained;
  }

  ++slot_;
  int last_end = 0;
  for (const auto& veh : scenario_.vehicles) last_end = std::max(last_end, veh.end_slot());
  done_ = slot_ > last_end || slot_ >= scenario_.slots;
  if (!done_) refresh_slot_state();
  result.done = done_;
  return result;
}

EpisodeMetrics World::metrics() const {
  EpisodeMetrics em;
  for (std::size_t v = 0; v < scenario_.vehicles.size(); ++v) {
    em.total_latency_s += latency_sum_[v];
    const double q = active_slots_[v] > 0 ? 100.0 * failure_count_[v] / active_slots_[v] : 0.0;
    em.packet_loss_pct.push_back(q);
    em.total_packet_loss_pct += q;
    em.failures += failure_count_[v];
  }
  for (const auto& r : history_) em.total_load_variance += r.variance;
  em.migrations = migrations_;
  em.fallbacks = fallbacks_;
  em.infeasible_selected = infeasible_selected_;
  em.decisions = decisions_;
  em.mean_reward = decisions_ > 0 ? reward_sum_ / decisions_ : 0.0;
  em.slots = static_cast<int>(history_.size());
  return em;
}

Conservation World::conservation() const {
  Conservation c;
  c.arrivals = arrivals_total_;
  c.drained = drained_total_;
  for (auto b : cache_) c.residual += b;
  return c;
}

std::uint64_t World::state_digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(slot_));
  for (auto b : cache_) mix(static_cast<std::uint64_t>(b));
  for (auto a : attached_) mix(static_cast<std::uint64_t>(a));
  for (auto a : active_) mix(a);
  for (const auto& p : server_pos_) {
    std::uint64_t bits;
    std::memcpy(&bits, &p.lat_deg, 8);
    mix(bits);
    std::memcpy(&bits, &p.lon_deg, 8);
    mix(bits);
  }
  return h;
}

}  // namespace vtmig::env
