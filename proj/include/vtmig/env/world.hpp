#pragma once

// The discrete-time migration world. One World owns one episode: call
// reset(), then alternate observe()/feasible_mask() per active vehicle with
// one step() carrying every vehicle's chosen server.
//
// Cache loads are integer bits so that the per-slot bookkeeping
// cache' = cache + arrivals - drained balances exactly.

#include <cstdint>
#include <vector>

#include "vtmig/env/config.hpp"
#include "vtmig/env/scenario.hpp"
#include "vtmig/physics.hpp"

namespace vtmig::env {

/// Passed instead of a server id when a vehicle's mask is empty: the vehicle
/// keeps its current attachment and the slot counts as a failure.
inline constexpr int kKeepAttachment = -1;

/// Frozen z-score statistics for the shaped reward.
struct RewardNormalizer {
  double latency_mean = 0.0;
  double latency_std = 1.0;
  double load_mean = 0.0;
  double load_std = 1.0;
};

/// -(w_T * z(latency) + w_s * z(load) + w_d * failure), z clipped to [-clip, clip].
double shaped_reward(double latency_s, double load_bits, bool failed, const RewardNormalizer& norm,
                     const RewardConfig& weights);

struct Observation {
  std::vector<double> distances_m;           // M-1 non-satellite servers
  std::vector<double> predicted_loads_bits;  // M servers, shared by all vehicles in a slot

  std::vector<double> flat() const;
};

struct ActionMask {
  std::vector<std::uint8_t> bits;

  int count() const;
  bool any() const { return count() > 0; }
};

struct VehicleOutcome {
  bool active = false;
  int chosen = -1;
  physics::LatencyBreakdown latency;
  double load_bits = 0.0;  // chosen server load after arrivals
  bool failed = false;
  bool migrated = false;
  bool fallback = false;
  double reward = 0.0;
};

struct StepResult {
  std::vector<VehicleOutcome> vehicles;
  bool done = false;
};

struct SlotRecord {
  int slot = 0;
  std::vector<std::int64_t> loads;  // S'_m after arrivals, every server
  std::vector<std::uint8_t> active;
  double variance = 0.0;  // population variance over active servers
  double latency_s = 0.0;
  int failures = 0;
  int migrations = 0;
};

struct EpisodeMetrics {
  double total_latency_s = 0.0;        // O_T
  double total_load_variance = 0.0;    // O_V
  double total_packet_loss_pct = 0.0;  // O_D
  std::vector<double> packet_loss_pct;  // q_v per vehicle
  int migrations = 0;
  int failures = 0;
  int fallbacks = 0;
  int infeasible_selected = 0;
  double mean_reward = 0.0;
  int decisions = 0;
  int slots = 0;
};

struct Conservation {
  std::int64_t arrivals = 0;  // includes the initial cache seed
  std::int64_t drained = 0;
  std::int64_t residual = 0;

  std::int64_t imbalance() const { return arrivals - drained - residual; }
};

/// Predicted background flow per server for each episode slot.
using FlowPredictions = std::vector<std::vector<double>>;

class World {
 public:
  World(SimConfig config, Scenario scenario, RewardNormalizer normalizer = {},
        FlowPredictions predictions = {});

  void reset();

  int slot() const { return slot_; }
  bool done() const { return done_; }
  std::size_t n_servers() const { return scenario_.servers.size(); }
  std::size_t n_vehicles() const { return scenario_.vehicles.size(); }
  const SimConfig& config() const { return config_; }
  const Scenario& scenario() const { return scenario_; }
  const RewardNormalizer& normalizer() const { return normalizer_; }
  /// True when masks and observations use forecast flows.
  bool uses_forecast() const { return config_.ablation.prediction && !predictions_.empty(); }

  bool vehicle_active(int v) const;
  bool server_active(int m) const { return active_.at(static_cast<std::size_t>(m)) != 0; }
  int attached(int v) const { return attached_.at(static_cast<std::size_t>(v)); }
  const physics::GeoPosition& server_position(int m) const;
  const physics::GeoPosition& vehicle_position(int v) const;
  std::int64_t cache_bits(int m) const { return cache_.at(static_cast<std::size_t>(m)); }
  std::int64_t gen_bits() const { return gen_bits_; }

  /// Vehicle-to-server distance (slant for UAVs); infinity for the satellite.
  double distance(int v, int m) const;

  /// Expected load of every server this slot before controlled vehicles
  /// arrive. Inactive servers report 0.
  const std::vector<double>& predicted_loads() const { return predicted_; }

  Observation observe(int v) const;
  /// Feasibility mask; with masking ablated, only server activity is masked.
  ActionMask feasible_mask(int v) const;
  /// Feasibility mask regardless of the masking ablation.
  ActionMask constraint_mask(int v) const;

  StepResult step(const std::vector<int>& actions);

  EpisodeMetrics metrics() const;
  const std::vector<SlotRecord>& history() const { return history_; }
  Conservation conservation() const;
  std::uint64_t state_digest() const;

 private:
  void refresh_slot_state();
  physics::LinkEndpoint endpoint(int m) const;
  int nearest_server(int v, bool require_range) const;

  SimConfig config_;
  Scenario scenario_;
  RewardNormalizer normalizer_;
  FlowPredictions predictions_;
  std::int64_t gen_bits_ = 0;

  int slot_ = 0;
  bool done_ = false;
  std::vector<std::int64_t> cache_;
  std::vector<std::int64_t> drain_cap_;
  std::vector<std::uint8_t> active_;
  std::vector<physics::GeoPosition> server_pos_;
  std::vector<double> predicted_;
  std::vector<int> attached_;
  std::vector<SlotRecord> history_;

  // per-vehicle accumulators
  std::vector<double> latency_sum_;
  std::vector<int> failure_count_;
  std::vector<int> active_slots_;
  double reward_sum_ = 0.0;
  int decisions_ = 0;
  int migrations_ = 0;
  int fallbacks_ = 0;
  int infeasible_selected_ = 0;

  std::int64_t arrivals_total_ = 0;
  std::int64_t drained_total_ = 0;
};

}  // namespace vtmig::env
