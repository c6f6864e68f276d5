#include "vtmig/env/policies.hpp"

#include <cmath>
#include <algorithm>
#include <limits>
#include <span>
#include <string>

#include "vtmig/error.hpp"
#include "vtmig/seed.hpp"

namespace vtmig::env {
namespace {

int uniform_pick(const std::vector<int>& options, std::mt19937_64& rng) {
  if (options.empty()) return kKeepAttachment;
  std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
  return options[pick(rng)];
}

std::vector<int> set_bits(const ActionMask& mask) {
  std::vector<int> out;
  for (std::size_t m = 0; m < mask.bits.size(); ++m) {
    if (mask.bits[m]) out.push_back(static_cast<int>(m));
  }
  return out;
}

std::vector<int> active_servers(const World& world) {
  std::vector<int> out;
  for (std::size_t m = 0; m < world.n_servers(); ++m) {
    if (world.server_active(static_cast<int>(m))) out.push_back(static_cast<int>(m));
  }
  return out;
}

}  // namespace

int nearest_feasible(const World& world, int vehicle, const ActionMask& mask) {
  int best = kKeepAttachment;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < mask.bits.size(); ++m) {
    if (!mask.bits[m]) continue;
    const double d = world.distance(vehicle, static_cast<int>(m));
    // strict comparison keeps the lowest id on ties; the satellite (infinite
    // distance) only wins when nothing else is feasible
    if (best == kKeepAttachment || d < best_d) {
      best = static_cast<int>(m);
      best_d = d;
    }
  }
  return best;
}

int greedy_action(const World& world, int vehicle, const ActionMask& mask, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool explore = u(rng) < kGreedyExploreProb;
  if (!mask.any()) return kKeepAttachment;
  if (explore) return uniform_pick(active_servers(world), rng);
  return nearest_feasible(world, vehicle, mask);
}

int random_masked_action(const World&, int, const ActionMask& mask, std::mt19937_64& rng) {
  return uniform_pick(set_bits(mask), rng);
}

int random_unmasked_action(const World& world, int, const ActionMask&, std::mt19937_64& rng) {
  return uniform_pick(active_servers(world), rng);
}

EpisodeMetrics run_episode(World& world, const Policy& policy, std::uint64_t policy_seed,
                           const std::function<void(const StepResult&)>& observer) {
  world.reset();
  std::mt19937_64 rng(policy_seed);
  std::vector<int> actions(world.n_vehicles(), kKeepAttachment);
  while (!world.done()) {
    for (std::size_t v = 0; v < world.n_vehicles(); ++v) {
      const int vi = static_cast<int>(v);
      actions[v] = world.vehicle_active(vi) ? policy(world, vi, world.feasible_mask(vi), rng) : kKeepAttachment;
    }
    const auto res = world.step(actions);
    if (observer) observer(res);
  }
  return world.metrics();
}

EpisodeMetrics run_episode(World& world, const Policy& policy, std::uint64_t policy_seed) {
  return run_episode(world, policy, policy_seed, {});
}

RewardNormalizer calibrate_normalizer(const SimConfig& config) {
  SimConfig c = config;
  c.ablation = Ablations{};
  double lat_sum = 0.0, lat_sq = 0.0, load_sum = 0.0, load_sq = 0.0;
  std::size_t n = 0;
  for (int i = 0; i < c.reward.calibration_episodes; ++i) {
    const std::uint64_t seed = mix_seed(0xCA1B4A7EULL, static_cast<std::uint64_t>(i));
    World world(c, make_scenario(c, seed));
    run_episode(world, random_masked_action, mix_seed(seed, 9), [&](const StepResult& r) {
      for (const auto& o : r.vehicles) {
        if (!o.active) continue;
        const double lat = o.latency.total();
        lat_sum += lat;
        lat_sq += lat * lat;
        load_sum += o.load_bits;
        load_sq += o.load_bits * o.load_bits;
        ++n;
      }
    });
  }
  RewardNormalizer norm;
  if (n == 0) return norm;
  const double dn = static_cast<double>(n);
  norm.latency_mean = lat_sum / dn;
  norm.latency_std = std::max(1e-6, std::sqrt(std::max(0.0, lat_sq / dn - norm.latency_mean * norm.latency_mean)));
  norm.load_mean = load_sum / dn;
  norm.load_std = std::max(1e-6, std::sqrt(std::max(0.0, load_sq / dn - norm.load_mean * norm.load_mean)));
  return norm;
}

FlowPredictions predict_flows(const forecast::ForecastBundle& bundle, const Scenario& scenario) {
  const int T = bundle.config.window;
  if (scenario.history < T) {
    throw ValidationError("scenario history (" + std::to_string(scenario.history) +
                          " slots) is shorter than the forecaster window (" + std::to_string(T) + ")");
  }
  std::size_t terrestrial = 0;
  for (const auto& s : scenario.servers) terrestrial += s.is_satellite() ? 0 : 1;
  if (bundle.n_servers() < terrestrial) {
    throw ValidationError("forecaster covers " + std::to_string(bundle.n_servers()) + " servers, scenario has " +
                          std::to_string(terrestrial));
  }
  FlowPredictions out(scenario.servers.size(), std::vector<double>(static_cast<std::size_t>(scenario.slots), 0.0));
  for (std::size_t m = 0; m < scenario.servers.size(); ++m) {
    if (scenario.servers[m].is_satellite()) continue;
    const auto& row = scenario.flow[m];
    for (int t = 0; t < scenario.slots; ++t) {
      const auto begin = static_cast<std::size_t>(t + scenario.history - T);
      std::span<const double> window(row.data() + begin, static_cast<std::size_t>(T));
      out[m][static_cast<std::size_t>(t)] = std::max(0.0, bundle.predict(m, window));
    }
  }
  return out;
}

World make_world(const SimConfig& config, std::uint64_t seed, const RewardNormalizer& normalizer,
                 const forecast::ForecastBundle* forecaster) {
  Scenario sc = make_scenario(config, seed);
  FlowPredictions pred;
  if (forecaster != nullptr && config.ablation.prediction) pred = predict_flows(*forecaster, sc);
  return World(config, std::move(sc), normalizer, std::move(pred));
}

}  // namespace vtmig::env
