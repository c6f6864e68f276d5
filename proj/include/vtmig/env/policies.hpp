#pragma once

// Baseline policies, the episode driver, reward calibration and the bridge
// from a trained forecaster to per-slot flow predictions.

#include <cstdint>
#include <functional>
#include <random>

#include "vtmig/env/world.hpp"
#include "vtmig/forecast/forecast.hpp"

namespace vtmig::env {

/// Chooses a server for `vehicle` given its mask. Returns kKeepAttachment
/// when the mask is empty.
using Policy = std::function<int(const World& world, int vehicle, const ActionMask& mask, std::mt19937_64& rng)>;

inline constexpr double kGreedyExploreProb = 0.1;

/// Nearest feasible server (the satellite counts as farthest, ties to the
/// lowest id) with probability 0.9, otherwise a uniform active server.
int greedy_action(const World& world, int vehicle, const ActionMask& mask, std::mt19937_64& rng);

/// The greedy branch alone, without the random exploration draw.
int nearest_feasible(const World& world, int vehicle, const ActionMask& mask);

/// Uniform over set mask bits.
int random_masked_action(const World& world, int vehicle, const ActionMask& mask, std::mt19937_64& rng);

/// Uniform over active servers, ignoring feasibility.
int random_unmasked_action(const World& world, int vehicle, const ActionMask& mask, std::mt19937_64& rng);

/// Runs the world to completion from reset. Every active vehicle gets its
/// feasible_mask() each slot.
EpisodeMetrics run_episode(World& world, const Policy& policy, std::uint64_t policy_seed);
/// Same, calling `observer` after every step.
EpisodeMetrics run_episode(World& world, const Policy& policy, std::uint64_t policy_seed,
                           const std::function<void(const StepResult&)>& observer);

/// Reward statistics from masked-random rollouts on fixed seeds; a pure
/// function of the config, shared by every policy evaluated under it.
RewardNormalizer calibrate_normalizer(const SimConfig& config);

/// One-step flow forecasts for every episode slot of a scenario.
FlowPredictions predict_flows(const forecast::ForecastBundle& bundle, const Scenario& scenario);

/// Builds a ready world for an episode seed.
World make_world(const SimConfig& config, std::uint64_t seed, const RewardNormalizer& normalizer,
                 const forecast::ForecastBundle* forecaster);

}  // namespace vtmig::env
