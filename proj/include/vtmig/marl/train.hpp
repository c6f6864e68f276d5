#pragma once

// DM-MAPPO rollouts, updates, evaluation and policy checkpoints.
//
// Training cycles through a fixed pool of scenario seeds derived from the run
// seed; evaluation uses a separate seed stream that never overlaps it.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vtmig/env/policies.hpp"
#include "vtmig/marl/mappo.hpp"

namespace vtmig::marl {

struct EpisodeLog {
  int episode = 0;
  double mean_reward = 0.0;
  double O_T = 0.0;
  double O_V = 0.0;
  double O_D = 0.0;
  int migrations = 0;
  int infeasible_selected = 0;

  static EpisodeLog from(int episode, const env::EpisodeMetrics& m);
  /// One JSON object, no trailing newline.
  std::string json_line() const;
};

struct Rollout {
  std::vector<Transition> transitions;
  env::EpisodeMetrics metrics;
};

struct UpdateStats {
  double actor_objective = 0.0;
  double critic_loss = 0.0;
  std::size_t samples = 0;
};

/// Training scenario seeds for a run seed.
std::vector<std::uint64_t> training_seeds(std::uint64_t seed, int count);
/// Held-out evaluation seeds; the same for every run.
std::vector<std::uint64_t> eval_seeds(int count);

/// Plays one episode from reset. Sample mode draws from the masked policy,
/// Argmax mode is the deterministic evaluation policy.
Rollout collect(const ActorCritic& model, env::World& world, ActionMode mode, std::mt19937_64& rng);

/// Fills Transition::target for one episode's transitions: discounted
/// returns per agent, or r + gamma * V(o') with V the policy-weighted Q when
/// bootstrapping.
void assign_targets(const ActorCritic& model, std::vector<Transition>& episode);

/// Critic regression, then advantages from the fitted critic, then clipped
/// surrogate ascent. pi_old is the behaviour policy stored in the batch.
UpdateStats update(ActorCritic& model, std::vector<Transition>& batch, std::mt19937_64& rng);

struct TrainSetup {
  env::SimConfig config;
  env::RewardNormalizer normalizer;
  const forecast::ForecastBundle* forecaster = nullptr;
  std::uint64_t seed = 1;
};

/// Runs config.marl.episodes training episodes. `on_episode` sees each
/// episode's metrics under the sampling policy.
void train(ActorCritic& model, const TrainSetup& setup, const std::function<void(const EpisodeLog&)>& on_episode = {});

/// Deterministic (argmax) episode.
env::EpisodeMetrics evaluate(const ActorCritic& model, env::World& world);

/// Argmax policy as a baseline-compatible callable. The model must outlive it.
env::Policy as_policy(const ActorCritic& model);

struct PolicyCheckpoint {
  env::SimConfig config;
  ActorCritic model;
};

void save_policy(const std::filesystem::path& path, const ActorCritic& model, const env::SimConfig& config);
/// Throws ValidationError on a malformed or mismatched file.
PolicyCheckpoint load_policy(const std::filesystem::path& path);

}  // namespace vtmig::marl
