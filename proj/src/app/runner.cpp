#include "vtmig/app/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "vtmig/error.hpp"
#include "vtmig/seed.hpp"

namespace vtmig::app {

std::string default_out_dir() {
  const char* v = std::getenv(kOutDirEnv);
  return v != nullptr && *v != '\0' ? std::string(v) : std::string("vtmig_out");
}

env::SimConfig assemble_config(const ConfigSource& source) {
  env::SimConfig c = source.file.empty() ? env::SimConfig::from_preset(source.preset) : env::load_config(source.file);
  for (const auto& kv : source.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    env::set_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (source.no_mask) c.ablation.mask = false;
  if (source.no_prediction) c.ablation.prediction = false;
  if (source.no_uav) c.ablation.uav = false;
  if (source.no_satellite) c.ablation.satellite = false;
  c.validate();
  return c;
}

LoadedPolicy resolve_policy(const std::string& spec, const env::SimConfig& config) {
  LoadedPolicy out;
  out.name = spec;
  if (spec == "greedy") {
    out.policy = env::greedy_action;
  } else if (spec == "random") {
    out.policy = env::random_masked_action;
  } else if (spec == "random-unmasked") {
    out.policy = env::random_unmasked_action;
  } else if (spec == "nearest") {
    out.policy = [](const env::World& w, int v, const env::ActionMask& m, std::mt19937_64&) {
      return env::nearest_feasible(w, v, m);
    };
  } else if (std::filesystem::exists(spec)) {
    auto ckpt = marl::load_policy(spec);
    const auto servers = static_cast<std::size_t>(config.scenario.rsus + config.scenario.uavs + 1);
    if (config.scenario.layout_file.empty() && ckpt.model.n_servers() != servers) {
      throw ValidationError(spec + ": policy was trained for " + std::to_string(ckpt.model.n_servers()) +
                            " servers, the config has " + std::to_string(servers));
    }
    auto model = std::make_shared<const marl::ActorCritic>(std::move(ckpt.model));
    out.model = model;
    out.policy = marl::as_policy(*model);
  } else {
    throw ValidationError("unknown policy '" + spec +
                          "' (expected greedy, random, random-unmasked, nearest or a checkpoint path)");
  }
  return out;
}

RunOutcome run_once(const env::SimConfig& config, const LoadedPolicy& policy, std::uint64_t seed,
                    const forecast::ForecastBundle* forecaster) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto norm = env::calibrate_normalizer(config);
  env::World world = env::make_world(config, seed, norm, forecaster);
  if (policy.model) {
    if (policy.model->n_servers() != world.n_servers() ||
        static_cast<std::size_t>(policy.model->n_agents()) != world.n_vehicles()) {
      throw ValidationError("policy checkpoint is for " + std::to_string(policy.model->n_servers()) + " servers and " +
                            std::to_string(policy.model->n_agents()) + " vehicles; the scenario has " +
                            std::to_string(world.n_servers()) + " and " + std::to_string(world.n_vehicles()));
    }
  }
  const auto metrics = env::run_episode(world, policy.policy, mix_seed(seed, 3));
  RunInfo info;
  info.policy = policy.name;
  info.seed = seed;
  info.prediction_source = world.uses_forecast() ? "forecast" : "persistence";
  info.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Json report = run_report(world, metrics, info);
  return RunOutcome{std::move(world), metrics, std::move(report)};
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("sweep value '" + item + "' is not a number");
    }
    if (!std::isfinite(v) || v <= 0.0) throw ValidationError("sweep values must be positive, got " + item);
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("sweep needs at least one value");
  return out;
}

}  // namespace vtmig::app
