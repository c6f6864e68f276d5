#include "vtmig/marl/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "json.hpp"

#include "vtmig/error.hpp"
#include "vtmig/seed.hpp"

namespace vtmig::marl {

EpisodeLog EpisodeLog::from(int episode, const env::EpisodeMetrics& m) {
  EpisodeLog e;
  e.episode = episode;
  e.mean_reward = m.mean_reward;
  e.O_T = m.total_latency_s;
  e.O_V = m.total_load_variance;
  e.O_D = m.total_packet_loss_pct;
  e.migrations = m.migrations;
  e.infeasible_selected = m.infeasible_selected;
  return e;
}

std::string EpisodeLog::json_line() const {
  nlohmann::ordered_json j;
  j["episode"] = episode;
  j["mean_reward"] = mean_reward;
  j["O_T"] = O_T;
  j["O_V"] = O_V;
  j["O_D"] = O_D;
  j["migrations"] = migrations;
  j["infeasible_selected"] = infeasible_selected;
  return j.dump();
}

std::vector<std::uint64_t> training_seeds(std::uint64_t seed, int count) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < count; ++i) out.push_back(mix_seed(mix_seed(seed, 0x7EA1), static_cast<std::uint64_t>(i)));
  return out;
}

std::vector<std::uint64_t> eval_seeds(int count) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < count; ++i) out.push_back(mix_seed(0xE7A15EEDULL, static_cast<std::uint64_t>(i)));
  return out;
}

Rollout collect(const ActorCritic& model, env::World& world, ActionMode mode, std::mt19937_64& rng) {
  if (world.n_vehicles() != static_cast<std::size_t>(model.n_agents()) || world.n_servers() != model.n_servers()) {
    throw ValidationError("policy dimensions (" + std::to_string(model.n_agents()) + " agents, " +
                          std::to_string(model.n_servers()) + " servers) do not match the scenario (" +
                          std::to_string(world.n_vehicles()) + " vehicles, " + std::to_string(world.n_servers()) +
                          " servers)");
  }
  Rollout out;
  world.reset();
  const std::size_t nv = world.n_vehicles();
  std::vector<int> actions(nv);
  std::vector<long> pending(nv);
  std::vector<long> last(nv, -1);
  while (!world.done()) {
    for (std::size_t v = 0; v < nv; ++v) {
      const int vi = static_cast<int>(v);
      actions[v] = env::kKeepAttachment;
      pending[v] = -1;
      if (!world.vehicle_active(vi)) continue;
      auto mask = world.feasible_mask(vi);
      if (!mask.any()) continue;
      const auto obs = world.observe(vi).flat();
      Transition tr;
      tr.agent = vi;
      tr.features = model.features(obs);
      const Vec probs = model.actor_probs(vi, tr.features).col(0);
      tr.action = masked_action(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())),
                                mask.bits, mode, rng);
      tr.probs_old = masked_probs(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())),
                                  mask.bits);
      tr.mask = std::move(mask.bits);
      actions[v] = tr.action;
      pending[v] = static_cast<long>(out.transitions.size());
      last[v] = pending[v];
      out.transitions.push_back(std::move(tr));
    }
    const auto res = world.step(actions);
    for (std::size_t v = 0; v < nv; ++v) {
      if (pending[v] >= 0) out.transitions[static_cast<std::size_t>(pending[v])].reward = res.vehicles[v].reward;
    }
  }
  for (const long i : last) {
    if (i >= 0) out.transitions[static_cast<std::size_t>(i)].done = true;
  }
  out.metrics = world.metrics();
  return out;
}

void assign_targets(const ActorCritic& model, std::vector<Transition>& episode) {
  const double gamma = model.config().gamma;
  for (int agent = 0; agent < model.n_agents(); ++agent) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < episode.size(); ++i) {
      if (episode[i].agent == agent) idx.push_back(i);
    }
    if (idx.empty()) continue;
    if (!model.config().bootstrap) {
      std::vector<double> r;
      for (const auto i : idx) r.push_back(episode[i].reward);
      const auto g = mc_returns(r, gamma);
      for (std::size_t k = 0; k < idx.size(); ++k) episode[idx[k]].target = g[k];
      continue;
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Transition& tr = episode[idx[k]];
      tr.target = tr.reward;
      if (tr.done || k + 1 == idx.size()) continue;
      const Transition& next = episode[idx[k + 1]];
      const Vec q = model.critic_values(agent, next.features).col(0);
      tr.target += gamma * next.probs_old.dot(q);
    }
  }
}

namespace {

nn::AdamOptions adam(double lr, double max_grad_norm) {
  nn::AdamOptions o;
  o.lr = lr;
  o.max_grad_norm = max_grad_norm;
  return o;
}

template <typename Fn>
void minibatches(std::vector<const Transition*>& items, int size, std::mt19937_64& rng, Fn&& fn) {
  std::shuffle(items.begin(), items.end(), rng);
  const auto step = static_cast<std::size_t>(size);
  for (std::size_t b = 0; b < items.size(); b += step) {
    const auto n = std::min(step, items.size() - b);
    fn(std::span<const Transition* const>(items.data() + b, n));
  }
}

}  // namespace

UpdateStats update(ActorCritic& model, std::vector<Transition>& batch, std::mt19937_64& rng) {
  UpdateStats stats;
  stats.samples = batch.size();
  if (batch.empty()) return stats;
  const MarlConfig& cfg = model.config();
  const auto critic_opt = adam(cfg.critic_lr, cfg.max_grad_norm);
  const auto actor_opt = adam(cfg.actor_lr, cfg.max_grad_norm);
  for (std::size_t s = 0; s < model.all_params().size(); ++s) {
    std::vector<Transition*> group;
    int agent = -1;
    for (auto& tr : batch) {
      if (model.slot(tr.agent) == s) {
        group.push_back(&tr);
        agent = tr.agent;
      }
    }
    if (group.empty()) continue;
    AgentParams& p = model.all_params()[s];
    std::vector<const Transition*> items(group.begin(), group.end());

    std::vector<double> grad;
    for (int e = 0; e < cfg.epochs; ++e) {
      minibatches(items, cfg.minibatch, rng, [&](std::span<const Transition* const> mb) {
        grad.assign(p.critic.size(), 0.0);
        model.critic_loss(p.critic, mb, &grad);
        nn::adam_step(p.critic, grad, p.critic_opt, critic_opt);
      });
    }
    stats.critic_loss += model.critic_loss(p.critic, items, nullptr) * static_cast<double>(items.size());

    Mat x(static_cast<Eigen::Index>(model.obs_dim()), static_cast<Eigen::Index>(group.size()));
    for (std::size_t i = 0; i < group.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = group[i]->features;
    const Mat q = model.critic_values(agent, x);
    double mean = 0.0;
    for (std::size_t i = 0; i < group.size(); ++i) {
      const Vec qi = q.col(static_cast<Eigen::Index>(i));
      Transition& tr = *group[i];
      tr.advantage = advantage(std::span<const double>(qi.data(), static_cast<std::size_t>(qi.size())), tr.action,
                               tr.mask,
                               std::span<const double>(tr.probs_old.data(), static_cast<std::size_t>(tr.probs_old.size())));
      mean += tr.advantage;
    }
    if (cfg.normalize_advantage) {
      const double n = static_cast<double>(group.size());
      mean /= n;
      double var = 0.0;
      for (const auto* tr : group) var += (tr->advantage - mean) * (tr->advantage - mean);
      const double sd = std::max(1e-6, std::sqrt(var / n));
      for (auto* tr : group) tr->advantage = (tr->advantage - mean) / sd;
    }

    for (int e = 0; e < cfg.epochs; ++e) {
      minibatches(items, cfg.minibatch, rng, [&](std::span<const Transition* const> mb) {
        grad.assign(p.actor.size(), 0.0);
        model.actor_objective(p.actor, mb, &grad);
        nn::adam_step(p.actor, grad, p.actor_opt, actor_opt);
      });
    }
    stats.actor_objective += model.actor_objective(p.actor, items, nullptr) * static_cast<double>(items.size());
  }
  stats.critic_loss /= static_cast<double>(batch.size());
  stats.actor_objective /= static_cast<double>(batch.size());
  return stats;
}

void train(ActorCritic& model, const TrainSetup& setup, const std::function<void(const EpisodeLog&)>& on_episode) {
  const MarlConfig& cfg = setup.config.marl;
  const auto seeds = training_seeds(setup.seed, cfg.train_scenarios);
  // worlds are built once per scenario seed so forecasts are computed once
  std::vector<std::optional<env::World>> worlds(seeds.size());
  std::mt19937_64 rng(mix_seed(setup.seed, 0x5A3D));
  std::vector<Transition> batch;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const auto k = static_cast<std::size_t>(ep) % seeds.size();
    if (!worlds[k]) worlds[k].emplace(env::make_world(setup.config, seeds[k], setup.normalizer, setup.forecaster));
    auto rollout = collect(model, *worlds[k], ActionMode::Sample, rng);
    assign_targets(model, rollout.transitions);
    batch.insert(batch.end(), std::make_move_iterator(rollout.transitions.begin()),
                 std::make_move_iterator(rollout.transitions.end()));
    if (on_episode) on_episode(EpisodeLog::from(ep, rollout.metrics));
    if ((ep + 1) % cfg.episodes_per_batch == 0 || ep + 1 == cfg.episodes) {
      update(model, batch, rng);
      batch.clear();
    }
  }
}

env::EpisodeMetrics evaluate(const ActorCritic& model, env::World& world) {
  std::mt19937_64 rng(0);  // unused by argmax
  return collect(model, world, ActionMode::Argmax, rng).metrics;
}

env::Policy as_policy(const ActorCritic& model) {
  return [&model](const env::World& world, int vehicle, const env::ActionMask& mask, std::mt19937_64& rng) {
    if (!mask.any()) return env::kKeepAttachment;
    const Vec probs = model.actor_forward(vehicle, world.observe(vehicle).flat());
    return masked_action(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())), mask.bits,
                         ActionMode::Argmax, rng);
  };
}

void save_policy(const std::filesystem::path& path, const ActorCritic& model, const env::SimConfig& config) {
  nlohmann::ordered_json j;
  j["format"] = "vtmig-policy";
  j["version"] = 1;
  nlohmann::ordered_json kv;
  for (const auto& [k, v] : env::to_key_values(config)) kv[k] = v;
  j["config"] = kv;
  j["n_servers"] = model.n_servers();
  j["n_agents"] = model.n_agents();
  j["scale"] = {{"distance_m", model.scale().distance_m},
                {"load_bits", model.scale().load_bits},
                {"cap", model.scale().cap}};
  j["params"] = nlohmann::ordered_json::array();
  for (const auto& p : model.all_params()) j["params"].push_back({{"actor", p.actor}, {"critic", p.critic}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump() << '\n';
}

PolicyCheckpoint load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open policy checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "vtmig-policy") throw ValidationError(path.string() + ": not a policy checkpoint");
  try {
    const auto& kv = j.at("config");
    env::SimConfig config = env::SimConfig::from_preset(kv.at("preset").get<std::string>());
    for (const auto& [k, v] : kv.items()) {
      if (k != "preset") env::set_value(config, k, v.get<std::string>());
    }
    FeatureScale scale;
    scale.distance_m = j.at("scale").at("distance_m").get<double>();
    scale.load_bits = j.at("scale").at("load_bits").get<double>();
    scale.cap = j.at("scale").at("cap").get<double>();
    ActorCritic model(j.at("n_servers").get<std::size_t>(), j.at("n_agents").get<int>(), config.marl, scale, 0);
    const auto& params = j.at("params");
    if (params.size() != model.all_params().size()) {
      throw ValidationError(path.string() + ": parameter set count does not match marl.share_params");
    }
    for (std::size_t s = 0; s < params.size(); ++s) {
      auto actor = params[s].at("actor").get<std::vector<double>>();
      auto critic = params[s].at("critic").get<std::vector<double>>();
      auto& p = model.all_params()[s];
      if (actor.size() != p.actor.size() || critic.size() != p.critic.size()) {
        throw ValidationError(path.string() + ": parameter count does not match the network shape");
      }
      p.actor = std::move(actor);
      p.critic = std::move(critic);
    }
    return PolicyCheckpoint{std::move(config), std::move(model)};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace vtmig::marl
