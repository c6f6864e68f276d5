#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "support/oracles.hpp"
#include "vtmig/env/policies.hpp"
#include "vtmig/error.hpp"
#include "vtmig/marl/mappo.hpp"
#include "vtmig/marl/train.hpp"
#include "vtmig/seed.hpp"

using namespace vtmig;
using namespace vtmig::marl;
using vtmig::testing::numeric_gradient;
using vtmig::testing::relative_error;

namespace {

std::span<const double> sp(const Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

MarlConfig small_marl() {
  MarlConfig c;
  c.hidden = 6;
  c.layers = 2;
  return c;
}

// Three transitions over M = 4 servers with mixed masks and stale pi_old.
std::vector<Transition> synthetic_buffer(const ActorCritic& model, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.6, 1.4);
  const std::vector<Mask> masks = {{1, 1, 1, 1}, {0, 1, 1, 0}, {1, 0, 1, 1}};
  const int actions[] = {3, 1, 2};
  const double advs[] = {0.7, -1.3, 0.4};
  std::vector<Transition> out;
  for (int i = 0; i < 3; ++i) {
    Transition tr;
    tr.agent = i % model.n_agents();
    tr.features = Vec(static_cast<Eigen::Index>(model.obs_dim()));
    for (auto& x : tr.features) x = n(rng);
    tr.mask = masks[static_cast<std::size_t>(i)];
    tr.action = actions[i];
    const Vec p = model.actor_probs(tr.agent, tr.features).col(0);
    Vec stale = p;
    for (auto& x : stale) x *= u(rng);
    tr.probs_old = masked_probs(sp(stale), tr.mask);
    tr.advantage = advs[i];
    tr.target = n(rng);
    out.push_back(std::move(tr));
  }
  return out;
}

std::vector<const Transition*> ptrs(const std::vector<Transition>& b) {
  std::vector<const Transition*> out;
  for (const auto& t : b) out.push_back(&t);
  return out;
}

env::SimConfig short_desk(int slots, int episodes) {
  auto c = env::SimConfig::desk();
  c.scenario.slots = slots;
  c.marl.episodes = episodes;
  c.marl.train_scenarios = 4;
  c.reward.calibration_episodes = 2;
  return c;
}

std::size_t n_servers(const env::SimConfig& c) {
  return static_cast<std::size_t>(c.scenario.rsus + c.scenario.uavs + 1);
}

}  // namespace

TEST_CASE("mc_returns: discounted backward recursion") {
  const std::vector<double> r = {1.0, 0.0, 1.0};
  CHECK(mc_returns(r, 0.0) == r);
  CHECK(mc_returns(std::vector<double>{1, 1, 1}, 1.0) == std::vector<double>{3, 2, 1});
  const auto g = mc_returns(r, 0.5);
  CHECK(g[0] == doctest::Approx(1.25));
  CHECK(g[1] == doctest::Approx(0.5));
  CHECK(g[2] == doctest::Approx(1.0));
}

TEST_CASE("masked_action: mask forcing, argmax ties and sampling frequencies") {
  std::mt19937_64 rng(3);
  CHECK(masked_action(std::vector<double>{0.6, 0.4}, Mask{0, 1}, ActionMode::Argmax, rng) == 1);
  CHECK(masked_action(std::vector<double>{0.6, 0.4}, Mask{0, 1}, ActionMode::Sample, rng) == 1);
  CHECK(masked_action(std::vector<double>{0.2, 0.5, 0.3}, Mask{1, 1, 1}, ActionMode::Argmax, rng) == 1);
  CHECK(masked_action(std::vector<double>{0.4, 0.2, 0.4}, Mask{1, 1, 1}, ActionMode::Argmax, rng) == 0);
  CHECK_THROWS_AS(masked_action(std::vector<double>{0.5, 0.5}, Mask{0, 0}, ActionMode::Sample, rng),
                  std::invalid_argument);

  const int draws = 10000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < draws; ++i) {
    ++counts[masked_action(std::vector<double>{0.5, 0.25, 0.25}, Mask{1, 1, 0}, ActionMode::Sample, rng)];
  }
  const double p = 2.0 / 3.0;
  const double sigma = std::sqrt(p * (1 - p) / draws);
  CHECK(std::abs(counts[0] / double(draws) - p) < 3 * sigma);
  CHECK(std::abs(counts[1] / double(draws) - (1 - p)) < 3 * sigma);
  CHECK(counts[2] == 0);
}

TEST_CASE("advantage: baseline over the masked old policy") {
  CHECK(advantage(std::vector<double>{2, 0}, 0, Mask{1, 1}, std::vector<double>{0.5, 0.5}) == doctest::Approx(1.0));
  CHECK(advantage(std::vector<double>{2, 0}, 1, Mask{1, 1}, std::vector<double>{0.5, 0.5}) == doctest::Approx(-1.0));
  CHECK(advantage(std::vector<double>{5, 3, 9}, 1, Mask{0, 1, 0}, std::vector<double>{0.3, 0.3, 0.4}) == 0.0);
  // masked entries of pi_old are renormalized away
  CHECK(advantage(std::vector<double>{2, 0, 100}, 0, Mask{1, 1, 0}, std::vector<double>{0.25, 0.25, 0.5}) ==
        doctest::Approx(1.0));
  CHECK_THROWS_AS(advantage(std::vector<double>{1, 2}, 0, Mask{0, 1}, std::vector<double>{0.5, 0.5}),
                  std::invalid_argument);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> q(5), shifted(5), probs(5, 0.2);
    const double c = n(rng) * 10;
    for (std::size_t i = 0; i < 5; ++i) {
      q[i] = n(rng);
      shifted[i] = q[i] + c;
    }
    const Mask m = {1, 0, 1, 1, 0};
    for (int a : {0, 2, 3}) CHECK(std::abs(advantage(q, a, m, probs) - advantage(shifted, a, m, probs)) <= 1e-9);
  }
}

TEST_CASE("clipped_surrogate: clip pair") {
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  CHECK(clipped_surrogate(1.4, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(clipped_surrogate(1.0, 0.3, 0.2) == doctest::Approx(0.3));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> r(0.0, 3.0), a(-2.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    const double ratio = r(rng), adv = a(rng);
    const double f = clipped_surrogate(ratio, adv, 0.2);
    const double lo = std::min({ratio * adv, 0.8 * adv, 1.2 * adv});
    const double hi = std::max({ratio * adv, 0.8 * adv, 1.2 * adv});
    CHECK(f >= lo);
    CHECK(f <= hi);
    if (adv > 0) CHECK(f <= 1.2 * adv + 1e-12);
  }
}

TEST_CASE("actor and critic forward: shapes, normalization, determinism") {
  auto cfg = env::SimConfig::desk();
  ActorCritic model(n_servers(cfg), 3, cfg.marl, FeatureScale::from(cfg), 4);
  const std::size_t M = model.n_servers();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(0.0, 5000.0), l(0.0, 4e9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> obs(2 * M - 1);
    for (std::size_t i = 0; i < obs.size(); ++i) obs[i] = i + 1 < M ? d(rng) : l(rng);
    const Vec p = model.actor_forward(0, obs);
    REQUIRE(p.size() == static_cast<Eigen::Index>(M));
    CHECK(std::abs(p.sum() - 1.0) < 1e-6);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(model.actor_forward(0, obs) == p);
    const Vec q = model.critic_forward(0, obs);
    CHECK(q.size() == static_cast<Eigen::Index>(M));
    CHECK(q.allFinite());
    CHECK(model.critic_forward(0, obs) == q);
  }
  CHECK_THROWS_AS(model.actor_forward(0, std::vector<double>(2 * M)), std::invalid_argument);
  CHECK_THROWS_AS(model.critic_forward(0, std::vector<double>(M)), std::invalid_argument);
  // small head initialization starts near uniform
  const Vec p0 = model.actor_forward(0, std::vector<double>(2 * M - 1, 100.0));
  CHECK(p0.maxCoeff() - p0.minCoeff() < 0.05);
}

TEST_CASE("feature scaling caps large distances and loads") {
  FeatureScale s;
  const std::vector<double> obs = {600.0, 1e7, 150.0 * env::kBitsPerMegabyte, 0.0, 1e15};
  const Vec f = s.apply(obs, 3);
  CHECK(f[0] == doctest::Approx(0.5));
  CHECK(f[1] == s.cap);
  CHECK(f[2] == doctest::Approx(0.5));
  CHECK(f[3] == 0.0);
  CHECK(f[4] == s.cap);
  CHECK_THROWS_AS(s.apply(obs, 4), std::invalid_argument);
}

TEST_CASE("actor objective: theta == theta_old gives mean advantage") {
  ActorCritic model(4, 2, small_marl(), FeatureScale{}, 2);
  std::mt19937_64 rng(1);
  auto buf = synthetic_buffer(model, rng);
  for (auto& tr : buf) tr.probs_old = masked_probs(sp(model.actor_probs(tr.agent, tr.features).col(0)), tr.mask);
  const auto b = ptrs(buf);
  const double mean_a = (buf[0].advantage + buf[1].advantage + buf[2].advantage) / 3.0;
  CHECK(model.actor_objective(model.params(0).actor, b, nullptr) == doctest::Approx(mean_a).epsilon(1e-12));

  buf[0].probs_old[buf[0].action] = 0.0;
  CHECK_THROWS_AS(model.actor_objective(model.params(0).actor, b, nullptr), std::logic_error);
}

TEST_CASE("critic loss: zero at the targets, offset squared, descent step") {
  ActorCritic model(4, 1, small_marl(), FeatureScale{}, 8);
  std::mt19937_64 rng(2);
  auto buf = synthetic_buffer(model, rng);
  const auto& w = model.params(0).critic;
  for (auto& tr : buf) tr.target = model.critic_values(0, tr.features)(tr.action, 0);
  const auto b = ptrs(buf);
  CHECK(model.critic_loss(w, b, nullptr) == doctest::Approx(0.0).epsilon(1e-24));
  for (auto& tr : buf) tr.target -= 0.3;
  CHECK(model.critic_loss(w, b, nullptr) == doctest::Approx(0.09).epsilon(1e-12));

  for (auto& tr : buf) tr.target += std::normal_distribution<double>(0.0, 1.0)(rng);
  std::vector<double> g;
  const double before = model.critic_loss(w, b, &g);
  auto stepped = w;
  for (std::size_t i = 0; i < g.size(); ++i) stepped[i] -= 1e-3 * g[i];
  CHECK(model.critic_loss(stepped, b, nullptr) < before);
}

TEST_CASE("gradient checks: actor surrogate, entropy bonus and critic against finite differences") {
  for (const double entropy : {0.0, 0.05}) {
    for (const bool share : {true, false}) {
      auto cfg = small_marl();
      cfg.entropy_coef = entropy;
      cfg.share_params = share;
      ActorCritic model(4, 2, cfg, FeatureScale{}, 21);
      std::mt19937_64 rng(13);
      auto buf = synthetic_buffer(model, rng);
      // one agent's parameter slot at a time when not shared
      std::vector<const Transition*> b;
      for (const auto& tr : buf) {
        if (share || tr.agent == 0) b.push_back(&tr);
      }
      const auto& theta = model.params(0).actor;
      std::vector<double> ga;
      model.actor_objective(theta, b, &ga);
      auto actor_loss = [&](std::span<const double> x) {
        return -model.actor_objective(std::vector<double>(x.begin(), x.end()), b, nullptr);
      };
      CHECK(relative_error(ga, numeric_gradient(actor_loss, theta)) < 1e-4);

      const auto& w = model.params(0).critic;
      std::vector<double> gc;
      model.critic_loss(w, b, &gc);
      auto critic = [&](std::span<const double> x) {
        return model.critic_loss(std::vector<double>(x.begin(), x.end()), b, nullptr);
      };
      CHECK(relative_error(gc, numeric_gradient(critic, w)) < 1e-4);
    }
  }
}

TEST_CASE("gradient check: clipped transitions contribute nothing") {
  ActorCritic model(4, 1, small_marl(), FeatureScale{}, 6);
  std::mt19937_64 rng(4);
  auto buf = synthetic_buffer(model, rng);
  // push every ratio far outside the clip range in the direction that clips
  for (auto& tr : buf) {
    const Vec p = masked_probs(sp(model.actor_probs(0, tr.features).col(0)), tr.mask);
    tr.probs_old = p;
    tr.advantage = 1.0;
    tr.probs_old[tr.action] = p[tr.action] / 3.0;
  }
  std::vector<double> g;
  model.actor_objective(model.params(0).actor, ptrs(buf), &g);
  CHECK(nn::l2_norm(g) == 0.0);
}

TEST_CASE("targets: gamma 0 returns the immediate rewards; bootstrap uses the next policy-weighted Q") {
  auto cfg = small_marl();
  cfg.gamma = 0.0;
  ActorCritic model(4, 1, cfg, FeatureScale{}, 3);
  std::mt19937_64 rng(8);
  auto buf = synthetic_buffer(model, rng);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i].agent = 0;
    buf[i].reward = 0.5 * static_cast<double>(i) - 1.0;
  }
  buf.back().done = true;
  assign_targets(model, buf);
  for (const auto& tr : buf) CHECK(tr.target == tr.reward);

  cfg.gamma = 0.9;
  cfg.bootstrap = true;
  ActorCritic boot(4, 1, cfg, FeatureScale{}, 3);
  assign_targets(boot, buf);
  const Vec q1 = boot.critic_values(0, buf[1].features).col(0);
  CHECK(buf[0].target == doctest::Approx(buf[0].reward + 0.9 * buf[1].probs_old.dot(q1)));
  CHECK(buf[2].target == buf[2].reward);
}

TEST_CASE("training: masked rollouts, progress and determinism") {
  const auto cfg = short_desk(50, 120);
  const auto norm = env::calibrate_normalizer(cfg);
  auto run = [&](std::vector<EpisodeLog>& logs) {
    ActorCritic model(n_servers(cfg), cfg.scenario.vehicles, cfg.marl, FeatureScale::from(cfg), 5);
    train(model, TrainSetup{cfg, norm, nullptr, 5}, [&](const EpisodeLog& e) { logs.push_back(e); });
    return model;
  };
  std::vector<EpisodeLog> a, b;
  const auto model = run(a);
  run(b);
  REQUIRE(a.size() == 120);
  REQUIRE(b.size() == a.size());
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mean_reward == b[i].mean_reward);
    CHECK(a[i].O_T == b[i].O_T);
    CHECK(a[i].infeasible_selected == 0);
    if (i < 50) first += a[i].mean_reward / 50;
    if (i >= a.size() - 50) last += a[i].mean_reward / 50;
  }
  CHECK(last >= first);
  CHECK(a[0].json_line().rfind("{\"episode\":0,\"mean_reward\":", 0) == 0);

  // every stored transition picked an unmasked action with probability summing to one
  auto world = env::make_world(cfg, eval_seeds(1)[0], norm, nullptr);
  std::mt19937_64 rng(1);
  const auto roll = collect(model, world, ActionMode::Sample, rng);
  CHECK(!roll.transitions.empty());
  for (const auto& tr : roll.transitions) {
    CHECK(tr.mask[static_cast<std::size_t>(tr.action)] == 1);
    CHECK(std::abs(tr.probs_old.sum() - 1.0) < 1e-9);
    for (std::size_t m = 0; m < tr.mask.size(); ++m) {
      if (!tr.mask[m]) CHECK(tr.probs_old[static_cast<Eigen::Index>(m)] == 0.0);
    }
  }
}

TEST_CASE("training and evaluation seeds never overlap") {
  const auto ev = eval_seeds(20);
  for (std::uint64_t s = 0; s < 10; ++s) {
    for (auto t : training_seeds(s, 32)) CHECK(std::find(ev.begin(), ev.end(), t) == ev.end());
  }
  CHECK(training_seeds(1, 4) == training_seeds(1, 4));
  CHECK(training_seeds(1, 4) != training_seeds(2, 4));
}

TEST_CASE("trained policy beats masked random on held-out seeds without infeasible picks") {
  auto cfg = env::SimConfig::desk();
  cfg.marl.episodes = 150;
  cfg.reward.calibration_episodes = 2;
  const auto norm = env::calibrate_normalizer(cfg);
  ActorCritic model(n_servers(cfg), cfg.scenario.vehicles, cfg.marl, FeatureScale::from(cfg), 1);
  train(model, TrainSetup{cfg, norm, nullptr, 1});
  double trained = 0.0, random = 0.0;
  for (const auto seed : eval_seeds(20)) {
    auto world = env::make_world(cfg, seed, norm, nullptr);
    const auto m = evaluate(model, world);
    CHECK(m.infeasible_selected == 0);
    trained += m.mean_reward;
    random += env::run_episode(world, env::random_masked_action, mix_seed(seed, 1)).mean_reward;
    const auto via_policy = env::run_episode(world, as_policy(model), 0);
    CHECK(via_policy.mean_reward == m.mean_reward);
  }
  CHECK(trained > random);
}

TEST_CASE("policy checkpoint round trip") {
  auto cfg = env::SimConfig::desk();
  cfg.marl.share_params = false;
  cfg.marl.hidden = 8;
  ActorCritic model(n_servers(cfg), cfg.scenario.vehicles, cfg.marl, FeatureScale::from(cfg), 17);
  const auto dir = std::filesystem::temp_directory_path() / "vtmig_test_marl";
  std::filesystem::create_directories(dir);
  const auto path = dir / "policy.json";
  save_policy(path, model, cfg);
  const auto loaded = load_policy(path);
  CHECK(env::config_digest(loaded.config) == env::config_digest(cfg));
  REQUIRE(loaded.model.all_params().size() == 3);
  for (int a = 0; a < 3; ++a) {
    CHECK(loaded.model.params(a).actor == model.params(a).actor);
    CHECK(loaded.model.params(a).critic == model.params(a).critic);
  }
  CHECK(loaded.model.scale().distance_m == model.scale().distance_m);

  std::ofstream(dir / "bad.json") << "{\"format\":\"vtmig-forecast\"}";
  CHECK_THROWS_AS(load_policy(dir / "bad.json"), ValidationError);
  std::ofstream(dir / "trunc.json") << "{\"format\":";
  CHECK_THROWS_AS(load_policy(dir / "trunc.json"), ValidationError);
  CHECK_THROWS_AS(load_policy(dir / "missing.json"), ValidationError);
  std::filesystem::remove_all(dir);
}
