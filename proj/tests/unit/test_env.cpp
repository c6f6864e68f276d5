#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "vtmig/env/config.hpp"
#include "vtmig/env/policies.hpp"
#include "vtmig/env/scenario.hpp"
#include "vtmig/env/world.hpp"
#include "vtmig/error.hpp"

using namespace vtmig;
using namespace vtmig::env;

namespace {

SimConfig small_config() {
  SimConfig c = SimConfig::desk();
  c.scenario.slots = 4;
  return c;
}

physics::GeoPosition at(const SimConfig& c, double east, double north) {
  return offset_position(physics::GeoPosition::from_degrees(c.scenario.center_lat, c.scenario.center_lon), east,
                         north, c.channel.earth_radius_m);
}

EdgeServer server(const SimConfig& c, int id, ServerKind kind, double east = 0.0, double north = 0.0) {
  EdgeServer s;
  s.id = id;
  s.kind = kind;
  s.cpu_hz = kind == ServerKind::Satellite ? c.server.sat_cpu_hz : c.server.cpu_hz;
  s.cache_limit_bits = static_cast<std::int64_t>(kind == ServerKind::Satellite ? c.server.sat_cache_limit_bits
                                                                                : c.server.cache_limit_bits);
  s.max_range_m = kind == ServerKind::Satellite ? std::numeric_limits<double>::infinity()
                  : kind == ServerKind::Uav     ? c.server.uav_range_m
                                                : c.server.rsu_range_m;
  s.tx_power_w = c.server.tx_power_w;
  s.uplink_bw_hz = c.server.uplink_bw_hz;
  s.downlink_bw_hz = c.server.downlink_bw_hz;
  s.migration_bw_hz = c.server.migration_bw_hz;
  if (kind != ServerKind::Satellite) s.position = at(c, east, north);
  if (kind == ServerKind::Uav) s.altitude_m = c.server.uav_altitude_m;
  return s;
}

VehicleSpec parked(const SimConfig& c, int id, double east, double north, int slots) {
  VehicleSpec v;
  v.id = id;
  v.trajectory.assign(static_cast<std::size_t>(slots), at(c, east, north));
  return v;
}

// Servers given in id order (satellite last), zero background flow.
Scenario hand_scenario(const SimConfig& c, std::vector<EdgeServer> servers, std::vector<VehicleSpec> vehicles) {
  Scenario sc;
  sc.servers = std::move(servers);
  sc.vehicles = std::move(vehicles);
  sc.history = c.forecast.window;
  sc.slots = c.scenario.slots;
  sc.flow.assign(sc.servers.size(), std::vector<double>(static_cast<std::size_t>(sc.history + sc.slots), 0.0));
  return sc;
}

}  // namespace

TEST_CASE("config: presets, sections and round trip") {
  const auto c = parse_config("preset = desk\n[scenario]\nslots = 50  # shorter\n\n[reward]\nw_latency = 3\n");
  CHECK(c.scenario.slots == 50);
  CHECK(c.reward.w_latency == 3.0);
  CHECK(c.scenario.rsus == 8);

  const auto p = parse_config("preset = paper\n");
  CHECK(p.scenario.rsus == 76);
  CHECK(p.channel.noise_power == 10.0);

  std::string text;
  for (const auto& [k, v] : to_key_values(c)) text += k + " = " + v + "\n";
  CHECK(config_digest(parse_config(text)) == config_digest(c));
}

TEST_CASE("config: unknown, duplicate and invalid keys are errors") {
  CHECK_THROWS_AS(parse_config("scenario.rsuz = 3\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("scenario.rsus = 3\nscenario.rsus = 4\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("scenario.rsus = three\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("scenario.rsus = 0\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("preset = moon\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("no equals sign\n"), ValidationError);
  try {
    parse_config("scenario.slots = 5\nbogus.key = 1\n", "cfg.ini");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("cfg.ini:2") != std::string::npos);
  }
}

TEST_CASE("scenario: generated layout and determinism") {
  const SimConfig c = SimConfig::desk();
  const auto a = make_scenario(c, 11);
  const auto b = make_scenario(c, 11);
  REQUIRE(a.servers.size() == 11);
  CHECK(a.servers.back().is_satellite());
  CHECK(a.servers[8].kind == ServerKind::Uav);
  CHECK(a.flow == b.flow);
  REQUIRE(a.vehicles.size() == 3);
  for (std::size_t v = 0; v < a.vehicles.size(); ++v) {
    CHECK(a.vehicles[v].trajectory.size() == 200);
    CHECK(a.vehicles[v].trajectory.back().lat_deg == b.vehicles[v].trajectory.back().lat_deg);
  }
  const auto other = make_scenario(c, 12);
  CHECK(other.flow != a.flow);
  for (double x : a.flow.back()) CHECK(x == 0.0);
}

TEST_CASE("scenario: UAV patrol stays on its loop") {
  const SimConfig c = SimConfig::desk();
  const auto servers = build_servers(c);
  const auto& uav = servers[8];
  REQUIRE(uav.patrol_route.size() == 4);
  physics::ChannelParams p;
  const double step = c.server.uav_speed_mps * c.scenario.slot_seconds;
  for (int t = 0; t < 50; ++t) {
    const auto a = uav_position(uav, servers, t, c.scenario.slot_seconds, p.earth_radius_m);
    const auto b = uav_position(uav, servers, t + 1, c.scenario.slot_seconds, p.earth_radius_m);
    CHECK(physics::surface_distance(a, b, p) <= step * 1.001);
  }
}

TEST_CASE("scenario: validation rejects two satellites and misplaced satellite") {
  const SimConfig c = small_config();
  auto sc = hand_scenario(c, {server(c, 0, ServerKind::Rsu), server(c, 1, ServerKind::Satellite),
                              server(c, 2, ServerKind::Satellite)},
                          {parked(c, 0, 0, 0, 4)});
  CHECK_THROWS_AS(sc.validate(), ValidationError);
  auto sc2 = hand_scenario(c, {server(c, 0, ServerKind::Satellite), server(c, 1, ServerKind::Rsu)},
                           {parked(c, 0, 0, 0, 4)});
  CHECK_THROWS_AS(sc2.validate(), ValidationError);
}

TEST_CASE("scenario: layout CSV round trip") {
  const SimConfig c = SimConfig::desk();
  const auto sc = make_scenario(c, 3);
  const auto path = std::filesystem::temp_directory_path() / "vtmig_layout_test.csv";
  write_layout(path, layout_rows(sc));
  const auto rows = load_layout(path);
  REQUIRE(rows.size() == sc.servers.size());
  CHECK(rows.back().kind == ServerKind::Satellite);
  CHECK(rows[0].lat == doctest::Approx(sc.servers[0].position.lat_deg).epsilon(1e-12));
  std::filesystem::remove(path);

  std::ofstream bad(path);
  bad << "server_id,kind,lat,lon,altitude_m,enter_slot,exit_slot\n0,blimp,1,2,0,0,-1\n";
  bad.close();
  CHECK_THROWS_AS(load_layout(path), ValidationError);
  std::filesystem::remove(path);
}

TEST_CASE("world: reset attaches nearest in-range server, else the satellite") {
  const SimConfig c = small_config();
  auto sc = hand_scenario(c,
                          {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Rsu, 2000, 0),
                           server(c, 2, ServerKind::Satellite)},
                          {parked(c, 0, 1500, 0, 4), parked(c, 1, 0, 9000, 4)});
  World w(c, sc);
  CHECK(w.attached(0) == 1);
  CHECK(w.attached(1) == 2);
  const auto d = w.state_digest();
  w.reset();
  CHECK(w.state_digest() == d);
}

TEST_CASE("world: observation layout and sentinel") {
  SimConfig c = small_config();
  c.ablation.uav = false;
  auto sc = hand_scenario(c,
                          {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Uav, 500, 0),
                           server(c, 2, ServerKind::Satellite)},
                          {parked(c, 0, 100, 0, 4), parked(c, 1, 300, 0, 4)});
  World w(c, sc);
  const auto o0 = w.observe(0);
  const auto o1 = w.observe(1);
  CHECK(o0.flat().size() == 2 * w.n_servers() - 1);
  CHECK(o0.distances_m[0] == doctest::Approx(100.0).epsilon(1e-3));
  CHECK(o0.distances_m[1] == c.env.distance_sentinel_m);
  CHECK(o0.predicted_loads_bits == o1.predicted_loads_bits);
  CHECK(o0.predicted_loads_bits[1] == 0.0);
  CHECK_FALSE(w.server_active(1));
  CHECK(w.feasible_mask(0).bits[1] == 0);
}

TEST_CASE("world: mask boundaries") {
  SimConfig c = small_config();
  const double range = c.server.rsu_range_m;
  auto sc = hand_scenario(c,
                          {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Rsu, 3000, 0),
                           server(c, 2, ServerKind::Satellite)},
                          {parked(c, 0, 0, 0, 4)});
  // vehicle exactly at range of RSU 0 along the east axis
  sc.vehicles[0].trajectory.assign(4, at(c, 0, 0));
  {
    World probe(c, sc);
    const double d = probe.distance(0, 1);
    // place RSU 1 so that its distance to the vehicle is exactly the range
    sc.servers[1].position = at(c, 3000.0 * range / d, 0);
  }
  World w(c, sc);
  const double d1 = w.distance(0, 1);
  auto m = w.constraint_mask(0);
  CHECK(m.bits[0] == 1);
  CHECK(m.bits[2] == 1);
  CHECK(m.bits[1] == (d1 <= range ? 1 : 0));

  // load exactly at the limit is feasible, one bit more is not
  const std::int64_t sv = w.gen_bits();
  auto sc2 = sc;
  sc2.flow[0][static_cast<std::size_t>(sc2.history - 1)] = 0.0;
  sc2.servers[0].cache_limit_bits = sv;  // empty cache + S_v == limit
  World w2(c, sc2);
  CHECK(w2.constraint_mask(0).bits[0] == 1);
  sc2.servers[0].cache_limit_bits = sv - 1;
  World w3(c, sc2);
  CHECK(w3.constraint_mask(0).bits[0] == 0);
  CHECK(w3.constraint_mask(0).bits[2] == 1);

  // masking ablated: only activity matters
  SimConfig nm = c;
  nm.ablation.mask = false;
  World w4(nm, sc2);
  CHECK(w4.feasible_mask(0).count() == 3);
  CHECK(w4.constraint_mask(0).bits[0] == 0);
}

TEST_CASE("world: conservation, variance and migrations over a desk episode") {
  const SimConfig c = SimConfig::desk();
  World w(c, make_scenario(c, 5));
  std::vector<int> prev(w.n_vehicles());
  for (std::size_t v = 0; v < w.n_vehicles(); ++v) prev[v] = w.attached(static_cast<int>(v));
  int migrations = 0;
  const auto m = run_episode(w, random_masked_action, 9, [&](const StepResult& r) {
    for (std::size_t v = 0; v < r.vehicles.size(); ++v) {
      if (!r.vehicles[v].active) continue;
      migrations += r.vehicles[v].chosen != prev[v] ? 1 : 0;
      CHECK(r.vehicles[v].migrated == (r.vehicles[v].chosen != prev[v]));
      prev[v] = r.vehicles[v].chosen;
    }
  });
  CHECK(m.slots == 200);
  CHECK(w.conservation().imbalance() == 0);
  CHECK(w.conservation().arrivals > 0);
  CHECK(migrations == m.migrations);

  double total = 0.0;
  int rec_migrations = 0;
  for (const auto& rec : w.history()) {
    std::vector<double> xs;
    for (std::size_t s = 0; s < rec.loads.size(); ++s) {
      if (rec.active[s]) xs.push_back(static_cast<double>(rec.loads[s]));
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    CHECK(rec.variance == doctest::Approx(var).epsilon(1e-12));
    total += var;
    rec_migrations += rec.migrations;
  }
  CHECK(m.total_load_variance == doctest::Approx(total).epsilon(1e-12));
  CHECK(rec_migrations == m.migrations);
  CHECK(m.infeasible_selected == 0);
}

TEST_CASE("world: all loads equal gives zero variance") {
  SimConfig c = small_config();
  c.ablation.satellite = false;
  auto sc = hand_scenario(c,
                          {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Rsu, 500, 0),
                           server(c, 2, ServerKind::Satellite)},
                          {parked(c, 0, 0, 0, 4), parked(c, 1, 500, 0, 4)});
  World w(c, sc);
  while (!w.done()) w.step({0, 1});
  CHECK(w.metrics().total_load_variance == 0.0);
}

TEST_CASE("world: stranded vehicle without satellite always fails") {
  SimConfig c = small_config();
  c.ablation.satellite = false;
  auto sc = hand_scenario(c, {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Satellite)},
                          {parked(c, 0, 5000, 5000, 4)});
  World w(c, sc);
  CHECK_FALSE(w.feasible_mask(0).any());
  const auto m = run_episode(w, greedy_action, 1);
  CHECK(m.packet_loss_pct[0] == 100.0);
  CHECK(m.fallbacks == 4);
  CHECK(m.total_packet_loss_pct > 0.0);
}

TEST_CASE("world: overload fails and uses the satellite compute branch") {
  const SimConfig c = small_config();
  auto sc = hand_scenario(c, {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Satellite)},
                          {parked(c, 0, 100, 0, 4)});
  // no flow last slot (predicted feasible), a burst this slot
  sc.flow[0][static_cast<std::size_t>(sc.history)] = 20.0;
  World w(c, sc);
  REQUIRE(w.feasible_mask(0).bits[0] == 1);
  const auto r = w.step({0});
  const auto& o = r.vehicles[0];
  CHECK(o.failed);
  const double sv = static_cast<double>(w.gen_bits());
  CHECK(o.latency.compute_s == doctest::Approx(c.vehicle.cycles_per_bit * sv / c.server.sat_cpu_hz));
  CHECK(o.load_bits == doctest::Approx(21.0 * sv));
}

TEST_CASE("world: staying in range and under the limit costs no migration") {
  const SimConfig c = small_config();
  auto sc = hand_scenario(c, {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Satellite)},
                          {parked(c, 0, 100, 0, 4)});
  World w(c, sc);
  REQUIRE(w.attached(0) == 0);
  const auto r = w.step({0});
  CHECK_FALSE(r.vehicles[0].failed);
  CHECK_FALSE(r.vehicles[0].migrated);
  CHECK(r.vehicles[0].latency.migration_s == 0.0);
  const auto r2 = w.step({1});
  CHECK(r2.vehicles[0].migrated);
  CHECK(r2.vehicles[0].latency.migration_s ==
        doctest::Approx(c.vehicle.migration_bits / c.server.sat_rate_bps));
}

TEST_CASE("world: objectives aggregate per-step outcomes") {
  const SimConfig c = small_config();
  auto sc = hand_scenario(c, {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Satellite)},
                          {parked(c, 0, 100, 0, 2)});
  World w(c, sc);
  double latency = 0.0;
  while (!w.done()) latency += w.step({0}).vehicles[0].latency.total();
  const auto m = w.metrics();
  CHECK(m.slots == 2);
  CHECK(m.total_latency_s == doctest::Approx(latency).epsilon(1e-15));
  CHECK(m.packet_loss_pct[0] == 0.0);
  CHECK_THROWS_AS(w.step({0}), std::logic_error);
}

TEST_CASE("world: invalid actions are rejected") {
  SimConfig c = small_config();
  c.ablation.uav = false;
  auto sc = hand_scenario(c,
                          {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Uav, 0, 0),
                           server(c, 2, ServerKind::Satellite)},
                          {parked(c, 0, 100, 0, 4)});
  World w(c, sc);
  CHECK_THROWS_AS(w.step({7}), std::invalid_argument);
  CHECK_THROWS_AS(w.step({1}), std::invalid_argument);
  CHECK_THROWS_AS(w.step({0, 0}), std::invalid_argument);
}

TEST_CASE("world: selecting a masked server is counted") {
  const SimConfig c = small_config();
  auto sc = hand_scenario(c,
                          {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Rsu, 8000, 0),
                           server(c, 2, ServerKind::Satellite)},
                          {parked(c, 0, 100, 0, 4)});
  World w(c, sc);
  const auto r = w.step({1});
  CHECK(r.vehicles[0].failed);
  CHECK(w.metrics().infeasible_selected == 1);
}

TEST_CASE("reward: shaped examples") {
  RewardConfig wts;  // (2, 1, 1)
  RewardNormalizer n{10.0, 2.0, 100.0, 50.0};
  CHECK(shaped_reward(10.0, 100.0, false, n, wts) == 0.0);
  CHECK(shaped_reward(12.0, 150.0, true, n, wts) == doctest::Approx(-4.0));
  CHECK(shaped_reward(12.0, 150.0, true, n, wts) - shaped_reward(12.0, 150.0, false, n, wts) ==
        doctest::Approx(-wts.w_failure));
  // z clipped at 5
  CHECK(shaped_reward(1e6, 100.0, false, n, wts) == doctest::Approx(-2.0 * wts.clip));
}

TEST_CASE("policies: greedy prefers the nearest feasible server") {
  const SimConfig c = small_config();
  auto sc = hand_scenario(c,
                          {server(c, 0, ServerKind::Rsu, 100, 0), server(c, 1, ServerKind::Uav, 900, 0),
                           server(c, 2, ServerKind::Satellite)},
                          {parked(c, 0, 0, 0, 4)});
  World w(c, sc);
  const auto mask = w.feasible_mask(0);
  REQUIRE(mask.count() == 3);
  CHECK(nearest_feasible(w, 0, mask) == 0);

  ActionMask only_sat{{0, 0, 1}};
  CHECK(nearest_feasible(w, 0, only_sat) == 2);
  ActionMask only_uav{{0, 1, 0}};
  CHECK(nearest_feasible(w, 0, only_uav) == 1);

  std::mt19937_64 rng(4);
  std::map<int, int> counts;
  for (int i = 0; i < 10000; ++i) counts[greedy_action(w, 0, mask, rng)]++;
  // 0.9 + 0.1/3 of draws on the RSU
  CHECK(counts[0] == doctest::Approx(10000 * (0.9 + 0.1 / 3)).epsilon(0.03));
}

TEST_CASE("policies: random draws are uniform and reproducible") {
  const SimConfig c = small_config();
  auto sc = hand_scenario(c,
                          {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Rsu, 400, 0),
                           server(c, 2, ServerKind::Rsu, 800, 0), server(c, 3, ServerKind::Satellite)},
                          {parked(c, 0, 0, 0, 4)});
  World w(c, sc);
  const auto mask = w.feasible_mask(0);
  std::mt19937_64 rng(1);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 10000; ++i) counts[static_cast<std::size_t>(random_unmasked_action(w, 0, mask, rng))]++;
  for (int n : counts) CHECK(std::abs(n - 2500) <= 150);

  ActionMask one{{0, 0, 1, 0}};
  CHECK(random_masked_action(w, 0, one, rng) == 2);

  std::mt19937_64 a(77), b(77);
  for (int i = 0; i < 50; ++i) CHECK(random_masked_action(w, 0, mask, a) == random_masked_action(w, 0, mask, b));
}

TEST_CASE("policies: episodes are deterministic") {
  const SimConfig c = SimConfig::desk();
  const auto norm = calibrate_normalizer(c);
  CHECK(norm.latency_std > 0.0);
  CHECK(calibrate_normalizer(c).latency_mean == norm.latency_mean);
  World a = make_world(c, 21, norm, nullptr);
  World b = make_world(c, 21, norm, nullptr);
  const auto ma = run_episode(a, greedy_action, 3);
  const auto mb = run_episode(b, greedy_action, 3);
  CHECK(ma.total_latency_s == mb.total_latency_s);
  CHECK(ma.mean_reward == mb.mean_reward);
  CHECK(a.state_digest() == b.state_digest());
}

TEST_CASE("policies: flow predictions feed the mask") {
  SimConfig c = small_config();
  auto sc = hand_scenario(c, {server(c, 0, ServerKind::Rsu, 0, 0), server(c, 1, ServerKind::Satellite)},
                          {parked(c, 0, 100, 0, 4)});
  FlowPredictions pred(2, std::vector<double>(4, 0.0));
  pred[0][0] = 50.0;  // forecast says the RSU is about to be swamped
  World w(c, sc, {}, pred);
  CHECK(w.uses_forecast());
  CHECK(w.constraint_mask(0).bits[0] == 0);
  SimConfig np = c;
  np.ablation.prediction = false;
  World w2(np, sc, {}, pred);
  CHECK_FALSE(w2.uses_forecast());
  CHECK(w2.constraint_mask(0).bits[0] == 1);
}
