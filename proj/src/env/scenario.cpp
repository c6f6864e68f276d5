#include "vtmig/env/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include "vtmig/csv.hpp"
#include "vtmig/data.hpp"
#include "vtmig/error.hpp"
#include "vtmig/seed.hpp"

namespace vtmig::env {

using physics::GeoPosition;

std::string_view to_string(ServerKind kind) {
  switch (kind) {
    case ServerKind::Rsu: return "rsu";
    case ServerKind::Uav: return "uav";
    case ServerKind::Satellite: return "sat";
  }
  return "unknown";
}

ServerKind server_kind_from_string(std::string_view name) {
  if (name == "rsu" || name == "RSU") return ServerKind::Rsu;
  if (name == "uav" || name == "UAV") return ServerKind::Uav;
  if (name == "sat" || name == "SAT" || name == "satellite") return ServerKind::Satellite;
  throw ValidationError("unknown server kind '" + std::string(name) + "'");
}

void Scenario::validate() const {
  if (servers.empty()) throw ValidationError("scenario has no servers");
  if (vehicles.empty()) throw ValidationError("scenario has no vehicles");
  const auto sats = std::count_if(servers.begin(), servers.end(),
                                  [](const EdgeServer& s) { return s.is_satellite(); });
  if (sats != 1) throw ValidationError("scenario needs exactly one satellite, found " + std::to_string(sats));
  if (!servers.back().is_satellite()) throw ValidationError("the satellite must have the largest server id");
  if (std::none_of(servers.begin(), servers.end(),
                   [](const EdgeServer& s) { return s.kind == ServerKind::Rsu; })) {
    throw ValidationError("scenario needs at least one RSU");
  }
  for (std::size_t i = 0; i < servers.size(); ++i) {
    if (servers[i].id != static_cast<int>(i)) throw ValidationError("server ids must be 0..M-1 in order");
  }
  if (flow.size() != servers.size()) throw ValidationError("flow rows must match the server count");
  for (const auto& row : flow) {
    if (row.size() < static_cast<std::size_t>(history + slots)) {
      throw ValidationError("flow series shorter than history + slots");
    }
  }
  for (const auto& v : vehicles) {
    if (v.trajectory.empty()) throw ValidationError("vehicle " + std::to_string(v.id) + " has no trajectory");
    if (v.start_slot < 0 || v.end_slot() >= slots) {
      throw ValidationError("vehicle " + std::to_string(v.id) + " trajectory exceeds the episode");
    }
  }
}

std::vector<LayoutRow> load_layout(const std::filesystem::path& path) {
  data::CsvReader reader(path, {"server_id", "kind", "lat", "lon", "altitude_m", "enter_slot", "exit_slot"});
  std::vector<LayoutRow> rows;
  std::vector<std::string_view> f;
  while (reader.next(f)) {
    LayoutRow r;
    r.server_id = reader.parse_int(f[0]);
    try {
      r.kind = server_kind_from_string(f[1]);
    } catch (const ValidationError& e) {
      reader.fail(e.what());
    }
    r.lat = reader.parse_double(f[2]);
    r.lon = reader.parse_double(f[3]);
    r.altitude_m = reader.parse_double(f[4]);
    r.enter_slot = reader.parse_int(f[5]);
    r.exit_slot = reader.parse_int(f[6]);
    if (r.kind != ServerKind::Satellite) {
      try {
        GeoPosition::from_degrees(r.lat, r.lon);
      } catch (const ValidationError& e) {
        reader.fail(e.what());
      }
    }
    if (r.altitude_m < 0) reader.fail("negative altitude");
    if (r.enter_slot < 0) reader.fail("negative enter_slot");
    if (r.exit_slot >= 0 && r.exit_slot <= r.enter_slot) reader.fail("exit_slot must be -1 or after enter_slot");
    rows.push_back(r);
  }
  std::sort(rows.begin(), rows.end(), [](const LayoutRow& a, const LayoutRow& b) { return a.server_id < b.server_id; });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].server_id != static_cast<int>(i)) {
      throw ValidationError(path.string() + ": server ids must be contiguous from 0 (missing or duplicate id " +
                            std::to_string(i) + ")");
    }
  }
  return rows;
}

void write_layout(const std::filesystem::path& path, const std::vector<LayoutRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "server_id,kind,lat,lon,altitude_m,enter_slot,exit_slot\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.server_id << ',' << to_string(r.kind) << ',' << r.lat << ',' << r.lon << ','
        << r.altitude_m << ',' << r.enter_slot << ',' << r.exit_slot << '\n';
  }
}

std::vector<LayoutRow> layout_rows(const Scenario& scenario) {
  std::vector<LayoutRow> rows;
  for (const auto& s : scenario.servers) {
    rows.push_back({s.id, s.kind, s.position.lat_deg, s.position.lon_deg, s.altitude_m, s.enter_slot,
                    s.exit_slot});
  }
  return rows;
}

GeoPosition offset_position(const GeoPosition& origin, double east_m, double north_m, double earth_radius_m) {
  const double lat = origin.lat_deg + north_m / earth_radius_m / physics::kDegToRad;
  const double lon =
      origin.lon_deg + east_m / (earth_radius_m * std::cos(origin.lat_deg * physics::kDegToRad)) / physics::kDegToRad;
  return GeoPosition::from_degrees(lat, lon);
}

namespace {

struct Local {
  double east = 0.0;
  double north = 0.0;
};

Local to_local(const GeoPosition& p, const GeoPosition& origin, double radius) {
  return {(p.lon_deg - origin.lon_deg) * physics::kDegToRad * radius * std::cos(origin.lat_deg * physics::kDegToRad),
          (p.lat_deg - origin.lat_deg) * physics::kDegToRad * radius};
}

EdgeServer base_server(const SimConfig& c, int id, ServerKind kind) {
  EdgeServer s;
  s.id = id;
  s.kind = kind;
  s.tx_power_w = c.server.tx_power_w;
  s.uplink_bw_hz = c.server.uplink_bw_hz;
  s.downlink_bw_hz = c.server.downlink_bw_hz;
  s.migration_bw_hz = c.server.migration_bw_hz;
  if (kind == ServerKind::Satellite) {
    s.cpu_hz = c.server.sat_cpu_hz;
    s.cache_limit_bits = static_cast<std::int64_t>(std::llround(c.server.sat_cache_limit_bits));
    s.max_range_m = std::numeric_limits<double>::infinity();
  } else {
    s.cpu_hz = c.server.cpu_hz;
    s.cache_limit_bits = static_cast<std::int64_t>(std::llround(c.server.cache_limit_bits));
    s.max_range_m = kind == ServerKind::Uav ? c.server.uav_range_m : c.server.rsu_range_m;
  }
  if (kind == ServerKind::Uav) {
    s.altitude_m = c.server.uav_altitude_m;
    s.patrol_speed_mps = c.server.uav_speed_mps;
  }
  return s;
}

double loop_length(const EdgeServer& uav, const std::vector<EdgeServer>& servers, double radius) {
  physics::ChannelParams p;
  p.earth_radius_m = radius;
  double total = 0.0;
  const auto& r = uav.patrol_route;
  for (std::size_t i = 0; i < r.size(); ++i) {
    total += physics::surface_distance(servers[static_cast<std::size_t>(r[i])].position,
                                       servers[static_cast<std::size_t>(r[(i + 1) % r.size()])].position, p);
  }
  return total;
}

}  // namespace

GeoPosition uav_position(const EdgeServer& uav, const std::vector<EdgeServer>& servers, int slot,
                         double slot_seconds, double earth_radius_m) {
  const auto& route = uav.patrol_route;
  if (route.size() < 2) return uav.position;
  const double total = loop_length(uav, servers, earth_radius_m);
  if (!(total > 0.0)) return uav.position;
  physics::ChannelParams p;
  p.earth_radius_m = earth_radius_m;
  double s = std::fmod(uav.patrol_offset_m + uav.patrol_speed_mps * slot_seconds * slot, total);
  for (std::size_t i = 0; i < route.size(); ++i) {
    const auto& a = servers[static_cast<std::size_t>(route[i])].position;
    const auto& b = servers[static_cast<std::size_t>(route[(i + 1) % route.size()])].position;
    const double seg = physics::surface_distance(a, b, p);
    if (s <= seg || i + 1 == route.size()) {
      const double u = seg > 0.0 ? std::clamp(s / seg, 0.0, 1.0) : 0.0;
      return GeoPosition::from_degrees(a.lat_deg + u * (b.lat_deg - a.lat_deg),
                                       a.lon_deg + u * (b.lon_deg - a.lon_deg));
    }
    s -= seg;
  }
  return uav.position;
}

std::vector<EdgeServer> build_servers(const SimConfig& c) {
  const double radius = c.channel.earth_radius_m;
  std::vector<EdgeServer> servers;
  std::mt19937_64 rng(mix_seed(c.scenario.layout_seed, 3));

  if (!c.scenario.layout_file.empty()) {
    for (const auto& row : load_layout(c.scenario.layout_file)) {
      EdgeServer s = base_server(c, row.server_id, row.kind);
      if (!s.is_satellite()) s.position = GeoPosition::from_degrees(row.lat, row.lon);
      if (s.kind == ServerKind::Uav) s.altitude_m = row.altitude_m;
      s.enter_slot = row.enter_slot;
      s.exit_slot = row.exit_slot;
      servers.push_back(s);
    }
    // loaded UAVs shuttle between the two RSUs closest to their listed point
    physics::ChannelParams p;
    p.earth_radius_m = radius;
    for (auto& s : servers) {
      if (s.kind != ServerKind::Uav) continue;
      std::vector<std::pair<double, int>> near;
      for (const auto& o : servers) {
        if (o.kind == ServerKind::Rsu) near.emplace_back(physics::surface_distance(s.position, o.position, p), o.id);
      }
      std::sort(near.begin(), near.end());
      if (near.size() >= 2) {
        s.patrol_route = {near[0].second, near[1].second};
        s.patrol_offset_m = near[0].first;
      }
    }
  } else {
    const int n = c.scenario.rsus;
    const int rows = std::max(1, static_cast<int>(std::lround(std::sqrt(n / 2.0))));
    const int cols = (n + rows - 1) / rows;
    const GeoPosition center = GeoPosition::from_degrees(c.scenario.center_lat, c.scenario.center_lon);
    for (int i = 0; i < n; ++i) {
      EdgeServer s = base_server(c, i, ServerKind::Rsu);
      const double east = (i % cols - (cols - 1) / 2.0) * c.scenario.rsu_spacing_m;
      const double north = (i / cols - (rows - 1) / 2.0) * c.scenario.rsu_spacing_m;
      s.position = offset_position(center, east, north, radius);
      servers.push_back(s);
    }
    const int blocks = rows >= 2 && cols >= 2 ? (rows - 1) * (cols - 1) : 0;
    // UAVs reinforce the busiest blocks first: rank blocks by the summed
    // traffic weight of their corner RSUs
    const auto shapes = flow_shapes(c, servers);
    std::vector<std::pair<double, int>> ranked;
    for (int b = 0; b < blocks; ++b) {
      const int br = b / (cols - 1), bc = b % (cols - 1);
      double w = 0.0;
      for (int id : {br * cols + bc, br * cols + bc + 1, (br + 1) * cols + bc + 1, (br + 1) * cols + bc}) {
        if (id < n) w += shapes[static_cast<std::size_t>(id)].weight;
      }
      ranked.emplace_back(-w, b);
    }
    std::sort(ranked.begin(), ranked.end());
    for (int u = 0; u < c.scenario.uavs; ++u) {
      EdgeServer s = base_server(c, n + u, ServerKind::Uav);
      if (blocks > 0) {
        const int b = ranked[static_cast<std::size_t>(u % blocks)].second;
        const int br = b / (cols - 1), bc = b % (cols - 1);
        for (int id : {br * cols + bc, br * cols + bc + 1, (br + 1) * cols + bc + 1, (br + 1) * cols + bc}) {
          if (id < n) s.patrol_route.push_back(id);
        }
      } else if (n >= 2) {
        s.patrol_route = {u % n, (u + 1) % n};
      }
      s.position = servers[static_cast<std::size_t>(s.patrol_route.empty() ? u % n : s.patrol_route.front())].position;
      if (s.patrol_route.size() >= 2) {
        std::uniform_real_distribution<double> phase(0.0, loop_length(s, servers, radius));
        s.patrol_offset_m = phase(rng);
      }
      servers.push_back(s);
    }
    servers.push_back(base_server(c, n + c.scenario.uavs, ServerKind::Satellite));
  }
  for (auto& s : servers) {
    if (s.kind == ServerKind::Uav) s.position = uav_position(s, servers, 0, c.scenario.slot_seconds, radius);
  }
  return servers;
}

std::vector<FlowShape> flow_shapes(const SimConfig& c, const std::vector<EdgeServer>& servers) {
  std::mt19937_64 rng(mix_seed(c.scenario.layout_seed, 5));
  std::uniform_real_distribution<double> weight(c.flow.weight_min, c.flow.weight_max);
  std::uniform_real_distribution<double> phase(0.0, c.flow.period);
  std::vector<FlowShape> out;
  for (const auto& s : servers) {
    FlowShape f;
    f.weight = weight(rng);
    f.phase = phase(rng);
    if (s.kind == ServerKind::Uav) f.weight *= c.flow.uav_scale;
    if (s.is_satellite()) f.weight = 0.0;
    out.push_back(f);
  }
  return out;
}

std::vector<std::vector<double>> synth_server_flow(const SimConfig& c, const std::vector<EdgeServer>& servers,
                                                   int n_slots, std::uint64_t seed) {
  const auto shapes = flow_shapes(c, servers);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> start(0, c.flow.period - 1);
  const int t0 = start(rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::vector<double>> out(servers.size(), std::vector<double>(static_cast<std::size_t>(n_slots), 0.0));
  for (std::size_t m = 0; m < servers.size(); ++m) {
    if (servers[m].is_satellite()) continue;
    const auto& f = shapes[m];
    for (int t = 0; t < n_slots; ++t) {
      const double angle = 2.0 * physics::kPi * (t0 + t + f.phase) / c.flow.period;
      const double mean = f.weight * (c.flow.offset + c.flow.amplitude * std::sin(angle));
      const double v = mean + c.flow.noise_std * noise(rng);
      out[m][static_cast<std::size_t>(t)] = std::max(0.0, std::round(v));
    }
  }
  return out;
}

std::vector<std::vector<double>> forecaster_history(const SimConfig& c, std::uint64_t seed) {
  const auto servers = build_servers(c);
  auto flow = synth_server_flow(c, servers, c.flow.history_slots, seed);
  flow.pop_back();  // the satellite sees no background flow
  return flow;
}

namespace {

std::vector<VehicleSpec> random_waypoint_vehicles(const SimConfig& c, const std::vector<EdgeServer>& servers,
                                                  std::uint64_t seed) {
  const double radius = c.channel.earth_radius_m;
  const GeoPosition center = GeoPosition::from_degrees(c.scenario.center_lat, c.scenario.center_lon);
  double min_e = 1e300, max_e = -1e300, min_n = 1e300, max_n = -1e300;
  for (const auto& s : servers) {
    if (s.kind != ServerKind::Rsu) continue;
    const auto l = to_local(s.position, center, radius);
    min_e = std::min(min_e, l.east);
    max_e = std::max(max_e, l.east);
    min_n = std::min(min_n, l.north);
    max_n = std::max(max_n, l.north);
  }
  std::mt19937_64 rng(seed);
  const double step = c.scenario.vehicle_speed_mps * c.scenario.slot_seconds;
  std::vector<VehicleSpec> out;

  if (c.scenario.mobility == "roads") {
    // RSUs sit on a street grid: drive to a random RSU along the east-west
    // street first, then north-south
    // busy RSUs attract proportionally more trips
    const auto shapes = flow_shapes(c, servers);
    std::vector<Local> stops;
    std::vector<double> weights;
    for (std::size_t i = 0; i < servers.size(); ++i) {
      if (servers[i].kind != ServerKind::Rsu) continue;
      stops.push_back(to_local(servers[i].position, center, radius));
      weights.push_back(shapes[i].weight);
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    for (int v = 0; v < c.scenario.vehicles; ++v) {
      VehicleSpec spec;
      spec.id = v;
      Local pos = stops[pick(rng)];
      Local goal = stops[pick(rng)];
      for (int t = 0; t < c.scenario.slots; ++t) {
        spec.trajectory.push_back(offset_position(center, pos.east, pos.north, radius));
        double budget = step;
        while (budget > 0.0) {
          const double de = goal.east - pos.east, dn = goal.north - pos.north;
          if (de == 0.0 && dn == 0.0) {
            goal = stops[pick(rng)];
            if (stops.size() == 1) break;
            continue;
          }
          if (de != 0.0) {
            const double move = std::min(budget, std::abs(de));
            pos.east += std::copysign(move, de);
            budget -= move;
          } else {
            const double move = std::min(budget, std::abs(dn));
            pos.north += std::copysign(move, dn);
            budget -= move;
          }
        }
      }
      out.push_back(std::move(spec));
    }
    return out;
  }

  const double m = c.scenario.region_margin_m;
  std::uniform_real_distribution<double> east(min_e - m, max_e + m), north(min_n - m, max_n + m);
  for (int v = 0; v < c.scenario.vehicles; ++v) {
    VehicleSpec spec;
    spec.id = v;
    Local pos{east(rng), north(rng)};
    Local goal{east(rng), north(rng)};
    for (int t = 0; t < c.scenario.slots; ++t) {
      spec.trajectory.push_back(offset_position(center, pos.east, pos.north, radius));
      double de = goal.east - pos.east, dn = goal.north - pos.north;
      const double dist = std::hypot(de, dn);
      if (dist <= step) {
        pos = goal;
        goal = {east(rng), north(rng)};
      } else {
        pos.east += de / dist * step;
        pos.north += dn / dist * step;
      }
    }
    out.push_back(std::move(spec));
  }
  return out;
}

}  // namespace

Scenario make_scenario(const SimConfig& c, std::uint64_t seed) {
  Scenario sc;
  sc.servers = build_servers(c);
  sc.history = c.forecast.window;
  sc.slots = c.scenario.slots;
  const int total = sc.history + sc.slots;

  if (!c.scenario.flow_file.empty()) {
    const auto loaded = data::load_flow(c.scenario.flow_file);
    sc.flow.assign(sc.servers.size(), std::vector<double>(static_cast<std::size_t>(total), 0.0));
    for (const auto& s : sc.servers) {
      if (s.is_satellite()) continue;
      const auto it = loaded.find(s.id);
      if (it == loaded.end()) {
        throw ValidationError(c.scenario.flow_file + ": no flow for server " + std::to_string(s.id));
      }
      if (it->second.size() < static_cast<std::size_t>(total)) {
        throw ValidationError(c.scenario.flow_file + ": server " + std::to_string(s.id) + " needs " +
                              std::to_string(total) + " slots (window + episode)");
      }
      std::copy_n(it->second.begin(), total, sc.flow[static_cast<std::size_t>(s.id)].begin());
    }
  } else {
    sc.flow = synth_server_flow(c, sc.servers, total, mix_seed(seed, 1));
  }

  if (!c.scenario.trajectory_file.empty()) {
    for (auto& [vid, track] : data::load_trajectories(c.scenario.trajectory_file)) {
      VehicleSpec spec;
      spec.id = static_cast<int>(sc.vehicles.size());
      spec.trajectory = track;
      if (spec.trajectory.size() > static_cast<std::size_t>(sc.slots)) {
        spec.trajectory.resize(static_cast<std::size_t>(sc.slots));
      }
      (void)vid;
      sc.vehicles.push_back(std::move(spec));
    }
  } else {
    sc.vehicles = random_waypoint_vehicles(c, sc.servers, mix_seed(seed, 2));
  }
  sc.validate();
  return sc;
}

}  // namespace vtmig::env
