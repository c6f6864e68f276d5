#include "vtmig/env/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "vtmig/error.hpp"

namespace vtmig::env {
namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ValidationError("config key '" + std::string(key) + "': cannot parse '" +
                          std::string(text) + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ValidationError("config key '" + std::string(key) + "': expected a boolean, got '" +
                        std::string(text) + "'");
}

struct Field {
  std::string key;
  std::function<void(SimConfig&, std::string_view)> set;
  std::function<std::string(const SimConfig&)> get;
};

template <typename Ref>
Field number(std::string key, Ref ref, double scale = 1.0) {
  using T = std::remove_reference_t<decltype(ref(std::declval<SimConfig&>()))>;
  Field f;
  f.key = key;
  f.set = [key, ref, scale](SimConfig& c, std::string_view v) {
    if constexpr (std::is_same_v<T, double>) {
      const double x = parse_number<double>(key, v);
      if (!std::isfinite(x)) throw ValidationError("config key '" + key + "' must be finite");
      ref(c) = x * scale;
    } else {
      ref(c) = parse_number<T>(key, v);
    }
  };
  f.get = [ref, scale](const SimConfig& c) {
    auto& m = const_cast<SimConfig&>(c);
    if constexpr (std::is_same_v<T, double>) {
      return format_double(ref(m) / scale);
    } else {
      return std::to_string(ref(m));
    }
  };
  return f;
}

template <typename Ref>
Field flag(std::string key, Ref ref) {
  Field f;
  f.key = key;
  f.set = [key, ref](SimConfig& c, std::string_view v) { ref(c) = parse_bool(key, v); };
  f.get = [ref](const SimConfig& c) {
    return std::string(ref(const_cast<SimConfig&>(c)) ? "true" : "false");
  };
  return f;
}

template <typename Ref>
Field text(std::string key, Ref ref) {
  Field f;
  f.key = key;
  f.set = [ref](SimConfig& c, std::string_view v) { ref(c) = std::string(v); };
  f.get = [ref](const SimConfig& c) { return ref(const_cast<SimConfig&>(c)); };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    t.push_back(text("preset", [](SimConfig& c) -> std::string& { return c.preset; }));

    t.push_back(number("scenario.rsus", [](SimConfig& c) -> int& { return c.scenario.rsus; }));
    t.push_back(number("scenario.uavs", [](SimConfig& c) -> int& { return c.scenario.uavs; }));
    t.push_back(number("scenario.vehicles", [](SimConfig& c) -> int& { return c.scenario.vehicles; }));
    t.push_back(number("scenario.slots", [](SimConfig& c) -> int& { return c.scenario.slots; }));
    t.push_back(number("scenario.slot_seconds", [](SimConfig& c) -> double& { return c.scenario.slot_seconds; }));
    t.push_back(number("scenario.center_lat", [](SimConfig& c) -> double& { return c.scenario.center_lat; }));
    t.push_back(number("scenario.center_lon", [](SimConfig& c) -> double& { return c.scenario.center_lon; }));
    t.push_back(number("scenario.rsu_spacing_m", [](SimConfig& c) -> double& { return c.scenario.rsu_spacing_m; }));
    t.push_back(number("scenario.region_margin_m", [](SimConfig& c) -> double& { return c.scenario.region_margin_m; }));
    t.push_back(number("scenario.vehicle_speed_mps", [](SimConfig& c) -> double& { return c.scenario.vehicle_speed_mps; }));
    t.push_back(number("scenario.layout_seed", [](SimConfig& c) -> std::uint64_t& { return c.scenario.layout_seed; }));
    t.push_back(text("scenario.mobility", [](SimConfig& c) -> std::string& { return c.scenario.mobility; }));
    t.push_back(text("scenario.layout_file", [](SimConfig& c) -> std::string& { return c.scenario.layout_file; }));
    t.push_back(text("scenario.trajectory_file", [](SimConfig& c) -> std::string& { return c.scenario.trajectory_file; }));
    t.push_back(text("scenario.flow_file", [](SimConfig& c) -> std::string& { return c.scenario.flow_file; }));

    t.push_back(number("flow.period", [](SimConfig& c) -> int& { return c.flow.period; }));
    t.push_back(number("flow.offset", [](SimConfig& c) -> double& { return c.flow.offset; }));
    t.push_back(number("flow.amplitude", [](SimConfig& c) -> double& { return c.flow.amplitude; }));
    t.push_back(number("flow.noise_std", [](SimConfig& c) -> double& { return c.flow.noise_std; }));
    t.push_back(number("flow.weight_min", [](SimConfig& c) -> double& { return c.flow.weight_min; }));
    t.push_back(number("flow.weight_max", [](SimConfig& c) -> double& { return c.flow.weight_max; }));
    t.push_back(number("flow.uav_scale", [](SimConfig& c) -> double& { return c.flow.uav_scale; }));
    t.push_back(number("flow.history_slots", [](SimConfig& c) -> int& { return c.flow.history_slots; }));

    t.push_back(number("channel.increment_coefficient", [](SimConfig& c) -> double& { return c.channel.increment_coefficient; }));
    t.push_back(number("channel.carrier_frequency_hz", [](SimConfig& c) -> double& { return c.channel.carrier_frequency_hz; }));
    t.push_back(number("channel.noise_power", [](SimConfig& c) -> double& { return c.channel.noise_power; }));

    t.push_back(number("server.cpu_hz", [](SimConfig& c) -> double& { return c.server.cpu_hz; }));
    t.push_back(number("server.sat_cpu_hz", [](SimConfig& c) -> double& { return c.server.sat_cpu_hz; }));
    t.push_back(number("server.cache_mb", [](SimConfig& c) -> double& { return c.server.cache_limit_bits; }, kBitsPerMegabyte));
    t.push_back(number("server.sat_cache_mb", [](SimConfig& c) -> double& { return c.server.sat_cache_limit_bits; }, kBitsPerMegabyte));
    t.push_back(number("server.rsu_range_m", [](SimConfig& c) -> double& { return c.server.rsu_range_m; }));
    t.push_back(number("server.uav_range_m", [](SimConfig& c) -> double& { return c.server.uav_range_m; }));
    t.push_back(number("server.uav_altitude_m", [](SimConfig& c) -> double& { return c.server.uav_altitude_m; }));
    t.push_back(number("server.uav_speed_mps", [](SimConfig& c) -> double& { return c.server.uav_speed_mps; }));
    t.push_back(number("server.tx_power_w", [](SimConfig& c) -> double& { return c.server.tx_power_w; }));
    t.push_back(number("server.uplink_bw_hz", [](SimConfig& c) -> double& { return c.server.uplink_bw_hz; }));
    t.push_back(number("server.downlink_bw_hz", [](SimConfig& c) -> double& { return c.server.downlink_bw_hz; }));
    t.push_back(number("server.migration_bw_hz", [](SimConfig& c) -> double& { return c.server.migration_bw_hz; }));
    t.push_back(number("server.sat_rate_bps", [](SimConfig& c) -> double& { return c.server.sat_rate_bps; }));

    t.push_back(number("vehicle.tx_power_w", [](SimConfig& c) -> double& { return c.vehicle.tx_power_w; }));
    t.push_back(number("vehicle.gen_mb_per_s", [](SimConfig& c) -> double& { return c.vehicle.gen_mb_per_s; }));
    t.push_back(number("vehicle.migration_mb", [](SimConfig& c) -> double& { return c.vehicle.migration_bits; }, kBitsPerMegabyte));
    t.push_back(number("vehicle.cycles_per_bit", [](SimConfig& c) -> double& { return c.vehicle.cycles_per_bit; }));

    t.push_back(number("reward.w_latency", [](SimConfig& c) -> double& { return c.reward.w_latency; }));
    t.push_back(number("reward.w_load", [](SimConfig& c) -> double& { return c.reward.w_load; }));
    t.push_back(number("reward.w_failure", [](SimConfig& c) -> double& { return c.reward.w_failure; }));
    t.push_back(number("reward.clip", [](SimConfig& c) -> double& { return c.reward.clip; }));
    t.push_back(number("reward.calibration_episodes", [](SimConfig& c) -> int& { return c.reward.calibration_episodes; }));

    t.push_back(number("env.distance_sentinel_m", [](SimConfig& c) -> double& { return c.env.distance_sentinel_m; }));
    t.push_back(number("env.min_distance_m", [](SimConfig& c) -> double& { return c.env.min_distance_m; }));
    t.push_back(flag("env.background_first", [](SimConfig& c) -> bool& { return c.env.background_first; }));

    t.push_back(flag("ablation.mask", [](SimConfig& c) -> bool& { return c.ablation.mask; }));
    t.push_back(flag("ablation.prediction", [](SimConfig& c) -> bool& { return c.ablation.prediction; }));
    t.push_back(flag("ablation.uav", [](SimConfig& c) -> bool& { return c.ablation.uav; }));
    t.push_back(flag("ablation.satellite", [](SimConfig& c) -> bool& { return c.ablation.satellite; }));

    t.push_back(number("forecast.window", [](SimConfig& c) -> int& { return c.forecast.window; }));
    t.push_back(number("forecast.lstm_hidden", [](SimConfig& c) -> int& { return c.forecast.lstm_hidden; }));
    t.push_back(number("forecast.attn_dim", [](SimConfig& c) -> int& { return c.forecast.attn_dim; }));
    t.push_back(number("forecast.heads", [](SimConfig& c) -> int& { return c.forecast.heads; }));
    t.push_back(number("forecast.conv_channels", [](SimConfig& c) -> int& { return c.forecast.conv_channels; }));
    t.push_back(flag("forecast.per_server", [](SimConfig& c) -> bool& { return c.forecast.per_server; }));
    t.push_back(number("forecast.learning_rate", [](SimConfig& c) -> double& { return c.forecast.learning_rate; }));
    t.push_back(number("forecast.epochs", [](SimConfig& c) -> int& { return c.forecast.epochs; }));
    t.push_back(number("forecast.train_fraction", [](SimConfig& c) -> double& { return c.forecast.train_fraction; }));
    t.push_back(number("forecast.batch_size", [](SimConfig& c) -> int& { return c.forecast.batch_size; }));
    t.push_back(number("forecast.max_grad_norm", [](SimConfig& c) -> double& { return c.forecast.max_grad_norm; }));
    {
      Field f;
      f.key = "forecast.pooling";
      f.set = [](SimConfig& c, std::string_view v) {
        if (v == "last") {
          c.forecast.pooling = forecast::Pooling::Last;
        } else if (v == "mean") {
          c.forecast.pooling = forecast::Pooling::Mean;
        } else {
          throw ValidationError("config key 'forecast.pooling': expected last or mean");
        }
      };
      f.get = [](const SimConfig& c) {
        return std::string(c.forecast.pooling == forecast::Pooling::Last ? "last" : "mean");
      };
      t.push_back(f);
    }

    t.push_back(number("marl.gamma", [](SimConfig& c) -> double& { return c.marl.gamma; }));
    t.push_back(number("marl.clip", [](SimConfig& c) -> double& { return c.marl.clip; }));
    t.push_back(number("marl.actor_lr", [](SimConfig& c) -> double& { return c.marl.actor_lr; }));
    t.push_back(number("marl.critic_lr", [](SimConfig& c) -> double& { return c.marl.critic_lr; }));
    t.push_back(number("marl.epochs", [](SimConfig& c) -> int& { return c.marl.epochs; }));
    t.push_back(number("marl.hidden", [](SimConfig& c) -> int& { return c.marl.hidden; }));
    t.push_back(number("marl.layers", [](SimConfig& c) -> int& { return c.marl.layers; }));
    t.push_back(number("marl.episodes", [](SimConfig& c) -> int& { return c.marl.episodes; }));
    t.push_back(number("marl.episodes_per_batch", [](SimConfig& c) -> int& { return c.marl.episodes_per_batch; }));
    t.push_back(number("marl.minibatch", [](SimConfig& c) -> int& { return c.marl.minibatch; }));
    t.push_back(flag("marl.share_params", [](SimConfig& c) -> bool& { return c.marl.share_params; }));
    t.push_back(flag("marl.normalize_advantage", [](SimConfig& c) -> bool& { return c.marl.normalize_advantage; }));
    t.push_back(flag("marl.bootstrap", [](SimConfig& c) -> bool& { return c.marl.bootstrap; }));
    t.push_back(number("marl.entropy_coef", [](SimConfig& c) -> double& { return c.marl.entropy_coef; }));
    t.push_back(number("marl.max_grad_norm", [](SimConfig& c) -> double& { return c.marl.max_grad_norm; }));
    t.push_back(number("marl.train_scenarios", [](SimConfig& c) -> int& { return c.marl.train_scenarios; }));
    t.push_back(number("marl.eval_seeds", [](SimConfig& c) -> int& { return c.marl.eval_seeds; }));
    return t;
  }();
  return table;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("config: " + what);
}

}  // namespace

void SimConfig::validate() const {
  channel.validate();
  require(scenario.rsus >= 1, "scenario.rsus must be >= 1");
  require(scenario.uavs >= 0, "scenario.uavs must be >= 0");
  require(scenario.vehicles >= 1, "scenario.vehicles must be >= 1");
  require(scenario.slots >= 1, "scenario.slots must be >= 1");
  require(scenario.slot_seconds > 0, "scenario.slot_seconds must be > 0");
  require(scenario.rsu_spacing_m > 0, "scenario.rsu_spacing_m must be > 0");
  require(scenario.region_margin_m >= 0, "scenario.region_margin_m must be >= 0");
  require(scenario.vehicle_speed_mps >= 0, "scenario.vehicle_speed_mps must be >= 0");
  require(scenario.mobility == "free" || scenario.mobility == "roads", "scenario.mobility must be free or roads");
  require(flow.period >= 2, "flow.period must be >= 2");
  require(flow.offset >= 0 && flow.amplitude >= 0 && flow.noise_std >= 0,
          "flow offset/amplitude/noise must be >= 0");
  require(flow.weight_min >= 0 && flow.weight_max >= flow.weight_min,
          "flow weights need 0 <= weight_min <= weight_max");
  require(flow.uav_scale >= 0, "flow.uav_scale must be >= 0");
  require(flow.history_slots > forecast.window + 1, "flow.history_slots must exceed forecast.window + 1");
  require(server.cpu_hz > 0 && server.sat_cpu_hz > 0, "CPU frequencies must be > 0");
  require(server.cache_limit_bits > 0 && server.sat_cache_limit_bits > 0, "cache limits must be > 0");
  require(server.rsu_range_m > 0 && server.uav_range_m > 0, "service ranges must be > 0");
  require(server.uav_altitude_m >= 0, "server.uav_altitude_m must be >= 0");
  require(server.uav_speed_mps >= 0, "server.uav_speed_mps must be >= 0");
  require(server.tx_power_w >= 0, "server.tx_power_w must be >= 0");
  require(server.uplink_bw_hz > 0 && server.downlink_bw_hz > 0 && server.migration_bw_hz > 0,
          "bandwidths must be > 0");
  require(server.sat_rate_bps > 0, "server.sat_rate_bps must be > 0");
  require(vehicle.tx_power_w >= 0, "vehicle.tx_power_w must be >= 0");
  require(vehicle.gen_mb_per_s > 0, "vehicle.gen_mb_per_s must be > 0");
  require(vehicle.migration_bits > 0, "vehicle.migration_mb must be > 0");
  require(vehicle.cycles_per_bit > 0, "vehicle.cycles_per_bit must be > 0");
  require(reward.w_latency >= 0 && reward.w_load >= 0 && reward.w_failure >= 0,
          "reward weights must be >= 0");
  require(reward.clip > 0, "reward.clip must be > 0");
  require(reward.calibration_episodes >= 1, "reward.calibration_episodes must be >= 1");
  require(env.distance_sentinel_m > 0 && env.min_distance_m > 0, "env distances must be > 0");
  forecast.validate();
  require(marl.gamma >= 0 && marl.gamma <= 1, "marl.gamma must be in [0, 1]");
  require(marl.clip > 0 && marl.clip < 1, "marl.clip must be in (0, 1)");
  require(marl.actor_lr > 0 && marl.critic_lr > 0, "learning rates must be > 0");
  require(marl.epochs >= 1 && marl.hidden >= 1 && marl.layers >= 1, "marl sizes must be >= 1");
  require(marl.episodes >= 0, "marl.episodes must be >= 0");
  require(marl.episodes_per_batch >= 1 && marl.minibatch >= 1, "marl batch sizes must be >= 1");
  require(marl.entropy_coef >= 0 && marl.max_grad_norm >= 0, "marl coefficients must be >= 0");
  require(marl.train_scenarios >= 1 && marl.eval_seeds >= 1, "marl seed counts must be >= 1");
}

SimConfig SimConfig::paper() {
  SimConfig c;
  c.preset = "paper";
  c.scenario.rsus = 76;
  c.scenario.uavs = 10;
  c.scenario.vehicles = 5;
  return c;
}

SimConfig SimConfig::desk() {
  SimConfig c;
  c.preset = "desk";
  // thermal noise kTB over the 300 MHz channel
  c.channel.noise_power = 1.2e-12;
  // consumer LEO uplink class; keeps the satellite a costly fallback
  c.server.sat_rate_bps = 2e7;
  c.scenario.rsu_spacing_m = 2400.0;
  c.vehicle.gen_mb_per_s = 1.0;
  c.flow.period = 24;
  c.flow.offset = 3.5;
  c.flow.amplitude = 3.0;
  c.flow.noise_std = 1.2;
  c.marl.hidden = 64;
  // Monte-Carlo returns over 200 slots drown the per-action signal at gamma 0.99
  c.marl.bootstrap = true;
  c.forecast.per_server = false;
  c.forecast.epochs = 30;
  return c;
}

SimConfig SimConfig::from_preset(std::string_view name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ValidationError("unknown preset '" + std::string(name) + "' (expected desk or paper)");
}

void set_value(SimConfig& config, std::string_view key, std::string_view value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ValidationError("unknown config key '" + std::string(key) + "'");
  f->set(config, value);
}

std::vector<std::pair<std::string, std::string>> to_key_values(const SimConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(config));
  return out;
}

std::uint64_t config_digest(const SimConfig& config) {
  std::string blob;
  for (const auto& [k, v] : to_key_values(config)) blob += k + "=" + v + "\n";
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : blob) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

SimConfig parse_config(std::string_view text, const std::string& origin) {
  struct Entry {
    std::string key, value;
    int line;
  };
  std::vector<Entry> entries;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError(where + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ValidationError(where + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ValidationError(where + ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (find_field(key) == nullptr) throw ValidationError(where + ": unknown config key '" + key + "'");
    entries.push_back({key, value, line_no});
  }
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.key).second) {
      throw ValidationError(origin + ":" + std::to_string(e.line) + ": duplicate key '" + e.key + "'");
    }
  }
  SimConfig config = SimConfig::desk();
  for (const auto& e : entries) {
    if (e.key == "preset") config = SimConfig::from_preset(e.value);
  }
  for (const auto& e : entries) {
    if (e.key == "preset") continue;
    try {
      set_value(config, e.key, e.value);
    } catch (const ValidationError& err) {
      throw ValidationError(origin + ":" + std::to_string(e.line) + ": " + err.what());
    }
  }
  config.validate();
  return config;
}

SimConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace vtmig::env
