#include "vtmig/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "vtmig/csv.hpp"
#include "vtmig/error.hpp"

namespace vtmig::data {

TrajectorySet load_trajectories(const std::filesystem::path& path) {
  CsvReader reader(path, {"vehicle_id", "slot_index", "lat", "lon"});
  std::map<int, std::map<int, physics::GeoPosition>> raw;
  std::vector<std::string_view> f;
  while (reader.next(f)) {
    const int vid = reader.parse_int(f[0]);
    const int slot = reader.parse_int(f[1]);
    const double lat = reader.parse_double(f[2]);
    const double lon = reader.parse_double(f[3]);
    if (slot < 0) reader.fail("negative slot index");
    physics::GeoPosition pos;
    try {
      pos = physics::GeoPosition::from_degrees(lat, lon);
    } catch (const ValidationError& e) {
      reader.fail(e.what());
    }
    if (!raw[vid].emplace(slot, pos).second) {
      reader.fail("duplicate (vehicle " + std::to_string(vid) + ", slot " +
                  std::to_string(slot) + ")");
    }
  }
  TrajectorySet out;
  for (auto& [vid, slots] : raw) {
    std::vector<physics::GeoPosition> track;
    track.reserve(slots.size());
    int expected = 0;
    for (auto& [slot, pos] : slots) {
      if (slot != expected) {
        throw ValidationError(path.string() + ": vehicle " + std::to_string(vid) +
                              " has non-contiguous slots (missing " +
                              std::to_string(expected) + ")");
      }
      track.push_back(pos);
      ++expected;
    }
    out.emplace(vid, std::move(track));
  }
  return out;
}

void write_trajectories(const std::filesystem::path& path, const TrajectorySet& set) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "vehicle_id,slot_index,lat,lon\n" << std::setprecision(17);
  for (const auto& [vid, track] : set) {
    for (std::size_t t = 0; t < track.size(); ++t) {
      out << vid << ',' << t << ',' << track[t].lat_deg << ',' << track[t].lon_deg << '\n';
    }
  }
}

FlowSet load_flow(const std::filesystem::path& path) {
  CsvReader reader(path, {"server_id", "slot_index", "flow_count"});
  std::map<int, std::map<int, double>> raw;
  std::vector<std::string_view> f;
  while (reader.next(f)) {
    const int sid = reader.parse_int(f[0]);
    const int slot = reader.parse_int(f[1]);
    const double count = reader.parse_double(f[2]);
    if (slot < 0) reader.fail("negative slot index");
    if (count < 0.0) reader.fail("negative flow count");
    if (!raw[sid].emplace(slot, count).second) {
      reader.fail("duplicate (server " + std::to_string(sid) + ", slot " +
                  std::to_string(slot) + ")");
    }
  }
  FlowSet out;
  for (auto& [sid, slots] : raw) {
    std::vector<double> series;
    series.reserve(slots.size());
    int expected = 0;
    for (auto& [slot, count] : slots) {
      if (slot != expected) {
        throw ValidationError(path.string() + ": server " + std::to_string(sid) +
                              " has a gap at slot " + std::to_string(expected));
      }
      series.push_back(count);
      ++expected;
    }
    out.emplace(sid, std::move(series));
  }
  return out;
}

void write_flow(const std::filesystem::path& path, const FlowSet& set) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "server_id,slot_index,flow_count\n" << std::setprecision(17);
  for (const auto& [sid, series] : set) {
    for (std::size_t t = 0; t < series.size(); ++t) {
      out << sid << ',' << t << ',' << series[t] << '\n';
    }
  }
}

std::vector<double> expand_bins(std::span<const double> bins, int repeat) {
  if (repeat < 1) throw ValidationError("expand_bins: repeat must be >= 1");
  std::vector<double> out;
  out.reserve(bins.size() * static_cast<std::size_t>(repeat));
  for (double b : bins) out.insert(out.end(), static_cast<std::size_t>(repeat), b);
  return out;
}

std::vector<std::vector<double>> synth_flow(const SynthFlowParams& p) {
  if (p.period < 2) throw ValidationError("synth_flow: period must be >= 2");
  if (p.n_servers < 0 || p.n_slots < 0) throw ValidationError("synth_flow: negative size");
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * physics::kPi);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(p.n_servers));
  for (auto& series : out) {
    const double phase = phase_dist(rng);
    series.resize(static_cast<std::size_t>(p.n_slots));
    for (int t = 0; t < p.n_slots; ++t) {
      const double angle = 2.0 * physics::kPi * t / p.period + phase;
      double v = p.offset + p.amplitude * std::sin(angle);
      if (p.noise_std > 0.0) v += p.noise_std * noise(rng);
      series[static_cast<std::size_t>(t)] = std::max(0.0, std::round(v));
    }
  }
  return out;
}

double noise_std_for_snr_db(double amplitude, double snr_db) {
  const double signal_power = amplitude * amplitude / 2.0;
  return std::sqrt(signal_power / std::pow(10.0, snr_db / 10.0));
}

std::vector<FlowWindow> make_windows(std::span<const double> series, int window,
                                     int server_id) {
  if (window < 1) throw ValidationError("make_windows: window must be >= 1");
  if (series.size() <= static_cast<std::size_t>(window)) {
    throw ValidationError("make_windows: series of length " + std::to_string(series.size()) +
                          " is too short for window " + std::to_string(window));
  }
  std::vector<FlowWindow> out;
  const std::size_t n = series.size() - static_cast<std::size_t>(window);
  out.reserve(n);
  for (std::size_t start = 0; start < n; ++start) {
    FlowWindow w;
    w.inputs.assign(series.begin() + static_cast<std::ptrdiff_t>(start),
                    series.begin() + static_cast<std::ptrdiff_t>(start + window));
    w.target_index = static_cast<int>(start) + window;
    w.target = series[static_cast<std::size_t>(w.target_index)];
    w.server_id = server_id;
    out.push_back(std::move(w));
  }
  return out;
}

ZScore zscore(std::span<const double> series) {
  if (series.empty()) throw ValidationError("zscore: empty series");
  ZScore z;
  double sum = 0.0;
  for (double v : series) sum += v;
  z.mean = sum / static_cast<double>(series.size());
  double ss = 0.0;
  for (double v : series) ss += (v - z.mean) * (v - z.mean);
  z.std = std::max(std::sqrt(ss / static_cast<double>(series.size())), kStdFloor);
  z.values.reserve(series.size());
  for (double v : series) z.values.push_back((v - z.mean) / z.std);
  return z;
}

}  // namespace vtmig::data
