#pragma once

// Report emission for the command-line runner: versioned JSON documents,
// the deterministic metric block, and small static SVG charts.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "vtmig/env/world.hpp"

namespace vtmig::app {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Build version tag (project version plus the git revision when known).
std::string version();

std::string hex_digest(std::uint64_t value);

Json config_json(const env::SimConfig& config);
Json ablation_json(const env::Ablations& ablation);

/// Episode objectives and counters. Contains no timing, so identical
/// (config, seed, policy) runs serialize identically.
Json metrics_json(const env::EpisodeMetrics& metrics);

/// Per-slot traces from a finished world.
Json traces_json(const env::World& world);

struct RunInfo {
  std::string policy;
  std::uint64_t seed = 0;
  std::string prediction_source;  // "forecast" or "persistence"
  double wall_clock_s = 0.0;
};

/// Self-contained record of one evaluated episode.
Json run_report(const env::World& world, const env::EpisodeMetrics& metrics, const RunInfo& info);

/// Common header fields for every document the tool writes.
Json document(const std::string& command);

void write_json(const std::filesystem::path& path, const Json& doc);
Json read_json(const std::filesystem::path& path);

struct Curve {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::vector<Curve> curves;
};

/// Panels stacked vertically in one SVG file.
void write_svg(const std::filesystem::path& path, const std::string& title, const std::vector<Panel>& panels);

}  // namespace vtmig::app
