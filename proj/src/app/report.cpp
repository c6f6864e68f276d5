#include "vtmig/app/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "vtmig/error.hpp"

#ifndef VTMIG_VERSION
#define VTMIG_VERSION "0.1.0"
#endif

namespace vtmig::app {

std::string version() { return VTMIG_VERSION; }

std::string hex_digest(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

Json config_json(const env::SimConfig& config) {
  Json j = Json::object();
  for (const auto& [k, v] : env::to_key_values(config)) j[k] = v;
  return j;
}

Json ablation_json(const env::Ablations& a) {
  return Json{{"mask", a.mask}, {"prediction", a.prediction}, {"uav", a.uav}, {"satellite", a.satellite}};
}

Json metrics_json(const env::EpisodeMetrics& m) {
  Json j;
  j["O_T"] = m.total_latency_s;
  j["O_V"] = m.total_load_variance;
  j["O_D"] = m.total_packet_loss_pct;
  j["q_v"] = m.packet_loss_pct;
  j["migrations"] = m.migrations;
  j["failures"] = m.failures;
  j["fallbacks"] = m.fallbacks;
  j["infeasible_selected"] = m.infeasible_selected;
  j["mean_reward"] = m.mean_reward;
  j["decisions"] = m.decisions;
  j["slots"] = m.slots;
  return j;
}

Json traces_json(const env::World& world) {
  std::vector<int> slot, failures, migrations;
  std::vector<double> variance, latency;
  std::vector<std::vector<std::int64_t>> loads;
  for (const auto& r : world.history()) {
    slot.push_back(r.slot);
    variance.push_back(r.variance);
    latency.push_back(r.latency_s);
    failures.push_back(r.failures);
    migrations.push_back(r.migrations);
    loads.push_back(r.loads);
  }
  Json j;
  j["slot"] = slot;
  j["load_variance"] = variance;
  j["latency_s"] = latency;
  j["failures"] = failures;
  j["migrations"] = migrations;
  j["loads_bits"] = loads;
  return j;
}

Json document(const std::string& command) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["tool"] = "vtmig";
  j["version"] = version();
  j["command"] = command;
  return j;
}

Json run_report(const env::World& world, const env::EpisodeMetrics& metrics, const RunInfo& info) {
  Json j = document("run");
  j["config_digest"] = hex_digest(env::config_digest(world.config()));
  j["seed"] = info.seed;
  j["policy"] = info.policy;
  j["ablation"] = ablation_json(world.config().ablation);
  j["prediction_source"] = info.prediction_source;
  j["metrics"] = metrics_json(metrics);
  const auto c = world.conservation();
  j["conservation"] = Json{{"arrivals_bits", c.arrivals}, {"drained_bits", c.drained}, {"residual_bits", c.residual}};
  j["traces"] = traces_json(world);
  j["wall_clock_s"] = info.wall_clock_s;
  j["config"] = config_json(world.config());
  return j;
}

void write_json(const std::filesystem::path& path, const Json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

namespace {

constexpr double kWidth = 640, kPanelHeight = 240, kLeft = 70, kRight = 20, kTop = 40, kBottom = 40;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

}  // namespace

void write_svg(const std::filesystem::path& path, const std::string& title, const std::vector<Panel>& panels) {
  const double height = kTop + kPanelHeight * static_cast<double>(panels.size()) + 10;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const double y0 = kTop + kPanelHeight * static_cast<double>(p);
    const double plot_top = y0 + 20, plot_bottom = y0 + kPanelHeight - kBottom;
    const double plot_left = kLeft, plot_right = kWidth - kRight;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& c : panel.curves) {
      for (std::size_t i = 0; i < std::min(c.x.size(), c.y.size()); ++i) {
        if (!std::isfinite(c.x[i]) || !std::isfinite(c.y[i])) continue;
        xmin = std::min(xmin, c.x[i]);
        xmax = std::max(xmax, c.x[i]);
        ymin = std::min(ymin, c.y[i]);
        ymax = std::max(ymax, c.y[i]);
      }
    }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto sx = [&](double x) { return plot_left + (x - xmin) / (xmax - xmin) * (plot_right - plot_left); };
    auto sy = [&](double y) { return plot_bottom - (y - ymin) / (ymax - ymin) * (plot_bottom - plot_top); };

    svg << "<text x=\"" << plot_left << "\" y=\"" << y0 + 12 << "\" font-size=\"12\">" << escape(panel.title)
        << "</text>\n";
    svg << "<rect x=\"" << plot_left << "\" y=\"" << plot_top << "\" width=\"" << plot_right - plot_left
        << "\" height=\"" << plot_bottom - plot_top << "\" fill=\"none\" stroke=\"#444\"/>\n";
    svg << "<text x=\"" << plot_left - 4 << "\" y=\"" << plot_bottom << "\" text-anchor=\"end\">" << num(ymin)
        << "</text>\n";
    svg << "<text x=\"" << plot_left - 4 << "\" y=\"" << plot_top + 8 << "\" text-anchor=\"end\">" << num(ymax)
        << "</text>\n";
    svg << "<text x=\"" << plot_left << "\" y=\"" << plot_bottom + 14 << "\">" << num(xmin) << "</text>\n";
    svg << "<text x=\"" << plot_right << "\" y=\"" << plot_bottom + 14 << "\" text-anchor=\"end\">" << num(xmax)
        << "</text>\n";
    svg << "<text x=\"" << (plot_left + plot_right) / 2 << "\" y=\"" << plot_bottom + 28
        << "\" text-anchor=\"middle\">" << escape(panel.x_label) << "</text>\n";
    for (std::size_t k = 0; k < panel.curves.size(); ++k) {
      const Curve& c = panel.curves[k];
      const char* color = kColors[k % std::size(kColors)];
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < std::min(c.x.size(), c.y.size()); ++i) {
        if (std::isfinite(c.x[i]) && std::isfinite(c.y[i])) svg << sx(c.x[i]) << ',' << sy(c.y[i]) << ' ';
      }
      svg << "\"/>\n";
      if (c.x.size() <= 20) {
        for (std::size_t i = 0; i < std::min(c.x.size(), c.y.size()); ++i) {
          if (std::isfinite(c.x[i]) && std::isfinite(c.y[i])) {
            svg << "<circle cx=\"" << sx(c.x[i]) << "\" cy=\"" << sy(c.y[i]) << "\" r=\"3\" fill=\"" << color
                << "\"/>\n";
          }
        }
      }
      svg << "<text x=\"" << plot_right - 4 << "\" y=\"" << plot_top + 14 + 13 * static_cast<double>(k)
          << "\" text-anchor=\"end\" fill=\"" << color << "\">" << escape(c.label) << "</text>\n";
    }
  }
  svg << "</svg>\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << svg.str();
}

}  // namespace vtmig::app
