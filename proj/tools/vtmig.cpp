// vtmig: command-line runner for the vehicle-twin migration simulator.
//
//   vtmig run --policy greedy --seed 3
//   vtmig train-forecaster --synthetic
//   vtmig train-marl --forecaster out/forecaster_lstm-transformer.json
//   vtmig sweep --param migration_mb --values 40,60,80,100,120
//   vtmig report out/
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <algorithm>
#include <chrono>
#include <exception>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "vtmig/app/report.hpp"
#include "vtmig/app/runner.hpp"
#include "vtmig/env/scenario.hpp"
#include "vtmig/error.hpp"
#include "vtmig/forecast/forecast.hpp"
#include "vtmig/data.hpp"
#include "vtmig/seed.hpp"

namespace fs = std::filesystem;
using namespace vtmig;
using app::Json;

namespace {

struct Common {
  app::ConfigSource source;
  std::uint64_t seed = 1;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool ablations) {
  sub->add_option("--config", c.source.file, "Config file (key = value, [section] prefixes)")
      ->check(CLI::ExistingFile);
  sub->add_option("--preset", c.source.preset, "Preset when no config file is given")
      ->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("--set", c.source.sets, "Override one key, e.g. --set scenario.slots=100");
  sub->add_option("--seed", c.seed, "Seed");
  sub->add_option("--out", c.out, std::string("Output directory (default $") + app::kOutDirEnv + " or vtmig_out)");
  if (ablations) {
    sub->add_flag("--no-mask", c.source.no_mask, "Disable the dynamic feasibility mask");
    sub->add_flag("--no-prediction", c.source.no_prediction, "Use last observed flows instead of forecasts");
    sub->add_flag("--no-uav", c.source.no_uav, "Remove the UAVs");
    sub->add_flag("--no-satellite", c.source.no_satellite, "Remove the satellite");
  }
}

fs::path out_dir(const Common& c) {
  fs::path p = c.out.empty() ? app::default_out_dir() : c.out;
  fs::create_directories(p);
  return p;
}

std::optional<forecast::ForecastBundle> maybe_forecaster(const std::string& path, const env::SimConfig& config) {
  if (path.empty() || !config.ablation.prediction) return std::nullopt;
  return forecast::load_bundle(path);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int cmd_run(const Common& c, const std::string& policy_spec, const std::string& forecaster_path) {
  const auto config = app::assemble_config(c.source);
  const auto fc = maybe_forecaster(forecaster_path, config);
  const auto policy = app::resolve_policy(policy_spec, config);
  const auto outcome = app::run_once(config, policy, c.seed, fc ? &*fc : nullptr);
  const auto path = out_dir(c) / "report.json";
  app::write_json(path, outcome.report);
  std::cout << outcome.report["metrics"].dump() << '\n';
  std::cerr << "report: " << path.string() << '\n';
  return 0;
}

std::vector<std::vector<double>> flow_series(const std::string& data_path, const env::SimConfig& config,
                                             std::uint64_t seed) {
  if (data_path.empty()) return env::forecaster_history(config, seed);
  std::vector<std::vector<double>> series;
  for (auto& [id, values] : data::load_flow(data_path)) series.push_back(std::move(values));
  return series;
}

int cmd_train_forecaster(const Common& c, const std::string& data_path, const std::vector<std::string>& models) {
  const auto config = app::assemble_config(c.source);
  const auto series = flow_series(data_path, config, c.seed);
  const int need = config.forecast.window + 2;
  for (const auto& s : series) {
    if (static_cast<int>(s.size()) < need) {
      throw ValidationError("flow series of " + std::to_string(s.size()) + " slots is shorter than window + 2 (" +
                            std::to_string(need) + ")");
    }
  }
  if (series.empty()) throw ValidationError("no flow series to train on");
  std::vector<forecast::ModelKind> kinds;
  if (models.empty()) {
    kinds.assign(std::begin(forecast::kAllModelKinds), std::end(forecast::kAllModelKinds));
  } else {
    for (const auto& m : models) kinds.push_back(forecast::model_kind_from_string(m));
  }
  const auto dir = out_dir(c);
  const auto exec = forecast::Exec::OpenMP;

  Json doc = app::document("train-forecaster");
  doc["config_digest"] = app::hex_digest(env::config_digest(config));
  doc["seed"] = c.seed;
  doc["source"] = data_path.empty() ? "synthetic" : data_path;
  doc["servers"] = series.size();
  doc["slots"] = series.front().size();
  Json rows = Json::array();
  std::ofstream csv(dir / "forecast_metrics.csv");
  csv << "model,rmse,mae,error_rate_pct,r2\n";
  auto add_row = [&](const std::string& name, const forecast::ForecastMetrics& m, double seconds) {
    rows.push_back(Json{{"model", name},
                        {"rmse", m.rmse},
                        {"mae", m.mae},
                        {"error_rate_pct", m.error_rate_pct},
                        {"r2", m.r2_defined ? Json(m.r2) : Json(nullptr)},
                        {"train_seconds", seconds}});
    csv << name << ',' << fmt(m.rmse) << ',' << fmt(m.mae) << ',' << fmt(m.error_rate_pct) << ','
        << (m.r2_defined ? fmt(m.r2) : std::string("nan")) << '\n';
    std::cout << name << "  rmse " << fmt(m.rmse) << "  mae " << fmt(m.mae) << "  r2 " << fmt(m.r2) << '\n';
  };
  for (const auto kind : kinds) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = forecast::train_model(kind, series, config.forecast, c.seed, exec);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string name(forecast::to_string(kind));
    forecast::save_bundle(dir / ("forecaster_" + name + ".json"), result.bundle);
    add_row(name, forecast::evaluate(result.bundle, series).raw, secs);
  }
  add_row("persistence", forecast::evaluate_persistence(series, config.forecast).raw, 0.0);
  doc["metrics"] = rows;
  app::write_json(dir / "forecast_report.json", doc);
  std::cerr << "checkpoints and metrics: " << dir.string() << '\n';
  return 0;
}

int cmd_train_marl(const Common& c, const std::string& forecaster_path, std::optional<int> episodes) {
  auto config = app::assemble_config(c.source);
  if (forecaster_path.empty() && config.ablation.prediction) {
    throw ValidationError("train-marl needs --forecaster FILE or --no-prediction");
  }
  if (episodes) {
    if (*episodes < 0) throw ValidationError("--episodes must be >= 0");
    config.marl.episodes = *episodes;
  }
  const auto fc = maybe_forecaster(forecaster_path, config);
  const auto norm = env::calibrate_normalizer(config);
  const auto dir = out_dir(c);
  const auto t0 = std::chrono::steady_clock::now();
  // trajectory files can fix a vehicle count different from scenario.vehicles
  const auto probe = env::make_scenario(config, c.seed);
  marl::ActorCritic model(probe.servers.size(), static_cast<int>(probe.vehicles.size()), config.marl,
                          marl::FeatureScale::from(config), c.seed);
  std::ofstream log(dir / "train_log.jsonl");
  if (!log) throw std::runtime_error("cannot write " + (dir / "train_log.jsonl").string());
  marl::train(model, marl::TrainSetup{config, norm, fc ? &*fc : nullptr, c.seed}, [&](const marl::EpisodeLog& e) {
    log << e.json_line() << '\n';
    if ((e.episode + 1) % 50 == 0) std::cerr << "episode " << e.episode + 1 << " reward " << fmt(e.mean_reward) << '\n';
  });
  log.close();
  marl::save_policy(dir / "policy.json", model, config);
  const double train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  env::EpisodeMetrics sum;
  int infeasible = 0;
  const auto seeds = marl::eval_seeds(config.marl.eval_seeds);
  for (const auto s : seeds) {
    auto world = env::make_world(config, s, norm, fc ? &*fc : nullptr);
    const auto m = marl::evaluate(model, world);
    sum.mean_reward += m.mean_reward;
    sum.total_latency_s += m.total_latency_s;
    sum.total_load_variance += m.total_load_variance;
    sum.total_packet_loss_pct += m.total_packet_loss_pct;
    infeasible += m.infeasible_selected;
  }
  const double n = static_cast<double>(seeds.size());
  Json doc = app::document("train-marl");
  doc["config_digest"] = app::hex_digest(env::config_digest(config));
  doc["seed"] = c.seed;
  doc["episodes"] = config.marl.episodes;
  doc["ablation"] = app::ablation_json(config.ablation);
  doc["forecaster"] = fc ? forecaster_path : "";
  doc["eval"] = Json{{"seeds", seeds.size()},
                     {"mean_reward", sum.mean_reward / n},
                     {"O_T", sum.total_latency_s / n},
                     {"O_V", sum.total_load_variance / n},
                     {"O_D", sum.total_packet_loss_pct / n},
                     {"infeasible_selected", infeasible}};
  doc["train_seconds"] = train_s;
  doc["config"] = app::config_json(config);
  app::write_json(dir / "train_report.json", doc);
  std::cout << doc["eval"].dump() << '\n';
  std::cerr << "policy: " << (dir / "policy.json").string() << '\n';
  return 0;
}

int cmd_sweep(const Common& c, const std::string& param, const std::string& values_text,
              const std::string& policy_spec, const std::string& forecaster_path) {
  const auto base = app::assemble_config(c.source);
  const auto values = app::parse_values(values_text);
  const std::string key = param == "migration_mb" ? "vehicle.migration_mb" : "vehicle.gen_mb_per_s";
  const auto fc = maybe_forecaster(forecaster_path, base);
  const auto policy = app::resolve_policy(policy_spec, base);

  std::vector<env::SimConfig> configs;
  for (const double v : values) {
    auto cfg = base;
    env::set_value(cfg, key, fmt(v));
    cfg.validate();
    configs.push_back(cfg);
  }
  // each value is an independent world; reports are written afterwards in order
  std::vector<Json> reports(values.size());
  std::vector<std::exception_ptr> errors(values.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < values.size(); ++i) {
    try {
      reports[i] = app::run_once(configs[i], policy, c.seed, fc ? &*fc : nullptr).report;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const auto dir = out_dir(c) / ("sweep_" + param);
  fs::create_directories(dir);
  std::ofstream csv(dir / "summary.csv");
  csv << param << ",O_T,O_V,O_D,migrations,mean_reward\n";
  app::Curve lat{policy.name, {}, {}}, loss{policy.name, {}, {}}, var{policy.name, {}, {}};
  Json index = app::document("sweep");
  index["parameter"] = param;
  index["seed"] = c.seed;
  index["policy"] = policy.name;
  index["reports"] = Json::array();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto name = param + "_" + fmt(values[i]) + ".json";
    reports[i]["sweep"] = Json{{"parameter", param}, {"value", values[i]}};
    app::write_json(dir / name, reports[i]);
    const auto& m = reports[i]["metrics"];
    csv << fmt(values[i]) << ',' << fmt(m["O_T"].get<double>()) << ',' << fmt(m["O_V"].get<double>()) << ','
        << fmt(m["O_D"].get<double>()) << ',' << m["migrations"].get<int>() << ','
        << fmt(m["mean_reward"].get<double>()) << '\n';
    lat.x.push_back(values[i]);
    lat.y.push_back(m["O_T"].get<double>());
    loss.x.push_back(values[i]);
    loss.y.push_back(m["O_D"].get<double>());
    var.x.push_back(values[i]);
    var.y.push_back(m["O_V"].get<double>());
    index["reports"].push_back(name);
    std::cout << param << '=' << fmt(values[i]) << "  O_T " << fmt(m["O_T"].get<double>()) << "  O_V "
              << fmt(m["O_V"].get<double>()) << "  O_D " << fmt(m["O_D"].get<double>()) << '\n';
  }
  const std::string xl = param == "migration_mb" ? "migration data (MB)" : "generated data (MB/s)";
  app::write_svg(dir / "summary.svg", "Sweep over " + param,
                 {{"Total latency O_T (s)", xl, {lat}},
                  {"Total packet loss O_D (%)", xl, {loss}},
                  {"Total load variance O_V (bits^2)", xl, {var}}});
  app::write_json(dir / "sweep.json", index);
  std::cerr << "sweep: " << dir.string() << '\n';
  return 0;
}

void collect_reports(const fs::path& p, std::vector<fs::path>& out) {
  if (fs::is_directory(p)) {
    std::vector<fs::path> entries;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && e.path().extension() == ".json") entries.push_back(e.path());
    }
    std::sort(entries.begin(), entries.end());
    out.insert(out.end(), entries.begin(), entries.end());
  } else if (fs::exists(p)) {
    out.push_back(p);
  } else {
    throw ValidationError("no such file or directory: " + p.string());
  }
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) collect_reports(in, files);
  std::ostringstream md;
  md << "| report | command | policy | seed | O_T (s) | O_V | O_D (%) | migrations | reward |\n";
  md << "|---|---|---|---|---|---|---|---|---|\n";
  int rows = 0;
  for (const auto& f : files) {
    Json j;
    try {
      j = app::read_json(f);
    } catch (const ValidationError&) {
      continue;  // not JSON; policy/forecast checkpoints are skipped below too
    }
    if (!j.is_object() || !j.contains("schema_version")) continue;
    if (j["schema_version"].get<int>() > app::kSchemaVersion) {
      throw ValidationError(f.string() + ": schema_version " + std::to_string(j["schema_version"].get<int>()) +
                            " is newer than this tool (" + std::to_string(app::kSchemaVersion) + ")");
    }
    const auto cmd = j.value("command", "");
    const Json* m = nullptr;
    if (cmd == "run" && j.contains("metrics")) m = &j["metrics"];
    if (cmd == "train-marl" && j.contains("eval")) m = &j["eval"];
    if (m == nullptr) continue;
    auto num = [&](const char* k) { return m->contains(k) ? fmt((*m)[k].get<double>()) : std::string("-"); };
    md << "| " << f.string() << " | " << cmd << " | " << j.value("policy", cmd == "train-marl" ? "dm-mappo" : "")
       << " | " << j.value("seed", 0ULL) << " | " << num("O_T") << " | " << num("O_V") << " | " << num("O_D")
       << " | " << (m->contains("migrations") ? std::to_string((*m)["migrations"].get<int>()) : "-") << " | "
       << num("mean_reward") << " |\n";
    ++rows;
  }
  if (rows == 0) throw ValidationError("no run or train-marl reports found");
  std::cout << md.str();
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "summary.md") << md.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Vehicle-twin migration simulator: RSU/UAV/satellite edge servers, flow forecasting, DM-MAPPO"};
  cli.require_subcommand(1);
  cli.set_version_flag("--version", app::version());

  Common common;
  std::string policy = "greedy", forecaster, data_path, param, values, report_out;
  std::vector<std::string> models, report_inputs;
  std::optional<int> episodes;
  bool synthetic = false;

  auto* run = cli.add_subcommand("run", "Evaluate one episode and write report.json");
  add_common(run, common, true);
  run->add_option("--policy", policy, "greedy, random, random-unmasked, nearest or a policy checkpoint");
  run->add_option("--forecaster", forecaster, "Forecast checkpoint used for predicted loads")->check(CLI::ExistingFile);

  auto* tf = cli.add_subcommand("train-forecaster", "Train the LSTM-Transformer and the baseline forecasters");
  add_common(tf, common, false);
  auto* data_opt = tf->add_option("--data", data_path, "Flow CSV (server_id,slot_index,flow_count)")
                       ->check(CLI::ExistingFile);
  tf->add_flag("--synthetic", synthetic, "Train on the synthetic flow history of the scenario (default)")
      ->excludes(data_opt);
  tf->add_option("--models", models, "Subset of lstm-transformer, lstm, gru, cnn-lstm, cnn-gru");

  auto* tm = cli.add_subcommand("train-marl", "Train DM-MAPPO; writes policy.json and train_log.jsonl");
  add_common(tm, common, true);
  tm->add_option("--forecaster", forecaster, "Forecast checkpoint (or pass --no-prediction)")
      ->check(CLI::ExistingFile);
  tm->add_option("--episodes", episodes, "Training episodes (overrides marl.episodes)");

  auto* sw = cli.add_subcommand("sweep", "Evaluate a policy over migration or generated data sizes");
  add_common(sw, common, true);
  sw->add_option("--param", param, "migration_mb or gen_mb")
      ->required()
      ->check(CLI::IsMember({"migration_mb", "gen_mb"}));
  sw->add_option("--values", values, "Comma-separated positive values")->required();
  sw->add_option("--policy", policy, "greedy, random, random-unmasked, nearest or a policy checkpoint");
  sw->add_option("--forecaster", forecaster, "Forecast checkpoint used for predicted loads")->check(CLI::ExistingFile);

  auto* rp = cli.add_subcommand("report", "Tabulate run and train-marl reports");
  rp->add_option("inputs", report_inputs, "Report files or directories")->required();
  rp->add_option("--out", report_out, "Also write summary.md here");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(common, policy, forecaster);
    if (*tf) return cmd_train_forecaster(common, data_path, models);
    if (*tm) return cmd_train_marl(common, forecaster, episodes);
    if (*sw) return cmd_sweep(common, param, values, policy, forecaster);
    if (*rp) return cmd_report(report_inputs, report_out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
