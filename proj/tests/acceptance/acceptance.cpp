// Acceptance suite: one PASS/FAIL line per criterion, with the measured
// numbers and the runtime against its budget. Exit status 0 only when every
// selected criterion passes.
//
//   vtmig_acceptance                 all nine criteria
//   vtmig_acceptance --only 1,4,9    a subset
//   vtmig_acceptance --work DIR      scratch directory for CLI runs

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "support/oracles.hpp"
#include "vtmig/app/report.hpp"
#include "vtmig/data.hpp"
#include "vtmig/env/policies.hpp"
#include "vtmig/env/scenario.hpp"
#include "vtmig/forecast/forecast.hpp"
#include "vtmig/forecast/layers.hpp"
#include "vtmig/marl/train.hpp"
#include "vtmig/physics.hpp"
#include "vtmig/seed.hpp"

namespace fs = std::filesystem;
using namespace vtmig;
using vtmig::forecast::Mat;
using vtmig::testing::numeric_gradient;
using vtmig::testing::relative_error;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// ---------------------------------------------------------------------------
// 1

Verdict physics_oracles() {
  physics::ChannelParams p;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> lat(-90.0, 90.0), lon(-180.0, 180.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double a = lat(rng), b = lon(rng), c = lat(rng), d = lon(rng);
    const double got = physics::surface_distance(physics::GeoPosition::from_degrees(a, b),
                                                 physics::GeoPosition::from_degrees(c, d), p);
    const double want = vtmig::testing::great_circle_oracle(a, b, c, d, p.earth_radius_m);
    if (want > 1.0) worst = std::max(worst, std::abs(got - want) / want);
  }
  double gain_err = 0.0;
  for (double dist : {1.0, 10.0, 250.0, 1200.0, 3.3e4}) {
    const double g1 = physics::channel_gain(dist, p), g2 = physics::channel_gain(2.0 * dist, p);
    gain_err = std::max(gain_err, std::abs(g1 / g2 - 4.0));
  }
  const double rate = physics::shannon_rate({300e6, 10.0, 1.0}, 1.0, 10.0);
  const bool ok = worst < 1e-3 && gain_err <= 1e-12 && rate == 300e6;
  return {ok, "max distance rel err " + fmt(worst) + ", gain(D)/gain(2D) - 4 = " + fmt(gain_err) +
                  ", rate(SNR=1, B=300 MHz) = " + fmt(rate, 12)};
}

// ---------------------------------------------------------------------------
// 2

double lstm_cell_check() {
  std::mt19937_64 rng(3);
  const Eigen::Index in = 2, h = 4, steps = 5;
  const std::size_t np = static_cast<std::size_t>(in * 4 * h + h * 4 * h + 4 * h);
  const auto theta = random_vector(np, rng);
  const auto xv = random_vector(static_cast<std::size_t>(steps * in), rng, 1.0);
  const auto coef = random_vector(static_cast<std::size_t>(steps * h), rng, 1.0);
  const Mat x = nn::ConstMatMap(xv.data(), steps, in);
  const Mat cm = nn::ConstMatMap(coef.data(), steps, h);
  auto weights = [&](const double* p) {
    return forecast::LstmWeights{nn::ConstMatMap(p, in, 4 * h), nn::ConstMatMap(p + in * 4 * h, h, 4 * h),
                                 nn::ConstMatMap(p + in * 4 * h + h * 4 * h, 1, 4 * h)};
  };
  auto loss = [&](std::span<const double> p) {
    return forecast::lstm_forward(x, weights(p.data())).cwiseProduct(cm).sum();
  };
  std::vector<double> g(np, 0.0);
  forecast::LstmSeqCache cache;
  forecast::lstm_forward(x, weights(theta.data()), &cache);
  forecast::LstmGrads grads{nn::MatMap(g.data(), in, 4 * h), nn::MatMap(g.data() + in * 4 * h, h, 4 * h),
                            nn::MatMap(g.data() + in * 4 * h + h * 4 * h, 1, 4 * h)};
  forecast::lstm_backward(cache, cm, weights(theta.data()), grads);
  return relative_error(g, numeric_gradient(loss, theta));
}

std::pair<double, double> attention_check() {
  std::mt19937_64 rng(5);
  const Eigen::Index d = 6, steps = 6;
  const int heads = 2, hd = 4;
  const Eigen::Index w = heads * hd;
  const std::size_t np = static_cast<std::size_t>(3 * d * w + w * d);
  const auto theta = random_vector(np, rng);
  const auto xv = random_vector(static_cast<std::size_t>(steps * d), rng, 1.0);
  const auto coef = random_vector(static_cast<std::size_t>(steps * d), rng, 1.0);
  const Mat x = nn::ConstMatMap(xv.data(), steps, d);
  const Mat cm = nn::ConstMatMap(coef.data(), steps, d);
  auto weights = [&](const double* p) {
    return forecast::AttentionWeights{nn::ConstMatMap(p, d, w), nn::ConstMatMap(p + d * w, d, w),
                                      nn::ConstMatMap(p + 2 * d * w, d, w), nn::ConstMatMap(p + 3 * d * w, w, d),
                                      heads, hd};
  };
  auto loss = [&](std::span<const double> p) {
    return forecast::multi_head_attention(x, weights(p.data())).cwiseProduct(cm).sum();
  };
  std::vector<double> g(np, 0.0);
  forecast::AttentionCache cache;
  forecast::multi_head_attention(x, weights(theta.data()), &cache);
  forecast::AttentionGrads grads{nn::MatMap(g.data(), d, w), nn::MatMap(g.data() + d * w, d, w),
                                 nn::MatMap(g.data() + 2 * d * w, d, w), nn::MatMap(g.data() + 3 * d * w, w, d)};
  forecast::multi_head_attention_backward(cache, cm, weights(theta.data()), grads);
  double row_err = 0.0;
  for (const auto& pr : cache.probs) {
    for (Eigen::Index r = 0; r < pr.rows(); ++r) row_err = std::max(row_err, std::abs(pr.row(r).sum() - 1.0));
  }
  return {relative_error(g, numeric_gradient(loss, theta)), row_err};
}

double full_model_check() {
  forecast::ForecastConfig cfg;
  cfg.window = 5;
  cfg.lstm_hidden = 4;
  cfg.attn_dim = 4;
  cfg.heads = 2;
  forecast::ForecastModel model(forecast::ModelKind::LstmTransformer, cfg, 9);
  std::mt19937_64 rng(11);
  const auto window = random_vector(5, rng, 1.0);
  const double target = 0.3;
  std::vector<double> g(model.params().size(), 0.0);
  model.accumulate_gradient(window, target, g);
  auto loss = [&](std::span<const double> p) {
    forecast::ForecastModel m = model;
    m.params().assign(p.begin(), p.end());
    const double e = m.forward(window) - target;
    return e * e;
  };
  return relative_error(g, numeric_gradient(loss, model.params()));
}

Verdict forecaster_numerics() {
  const double cell = lstm_cell_check();
  const auto [attn, rows] = attention_check();
  const double full = full_model_check();
  const bool ok = cell < 1e-4 && attn < 1e-4 && full < 1e-4 && rows <= 1e-6;
  return {ok, "rel err LSTM " + fmt(cell) + ", attention " + fmt(attn) + ", full model " + fmt(full) +
                  "; max |row sum - 1| " + fmt(rows)};
}

// ---------------------------------------------------------------------------
// 3

Verdict forecaster_ordering() {
  data::SynthFlowParams p;
  p.n_servers = 8;
  p.n_slots = 2000;
  p.period = 48;
  p.offset = 60.0;
  p.amplitude = 40.0;
  p.noise_std = data::noise_std_for_snr_db(p.amplitude, 10.0);
  p.seed = 2024;
  const auto series = data::synth_flow(p);
  forecast::ForecastConfig cfg;
  cfg.per_server = false;
  cfg.epochs = 30;
  const auto exec = forecast::Exec::OpenMP;
  const auto lt = forecast::train_model(forecast::ModelKind::LstmTransformer, series, cfg, 1, exec);
  const auto ls = forecast::train_model(forecast::ModelKind::Lstm, series, cfg, 1, exec);
  const auto m_lt = forecast::evaluate(lt.bundle, series).raw;
  const auto m_ls = forecast::evaluate(ls.bundle, series).raw;
  const auto m_pe = forecast::evaluate_persistence(series, cfg).raw;
  const bool ok = m_lt.rmse <= m_ls.rmse && m_lt.rmse <= 0.9 * m_pe.rmse && m_lt.r2 >= 0.85;
  return {ok, "RMSE LSTM-Transformer " + fmt(m_lt.rmse) + ", LSTM " + fmt(m_ls.rmse) + ", persistence " +
                  fmt(m_pe.rmse) + " (ratio " + fmt(m_lt.rmse / m_pe.rmse, 3) + "); R2 " + fmt(m_lt.r2, 3)};
}

// ---------------------------------------------------------------------------
// shared desk experiments

struct PolicyStats {
  double reward = 0.0, O_T = 0.0, O_V = 0.0, O_D = 0.0;
  int infeasible = 0;
  int n = 0;

  void add(const env::EpisodeMetrics& m) {
    reward += m.mean_reward;
    O_T += m.total_latency_s;
    O_V += m.total_load_variance;
    O_D += m.total_packet_loss_pct;
    infeasible += m.infeasible_selected;
    ++n;
  }
  PolicyStats mean() const {
    PolicyStats s = *this;
    const double d = n > 0 ? n : 1;
    s.reward /= d;
    s.O_T /= d;
    s.O_V /= d;
    s.O_D /= d;
    return s;
  }
};

struct Desk {
  env::SimConfig config = env::SimConfig::desk();
  std::optional<forecast::ForecastBundle> forecaster;
  env::RewardNormalizer norm;
  bool ready = false;
  // trained policies by (ablation tag, seed)
  std::map<std::pair<std::string, std::uint64_t>, PolicyStats> dm;
  std::map<std::pair<std::string, std::uint64_t>, int> train_infeasible;

  void prepare() {
    if (ready) return;
    const auto history = env::forecaster_history(config, 1);
    forecaster = forecast::train_model(forecast::ModelKind::LstmTransformer, history, config.forecast, 1,
                                       forecast::Exec::OpenMP)
                     .bundle;
    norm = env::calibrate_normalizer(config);
    ready = true;
  }

  env::SimConfig variant(const std::string& tag) const {
    auto c = config;
    if (tag == "no-prediction") c.ablation.prediction = false;
    if (tag == "no-uav") c.ablation.uav = false;
    return c;
  }

  const forecast::ForecastBundle* fc(const env::SimConfig& c) const {
    return c.ablation.prediction && forecaster ? &*forecaster : nullptr;
  }

  // Train DM-MAPPO under `tag` with `seed`; evaluation on the held-out seeds.
  const PolicyStats& dm_mappo(const std::string& tag, std::uint64_t seed, int eval_count) {
    const auto key = std::make_pair(tag, seed);
    if (auto it = dm.find(key); it != dm.end()) return it->second;
    prepare();
    const auto c = variant(tag);
    const auto n = env::calibrate_normalizer(c);
    marl::ActorCritic model(env::build_servers(c).size(), c.scenario.vehicles, c.marl, marl::FeatureScale::from(c),
                            seed);
    int infeasible = 0;
    marl::train(model, marl::TrainSetup{c, n, fc(c), seed},
                [&](const marl::EpisodeLog& e) { infeasible += e.infeasible_selected; });
    PolicyStats s;
    for (const auto es : marl::eval_seeds(eval_count)) {
      auto world = env::make_world(c, es, n, fc(c));
      s.add(marl::evaluate(model, world));
    }
    train_infeasible[key] = infeasible;
    return dm[key] = s.mean();
  }

  PolicyStats baseline(const env::Policy& policy, const std::string& tag, const std::vector<std::uint64_t>& seeds) {
    prepare();
    const auto c = variant(tag);
    const auto n = env::calibrate_normalizer(c);
    PolicyStats s;
    for (const auto es : seeds) {
      auto world = env::make_world(c, es, n, fc(c));
      s.add(env::run_episode(world, policy, mix_seed(es, 3)));
    }
    return s.mean();
  }
};

// ---------------------------------------------------------------------------
// 4

Verdict mask_benefit() {
  const auto masked = env::SimConfig::desk();
  auto unmasked = masked;
  unmasked.ablation.mask = false;
  const auto norm = env::calibrate_normalizer(masked);
  double od_m = 0.0, od_u = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto seed = mix_seed(0xACCE, s);
    auto wm = env::make_world(masked, seed, norm, nullptr);
    od_m += env::run_episode(wm, env::random_masked_action, mix_seed(seed, 3)).total_packet_loss_pct / 10;
    auto wu = env::make_world(unmasked, seed, norm, nullptr);
    od_u += env::run_episode(wu, env::random_masked_action, mix_seed(seed, 3)).total_packet_loss_pct / 10;
  }
  const double reduction = od_u > 0 ? 1.0 - od_m / od_u : 0.0;
  return {reduction >= 0.2, "O_D masked random " + fmt(od_m) + " vs unmasked random " + fmt(od_u) + " (" +
                                fmt(100 * reduction, 3) + "% lower)"};
}

// ---------------------------------------------------------------------------
// 5, 6, 7

Verdict learning(Desk& desk) {
  desk.prepare();
  const int n_eval = desk.config.marl.eval_seeds;
  const auto& dm = desk.dm_mappo("full", 1, n_eval);
  const auto seeds = marl::eval_seeds(n_eval);
  const auto greedy = desk.baseline(env::greedy_action, "full", seeds);
  const auto random = desk.baseline(env::random_masked_action, "full", seeds);
  const int train_inf = desk.train_infeasible[{"full", 1}];
  const bool ok = desk.config.marl.episodes <= 2000 && dm.reward > greedy.reward && dm.reward > random.reward &&
                  dm.infeasible == 0 && train_inf == 0;
  return {ok, std::to_string(desk.config.marl.episodes) + " episodes; eval reward DM-MAPPO " + fmt(dm.reward) +
                  ", greedy " + fmt(greedy.reward) + ", random " + fmt(random.reward) + " on " +
                  std::to_string(n_eval) + " held-out seeds; infeasible selections train " +
                  std::to_string(train_inf) + ", eval " + std::to_string(dm.infeasible)};
}

Verdict prediction_benefit(Desk& desk) {
  const int n_eval = desk.config.marl.eval_seeds;
  double with = 0.0, without = 0.0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    with += desk.dm_mappo("full", s, n_eval).reward / 5;
    without += desk.dm_mappo("no-prediction", s, n_eval).reward / 5;
  }
  return {with >= without, "eval reward with prediction " + fmt(with, 6) + " vs without " + fmt(without, 6) +
                               " (5 training seeds)"};
}

Verdict stranded_without_satellite(const fs::path& work);

Verdict ablation_directionality(Desk& desk, const fs::path& work) {
  const int n_eval = desk.config.marl.eval_seeds;
  const auto seeds = marl::eval_seeds(5);
  struct Row {
    std::string name;
    PolicyStats on, off;
  };
  std::vector<Row> rows;
  rows.push_back({"greedy", desk.baseline(env::greedy_action, "full", seeds),
                  desk.baseline(env::greedy_action, "no-uav", seeds)});
  rows.push_back({"random", desk.baseline(env::random_masked_action, "full", seeds),
                  desk.baseline(env::random_masked_action, "no-uav", seeds)});
  Row dm{"dm-mappo", {}, {}};
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto& a = desk.dm_mappo("full", s, n_eval);
    const auto& b = desk.dm_mappo("no-uav", s, n_eval);
    dm.on.O_T += a.O_T / 5;
    dm.on.O_D += a.O_D / 5;
    dm.off.O_T += b.O_T / 5;
    dm.off.O_D += b.O_D / 5;
  }
  rows.push_back(dm);
  bool ok = true;
  std::string detail;
  for (const auto& r : rows) {
    const bool t_up = r.off.O_T > r.on.O_T, d_up = r.off.O_D > r.on.O_D;
    ok = ok && t_up && d_up;
    detail += r.name + " O_T " + fmt(r.on.O_T, 6) + "->" + fmt(r.off.O_T, 6) + (t_up ? "" : " (no increase)") +
              ", O_D " + fmt(r.on.O_D) + "->" + fmt(r.off.O_D) + (d_up ? "" : " (no increase)") + "; ";
  }
  const auto stranded = stranded_without_satellite(work);
  ok = ok && stranded.pass;
  return {ok, detail + stranded.detail};
}

// ---------------------------------------------------------------------------
// CLI-driven criteria

std::string run_cli(const std::string& args, int& status) {
  const std::string cmd = std::string(VTMIG_CLI) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) throw std::runtime_error("cannot start " + cmd);
  std::string out;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  const int rc = pclose(pipe);
  status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return out;
}

Verdict stranded_without_satellite(const fs::path& work) {
  // one vehicle parked 60 km north of the RSU grid for 20 slots
  const auto traj = work / "stranded_trajectory.csv";
  data::TrajectorySet set;
  const auto desk = env::SimConfig::desk();
  set[0] = std::vector<physics::GeoPosition>(
      20, physics::GeoPosition::from_degrees(desk.scenario.center_lat + 0.55, desk.scenario.center_lon));
  data::write_trajectories(traj, set);
  int status = 0;
  run_cli("run --no-satellite --policy greedy --seed 4 --set scenario.slots=20 --set scenario.trajectory_file=" +
              traj.string() + " --out " + (work / "stranded").string(),
          status);
  if (status != 0) return {false, "stranded run exited with " + std::to_string(status)};
  const auto report = app::read_json(work / "stranded" / "report.json");
  const double q = report["metrics"]["q_v"][0].get<double>();
  return {q > 0.0, "no satellite, stranded vehicle q_v = " + fmt(q) + "%"};
}

Verdict determinism(const fs::path& work) {
  const std::vector<std::string> runs = {
      "run --policy greedy --seed 7",
      "run --policy random --seed 7 --no-mask",
      "run --policy random --seed 11 --no-uav --no-satellite",
  };
  for (const auto& r : runs) {
    int s1 = 0, s2 = 0;
    const auto a = run_cli(r + " --out " + (work / "det_a").string(), s1);
    const auto b = run_cli(r + " --out " + (work / "det_b").string(), s2);
    if (s1 != 0 || s2 != 0) return {false, "'" + r + "' exited with " + std::to_string(s1)};
    if (a != b || a.empty()) return {false, "'" + r + "' metric blocks differ"};
    const auto ja = app::read_json(work / "det_a" / "report.json")["metrics"].dump();
    const auto jb = app::read_json(work / "det_b" / "report.json")["metrics"].dump();
    if (ja != jb) return {false, "'" + r + "' report metric blocks differ"};
  }
  return {true, std::to_string(runs.size()) + " CLI runs repeated, metric blocks byte-identical"};
}

Verdict conservation() {
  const auto config = env::SimConfig::desk();
  const auto norm = env::calibrate_normalizer(config);
  const std::vector<std::pair<std::string, env::Policy>> policies = {
      {"greedy", env::greedy_action}, {"random", env::random_masked_action}, {"unmasked", env::random_unmasked_action}};
  std::int64_t worst = 0, arrivals = 0;
  int episodes = 0, slots = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    for (const auto& [name, p] : policies) {
      auto world = env::make_world(config, mix_seed(0xC0DE, s), norm, nullptr);
      const auto m = env::run_episode(world, p, s);
      const auto c = world.conservation();
      worst = std::max(worst, std::abs(c.imbalance()));
      arrivals += c.arrivals;
      slots = m.slots;
      ++episodes;
    }
  }
  return {worst == 0 && slots == 200 && arrivals > 0,
          std::to_string(episodes) + " episodes of " + std::to_string(slots) +
              " slots, max |arrivals - drained - residual| = " + std::to_string(worst) + " bits"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Acceptance criteria"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "vtmig_acceptance").string();
  cli.add_option("--only", only, "Criteria to run (default all)")->delimiter(',');
  cli.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(cli, argc, argv);
  fs::create_directories(work);

  Desk desk;
  struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "physics oracles", 5, physics_oracles},
      {2, "forecaster gradient checks", 60, forecaster_numerics},
      {3, "forecaster ordering", 600, forecaster_ordering},
      {4, "mask benefit", 300, mask_benefit},
      {5, "DM-MAPPO learning", 1800, [&] { return learning(desk); }},
      {6, "prediction benefit", 1800, [&] { return prediction_benefit(desk); }},
      {7, "ablation directionality", 1800, [&] { return ablation_directionality(desk, work); }},
      {8, "run determinism", 120, [&] { return determinism(work); }},
      {9, "conservation audit", 60, conservation},
  };
  const std::set<int> selected(only.begin(), only.end());
  int passed = 0, total = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    ++total;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_s;
    const bool ok = v.pass && in_budget;
    passed += ok ? 1 : 0;
    std::cout << (ok ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << ": " << v.detail << " [" << fmt(secs, 3)
              << " s / " << fmt(c.budget_s, 4) << " s" << (in_budget ? "" : ", over budget") << "]" << std::endl;
  }
  std::cout << "acceptance: " << passed << "/" << total << " passed" << std::endl;
  return passed == total ? 0 : 1;
}
