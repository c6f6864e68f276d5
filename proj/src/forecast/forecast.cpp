#include "vtmig/forecast/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "vtmig/data.hpp"
#include "vtmig/error.hpp"
#include "vtmig/forecast/kernels.hpp"
#include "vtmig/forecast/layers.hpp"
#include "vtmig/seed.hpp"

namespace vtmig::forecast {
namespace {

using nn::ConstMatMap;
using nn::MatMap;

bool uses_conv(ModelKind k) { return k == ModelKind::CnnLstm || k == ModelKind::CnnGru; }
bool uses_gru(ModelKind k) { return k == ModelKind::Gru || k == ModelKind::CnnGru; }

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::LstmTransformer: return "lstm-transformer";
    case ModelKind::Lstm: return "lstm";
    case ModelKind::Gru: return "gru";
    case ModelKind::CnnLstm: return "cnn-lstm";
    case ModelKind::CnnGru: return "cnn-gru";
  }
  return "unknown";
}

ModelKind model_kind_from_string(std::string_view name) {
  for (auto k : kAllModelKinds) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown forecast model '" + std::string(name) + "'");
}

void ForecastConfig::validate() const {
  if (window < 1 || lstm_hidden < 1 || attn_dim < 1 || heads < 1 || conv_channels < 1 ||
      epochs < 0 || batch_size < 1) {
    throw ValidationError("forecast config: sizes must be positive");
  }
  if (!(learning_rate > 0.0)) throw ValidationError("forecast config: learning rate must be > 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("forecast config: train_fraction must be in (0, 1)");
  }
}

ForecastModel::ForecastModel(ModelKind kind, const ForecastConfig& config, std::uint64_t seed)
    : kind_(kind), config_(config) {
  config_.validate();
  const Eigen::Index h = config_.lstm_hidden;
  const Eigen::Index gates = uses_gru(kind_) ? 3 * h : 4 * h;
  Eigen::Index rnn_in = 1;
  if (uses_conv(kind_)) {
    conv_w_ = static_cast<int>(layout_.add("conv.w", 1, config_.conv_channels));
    conv_b_ = static_cast<int>(layout_.add("conv.b", 1, config_.conv_channels));
    rnn_in = config_.conv_channels;
  }
  rnn_wx_ = static_cast<int>(layout_.add("rnn.wx", rnn_in, gates));
  rnn_wh_ = static_cast<int>(layout_.add("rnn.wh", h, gates));
  rnn_b_ = static_cast<int>(layout_.add("rnn.b", 1, gates));
  Eigen::Index feature = h;
  if (kind_ == ModelKind::LstmTransformer) {
    const Eigen::Index dk = config_.attn_dim;
    const Eigen::Index width = dk * config_.heads;
    dense_w_ = static_cast<int>(layout_.add("dense.w", h, dk));
    dense_b_ = static_cast<int>(layout_.add("dense.b", 1, dk));
    wq_ = static_cast<int>(layout_.add("attn.wq", dk, width));
    wk_ = static_cast<int>(layout_.add("attn.wk", dk, width));
    wv_ = static_cast<int>(layout_.add("attn.wv", dk, width));
    wo_ = static_cast<int>(layout_.add("attn.wo", width, dk));
    feature = dk;
  }
  head_w_ = static_cast<int>(layout_.add("head.w", feature, 1));
  head_b_ = static_cast<int>(layout_.add("head.b", 1, 1));

  std::mt19937_64 rng(seed);
  nn::glorot_init(layout_, params_, rng);
  if (!uses_gru(kind_)) {
    // forget-gate bias starts at 1
    auto b = layout_.view(params_, static_cast<std::size_t>(rnn_b_));
    b.middleCols(h, h).setOnes();
  }
}

double ForecastModel::forward(std::span<const double> window) const {
  return run(window, 0.0, nullptr);
}

double ForecastModel::accumulate_gradient(std::span<const double> window, double target,
                                          std::span<double> grad) const {
  if (grad.size() != params_.size()) {
    throw std::invalid_argument("accumulate_gradient: gradient buffer size mismatch");
  }
  return run(window, target, &grad);
}

double ForecastModel::run(std::span<const double> window, double target,
                          std::span<double>* grad) const {
  const Eigen::Index steps = config_.window;
  if (window.size() != static_cast<std::size_t>(steps)) {
    throw std::invalid_argument("forecast: window length " + std::to_string(window.size()) +
                                " != " + std::to_string(steps));
  }
  auto pv = [&](int slot) { return layout_.view(params_, static_cast<std::size_t>(slot)); };
  auto gv = [&](int slot) {
    const auto& s = layout_[static_cast<std::size_t>(slot)];
    return MatMap(grad->data() + s.offset, s.rows, s.cols);
  };

  Mat x(steps, 1);
  for (Eigen::Index t = 0; t < steps; ++t) x(t, 0) = window[static_cast<std::size_t>(t)];

  Mat conv_pre;
  Mat rnn_in;
  if (conv_w_ >= 0) {
    conv_pre = x * pv(conv_w_);
    conv_pre.rowwise() += pv(conv_b_).row(0);
    rnn_in = conv_pre.cwiseMax(0.0);
  } else {
    rnn_in = x;
  }

  LstmSeqCache lstm_cache;
  GruSeqCache gru_cache;
  Mat hidden;
  if (uses_gru(kind_)) {
    const GruWeights w{pv(rnn_wx_), pv(rnn_wh_), pv(rnn_b_)};
    hidden = gru_forward(rnn_in, w, grad ? &gru_cache : nullptr);
  } else {
    const LstmWeights w{pv(rnn_wx_), pv(rnn_wh_), pv(rnn_b_)};
    hidden = lstm_forward(rnn_in, w, grad ? &lstm_cache : nullptr);
  }

  Mat embedded;
  Mat attended;
  AttentionCache attn_cache;
  RowVec feature;
  const bool transformer = kind_ == ModelKind::LstmTransformer;
  std::optional<AttentionWeights> aw;
  if (transformer) {
    embedded = hidden * pv(dense_w_);
    embedded.rowwise() += pv(dense_b_).row(0);
    aw.emplace(AttentionWeights{pv(wq_), pv(wk_), pv(wv_), pv(wo_), config_.heads,
                                config_.attn_dim});
    attended = multi_head_attention(embedded, *aw, grad ? &attn_cache : nullptr);
    if (config_.pooling == Pooling::Last) {
      feature = attended.row(steps - 1);
    } else {
      feature = attended.colwise().mean();
    }
  } else {
    feature = hidden.row(steps - 1);
  }

  const double pred = (feature * pv(head_w_))(0, 0) + pv(head_b_)(0, 0);
  if (!grad) return pred;

  const double err = pred - target;
  const double dpred = 2.0 * err;
  gv(head_w_).col(0) += dpred * feature.transpose();
  gv(head_b_)(0, 0) += dpred;
  const RowVec dfeature = dpred * pv(head_w_).col(0).transpose();

  Mat d_hidden = Mat::Zero(steps, hidden.cols());
  if (transformer) {
    Mat d_attended = Mat::Zero(steps, attended.cols());
    if (config_.pooling == Pooling::Last) {
      d_attended.row(steps - 1) = dfeature;
    } else {
      d_attended.rowwise() += dfeature / static_cast<double>(steps);
    }
    AttentionGrads ag{gv(wq_), gv(wk_), gv(wv_), gv(wo_)};
    const Mat d_embedded = multi_head_attention_backward(attn_cache, d_attended, *aw, ag);
    gv(dense_w_).noalias() += hidden.transpose() * d_embedded;
    gv(dense_b_).row(0) += d_embedded.colwise().sum();
    d_hidden.noalias() = d_embedded * pv(dense_w_).transpose();
  } else {
    d_hidden.row(steps - 1) = dfeature;
  }

  Mat d_rnn_in;
  if (uses_gru(kind_)) {
    const GruWeights w{pv(rnn_wx_), pv(rnn_wh_), pv(rnn_b_)};
    GruGrads g{gv(rnn_wx_), gv(rnn_wh_), gv(rnn_b_)};
    d_rnn_in = gru_backward(gru_cache, d_hidden, w, g);
  } else {
    const LstmWeights w{pv(rnn_wx_), pv(rnn_wh_), pv(rnn_b_)};
    LstmGrads g{gv(rnn_wx_), gv(rnn_wh_), gv(rnn_b_)};
    d_rnn_in = lstm_backward(lstm_cache, d_hidden, w, g);
  }

  if (conv_w_ >= 0) {
    const Mat d_pre = d_rnn_in.cwiseProduct((conv_pre.array() > 0.0).cast<double>().matrix());
    gv(conv_w_).noalias() += x.transpose() * d_pre;
    gv(conv_b_).row(0) += d_pre.colwise().sum();
  }
  return err * err;
}

double ForecastBundle::predict(std::size_t server, std::span<const double> raw_window) const {
  const Scaling& s = scaling.at(server);
  std::vector<double> norm(raw_window.size());
  for (std::size_t i = 0; i < raw_window.size(); ++i) norm[i] = s.normalize(raw_window[i]);
  return s.denormalize(model_for(server).forward(norm));
}

std::size_t train_window_count(std::size_t n, const ForecastConfig& config) {
  const auto window = static_cast<std::size_t>(config.window);
  if (n < window + 2) {
    throw ValidationError("forecast: series of length " + std::to_string(n) +
                          " is too short (need at least T + 2 = " +
                          std::to_string(window + 2) + ")");
  }
  const std::size_t total = n - window;
  const auto train = static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(total)));
  return std::clamp<std::size_t>(train, 1, total - 1);
}

Scaling fit_scaling(std::span<const double> series, const ForecastConfig& config) {
  const std::size_t n_train = train_window_count(series.size(), config);
  const std::size_t touched = n_train + static_cast<std::size_t>(config.window);
  const auto z = data::zscore(series.first(touched));
  return Scaling{z.mean, z.std};
}

std::vector<double> fit_samples(ForecastModel& model, const std::vector<Sample>& samples,
                                std::uint64_t seed, Exec exec) {
  const auto& cfg = model.config();
  std::vector<double> curve;
  if (samples.empty()) return curve;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  nn::AdamState state;
  const nn::AdamOptions opt{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.max_grad_norm};
  std::vector<double> grad(model.params().size());
  std::vector<const Sample*> batch;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[order[i]]);
      std::fill(grad.begin(), grad.end(), 0.0);
      total += batch_gradient(model, batch, grad, exec);
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (double& g : grad) g *= inv;
      nn::adam_step(model.params(), grad, state, opt);
    }
    curve.push_back(total / static_cast<double>(samples.size()));
  }
  if (!nn::all_finite(model.params())) {
    throw std::runtime_error("forecast training diverged (non-finite weights)");
  }
  return curve;
}

namespace {

std::vector<Sample> training_samples(std::span<const double> series, const Scaling& s,
                                     const ForecastConfig& cfg) {
  const std::size_t n_train = train_window_count(series.size(), cfg);
  const auto windows = data::make_windows(series, cfg.window);
  std::vector<Sample> out;
  out.reserve(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    Sample smp;
    smp.inputs.reserve(windows[i].inputs.size());
    for (double v : windows[i].inputs) smp.inputs.push_back(s.normalize(v));
    smp.target = s.normalize(windows[i].target);
    out.push_back(std::move(smp));
  }
  return out;
}

std::vector<double> running_min(const std::vector<double>& curve) {
  std::vector<double> out(curve.size());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < curve.size(); ++i) {
    best = std::min(best, curve[i]);
    out[i] = best;
  }
  return out;
}

}  // namespace

TrainResult train_model(ModelKind kind, const std::vector<std::vector<double>>& series,
                        const ForecastConfig& config, std::uint64_t seed, Exec exec) {
  config.validate();
  if (series.empty()) throw ValidationError("train_model: no series");
  TrainResult result;
  auto& bundle = result.bundle;
  bundle.kind = kind;
  bundle.config = config;
  std::vector<std::vector<Sample>> samples(series.size());
  for (std::size_t m = 0; m < series.size(); ++m) {
    bundle.scaling.push_back(fit_scaling(series[m], config));
    samples[m] = training_samples(series[m], bundle.scaling[m], config);
  }

  if (config.per_server) {
    const auto n = static_cast<std::ptrdiff_t>(series.size());
    bundle.models.reserve(series.size());
    for (std::ptrdiff_t m = 0; m < n; ++m) {
      bundle.models.emplace_back(kind, config, mix_seed(seed, static_cast<std::uint64_t>(m)));
    }
    result.loss_curves.resize(series.size());
#pragma omp parallel for schedule(dynamic) if (exec == Exec::OpenMP)
    for (std::ptrdiff_t m = 0; m < n; ++m) {
      const auto idx = static_cast<std::size_t>(m);
      result.loss_curves[idx] =
          fit_samples(bundle.models[idx], samples[idx],
                      mix_seed(seed, 1000 + static_cast<std::uint64_t>(m)), Exec::Serial);
    }
  } else {
    std::vector<Sample> pooled;
    for (auto& s : samples) {
      for (auto& smp : s) pooled.push_back(std::move(smp));
    }
    bundle.models.emplace_back(kind, config, mix_seed(seed, 0));
    result.loss_curves.push_back(
        fit_samples(bundle.models.front(), pooled, mix_seed(seed, 1000), exec));
  }
  for (const auto& c : result.loss_curves) result.best_loss_curves.push_back(running_min(c));
  return result;
}

ForecastMetrics compute_metrics(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("compute_metrics: size mismatch");
  if (pred.empty()) throw ValidationError("compute_metrics: empty test set");
  const auto n = static_cast<double>(pred.size());
  double se = 0.0, ae = 0.0, rel = 0.0, mean = 0.0;
  std::size_t n_rel = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    se += e * e;
    ae += std::abs(e);
    if (target[i] != 0.0) {
      rel += std::abs(e) / std::abs(target[i]);
      ++n_rel;
    }
    mean += target[i];
  }
  mean /= n;
  double ss_tot = 0.0;
  for (double t : target) ss_tot += (t - mean) * (t - mean);
  ForecastMetrics m;
  m.rmse = std::sqrt(se / n);
  m.mae = ae / n;
  m.error_rate_pct = n_rel ? 100.0 * rel / static_cast<double>(n_rel) : 0.0;
  if (ss_tot > 0.0) {
    m.r2 = 1.0 - se / ss_tot;
  } else {
    m.r2 = std::numeric_limits<double>::quiet_NaN();
    m.r2_defined = false;
  }
  return m;
}

namespace {

template <typename Predict>
EvaluationResult evaluate_with(const std::vector<std::vector<double>>& series,
                               const ForecastConfig& cfg, const std::vector<Scaling>& scaling,
                               Predict&& predict) {
  EvaluationResult out;
  std::vector<double> norm_pred, norm_target;
  for (std::size_t m = 0; m < series.size(); ++m) {
    const std::size_t n_train = train_window_count(series[m].size(), cfg);
    const auto windows = data::make_windows(series[m], cfg.window);
    for (std::size_t i = n_train; i < windows.size(); ++i) {
      const double p = predict(m, windows[i].inputs);
      out.predictions.push_back(p);
      out.targets.push_back(windows[i].target);
      norm_pred.push_back(scaling[m].normalize(p));
      norm_target.push_back(scaling[m].normalize(windows[i].target));
    }
  }
  out.raw = compute_metrics(out.predictions, out.targets);
  out.normalized = compute_metrics(norm_pred, norm_target);
  return out;
}

}  // namespace

EvaluationResult evaluate(const ForecastBundle& bundle,
                          const std::vector<std::vector<double>>& series) {
  if (series.size() != bundle.n_servers()) {
    throw ValidationError("evaluate: bundle has " + std::to_string(bundle.n_servers()) +
                          " servers, data has " + std::to_string(series.size()));
  }
  return evaluate_with(series, bundle.config, bundle.scaling,
                       [&](std::size_t m, const std::vector<double>& in) {
                         return bundle.predict(m, in);
                       });
}

EvaluationResult evaluate_persistence(const std::vector<std::vector<double>>& series,
                                      const ForecastConfig& config) {
  std::vector<Scaling> scaling;
  for (const auto& s : series) scaling.push_back(fit_scaling(s, config));
  return evaluate_with(series, config, scaling,
                       [](std::size_t, const std::vector<double>& in) { return in.back(); });
}

double flow_to_load(double flow_count, double per_vehicle_bits) {
  if (flow_count < 0.0) throw ValidationError("flow_to_load: negative flow count");
  return flow_count * per_vehicle_bits;
}

namespace {

nlohmann::json config_to_json(const ForecastConfig& c) {
  return {{"window", c.window},
          {"lstm_hidden", c.lstm_hidden},
          {"attn_dim", c.attn_dim},
          {"heads", c.heads},
          {"conv_channels", c.conv_channels},
          {"per_server", c.per_server},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"train_fraction", c.train_fraction},
          {"batch_size", c.batch_size},
          {"pooling", c.pooling == Pooling::Last ? "last" : "mean"},
          {"max_grad_norm", c.max_grad_norm}};
}

ForecastConfig config_from_json(const nlohmann::json& j) {
  ForecastConfig c;
  c.window = j.at("window").get<int>();
  c.lstm_hidden = j.at("lstm_hidden").get<int>();
  c.attn_dim = j.at("attn_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.conv_channels = j.at("conv_channels").get<int>();
  c.per_server = j.at("per_server").get<bool>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.train_fraction = j.at("train_fraction").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.pooling = j.at("pooling").get<std::string>() == "mean" ? Pooling::Mean : Pooling::Last;
  c.max_grad_norm = j.at("max_grad_norm").get<double>();
  return c;
}

}  // namespace

void save_bundle(const std::filesystem::path& path, const ForecastBundle& bundle) {
  nlohmann::json j;
  j["format"] = "vtmig-forecast";
  j["version"] = 1;
  j["kind"] = std::string(to_string(bundle.kind));
  j["config"] = config_to_json(bundle.config);
  j["scaling"] = nlohmann::json::array();
  for (const auto& s : bundle.scaling) j["scaling"].push_back({s.mean, s.std});
  j["models"] = nlohmann::json::array();
  for (const auto& m : bundle.models) j["models"].push_back(m.params());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump();
}

ForecastBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open forecast checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "vtmig-forecast") {
    throw ValidationError(path.string() + ": not a forecast checkpoint");
  }
  ForecastBundle b;
  b.kind = model_kind_from_string(j.at("kind").get<std::string>());
  b.config = config_from_json(j.at("config"));
  for (const auto& s : j.at("scaling")) b.scaling.push_back(Scaling{s.at(0), s.at(1)});
  for (const auto& p : j.at("models")) {
    ForecastModel m(b.kind, b.config, 0);
    auto values = p.get<std::vector<double>>();
    if (values.size() != m.params().size()) {
      throw ValidationError(path.string() + ": parameter count does not match the config");
    }
    m.params() = std::move(values);
    b.models.push_back(std::move(m));
  }
  if (b.models.empty() || (b.models.size() != 1 && b.models.size() != b.scaling.size())) {
    throw ValidationError(path.string() + ": inconsistent model/server count");
  }
  return b;
}

}  // namespace vtmig::forecast
