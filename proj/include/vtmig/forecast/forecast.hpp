#pragma once

// Workload forecasting: the LSTM-fed multi-head attention predictor, the
// recurrent baselines it is compared against, training, evaluation metrics
// and checkpoints.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vtmig/nn.hpp"

namespace vtmig::forecast {

enum class ModelKind { LstmTransformer, Lstm, Gru, CnnLstm, CnnGru };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);
inline constexpr ModelKind kAllModelKinds[] = {ModelKind::LstmTransformer, ModelKind::Lstm,
                                               ModelKind::Gru, ModelKind::CnnLstm,
                                               ModelKind::CnnGru};

enum class Pooling { Last, Mean };

enum class Exec { Serial, OpenMP };

struct ForecastConfig {
  int window = 6;
  int lstm_hidden = 32;
  int attn_dim = 64;      // d_k, also the per-head width
  int heads = 4;
  int conv_channels = 16; // CNN-* baselines only
  bool per_server = true;
  double learning_rate = 1e-3;
  int epochs = 200;
  double train_fraction = 0.8;
  int batch_size = 32;
  Pooling pooling = Pooling::Last;
  double max_grad_norm = 5.0;

  void validate() const;
};

struct Scaling {
  double mean = 0.0;
  double std = 1.0;

  double normalize(double v) const { return (v - mean) / std; }
  double denormalize(double v) const { return v * std + mean; }
};

/// One trainable predictor operating on z-scored windows.
class ForecastModel {
 public:
  ForecastModel(ModelKind kind, const ForecastConfig& config, std::uint64_t seed);

  ModelKind kind() const { return kind_; }
  const ForecastConfig& config() const { return config_; }
  const nn::ParamLayout& layout() const { return layout_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Prediction on the normalized scale. Throws if the window length != T.
  double forward(std::span<const double> window) const;

  /// Adds d/dparams (pred - target)^2 to grad and returns the squared error.
  double accumulate_gradient(std::span<const double> window, double target,
                             std::span<double> grad) const;

 private:
  double run(std::span<const double> window, double target, std::span<double>* grad) const;

  ModelKind kind_;
  ForecastConfig config_;
  nn::ParamLayout layout_;
  std::vector<double> params_;
  // slot indices, -1 when the kind has no such tensor
  int conv_w_ = -1, conv_b_ = -1;
  int rnn_wx_ = -1, rnn_wh_ = -1, rnn_b_ = -1;
  int dense_w_ = -1, dense_b_ = -1;
  int wq_ = -1, wk_ = -1, wv_ = -1, wo_ = -1;
  int head_w_ = -1, head_b_ = -1;
};

/// Trained predictors for every non-satellite server, with the per-server
/// scaling taken from each training split. Holds one model per server, or a
/// single shared model.
struct ForecastBundle {
  ModelKind kind = ModelKind::LstmTransformer;
  ForecastConfig config;
  std::vector<Scaling> scaling;
  std::vector<ForecastModel> models;

  std::size_t n_servers() const { return scaling.size(); }
  const ForecastModel& model_for(std::size_t server) const {
    return models.size() == 1 ? models.front() : models.at(server);
  }
  /// Raw-scale one-step prediction for `server` from its last T raw flows.
  double predict(std::size_t server, std::span<const double> raw_window) const;
};

struct Sample {
  std::vector<double> inputs;  // normalized
  double target = 0.0;         // normalized
};

struct TrainResult {
  ForecastBundle bundle;
  /// Mean training MSE per epoch (normalized scale), one curve per model.
  std::vector<std::vector<double>> loss_curves;
  /// Running minimum of each loss curve.
  std::vector<std::vector<double>> best_loss_curves;
};

/// Number of training windows for a series of length n.
std::size_t train_window_count(std::size_t n, const ForecastConfig& config);

/// Chronological split: the first train_window_count windows train, the rest
/// test. Scaling is fitted on the values the training windows touch.
Scaling fit_scaling(std::span<const double> series, const ForecastConfig& config);

/// Trains one model per series (or a shared one) with Adam on minibatches.
/// Deterministic under `seed`; Exec::OpenMP parallelises across servers and
/// gives results identical to Exec::Serial.
TrainResult train_model(ModelKind kind, const std::vector<std::vector<double>>& series,
                        const ForecastConfig& config, std::uint64_t seed,
                        Exec exec = Exec::Serial);

/// Trains a single model on prepared samples. Exposed for tests and benches.
std::vector<double> fit_samples(ForecastModel& model, const std::vector<Sample>& samples,
                                std::uint64_t seed, Exec exec = Exec::Serial);

struct ForecastMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  double error_rate_pct = 0.0;  // mean |err| / |target| over non-zero targets
  double r2 = 0.0;              // NaN when targets have zero variance
  bool r2_defined = true;
};

ForecastMetrics compute_metrics(std::span<const double> predictions,
                                std::span<const double> targets);

struct EvaluationResult {
  ForecastMetrics raw;
  ForecastMetrics normalized;
  std::vector<double> predictions;  // raw scale, server-major
  std::vector<double> targets;
};

/// Metrics over the held-out windows of every server.
EvaluationResult evaluate(const ForecastBundle& bundle,
                          const std::vector<std::vector<double>>& series);

/// Same split, predicting the last observed value.
EvaluationResult evaluate_persistence(const std::vector<std::vector<double>>& series,
                                      const ForecastConfig& config);

/// S_m(t) = S_v * c_m(t). Throws for negative flow.
double flow_to_load(double flow_count, double per_vehicle_bits);

void save_bundle(const std::filesystem::path& path, const ForecastBundle& bundle);
ForecastBundle load_bundle(const std::filesystem::path& path);

}  // namespace vtmig::forecast
