#pragma once

// DM-MAPPO building blocks: the masked categorical actor, the action-value
// critic, Monte-Carlo returns, baseline advantages and the clipped surrogate.
// Networks are tanh MLPs over scaled observations; every loss comes with an
// analytic gradient so the training loop and the finite-difference tests use
// the same code.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "vtmig/env/config.hpp"
#include "vtmig/marl/config.hpp"
#include "vtmig/nn.hpp"

namespace vtmig::marl {

using nn::Mat;
using nn::Vec;
using Mask = std::vector<std::uint8_t>;

/// Fully connected tanh network with a linear head. Columns are samples.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int inputs, int hidden, int layers, int outputs);

  struct Cache {
    std::vector<Mat> acts;  // acts[0] = input, acts[l+1] = output of layer l
  };

  int inputs() const { return inputs_; }
  int outputs() const { return outputs_; }
  const nn::ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return layout_.size(); }

  /// Glorot init with the output layer scaled by `head_scale`.
  std::vector<double> init(std::mt19937_64& rng, double head_scale) const;

  Mat forward(const std::vector<double>& params, const Mat& x, Cache* cache = nullptr) const;
  /// Adds dLoss/dparams for the batch in `cache` given dLoss/dOutput.
  void backward(const std::vector<double>& params, const Cache& cache, const Mat& d_out,
                std::vector<double>& grad) const;

 private:
  int inputs_ = 0;
  int outputs_ = 0;
  int n_layers_ = 0;
  nn::ParamLayout layout_;
};

/// Observation scaling shared by actor and critic: distances over the RSU
/// range and loads over the cache limit, both capped.
struct FeatureScale {
  double distance_m = 1200.0;
  double load_bits = 300.0 * env::kBitsPerMegabyte;
  double cap = 10.0;

  static FeatureScale from(const env::SimConfig& config);
  Vec apply(std::span<const double> observation, std::size_t n_servers) const;
};

enum class ActionMode { Sample, Argmax };

/// probs ⊙ mask; argmax (ties to the lowest id) or a draw from the
/// renormalized product. Throws std::invalid_argument on an empty mask.
int masked_action(std::span<const double> probs, const Mask& mask, ActionMode mode, std::mt19937_64& rng);

/// probs ⊙ mask renormalized to sum to 1.
Vec masked_probs(std::span<const double> probs, const Mask& mask);

/// G_t = r_t + gamma * G_{t+1}.
std::vector<double> mc_returns(std::span<const double> rewards, double gamma);

/// Q(o,a) - sum over unmasked a' of pi_old(a'|o) Q(o,a'), pi_old renormalized
/// over the mask. Throws if `action` is masked.
double advantage(std::span<const double> q, int action, const Mask& mask, std::span<const double> probs_old);

/// min(ratio * A, clip(ratio, 1-eps, 1+eps) * A).
double clipped_surrogate(double ratio, double adv, double eps);

/// One agent decision, stored at rollout time.
struct Transition {
  int agent = 0;
  Vec features;        // scaled observation
  Mask mask;
  int action = 0;
  double reward = 0.0;
  Vec probs_old;       // masked, renormalized pi_old(.|o)
  bool done = false;   // last decision of this agent in the episode
  double target = 0.0;     // critic target (return)
  double advantage = 0.0;  // filled after the critic update
};

/// Actor and critic parameters for every agent (one entry when shared).
struct AgentParams {
  std::vector<double> actor;
  std::vector<double> critic;
  nn::AdamState actor_opt;
  nn::AdamState critic_opt;
};

class ActorCritic {
 public:
  ActorCritic() = default;
  ActorCritic(std::size_t n_servers, int n_agents, const MarlConfig& config, const FeatureScale& scale,
              std::uint64_t seed);

  std::size_t n_servers() const { return n_servers_; }
  std::size_t obs_dim() const { return 2 * n_servers_ - 1; }
  int n_agents() const { return n_agents_; }
  const MarlConfig& config() const { return config_; }
  const FeatureScale& scale() const { return scale_; }
  const Mlp& actor_net() const { return actor_; }
  const Mlp& critic_net() const { return critic_; }

  /// Parameter slot used by `agent` (0 when shared).
  std::size_t slot(int agent) const;
  AgentParams& params(int agent) { return params_.at(slot(agent)); }
  const AgentParams& params(int agent) const { return params_.at(slot(agent)); }
  std::vector<AgentParams>& all_params() { return params_; }
  const std::vector<AgentParams>& all_params() const { return params_; }

  Vec features(std::span<const double> observation) const;
  /// Softmax over all M actions from a raw observation of length 2M-1.
  Vec actor_forward(int agent, std::span<const double> observation) const;
  /// Q(o, .) for all M actions from a raw observation.
  Vec critic_forward(int agent, std::span<const double> observation) const;

  Mat actor_probs(int agent, const Mat& features) const;
  Mat critic_values(int agent, const Mat& features) const;

  /// Mean over the batch of min(r A, clip(r) A) (+ entropy bonus when
  /// configured). When `grad` is given, adds the gradient of the negated
  /// objective (the minimized loss) with respect to the actor parameters.
  double actor_objective(const std::vector<double>& actor_params, std::span<const Transition* const> batch,
                         std::vector<double>* grad) const;
  /// Mean squared error between Q(o,a) and the stored target; adds its
  /// gradient when `grad` is given.
  double critic_loss(const std::vector<double>& critic_params, std::span<const Transition* const> batch,
                     std::vector<double>* grad) const;

 private:
  std::size_t n_servers_ = 0;
  int n_agents_ = 0;
  MarlConfig config_;
  FeatureScale scale_;
  Mlp actor_;
  Mlp critic_;
  std::vector<AgentParams> params_;
};

}  // namespace vtmig::marl
