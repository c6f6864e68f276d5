#include "vtmig/marl/mappo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "vtmig/seed.hpp"

namespace vtmig::marl {

Mlp::Mlp(int inputs, int hidden, int layers, int outputs)
    : inputs_(inputs), outputs_(outputs), n_layers_(layers + 1) {
  if (inputs < 1 || outputs < 1 || hidden < 1 || layers < 0) throw std::invalid_argument("Mlp: bad shape");
  int in = inputs;
  for (int l = 0; l < n_layers_; ++l) {
    const int out = l + 1 == n_layers_ ? outputs : hidden;
    layout_.add("l" + std::to_string(l) + ".W", out, in);
    layout_.add("l" + std::to_string(l) + ".b", out, 1);
    in = out;
  }
}

std::vector<double> Mlp::init(std::mt19937_64& rng, double head_scale) const {
  std::vector<double> p;
  nn::glorot_init(layout_, p, rng);
  const auto& w = layout_[2 * static_cast<std::size_t>(n_layers_ - 1)];
  for (std::size_t i = 0; i < w.size(); ++i) p[w.offset + i] *= head_scale;
  return p;
}

Mat Mlp::forward(const std::vector<double>& params, const Mat& x, Cache* cache) const {
  if (x.rows() != inputs_) {
    throw std::invalid_argument("Mlp: expected " + std::to_string(inputs_) + " inputs, got " +
                                std::to_string(x.rows()));
  }
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(x);
  }
  Mat a = x;
  for (int l = 0; l < n_layers_; ++l) {
    const auto W = layout_.view(params, 2 * static_cast<std::size_t>(l));
    const auto b = layout_.view(params, 2 * static_cast<std::size_t>(l) + 1);
    Mat z = W * a;
    z.colwise() += b.col(0);
    if (l + 1 < n_layers_) z = z.array().tanh().matrix();
    if (cache) cache->acts.push_back(z);
    a = std::move(z);
  }
  return a;
}

void Mlp::backward(const std::vector<double>& params, const Cache& cache, const Mat& d_out,
                   std::vector<double>& grad) const {
  if (grad.size() != size()) grad.assign(size(), 0.0);
  Mat d = d_out;
  for (int l = n_layers_ - 1; l >= 0; --l) {
    const auto ws = 2 * static_cast<std::size_t>(l);
    const Mat& a_in = cache.acts[static_cast<std::size_t>(l)];
    layout_.view(grad, ws) += d * a_in.transpose();
    layout_.view(grad, ws + 1) += d.rowwise().sum();
    if (l > 0) {
      d = layout_.view(params, ws).transpose() * d;
      d.array() *= 1.0 - a_in.array().square();
    }
  }
}

FeatureScale FeatureScale::from(const env::SimConfig& config) {
  FeatureScale s;
  s.distance_m = config.server.rsu_range_m;
  s.load_bits = config.server.cache_limit_bits;
  return s;
}

Vec FeatureScale::apply(std::span<const double> obs, std::size_t n_servers) const {
  if (obs.size() != 2 * n_servers - 1) {
    throw std::invalid_argument("observation length " + std::to_string(obs.size()) + ", expected " +
                                std::to_string(2 * n_servers - 1));
  }
  Vec f(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double x = i + 1 < n_servers ? obs[i] / distance_m : obs[i] / load_bits;
    f[static_cast<Eigen::Index>(i)] = std::min(x, cap);
  }
  return f;
}

Vec masked_probs(std::span<const double> probs, const Mask& mask) {
  if (probs.size() != mask.size()) throw std::invalid_argument("masked_probs: size mismatch");
  Vec p(static_cast<Eigen::Index>(probs.size()));
  double sum = 0.0;
  int open = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    p[static_cast<Eigen::Index>(i)] = mask[i] ? probs[i] : 0.0;
    sum += p[static_cast<Eigen::Index>(i)];
    open += mask[i] ? 1 : 0;
  }
  if (open == 0) throw std::invalid_argument("empty action mask");
  if (!(sum > 0.0)) {
    // every open action underflowed: fall back to uniform over the mask
    for (std::size_t i = 0; i < probs.size(); ++i) p[static_cast<Eigen::Index>(i)] = mask[i] ? 1.0 / open : 0.0;
    return p;
  }
  return p / sum;
}

int masked_action(std::span<const double> probs, const Mask& mask, ActionMode mode, std::mt19937_64& rng) {
  const Vec p = masked_probs(probs, mask);
  if (mode == ActionMode::Argmax) {
    int best = -1;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      if (best < 0 || p[static_cast<Eigen::Index>(i)] > p[best]) best = static_cast<int>(i);
    }
    return best;
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    last = static_cast<int>(i);
    acc += p[static_cast<Eigen::Index>(i)];
    if (r < acc) return last;
  }
  return last;
}

std::vector<double> mc_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double next = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    next = rewards[i] + gamma * next;
    g[i] = next;
  }
  return g;
}

double advantage(std::span<const double> q, int action, const Mask& mask, std::span<const double> probs_old) {
  if (action < 0 || static_cast<std::size_t>(action) >= mask.size() || !mask[static_cast<std::size_t>(action)]) {
    throw std::invalid_argument("advantage: action " + std::to_string(action) + " is masked");
  }
  const Vec p = masked_probs(probs_old, mask);
  double baseline = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (mask[i]) baseline += p[static_cast<Eigen::Index>(i)] * q[i];
  }
  return q[static_cast<std::size_t>(action)] - baseline;
}

double clipped_surrogate(double ratio, double adv, double eps) {
  return std::min(ratio * adv, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv);
}

ActorCritic::ActorCritic(std::size_t n_servers, int n_agents, const MarlConfig& config, const FeatureScale& scale,
                         std::uint64_t seed)
    : n_servers_(n_servers), n_agents_(n_agents), config_(config), scale_(scale) {
  if (n_servers < 2 || n_agents < 1) throw std::invalid_argument("ActorCritic: need >= 2 servers and >= 1 agent");
  const int in = static_cast<int>(obs_dim());
  const int out = static_cast<int>(n_servers);
  actor_ = Mlp(in, config.hidden, config.layers, out);
  critic_ = Mlp(in, config.hidden, config.layers, out);
  const int slots = config.share_params ? 1 : n_agents;
  for (int i = 0; i < slots; ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    AgentParams p;
    p.actor = actor_.init(rng, 0.01);  // near-uniform initial policy
    p.critic = critic_.init(rng, 1.0);
    params_.push_back(std::move(p));
  }
}

std::size_t ActorCritic::slot(int agent) const {
  if (agent < 0 || agent >= n_agents_) throw std::out_of_range("unknown agent " + std::to_string(agent));
  return config_.share_params ? 0 : static_cast<std::size_t>(agent);
}

Vec ActorCritic::features(std::span<const double> observation) const {
  return scale_.apply(observation, n_servers_);
}

Mat ActorCritic::actor_probs(int agent, const Mat& x) const {
  const Mat logits = actor_.forward(params(agent).actor, x);
  return nn::softmax_rows(logits.transpose()).transpose();
}

Mat ActorCritic::critic_values(int agent, const Mat& x) const {
  return critic_.forward(params(agent).critic, x);
}

Vec ActorCritic::actor_forward(int agent, std::span<const double> observation) const {
  return actor_probs(agent, features(observation)).col(0);
}

Vec ActorCritic::critic_forward(int agent, std::span<const double> observation) const {
  return critic_values(agent, features(observation)).col(0);
}

namespace {

Mat stack_features(std::span<const Transition* const> batch, Eigen::Index rows) {
  Mat x(rows, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = batch[i]->features;
  return x;
}

}  // namespace

double ActorCritic::actor_objective(const std::vector<double>& actor_params, std::span<const Transition* const> batch,
                                    std::vector<double>* grad) const {
  if (batch.empty()) return 0.0;
  const auto n = static_cast<double>(batch.size());
  const Mat x = stack_features(batch, static_cast<Eigen::Index>(obs_dim()));
  Mlp::Cache cache;
  const Mat logits = actor_.forward(actor_params, x, grad ? &cache : nullptr);
  Mat d_logits = Mat::Zero(logits.rows(), logits.cols());
  const double eps = config_.clip;
  double objective = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& tr = *batch[i];
    const auto col = static_cast<Eigen::Index>(i);
    // softmax restricted to the mask equals probs ⊙ mask renormalized
    double mx = -1e300;
    for (Eigen::Index k = 0; k < logits.rows(); ++k) {
      if (tr.mask[static_cast<std::size_t>(k)]) mx = std::max(mx, logits(k, col));
    }
    Vec p = Vec::Zero(logits.rows());
    double sum = 0.0;
    for (Eigen::Index k = 0; k < logits.rows(); ++k) {
      if (!tr.mask[static_cast<std::size_t>(k)]) continue;
      p[k] = std::exp(logits(k, col) - mx);
      sum += p[k];
    }
    p /= sum;
    const double p_old = tr.probs_old[tr.action];
    if (!(p_old > 0.0)) throw std::logic_error("stored action has zero probability under the old policy");
    const double ratio = p[tr.action] / p_old;
    const double a = tr.advantage;
    objective += clipped_surrogate(ratio, a, eps);
    const bool clipped = (a >= 0.0 && ratio > 1.0 + eps) || (a < 0.0 && ratio < 1.0 - eps);
    Vec dz = Vec::Zero(logits.rows());
    if (!clipped) {
      // d ratio / d z = ratio * (e_a - p)
      dz = -ratio * a * p;
      dz[tr.action] += ratio * a;
    }
    if (config_.entropy_coef != 0.0) {
      double h = 0.0;
      for (Eigen::Index k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
      }
      objective += config_.entropy_coef * h;
      for (Eigen::Index k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) dz[k] += config_.entropy_coef * (-p[k] * (std::log(p[k]) + h));
      }
    }
    d_logits.col(col) = -dz / n;  // loss = -objective
  }
  if (grad) actor_.backward(actor_params, cache, d_logits, *grad);
  return objective / n;
}

double ActorCritic::critic_loss(const std::vector<double>& critic_params, std::span<const Transition* const> batch,
                                std::vector<double>* grad) const {
  if (batch.empty()) return 0.0;
  const auto n = static_cast<double>(batch.size());
  const Mat x = stack_features(batch, static_cast<Eigen::Index>(obs_dim()));
  Mlp::Cache cache;
  const Mat q = critic_.forward(critic_params, x, grad ? &cache : nullptr);
  Mat d_q = Mat::Zero(q.rows(), q.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const double r = q(batch[i]->action, col) - batch[i]->target;
    loss += r * r;
    d_q(batch[i]->action, col) = 2.0 * r / n;
  }
  if (grad) critic_.backward(critic_params, cache, d_q, *grad);
  return loss / n;
}

}  // namespace vtmig::marl
