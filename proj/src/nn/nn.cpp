#include "vtmig/nn.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>

namespace vtmig::nn {

std::size_t ParamLayout::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("ParamLayout: empty tensor " + name);
  slots_.push_back(TensorSlot{std::move(name), total_, rows, cols});
  total_ += static_cast<std::size_t>(rows * cols);
  return slots_.size() - 1;
}

void glorot_init(const ParamLayout& layout, std::vector<double>& flat, std::mt19937_64& rng) {
  flat.assign(layout.size(), 0.0);
  for (const auto& s : layout.slots()) {
    const bool is_bias = s.name.size() >= 2 && s.name.compare(s.name.size() - 2, 2, ".b") == 0;
    if (is_bias) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < s.size(); ++i) flat[s.offset + i] = dist(rng);
  }
}

Mat softmax_rows(const Mat& scores) {
  Mat out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      out(r, c) = std::exp(scores(r, c) - mx);
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  return out;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void adam_step(std::vector<double>& params, std::span<const double> grads,
               AdamState& state, const AdamOptions& opt) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: size mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  double scale = 1.0;
  if (opt.max_grad_norm > 0.0) {
    const double norm = l2_norm(grads);
    if (norm > opt.max_grad_norm) scale = opt.max_grad_norm / norm;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * scale;
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

std::uint64_t digest(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFFu;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace vtmig::nn
