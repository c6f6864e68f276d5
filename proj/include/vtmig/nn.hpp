#pragma once

// Small dense-network toolkit with hand-written backward passes.
//
// Parameters of a network live in one flat std::vector<double>; tensors are
// Eigen::Map views into it at fixed offsets. Gradients use the same layout,
// so an optimizer, a checkpoint, or a finite-difference check only ever sees
// flat arrays.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace vtmig::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

/// Named tensor offsets into a flat parameter vector.
class ParamLayout {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);
  std::size_t size() const { return total_; }
  const std::vector<TensorSlot>& slots() const { return slots_; }
  const TensorSlot& operator[](std::size_t i) const { return slots_[i]; }

  MatMap view(std::vector<double>& flat, std::size_t slot) const {
    const auto& s = slots_[slot];
    return MatMap(flat.data() + s.offset, s.rows, s.cols);
  }
  ConstMatMap view(const std::vector<double>& flat, std::size_t slot) const {
    const auto& s = slots_[slot];
    return ConstMatMap(flat.data() + s.offset, s.rows, s.cols);
  }

 private:
  std::vector<TensorSlot> slots_;
  std::size_t total_ = 0;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Fills every slot with uniform Glorot noise; slots whose name ends in ".b"
/// are zeroed.
void glorot_init(const ParamLayout& layout, std::vector<double>& flat, std::mt19937_64& rng);

/// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& scores);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

/// One Adam descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(std::vector<double>& params, std::span<const double> grads,
               AdamState& state, const AdamOptions& opt);

double l2_norm(std::span<const double> v);

/// FNV-1a digest over the exact bit patterns; used for determinism checks.
std::uint64_t digest(std::span<const double> values);

bool all_finite(std::span<const double> values);

}  // namespace vtmig::nn
