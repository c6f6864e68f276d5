#pragma once

// Recurrent and attention layers in row-sequence convention: a sequence is a
// T x features matrix, one row per time step. Every forward has a matching
// backward that accumulates parameter gradients and returns the input
// gradient.

#include <vector>

#include "vtmig/nn.hpp"

namespace vtmig::forecast {

using nn::Mat;
using nn::RowVec;
using ConstRef = Eigen::Ref<const Mat>;
using GradRef = Eigen::Ref<Mat>;

// ---------------------------------------------------------------------------
// LSTM. Gate blocks along the columns of wx (in x 4h), wh (h x 4h) and
// b (1 x 4h) are ordered input, forget, output, candidate.

struct LstmWeights {
  ConstRef wx;
  ConstRef wh;
  ConstRef b;
};

struct LstmGrads {
  GradRef wx;
  GradRef wh;
  GradRef b;
};

struct LstmStepCache {
  RowVec x, h_prev, c_prev;
  RowVec i, f, o, g;
  RowVec c, tanh_c;
};

struct LstmState {
  RowVec h;
  RowVec c;
};

LstmState lstm_step(const RowVec& x, const RowVec& h_prev, const RowVec& c_prev,
                    const LstmWeights& w, LstmStepCache* cache = nullptr);

/// Backward through one step. dh/dc are gradients flowing into h_t and c_t;
/// outputs the gradients for x, h_{t-1}, c_{t-1}.
void lstm_step_backward(const LstmStepCache& cache, const RowVec& dh, const RowVec& dc,
                        const LstmWeights& w, LstmGrads& g, RowVec& dx, RowVec& dh_prev,
                        RowVec& dc_prev);

struct LstmSeqCache {
  std::vector<LstmStepCache> steps;
};

/// Runs the cell over all rows of x (T x in) from a zero state; returns the
/// hidden sequence (T x h).
Mat lstm_forward(const Mat& x, const LstmWeights& w, LstmSeqCache* cache = nullptr);
Mat lstm_backward(const LstmSeqCache& cache, const Mat& d_hidden, const LstmWeights& w,
                  LstmGrads& g);

// ---------------------------------------------------------------------------
// GRU. Column blocks of wx (in x 3h), wh (h x 3h), b (1 x 3h): update, reset,
// candidate. Candidate = tanh(x Wn + b_n + r * (h Un)).

struct GruWeights {
  ConstRef wx;
  ConstRef wh;
  ConstRef b;
};

struct GruGrads {
  GradRef wx;
  GradRef wh;
  GradRef b;
};

struct GruStepCache {
  RowVec x, h_prev;
  RowVec z, r, n, u;  // u = h_prev * Un
};

struct GruSeqCache {
  std::vector<GruStepCache> steps;
};

RowVec gru_step(const RowVec& x, const RowVec& h_prev, const GruWeights& w,
                GruStepCache* cache = nullptr);
Mat gru_forward(const Mat& x, const GruWeights& w, GruSeqCache* cache = nullptr);
Mat gru_backward(const GruSeqCache& cache, const Mat& d_hidden, const GruWeights& w,
                 GruGrads& g);

// ---------------------------------------------------------------------------
// Multi-head self-attention. wq/wk/wv are d_model x (heads * head_dim) with
// head h owning column block h; wo is (heads * head_dim) x d_model.
// Scores are scaled by 1/sqrt(head_dim).

struct AttentionWeights {
  ConstRef wq;
  ConstRef wk;
  ConstRef wv;
  ConstRef wo;
  int heads = 1;
  int head_dim = 1;
};

struct AttentionGrads {
  GradRef wq;
  GradRef wk;
  GradRef wv;
  GradRef wo;
};

struct AttentionCache {
  Mat x, q, k, v, concat;
  std::vector<Mat> probs;  // one T x T row-stochastic matrix per head
};

Mat multi_head_attention(const Mat& x, const AttentionWeights& w,
                         AttentionCache* cache = nullptr);
Mat multi_head_attention_backward(const AttentionCache& cache, const Mat& d_out,
                                  const AttentionWeights& w, AttentionGrads& g);

}  // namespace vtmig::forecast
