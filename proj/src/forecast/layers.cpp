#include "vtmig/forecast/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace vtmig::forecast {
namespace {

RowVec sigmoid_row(const RowVec& a) {
  return a.unaryExpr([](double v) { return nn::sigmoid(v); });
}

RowVec tanh_row(const RowVec& a) {
  return a.array().tanh().matrix();
}

void check_lstm_shapes(const LstmWeights& w, Eigen::Index in) {
  const Eigen::Index h = w.wh.rows();
  if (w.wx.rows() != in || w.wx.cols() != 4 * h || w.wh.cols() != 4 * h ||
      w.b.rows() != 1 || w.b.cols() != 4 * h) {
    throw std::invalid_argument("lstm: weight shapes do not match the input/hidden size");
  }
}

void check_gru_shapes(const GruWeights& w, Eigen::Index in) {
  const Eigen::Index h = w.wh.rows();
  if (w.wx.rows() != in || w.wx.cols() != 3 * h || w.wh.cols() != 3 * h ||
      w.b.rows() != 1 || w.b.cols() != 3 * h) {
    throw std::invalid_argument("gru: weight shapes do not match the input/hidden size");
  }
}

}  // namespace

LstmState lstm_step(const RowVec& x, const RowVec& h_prev, const RowVec& c_prev,
                    const LstmWeights& w, LstmStepCache* cache) {
  check_lstm_shapes(w, x.size());
  const Eigen::Index h = w.wh.rows();
  if (h_prev.size() != h || c_prev.size() != h) {
    throw std::invalid_argument("lstm_step: state size mismatch");
  }
  const RowVec a = x * w.wx + h_prev * w.wh + w.b;
  const RowVec i = sigmoid_row(a.segment(0, h));
  const RowVec f = sigmoid_row(a.segment(h, h));
  const RowVec o = sigmoid_row(a.segment(2 * h, h));
  const RowVec g = tanh_row(a.segment(3 * h, h));
  LstmState out;
  out.c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
  const RowVec tc = tanh_row(out.c);
  out.h = o.cwiseProduct(tc);
  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->c_prev = c_prev;
    cache->i = i;
    cache->f = f;
    cache->o = o;
    cache->g = g;
    cache->c = out.c;
    cache->tanh_c = tc;
  }
  return out;
}

void lstm_step_backward(const LstmStepCache& k, const RowVec& dh, const RowVec& dc,
                        const LstmWeights& w, LstmGrads& g, RowVec& dx, RowVec& dh_prev,
                        RowVec& dc_prev) {
  const Eigen::Index h = w.wh.rows();
  const RowVec d_o = dh.cwiseProduct(k.tanh_c);
  const RowVec dct =
      dc + dh.cwiseProduct(k.o).cwiseProduct((1.0 - k.tanh_c.array().square()).matrix());
  RowVec da(4 * h);
  da.segment(0, h) = dct.cwiseProduct(k.g).cwiseProduct(k.i.cwiseProduct((1.0 - k.i.array()).matrix()));
  da.segment(h, h) =
      dct.cwiseProduct(k.c_prev).cwiseProduct(k.f.cwiseProduct((1.0 - k.f.array()).matrix()));
  da.segment(2 * h, h) = d_o.cwiseProduct(k.o.cwiseProduct((1.0 - k.o.array()).matrix()));
  da.segment(3 * h, h) =
      dct.cwiseProduct(k.i).cwiseProduct((1.0 - k.g.array().square()).matrix());
  dc_prev = dct.cwiseProduct(k.f);
  g.wx.noalias() += k.x.transpose() * da;
  g.wh.noalias() += k.h_prev.transpose() * da;
  g.b += da;
  dx = da * w.wx.transpose();
  dh_prev = da * w.wh.transpose();
}

Mat lstm_forward(const Mat& x, const LstmWeights& w, LstmSeqCache* cache) {
  check_lstm_shapes(w, x.cols());
  const Eigen::Index h = w.wh.rows();
  Mat out(x.rows(), h);
  RowVec hs = RowVec::Zero(h);
  RowVec cs = RowVec::Zero(h);
  if (cache) cache->steps.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const RowVec xt = x.row(t);
    auto st = lstm_step(xt, hs, cs, w, cache ? &cache->steps[static_cast<std::size_t>(t)] : nullptr);
    hs = st.h;
    cs = st.c;
    out.row(t) = hs;
  }
  return out;
}

Mat lstm_backward(const LstmSeqCache& cache, const Mat& d_hidden, const LstmWeights& w,
                  LstmGrads& g) {
  const Eigen::Index h = w.wh.rows();
  const auto steps = static_cast<Eigen::Index>(cache.steps.size());
  Mat dx(steps, w.wx.rows());
  RowVec dh_next = RowVec::Zero(h);
  RowVec dc_next = RowVec::Zero(h);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const RowVec dh = d_hidden.row(t) + dh_next;
    RowVec dxt, dhp, dcp;
    lstm_step_backward(cache.steps[static_cast<std::size_t>(t)], dh, dc_next, w, g, dxt, dhp, dcp);
    dx.row(t) = dxt;
    dh_next = dhp;
    dc_next = dcp;
  }
  return dx;
}

RowVec gru_step(const RowVec& x, const RowVec& h_prev, const GruWeights& w,
                GruStepCache* cache) {
  check_gru_shapes(w, x.size());
  const Eigen::Index h = w.wh.rows();
  if (h_prev.size() != h) throw std::invalid_argument("gru_step: state size mismatch");
  const RowVec ax = x * w.wx + w.b;
  const RowVec ah = h_prev * w.wh;
  const RowVec z = sigmoid_row(ax.segment(0, h) + ah.segment(0, h));
  const RowVec r = sigmoid_row(ax.segment(h, h) + ah.segment(h, h));
  const RowVec u = ah.segment(2 * h, h);
  const RowVec n = tanh_row(ax.segment(2 * h, h) + r.cwiseProduct(u));
  const RowVec out = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(h_prev);
  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->z = z;
    cache->r = r;
    cache->n = n;
    cache->u = u;
  }
  return out;
}

Mat gru_forward(const Mat& x, const GruWeights& w, GruSeqCache* cache) {
  check_gru_shapes(w, x.cols());
  const Eigen::Index h = w.wh.rows();
  Mat out(x.rows(), h);
  RowVec hs = RowVec::Zero(h);
  if (cache) cache->steps.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const RowVec xt = x.row(t);
    hs = gru_step(xt, hs, w, cache ? &cache->steps[static_cast<std::size_t>(t)] : nullptr);
    out.row(t) = hs;
  }
  return out;
}

Mat gru_backward(const GruSeqCache& cache, const Mat& d_hidden, const GruWeights& w,
                 GruGrads& g) {
  const Eigen::Index h = w.wh.rows();
  const auto steps = static_cast<Eigen::Index>(cache.steps.size());
  Mat dx(steps, w.wx.rows());
  RowVec dh_next = RowVec::Zero(h);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const auto& k = cache.steps[static_cast<std::size_t>(t)];
    const RowVec dh = d_hidden.row(t) + dh_next;
    const RowVec dn = dh.cwiseProduct((1.0 - k.z.array()).matrix());
    const RowVec dz = dh.cwiseProduct(k.h_prev - k.n);
    const RowVec dan = dn.cwiseProduct((1.0 - k.n.array().square()).matrix());
    const RowVec dr = dan.cwiseProduct(k.u);
    const RowVec du = dan.cwiseProduct(k.r);
    const RowVec daz = dz.cwiseProduct(k.z.cwiseProduct((1.0 - k.z.array()).matrix()));
    const RowVec dar = dr.cwiseProduct(k.r.cwiseProduct((1.0 - k.r.array()).matrix()));
    RowVec dax(3 * h), dah(3 * h);
    dax << daz, dar, dan;
    dah << daz, dar, du;
    g.wx.noalias() += k.x.transpose() * dax;
    g.wh.noalias() += k.h_prev.transpose() * dah;
    g.b += dax;
    dx.row(t) = dax * w.wx.transpose();
    dh_next = dh.cwiseProduct(k.z) + dah * w.wh.transpose();
  }
  return dx;
}

Mat multi_head_attention(const Mat& x, const AttentionWeights& w, AttentionCache* cache) {
  const Eigen::Index width = static_cast<Eigen::Index>(w.heads) * w.head_dim;
  if (w.heads < 1 || w.head_dim < 1 || x.cols() != w.wq.rows() || w.wq.cols() != width ||
      w.wk.rows() != x.cols() || w.wk.cols() != width || w.wv.rows() != x.cols() ||
      w.wv.cols() != width || w.wo.rows() != width) {
    throw std::invalid_argument("multi_head_attention: shape mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.head_dim));
  Mat q = x * w.wq;
  Mat k = x * w.wk;
  Mat v = x * w.wv;
  Mat concat(x.rows(), width);
  std::vector<Mat> probs;
  probs.reserve(static_cast<std::size_t>(w.heads));
  for (int hd = 0; hd < w.heads; ++hd) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(hd) * w.head_dim;
    const Mat scores = q.middleCols(c0, w.head_dim) * k.middleCols(c0, w.head_dim).transpose() * scale;
    Mat p = nn::softmax_rows(scores);
    concat.middleCols(c0, w.head_dim).noalias() = p * v.middleCols(c0, w.head_dim);
    probs.push_back(std::move(p));
  }
  Mat out = concat * w.wo;
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->probs = std::move(probs);
  }
  return out;
}

Mat multi_head_attention_backward(const AttentionCache& c, const Mat& d_out,
                                  const AttentionWeights& w, AttentionGrads& g) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.head_dim));
  g.wo.noalias() += c.concat.transpose() * d_out;
  const Mat d_concat = d_out * w.wo.transpose();
  Mat dq(c.q.rows(), c.q.cols());
  Mat dk(c.k.rows(), c.k.cols());
  Mat dv(c.v.rows(), c.v.cols());
  for (int hd = 0; hd < w.heads; ++hd) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(hd) * w.head_dim;
    const Mat& p = c.probs[static_cast<std::size_t>(hd)];
    const auto d_head = d_concat.middleCols(c0, w.head_dim);
    const Mat dp = d_head * c.v.middleCols(c0, w.head_dim).transpose();
    dv.middleCols(c0, w.head_dim).noalias() = p.transpose() * d_head;
    // softmax backward, row by row
    const Eigen::VectorXd row_dot = (dp.cwiseProduct(p)).rowwise().sum();
    const Mat ds = p.cwiseProduct(dp.colwise() - row_dot);
    dq.middleCols(c0, w.head_dim).noalias() = ds * c.k.middleCols(c0, w.head_dim) * scale;
    dk.middleCols(c0, w.head_dim).noalias() = ds.transpose() * c.q.middleCols(c0, w.head_dim) * scale;
  }
  g.wq.noalias() += c.x.transpose() * dq;
  g.wk.noalias() += c.x.transpose() * dk;
  g.wv.noalias() += c.x.transpose() * dv;
  Mat dx = dq * w.wq.transpose();
  dx.noalias() += dk * w.wk.transpose();
  dx.noalias() += dv * w.wv.transpose();
  return dx;
}

}  // namespace vtmig::forecast
