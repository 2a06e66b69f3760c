#pragma once

// Dense forward/backward kernels shared by the autodiff graph and the tests.
// Everything here is templated on the scalar so gradient checks can run at
// 64-bit precision against the same code that trains the model.

#include "dcl4kt/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dcl4kt::kernels {

// ---------------------------------------------------------------------------
// Monotonic attention
//
// score(t, s) = <q_t, k_s> / sqrt(d) - decay * |t - s|
//
// restricted to valid keys (and s <= t when causal), softmax over s. A linear
// penalty before the softmax is an exponential decay of the weight with
// distance, which is what models forgetting.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct AttentionResult {
  Mat<Scalar> output;
  Mat<Scalar> weights;
};

template <typename Scalar>
struct AttentionGrads {
  Mat<Scalar> dq, dk, dv;
  Scalar ddecay = 0;
};

inline bool attends(const Mask& valid, Eigen::Index t, Eigen::Index s, bool causal) {
  return valid(s) && (!causal || s <= t);
}

/// |t - s| for every query/key pair.
template <typename Scalar>
Mat<Scalar> distance_matrix(Eigen::Index len) {
  Mat<Scalar> d(len, len);
  for (Eigen::Index s = 0; s < len; ++s)
    for (Eigen::Index t = 0; t < len; ++t) d(t, s) = static_cast<Scalar>(t > s ? t - s : s - t);
  return d;
}

template <typename Scalar>
AttentionResult<Scalar> monotonic_attention(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v,
                                            const Mask& valid, Scalar decay, bool causal = true) {
  const Eigen::Index len = q.rows();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  const Scalar ninf = -std::numeric_limits<Scalar>::infinity();
  Mat<Scalar> scores = (q * k.transpose()) * scale - decay * distance_matrix<Scalar>(len);
  for (Eigen::Index s = 0; s < len; ++s)
    for (Eigen::Index t = 0; t < len; ++t)
      if (!attends(valid, t, s, causal)) scores(t, s) = ninf;
  Vec<Scalar> mx = scores.rowwise().maxCoeff();
  // Rows with nothing to attend to end up all zero.
  Vec<Scalar> shift = mx.unaryExpr([](Scalar m) { return std::isfinite(m) ? m : Scalar(0); });
  Mat<Scalar> w = (scores.colwise() - shift).array().exp().matrix();
  Vec<Scalar> z = w.rowwise().sum();
  for (Eigen::Index t = 0; t < len; ++t)
    if (z(t) > 0) w.row(t) /= z(t);
  return {w * v, std::move(w)};
}

template <typename Scalar>
AttentionGrads<Scalar> monotonic_attention_backward(const Mat<Scalar>& q, const Mat<Scalar>& k,
                                                    const Mat<Scalar>& v, const Mat<Scalar>& weights,
                                                    const Mat<Scalar>& dout, bool causal = true) {
  (void)causal;  // masked entries already carry zero weight
  const Eigen::Index len = q.rows();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  AttentionGrads<Scalar> g;
  g.dv = weights.transpose() * dout;
  Mat<Scalar> dw = dout * v.transpose();
  Mat<Scalar> ds = weights.cwiseProduct(dw);
  Vec<Scalar> row_dot = ds.rowwise().sum();
  ds -= weights.cwiseProduct(row_dot.replicate(1, len));
  g.dq = (ds * k) * scale;
  g.dk = (ds.transpose() * q) * scale;
  g.ddecay = -ds.cwiseProduct(distance_matrix<Scalar>(len)).sum();
  return g;
}

// ---------------------------------------------------------------------------
// Span-based dynamic convolution (causal, depthwise per head)
//
//   span_key  = causal depthwise conv of x with `depthwise` [K, d]
//   kernel_th = softmax((q_t * span_key_t)|head h . generator_h + bias_h)  [K]
//   out_t     = sum_j kernel_th[j] * v_{t-K+1+j}      (per channel of head h)
//
// Taps before the sequence start read zeros, so position t only ever sees
// positions <= t.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct SpanConvParams {
  Mat<Scalar> depthwise;       // [K, d]
  Mat<Scalar> generator;       // [d, K]
  Mat<Scalar> generator_bias;  // [heads, K]

  Eigen::Index kernel_size() const { return depthwise.rows(); }
};

template <typename Scalar>
struct SpanConvResult {
  Mat<Scalar> output;
  Mat<Scalar> span_keys;
  Mat<Scalar> kernels;  // [L, heads * K], softmax over each K block
};

template <typename Scalar>
struct SpanConvGrads {
  Mat<Scalar> dq, dx, dv;
  SpanConvParams<Scalar> dparams;
};

template <typename Scalar>
Mat<Scalar> causal_depthwise(const Mat<Scalar>& x, const Mat<Scalar>& w) {
  const Eigen::Index len = x.rows(), ks = w.rows();
  Mat<Scalar> out = Mat<Scalar>::Zero(len, x.cols());
  for (Eigen::Index t = 0; t < len; ++t)
    for (Eigen::Index j = 0; j < ks; ++j) {
      Eigen::Index src = t - (ks - 1) + j;
      if (src < 0) continue;
      out.row(t) += w.row(j).cwiseProduct(x.row(src));
    }
  return out;
}

template <typename Scalar>
SpanConvResult<Scalar> span_dynamic_conv(const Mat<Scalar>& q, const Mat<Scalar>& x, const Mat<Scalar>& v,
                                         const SpanConvParams<Scalar>& p, Eigen::Index heads) {
  const Eigen::Index len = q.rows(), dim = q.cols(), ks = p.kernel_size();
  const Eigen::Index hd = dim / heads;
  SpanConvResult<Scalar> r;
  r.span_keys = causal_depthwise(x, p.depthwise);
  r.kernels.resize(len, heads * ks);
  r.output = Mat<Scalar>::Zero(len, dim);
  for (Eigen::Index h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * hd;
    for (Eigen::Index t = 0; t < len; ++t) {
      RowVec<Scalar> u = q.row(t).segment(c0, hd).cwiseProduct(r.span_keys.row(t).segment(c0, hd));
      RowVec<Scalar> logits = u * p.generator.block(c0, 0, hd, ks) + p.generator_bias.row(h);
      logits.array() -= logits.maxCoeff();
      logits = logits.array().exp();
      logits /= logits.sum();
      r.kernels.row(t).segment(h * ks, ks) = logits;
      for (Eigen::Index j = 0; j < ks; ++j) {
        Eigen::Index src = t - (ks - 1) + j;
        if (src < 0) continue;
        r.output.row(t).segment(c0, hd) += logits(j) * v.row(src).segment(c0, hd);
      }
    }
  }
  return r;
}

template <typename Scalar>
SpanConvGrads<Scalar> span_dynamic_conv_backward(const Mat<Scalar>& q, const Mat<Scalar>& x, const Mat<Scalar>& v,
                                                 const SpanConvParams<Scalar>& p, Eigen::Index heads,
                                                 const SpanConvResult<Scalar>& fwd, const Mat<Scalar>& dout) {
  const Eigen::Index len = q.rows(), dim = q.cols(), ks = p.kernel_size();
  const Eigen::Index hd = dim / heads;
  SpanConvGrads<Scalar> g;
  g.dq = Mat<Scalar>::Zero(len, dim);
  g.dv = Mat<Scalar>::Zero(len, dim);
  g.dparams.generator = Mat<Scalar>::Zero(dim, ks);
  g.dparams.generator_bias = Mat<Scalar>::Zero(heads, ks);
  Mat<Scalar> dkeys = Mat<Scalar>::Zero(len, dim);
  for (Eigen::Index h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * hd;
    for (Eigen::Index t = 0; t < len; ++t) {
      RowVec<Scalar> kern = fwd.kernels.row(t).segment(h * ks, ks);
      RowVec<Scalar> dkern = RowVec<Scalar>::Zero(ks);
      for (Eigen::Index j = 0; j < ks; ++j) {
        Eigen::Index src = t - (ks - 1) + j;
        if (src < 0) continue;
        dkern(j) = dout.row(t).segment(c0, hd).dot(v.row(src).segment(c0, hd));
        g.dv.row(src).segment(c0, hd) += kern(j) * dout.row(t).segment(c0, hd);
      }
      RowVec<Scalar> dlogits = kern.cwiseProduct((dkern.array() - kern.dot(dkern)).matrix());
      g.dparams.generator_bias.row(h) += dlogits;
      RowVec<Scalar> u = q.row(t).segment(c0, hd).cwiseProduct(fwd.span_keys.row(t).segment(c0, hd));
      g.dparams.generator.block(c0, 0, hd, ks) += u.transpose() * dlogits;
      RowVec<Scalar> du = dlogits * p.generator.block(c0, 0, hd, ks).transpose();
      g.dq.row(t).segment(c0, hd) = du.cwiseProduct(fwd.span_keys.row(t).segment(c0, hd));
      dkeys.row(t).segment(c0, hd) = du.cwiseProduct(q.row(t).segment(c0, hd));
    }
  }
  g.dx = Mat<Scalar>::Zero(len, dim);
  g.dparams.depthwise = Mat<Scalar>::Zero(ks, dim);
  for (Eigen::Index t = 0; t < len; ++t)
    for (Eigen::Index j = 0; j < ks; ++j) {
      Eigen::Index src = t - (ks - 1) + j;
      if (src < 0) continue;
      g.dparams.depthwise.row(j) += dkeys.row(t).cwiseProduct(x.row(src));
      g.dx.row(src) += dkeys.row(t).cwiseProduct(p.depthwise.row(j));
    }
  return g;
}

// ---------------------------------------------------------------------------
// InfoNCE over cosine similarity
// ---------------------------------------------------------------------------

/// -log(exp(s_pos) / (exp(s_pos) + sum_k exp(s_neg_k))) with s = cos / tau.
/// `negatives` holds one negative per row. Throws InputError on zero vectors.
template <typename Scalar>
Scalar info_nce_similarity(const Vec<Scalar>& anchor, const Vec<Scalar>& positive, const Mat<Scalar>& negatives,
                           Scalar temperature) {
  auto cosine = [](const Vec<Scalar>& a, const Vec<Scalar>& b) {
    Scalar na = a.norm(), nb = b.norm();
    if (na == Scalar(0) || nb == Scalar(0)) throw InputError("info_nce: zero-norm vector");
    return a.dot(b) / (na * nb);
  };
  const Scalar pos = cosine(anchor, positive) / temperature;
  Scalar mx = pos;
  Vec<Scalar> neg(negatives.rows());
  for (Eigen::Index i = 0; i < negatives.rows(); ++i) {
    neg(i) = cosine(anchor, negatives.row(i).transpose()) / temperature;
    mx = std::max(mx, neg(i));
  }
  Scalar z = std::exp(pos - mx);
  for (Eigen::Index i = 0; i < neg.size(); ++i) z += std::exp(neg(i) - mx);
  return -(pos - mx - std::log(z));
}

/// Batched InfoNCE. Anchor i is paired with positive i; its negatives are the
/// hard negative i plus, when `in_batch`, every other positive j != i.
template <typename Scalar>
struct InfoNceResult {
  Vec<Scalar> losses;
  Mat<Scalar> probs;  // [B, B + 1]: softmax over [positives..., hard negative]
  Mat<Scalar> an, pn, nn;
  Vec<Scalar> a_norm, p_norm, n_norm;
};

template <typename Scalar>
InfoNceResult<Scalar> info_nce_rows(const Mat<Scalar>& anchors, const Mat<Scalar>& positives,
                                    const Mat<Scalar>& negatives, Scalar temperature, bool in_batch = true) {
  const Eigen::Index b = anchors.rows();
  InfoNceResult<Scalar> r;
  auto normalize = [](const Mat<Scalar>& m, Mat<Scalar>& out, Vec<Scalar>& norms) {
    norms = m.rowwise().norm();
    if ((norms.array() == Scalar(0)).any()) throw InputError("info_nce: zero-norm vector");
    out = norms.cwiseInverse().asDiagonal() * m;
  };
  normalize(anchors, r.an, r.a_norm);
  normalize(positives, r.pn, r.p_norm);
  normalize(negatives, r.nn, r.n_norm);
  Mat<Scalar> logits(b, b + 1);
  logits.leftCols(b) = r.an * r.pn.transpose() / temperature;
  logits.col(b) = r.an.cwiseProduct(r.nn).rowwise().sum() / temperature;
  r.probs = Mat<Scalar>::Zero(b, b + 1);
  r.losses.resize(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    auto allowed = [&](Eigen::Index j) { return j == i || j == b || in_batch; };
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j = 0; j <= b; ++j)
      if (allowed(j)) mx = std::max(mx, logits(i, j));
    Scalar z = 0;
    for (Eigen::Index j = 0; j <= b; ++j)
      if (allowed(j)) {
        r.probs(i, j) = std::exp(logits(i, j) - mx);
        z += r.probs(i, j);
      }
    r.probs.row(i) /= z;
    r.losses(i) = -(logits(i, i) - mx - std::log(z));
  }
  return r;
}

template <typename Scalar>
struct InfoNceGrads {
  Mat<Scalar> danchors, dpositives, dnegatives;
};

template <typename Scalar>
InfoNceGrads<Scalar> info_nce_rows_backward(const InfoNceResult<Scalar>& r, const Vec<Scalar>& dlosses,
                                            Scalar temperature) {
  const Eigen::Index b = r.an.rows();
  Mat<Scalar> g = r.probs;
  for (Eigen::Index i = 0; i < b; ++i) g(i, i) -= Scalar(1);
  g = dlosses.asDiagonal() * g;
  g /= temperature;
  Mat<Scalar> dan = g.leftCols(b) * r.pn + g.col(b).asDiagonal() * r.nn;
  Mat<Scalar> dpn = g.leftCols(b).transpose() * r.an;
  Mat<Scalar> dnn = g.col(b).asDiagonal() * r.an;
  auto unnormalize = [](const Mat<Scalar>& unit, const Vec<Scalar>& norms, const Mat<Scalar>& dunit) {
    Vec<Scalar> proj = unit.cwiseProduct(dunit).rowwise().sum();
    return Mat<Scalar>(norms.cwiseInverse().asDiagonal() * (dunit - proj.asDiagonal() * unit));
  };
  return {unnormalize(r.an, r.a_norm, dan), unnormalize(r.pn, r.p_norm, dpn), unnormalize(r.nn, r.n_norm, dnn)};
}

// ---------------------------------------------------------------------------
// Binary cross entropy
// ---------------------------------------------------------------------------

inline constexpr double kProbEpsilon = 1e-7;

/// Masked mean of -(r log p + (1 - r) log(1 - p)), p clamped to [eps, 1 - eps].
/// Returns 0 when the mask is empty.
template <typename Scalar, typename DerivedP, typename DerivedR, typename DerivedM>
Scalar bce(const Eigen::MatrixBase<DerivedP>& probs, const Eigen::MatrixBase<DerivedR>& targets,
           const Eigen::MatrixBase<DerivedM>& mask) {
  const Scalar eps = static_cast<Scalar>(kProbEpsilon);
  Scalar total = 0, count = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      if (!mask(i, j)) continue;
      Scalar p = std::clamp(static_cast<Scalar>(probs(i, j)), eps, Scalar(1) - eps);
      Scalar r = static_cast<Scalar>(targets(i, j));
      total -= r * std::log(p) + (Scalar(1) - r) * std::log(Scalar(1) - p);
      count += 1;
    }
  return count > 0 ? total / count : Scalar(0);
}

}  // namespace dcl4kt::kernels
