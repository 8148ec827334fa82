#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "msfm/geometry.hpp"
#include "msfm/sampling.hpp"

namespace msfm {

// ---------------------------------------------------------------------------
// classification

struct CrossEntropyResult {
  double loss = 0.0;
  std::array<double, 2> d_logits{};
};

/// Two-way cross entropy, -log softmax(logits)[label], stabilized with the
/// log-sum-exp trick. Gradient is softmax(logits) - onehot(label).
inline CrossEntropyResult cross_entropy(std::span<const double> logits,
                                        int label) {
  if (logits.size() != 2 || label < 0 || label > 1)
    throw std::invalid_argument("cross_entropy: expects 2 logits, label 0/1");
  // -log softmax(z)[label] == softplus(z_other - z_label); the softplus form
  // is the two-class log-sum-exp stabilization without cancellation.
  const double t = logits[1 - label] - logits[label];
  CrossEntropyResult r;
  r.loss = std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
  const double m = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - m);
  const double e1 = std::exp(logits[1] - m);
  const double p0 = e0 / (e0 + e1);
  const double p1 = e1 / (e0 + e1);
  r.d_logits = {p0 - (label == 0 ? 1.0 : 0.0), p1 - (label == 1 ? 1.0 : 0.0)};
  return r;
}

/// Softmax probability of the pedestrian class (index 1 by convention).
inline double pedestrian_prob(std::span<const double> logits) {
  if (logits.size() != 2)
    throw std::invalid_argument("pedestrian_prob: expects 2 logits");
  const double m = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - m);
  const double e1 = std::exp(logits[1] - m);
  return e1 / (e0 + e1);
}

// ---------------------------------------------------------------------------
// box regression

/// Center/size delta encoding of gt relative to proposal:
/// ((gx-px)/pw, (gy-py)/ph, ln(gw/pw), ln(gh/ph)).
inline std::array<double, 4> encode_deltas(const Box& proposal,
                                           const Box& gt) {
  const double pw = proposal.width();
  const double ph = proposal.height();
  return {(gt.center_x() - proposal.center_x()) / pw,
          (gt.center_y() - proposal.center_y()) / ph,
          std::log(gt.width() / pw), std::log(gt.height() / ph)};
}

inline Box decode_deltas(const Box& proposal, std::span<const double> deltas) {
  if (deltas.size() != 4)
    throw std::invalid_argument("decode_deltas: expects 4 deltas");
  const double pw = proposal.width();
  const double ph = proposal.height();
  const double cx = proposal.center_x() + deltas[0] * pw;
  const double cy = proposal.center_y() + deltas[1] * ph;
  const double w = pw * std::exp(deltas[2]);
  const double h = ph * std::exp(deltas[3]);
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

struct SmoothL1Result {
  double loss = 0.0;
  std::array<double, 4> d_pred{};
};

/// Per-coordinate smooth L1 (0.5 d^2 for |d| < 1, |d| - 0.5 otherwise),
/// summed over the four delta coordinates.
inline SmoothL1Result smooth_l1(std::span<const double> pred,
                                std::span<const double> target) {
  if (pred.size() != 4 || target.size() != 4)
    throw std::invalid_argument("smooth_l1: expects 4-vectors");
  SmoothL1Result r;
  for (std::size_t i = 0; i < 4; ++i) {
    const double d = pred[i] - target[i];
    if (std::abs(d) < 1.0) {
      r.loss += 0.5 * d * d;
      r.d_pred[i] = d;
    } else {
      r.loss += std::abs(d) - 0.5;
      r.d_pred[i] = d > 0.0 ? 1.0 : -1.0;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// mutual-supervised feature modulation loss

enum class SimilarityKind { cosine, euclidean, manhattan };
enum class MsfmMode { pos, pos_plus_neg };

inline std::string to_string(SimilarityKind k) {
  switch (k) {
    case SimilarityKind::cosine: return "cosine";
    case SimilarityKind::euclidean: return "euclidean";
    case SimilarityKind::manhattan: return "manhattan";
  }
  return "?";
}

/// Scene-level negative members for the pos_plus_neg mode: indices into the
/// same FB / VB feature lists the positive groups refer to.
struct MsfmNegatives {
  std::vector<int> fb_members;
  std::vector<int> vb_members;
};

struct MsfmResult {
  double loss = 0.0;
  int group_count = 0;  // positive groups plus any negative pseudo-groups
  std::vector<std::vector<double>> d_fb;  // aligned with fb_feats
  std::vector<std::vector<double>> d_vb;  // aligned with vb_feats
};

namespace detail {

struct GroupRef {
  const std::vector<int>* fb;
  const std::vector<int>* vb;
};

inline std::vector<double> member_mean(
    const std::vector<std::vector<double>>& feats,
    const std::vector<int>& members, std::size_t dim, const char* side) {
  std::vector<double> m(dim, 0.0);
  for (int idx : members) {
    const auto& f = feats.at(static_cast<std::size_t>(idx));
    if (f.size() != dim)
      throw std::invalid_argument(std::string("msfm_loss: ") + side +
                                  " feature dimension mismatch");
    for (std::size_t j = 0; j < dim; ++j) m[j] += f[j];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (double& v : m) v *= inv;
  return m;
}

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Per-group similarity term and its gradients with respect to the two means.
// cosine:            1 - cos(u, w)
// euclidean/manhattan: distance between the unit-normalized means.
inline double group_term(SimilarityKind kind, const std::vector<double>& u,
                         const std::vector<double>& w, std::vector<double>& du,
                         std::vector<double>& dw) {
  const std::size_t dim = u.size();
  const double nu = norm2(u);
  const double nw = norm2(w);
  if (nu < 1e-12 || nw < 1e-12)
    throw std::domain_error("msfm_loss: group mean has ~zero norm");
  du.assign(dim, 0.0);
  dw.assign(dim, 0.0);
  if (kind == SimilarityKind::cosine) {
    const double c = dot(u, w) / (nu * nw);
    for (std::size_t j = 0; j < dim; ++j) {
      du[j] = -(w[j] / (nu * nw) - c * u[j] / (nu * nu));
      dw[j] = -(u[j] / (nu * nw) - c * w[j] / (nw * nw));
    }
    return 1.0 - c;
  }
  // normalized means
  std::vector<double> uh(dim), wh(dim), diff(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    uh[j] = u[j] / nu;
    wh[j] = w[j] / nw;
    diff[j] = uh[j] - wh[j];
  }
  std::vector<double> g(dim, 0.0);  // d term / d diff
  double term = 0.0;
  if (kind == SimilarityKind::euclidean) {
    const double n = norm2(diff);
    term = n;
    if (n > 1e-12)
      for (std::size_t j = 0; j < dim; ++j) g[j] = diff[j] / n;
  } else {
    for (std::size_t j = 0; j < dim; ++j) {
      term += std::abs(diff[j]);
      g[j] = diff[j] > 0.0 ? 1.0 : (diff[j] < 0.0 ? -1.0 : 0.0);
    }
  }
  // back through the unit normalization: d uh / d u = (I - uh uh^T) / |u|
  const double gu = dot(g, uh);
  const double gw = dot(g, wh);
  for (std::size_t j = 0; j < dim; ++j) {
    du[j] = (g[j] - gu * uh[j]) / nu;
    dw[j] = -(g[j] - gw * wh[j]) / nw;
  }
  return term;
}

}  // namespace detail

/// The similarity loss coupling the two branches: for each pedestrian i with
/// m_i FB-positive and n_i VB-positive members, take the member means u_i and
/// w_i and average the per-group similarity term over groups. In
/// pos_plus_neg mode each scene's pooled negatives form one extra
/// pseudo-group (skipped when either side has no negatives), and the
/// denominator grows accordingly. Gradients reach every member vector
/// through the means.
inline MsfmResult msfm_loss(const PositiveGroups& groups,
                            const std::vector<std::vector<double>>& fb_feats,
                            const std::vector<std::vector<double>>& vb_feats,
                            SimilarityKind kind, MsfmMode mode,
                            const std::vector<MsfmNegatives>& negatives = {}) {
  std::vector<detail::GroupRef> refs;
  for (const auto& g : groups.groups) {
    if (g.fb_members.empty() || g.vb_members.empty())
      throw std::invalid_argument("msfm_loss: group with an empty side");
    refs.push_back({&g.fb_members, &g.vb_members});
  }
  if (mode == MsfmMode::pos_plus_neg) {
    for (const auto& n : negatives)
      if (!n.fb_members.empty() && !n.vb_members.empty())
        refs.push_back({&n.fb_members, &n.vb_members});
  }

  MsfmResult r;
  r.d_fb.resize(fb_feats.size());
  r.d_vb.resize(vb_feats.size());
  r.group_count = static_cast<int>(refs.size());
  if (refs.empty()) return r;  // contributes 0 with zero gradient

  std::size_t dim = 0;
  for (const auto& f : fb_feats)
    if (!f.empty()) {
      dim = f.size();
      break;
    }
  if (dim == 0)
    for (const auto& f : vb_feats)
      if (!f.empty()) {
        dim = f.size();
        break;
      }

  const double inv_p = 1.0 / static_cast<double>(refs.size());
  std::vector<double> du, dw;
  for (const auto& ref : refs) {
    const auto u = detail::member_mean(fb_feats, *ref.fb, dim, "fb");
    const auto w = detail::member_mean(vb_feats, *ref.vb, dim, "vb");
    r.loss += inv_p * detail::group_term(kind, u, w, du, dw);
    const double su = inv_p / static_cast<double>(ref.fb->size());
    const double sw = inv_p / static_cast<double>(ref.vb->size());
    for (int idx : *ref.fb) {
      auto& slot = r.d_fb[static_cast<std::size_t>(idx)];
      if (slot.empty()) slot.assign(dim, 0.0);
      for (std::size_t j = 0; j < dim; ++j) slot[j] += su * du[j];
    }
    for (int idx : *ref.vb) {
      auto& slot = r.d_vb[static_cast<std::size_t>(idx)];
      if (slot.empty()) slot.assign(dim, 0.0);
      for (std::size_t j = 0; j < dim; ++j) slot[j] += sw * dw[j];
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// composite loss

/// The six terms of the composite training loss plus the optional VB
/// regression term used by the cls+reg branch variant (zero otherwise).
struct LossBreakdown {
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double fb_cls = 0.0;
  double fb_reg = 0.0;
  double vb_cls = 0.0;
  double vb_reg = 0.0;
  double msfmm = 0.0;
  double total = 0.0;
};

/// Unweighted sum of the parts.
inline LossBreakdown total_loss(double rpn_cls, double rpn_reg, double fb_cls,
                                double fb_reg, double vb_cls, double msfmm,
                                double vb_reg = 0.0) {
  LossBreakdown b;
  b.rpn_cls = rpn_cls;
  b.rpn_reg = rpn_reg;
  b.fb_cls = fb_cls;
  b.fb_reg = fb_reg;
  b.vb_cls = vb_cls;
  b.vb_reg = vb_reg;
  b.msfmm = msfmm;
  b.total = rpn_cls + rpn_reg + fb_cls + fb_reg + vb_cls + vb_reg + msfmm;
  return b;
}

}  // namespace msfm
