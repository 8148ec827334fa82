#pragma once

// Self-contained micro-batches for finite-difference validation of every
// loss term: fixed pooled features and labels feed the heads exactly the way
// a training step does, so the analytic gradients cover the full
// head-plus-loss composition.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "msfm/losses.hpp"
#include "msfm/model.hpp"
#include "msfm/rng.hpp"
#include "msfm/sampling.hpp"

namespace msfm {

enum class LossTerm {
  rpn_cls,
  rpn_reg,
  fb_cls,
  fb_reg,
  vb_cls,
  vb_reg,
  msfm,
  composite
};

inline std::string to_string(LossTerm t) {
  switch (t) {
    case LossTerm::rpn_cls: return "rpn_cls";
    case LossTerm::rpn_reg: return "rpn_reg";
    case LossTerm::fb_cls: return "fb_cls";
    case LossTerm::fb_reg: return "fb_reg";
    case LossTerm::vb_cls: return "vb_cls";
    case LossTerm::vb_reg: return "vb_reg";
    case LossTerm::msfm: return "msfm";
    case LossTerm::composite: return "composite";
  }
  return "?";
}

/// Fixed inputs for one gradient-check evaluation: per-proposal pooled
/// features, labels and regression targets for both heads, the positive
/// groups for the similarity term, and per-anchor features for the proposal
/// scorer.
struct GradCheckScenario {
  ParamSet params;
  std::vector<std::vector<double>> fb_pooled, vb_pooled;
  std::vector<int> fb_labels, vb_labels;
  std::vector<std::array<double, 4>> fb_targets, vb_targets;
  PositiveGroups groups;
  std::vector<MsfmNegatives> negatives;
  std::vector<std::vector<double>> rpn_feats;
  std::vector<int> rpn_shapes, rpn_labels;
  std::vector<std::array<double, 4>> rpn_targets;
};

/// Loss of one term over the scenario, mirroring the training-step
/// normalization: classification terms are means over the branch batch,
/// regression terms sum positives and divide by the batch size, the
/// similarity term follows its own group averaging. Accumulates analytic
/// gradients when grads is non-null.
inline double scenario_loss(const GradCheckScenario& sc, const ParamSet& p,
                            LossTerm term, SimilarityKind kind, MsfmMode mode,
                            GradientSet* grads) {
  const bool want_fb = term == LossTerm::fb_cls || term == LossTerm::fb_reg ||
                       term == LossTerm::msfm || term == LossTerm::composite;
  const bool want_vb = term == LossTerm::vb_cls || term == LossTerm::vb_reg ||
                       term == LossTerm::msfm || term == LossTerm::composite;
  const bool want_rpn = term == LossTerm::rpn_cls ||
                        term == LossTerm::rpn_reg ||
                        term == LossTerm::composite;
  const bool vb_with_reg = term == LossTerm::vb_reg;

  double loss = 0.0;

  std::vector<HeadTape> fb_tapes, vb_tapes;
  if (want_fb)
    for (const auto& x : sc.fb_pooled) fb_tapes.push_back(fb_forward(p, x));
  if (want_vb)
    for (const auto& x : sc.vb_pooled)
      vb_tapes.push_back(vb_forward(p, x, vb_with_reg));

  const double fb_n = static_cast<double>(sc.fb_pooled.size());
  const double vb_n = static_cast<double>(sc.vb_pooled.size());

  std::vector<std::array<double, 2>> fb_dcls(fb_tapes.size(), {0.0, 0.0});
  std::vector<std::array<double, 4>> fb_dreg(fb_tapes.size(),
                                             {0.0, 0.0, 0.0, 0.0});
  std::vector<std::array<double, 2>> vb_dcls(vb_tapes.size(), {0.0, 0.0});
  std::vector<std::array<double, 4>> vb_dreg(vb_tapes.size(),
                                             {0.0, 0.0, 0.0, 0.0});
  std::vector<std::vector<double>> fb_dfc2(fb_tapes.size());
  std::vector<std::vector<double>> vb_dfc2(vb_tapes.size());

  if (term == LossTerm::fb_cls || term == LossTerm::composite) {
    for (std::size_t i = 0; i < fb_tapes.size(); ++i) {
      const auto ce = cross_entropy(fb_tapes[i].cls_logits, sc.fb_labels[i]);
      loss += ce.loss / fb_n;
      for (int j = 0; j < 2; ++j) fb_dcls[i][j] += ce.d_logits[j] / fb_n;
    }
  }
  if (term == LossTerm::fb_reg || term == LossTerm::composite) {
    for (std::size_t i = 0; i < fb_tapes.size(); ++i) {
      if (sc.fb_labels[i] != 1) continue;
      const auto sl = smooth_l1(fb_tapes[i].reg_deltas, sc.fb_targets[i]);
      loss += sl.loss / fb_n;
      for (int j = 0; j < 4; ++j) fb_dreg[i][j] += sl.d_pred[j] / fb_n;
    }
  }
  if (term == LossTerm::vb_cls || term == LossTerm::composite) {
    for (std::size_t i = 0; i < vb_tapes.size(); ++i) {
      const auto ce = cross_entropy(vb_tapes[i].cls_logits, sc.vb_labels[i]);
      loss += ce.loss / vb_n;
      for (int j = 0; j < 2; ++j) vb_dcls[i][j] += ce.d_logits[j] / vb_n;
    }
  }
  if (term == LossTerm::vb_reg) {
    for (std::size_t i = 0; i < vb_tapes.size(); ++i) {
      if (sc.vb_labels[i] != 1) continue;
      const auto sl = smooth_l1(vb_tapes[i].reg_deltas, sc.vb_targets[i]);
      loss += sl.loss / vb_n;
      for (int j = 0; j < 4; ++j) vb_dreg[i][j] += sl.d_pred[j] / vb_n;
    }
  }
  if (term == LossTerm::msfm || term == LossTerm::composite) {
    std::vector<std::vector<double>> fb_feats, vb_feats;
    for (const auto& t : fb_tapes) fb_feats.push_back(t.fc2_out);
    for (const auto& t : vb_tapes) vb_feats.push_back(t.fc2_out);
    const auto r =
        msfm_loss(sc.groups, fb_feats, vb_feats, kind, mode, sc.negatives);
    loss += r.loss;
    for (std::size_t i = 0; i < fb_tapes.size(); ++i)
      if (!r.d_fb[i].empty()) fb_dfc2[i] = r.d_fb[i];
    for (std::size_t i = 0; i < vb_tapes.size(); ++i)
      if (!r.d_vb[i].empty()) vb_dfc2[i] = r.d_vb[i];
  }

  if (grads) {
    for (std::size_t i = 0; i < fb_tapes.size(); ++i)
      head_backward(p, Branch::fb, fb_tapes[i], fb_dcls[i], fb_dreg[i],
                    fb_dfc2[i], *grads);
    for (std::size_t i = 0; i < vb_tapes.size(); ++i) {
      std::span<const double> dreg =
          vb_with_reg ? std::span<const double>(vb_dreg[i])
                      : std::span<const double>();
      head_backward(p, Branch::vb, vb_tapes[i], vb_dcls[i], dreg, vb_dfc2[i],
                    *grads);
    }
  }

  if (want_rpn) {
    const double rpn_n = static_cast<double>(sc.rpn_feats.size());
    for (std::size_t i = 0; i < sc.rpn_feats.size(); ++i) {
      const auto k = static_cast<std::size_t>(sc.rpn_shapes[i]);
      std::vector<double> logits(2), deltas(4);
      p.rpn_cls[k].forward(sc.rpn_feats[i], logits);
      p.rpn_reg[k].forward(sc.rpn_feats[i], deltas);
      std::array<double, 2> dcls{0.0, 0.0};
      std::array<double, 4> dreg{0.0, 0.0, 0.0, 0.0};
      if (term == LossTerm::rpn_cls || term == LossTerm::composite) {
        const auto ce = cross_entropy(logits, sc.rpn_labels[i]);
        loss += ce.loss / rpn_n;
        for (int j = 0; j < 2; ++j) dcls[j] += ce.d_logits[j] / rpn_n;
      }
      if ((term == LossTerm::rpn_reg || term == LossTerm::composite) &&
          sc.rpn_labels[i] == 1) {
        const auto sl = smooth_l1(deltas, sc.rpn_targets[i]);
        loss += sl.loss / rpn_n;
        for (int j = 0; j < 4; ++j) dreg[j] += sl.d_pred[j] / rpn_n;
      }
      if (grads) {
        p.rpn_cls[k].backward(sc.rpn_feats[i], dcls, grads->rpn_cls[k], {});
        p.rpn_reg[k].backward(sc.rpn_feats[i], dreg, grads->rpn_reg[k], {});
      }
    }
  }
  return loss;
}

namespace detail {

// True when the scenario sits safely away from every non-smooth fold the
// finite-difference step could straddle: relu pre-activations, the |d| = 1
// corner of smooth L1, and the manhattan / euclidean kinks of the
// similarity variants.
inline bool scenario_clear_of_kinks(const GradCheckScenario& sc) {
  const double relu_margin = 1e-3;
  const double resid_margin = 5e-3;
  const auto& p = sc.params;

  std::vector<HeadTape> fb_tapes, vb_tapes;
  for (const auto& x : sc.fb_pooled) fb_tapes.push_back(fb_forward(p, x));
  for (const auto& x : sc.vb_pooled)
    vb_tapes.push_back(vb_forward(p, x, true));

  auto relu_ok = [&](const HeadTape& t) {
    for (double v : t.fc1_pre)
      if (std::abs(v) < relu_margin) return false;
    for (double v : t.fc2_pre)
      if (std::abs(v) < relu_margin) return false;
    return true;
  };
  for (const auto& t : fb_tapes)
    if (!relu_ok(t)) return false;
  for (const auto& t : vb_tapes)
    if (!relu_ok(t)) return false;

  auto resid_ok = [&](std::span<const double> pred,
                      const std::array<double, 4>& target) {
    for (int j = 0; j < 4; ++j)
      if (std::abs(std::abs(pred[j] - target[j]) - 1.0) < resid_margin)
        return false;
    return true;
  };
  for (std::size_t i = 0; i < fb_tapes.size(); ++i)
    if (sc.fb_labels[i] == 1 &&
        !resid_ok(fb_tapes[i].reg_deltas, sc.fb_targets[i]))
      return false;
  for (std::size_t i = 0; i < vb_tapes.size(); ++i)
    if (sc.vb_labels[i] == 1 &&
        !resid_ok(vb_tapes[i].reg_deltas, sc.vb_targets[i]))
      return false;
  for (std::size_t i = 0; i < sc.rpn_feats.size(); ++i) {
    if (sc.rpn_labels[i] != 1) continue;
    std::vector<double> deltas(4);
    p.rpn_reg[static_cast<std::size_t>(sc.rpn_shapes[i])].forward(
        sc.rpn_feats[i], deltas);
    if (!resid_ok(deltas, sc.rpn_targets[i])) return false;
  }

  // similarity kinks, evaluated on the normalized group means
  auto mean_of = [&](const std::vector<HeadTape>& tapes,
                     const std::vector<int>& members) {
    std::vector<double> m(tapes[0].fc2_out.size(), 0.0);
    for (int idx : members)
      for (std::size_t j = 0; j < m.size(); ++j)
        m[j] += tapes[static_cast<std::size_t>(idx)].fc2_out[j];
    for (double& v : m) v /= static_cast<double>(members.size());
    return m;
  };
  auto check_pair = [&](const std::vector<int>& fbm,
                        const std::vector<int>& vbm) {
    auto u = mean_of(fb_tapes, fbm);
    auto w = mean_of(vb_tapes, vbm);
    double nu = 0, nw = 0;
    for (double v : u) nu += v * v;
    for (double v : w) nw += v * v;
    nu = std::sqrt(nu);
    nw = std::sqrt(nw);
    if (nu < 0.5 || nw < 0.5) return false;
    double dist2 = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
      // a coordinate dead on both sides is pinned at exactly zero across the
      // finite-difference step (the relu margin keeps those units dead), so
      // the manhattan fold is never straddled there
      if (u[j] == 0.0 && w[j] == 0.0) continue;
      const double d = u[j] / nu - w[j] / nw;
      if (std::abs(d) < 1e-3) return false;  // manhattan fold
      dist2 += d * d;
    }
    return dist2 > 2.5e-3;  // euclidean fold at zero distance
  };
  for (const auto& g : sc.groups.groups)
    if (!check_pair(g.fb_members, g.vb_members)) return false;
  for (const auto& n : sc.negatives)
    if (!n.fb_members.empty() && !n.vb_members.empty() &&
        !check_pair(n.fb_members, n.vb_members))
      return false;
  return true;
}

}  // namespace detail

/// Builds a random scenario at the given hidden width, redrawing until it is
/// clear of every non-smooth fold (so central differences are trustworthy).
inline GradCheckScenario make_gradcheck_scenario(int hidden_dim,
                                                 std::uint64_t seed) {
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.pool_grid = 2;
  cfg.rpn_pool_grid = 2;
  cfg.hidden_dim = hidden_dim;
  cfg.anchor_shapes = {{16.0, 40.0}, {24.0, 56.0}};

  for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
    Rng rng(mix64(seed, attempt));
    GradCheckScenario sc;
    sc.params = ParamSet::zeros(cfg);
    for (auto& [name, layer] : sc.params.layers()) {
      const double a = 1.0 / std::sqrt(static_cast<double>(layer->in_dim));
      for (double& v : layer->w) v = rng.uniform(-a, a);
      for (double& v : layer->b) v = rng.uniform(-0.3, 0.3);
    }

    const int in = cfg.pooled_dim();
    auto draw_vec = [&](int n) {
      std::vector<double> v(static_cast<std::size_t>(n));
      for (double& x : v) x = rng.normal();
      return v;
    };
    auto draw_target = [&] {
      return std::array<double, 4>{0.6 * rng.normal(), 0.6 * rng.normal(),
                                   0.6 * rng.normal(), 0.6 * rng.normal()};
    };

    // 3 positives + 3 negatives per branch
    for (int i = 0; i < 6; ++i) {
      sc.fb_pooled.push_back(draw_vec(in));
      sc.vb_pooled.push_back(draw_vec(in));
      sc.fb_labels.push_back(i < 3 ? 1 : 0);
      sc.vb_labels.push_back(i < 3 ? 1 : 0);
      sc.fb_targets.push_back(draw_target());
      sc.vb_targets.push_back(draw_target());
    }
    PositiveGroup g0{0, {0, 1}, {0}};
    PositiveGroup g1{1, {2}, {1, 2}};
    sc.groups.groups = {g0, g1};
    sc.groups.pedestrian_count = 2;
    sc.negatives = {{{3, 4, 5}, {3, 4, 5}}};

    for (int i = 0; i < 8; ++i) {
      sc.rpn_feats.push_back(draw_vec(cfg.rpn_dim()));
      sc.rpn_shapes.push_back(i % 2);
      sc.rpn_labels.push_back(i < 3 ? 1 : 0);
      sc.rpn_targets.push_back(draw_target());
    }

    if (detail::scenario_clear_of_kinks(sc)) return sc;
  }
  throw std::logic_error("make_gradcheck_scenario: no kink-free draw found");
}

}  // namespace msfm
