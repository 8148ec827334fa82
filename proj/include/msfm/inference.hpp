#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <span>
#include <vector>

#include "msfm/geometry.hpp"
#include "msfm/losses.hpp"
#include "msfm/model.hpp"
#include "msfm/synth.hpp"

namespace msfm {

/// A final detection: the decoded full-body box, the fused score, and the
/// per-branch pedestrian probabilities it is the product of (vb_prob is 1
/// when the visible-body branch is disabled).
struct Detection {
  Box box;
  double final_score = 0.0;
  double fb_prob = 0.0;
  double vb_prob = 0.0;
};

/// Score fusion: the product of the two branches' pedestrian-class softmax
/// probabilities.
inline double fuse_scores(std::span<const double> fb_logits,
                          std::span<const double> vb_logits) {
  return pedestrian_prob(fb_logits) * pedestrian_prob(vb_logits);
}

struct InferenceConfig {
  ProposalConfig proposals{.top_k = 96};
  double score_floor = 0.01;
  double nms_iou = 0.5;
  double prob_clamp = 1e-12;
  bool vb_branch = true;
  // The visible region of a proposal is unknown at test time. When set, the
  // VB head scores the canonical visible-region hypotheses (full box, upper,
  // left and right parts) and keeps the best; when cleared it scores the
  // proposal box only.
  bool vb_probe_subboxes = true;
  double vb_probe_fraction = 0.55;
};

namespace detail {

inline double clamped_ped_prob(const std::vector<double>& logits,
                               double clamp) {
  return std::clamp(pedestrian_prob(logits), clamp, 1.0 - clamp);
}

// Max VB pedestrian probability over the visible-region hypotheses.
inline double vb_probe(const Scene& scene, const ParamSet& p, const Box& b,
                       const InferenceConfig& cfg) {
  const HeadTape full = vb_forward(p, roi_pool(scene, b, p.config.pool_grid));
  double best = clamped_ped_prob(full.cls_logits, cfg.prob_clamp);
  if (!cfg.vb_probe_subboxes) return best;
  const double f = cfg.vb_probe_fraction;
  const Box upper{b.x1, b.y1, b.x2, b.y1 + f * b.height()};
  const Box left{b.x1, b.y1, b.x1 + f * b.width(), b.y2};
  const Box right{b.x2 - f * b.width(), b.y1, b.x2, b.y2};
  for (const Box& cand : {upper, left, right}) {
    const HeadTape t =
        vb_forward(p, roi_pool(scene, cand, p.config.pool_grid));
    best = std::max(best, clamped_ped_prob(t.cls_logits, cfg.prob_clamp));
  }
  return best;
}

}  // namespace detail

/// Runs the inference path: propose (never with oracle jitter), pool each
/// proposal, score the FB head on it and the VB head on its visible-region
/// hypotheses, fuse the classification scores, decode the FB regression,
/// clip, drop below the score floor, suppress duplicates on the fused score.
/// Output is sorted by descending final score.
inline std::vector<Detection> detect(const Scene& scene, const ParamSet& p,
                                     const InferenceConfig& cfg) {
  ProposalConfig pc = cfg.proposals;
  pc.oracle_jitter = false;
  const auto proposals = rpn_propose(p, scene, pc);

  std::vector<Detection> candidates;
  std::vector<ScoredBox> boxes;
  for (const ScoredBox& prop : proposals) {
    const auto pooled = roi_pool(scene, prop.box, p.config.pool_grid);
    const HeadTape fb = fb_forward(p, pooled);
    const double fb_prob =
        detail::clamped_ped_prob(fb.cls_logits, cfg.prob_clamp);
    const double vb_prob =
        cfg.vb_branch ? detail::vb_probe(scene, p, prop.box, cfg) : 1.0;
    const double final_score = fb_prob * vb_prob;
    if (final_score < cfg.score_floor) continue;
    const auto decoded = clip(decode_deltas(prop.box, fb.reg_deltas),
                              scene.bounds);
    if (!decoded) continue;
    candidates.push_back({*decoded, final_score, fb_prob, vb_prob});
    boxes.push_back({*decoded, final_score});
  }

  std::vector<Detection> out;
  for (std::size_t idx : nms(boxes, cfg.nms_iou))
    out.push_back(candidates[idx]);
  return out;
}

/// CSV dump, one row per detection in the given order.
inline void write_detections_csv(std::ostream& out, const std::string& scene_id,
                                 const std::vector<Detection>& dets,
                                 bool header = true) {
  if (header)
    out << "scene_id,x1,y1,x2,y2,final_score,fb_prob,vb_prob\n";
  char buf[256];
  for (const Detection& d : dets) {
    std::snprintf(buf, sizeof buf,
                  "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  scene_id.c_str(), d.box.x1, d.box.y1, d.box.x2, d.box.y2,
                  d.final_score, d.fb_prob, d.vb_prob);
    out << buf;
  }
}

}  // namespace msfm
