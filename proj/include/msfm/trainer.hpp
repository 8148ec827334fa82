#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "msfm/errors.hpp"
#include "msfm/evaluation.hpp"
#include "msfm/inference.hpp"
#include "msfm/losses.hpp"
#include "msfm/model.hpp"
#include "msfm/sampling.hpp"
#include "msfm/synth.hpp"

namespace msfm {

enum class VbBranchMode { off, cls, cls_plus_reg };
enum class MsfmmSetting { off, pos, pos_plus_neg };

inline std::string to_string(VbBranchMode m) {
  switch (m) {
    case VbBranchMode::off: return "off";
    case VbBranchMode::cls: return "cls";
    case VbBranchMode::cls_plus_reg: return "cls+reg";
  }
  return "?";
}

inline std::string to_string(MsfmmSetting m) {
  switch (m) {
    case MsfmmSetting::off: return "off";
    case MsfmmSetting::pos: return "pos";
    case MsfmmSetting::pos_plus_neg: return "pos+neg";
  }
  return "?";
}

/// Optional per-term multipliers; all 1 reproduces the plain unweighted sum.
struct LossWeights {
  double rpn_cls = 1.0, rpn_reg = 1.0;
  double fb_cls = 1.0, fb_reg = 1.0;
  double vb_cls = 1.0, vb_reg = 1.0;
  double msfmm = 1.0;
};

struct TrainConfig {
  int epochs = 15;
  double base_lr = 0.01;
  double momentum = 0.9;
  double lr_decay_factor = 0.1;
  std::vector<int> decay_epochs{8, 11};
  int images_per_step = 2;
  std::uint64_t seed = 1;
  ModelConfig model;
  VbBranchMode vb_branch = VbBranchMode::cls;
  MsfmmSetting msfmm = MsfmmSetting::pos;
  SimilarityKind similarity = SimilarityKind::cosine;
  int roi_sample_cap = 512;
  double roi_pos_fraction = 0.25;
  int rpn_sample_cap = 256;
  double rpn_pos_fraction = 0.5;
  // also feed VB-positive proposals to the FB regressor with full-box
  // targets, so visible-part boxes learn to expand to the full extent
  bool fb_reg_from_vb_positives = true;
  ProposalConfig proposals;        // oracle jitter is forced on for training
  InferenceConfig inference;       // used for validation scoring
  double val_fraction = 0.2;
  int eval_every = 0;              // 0: evaluate the final model only
  LossWeights weights;

  void validate() const {
    model.validate();
    if (epochs < 0) throw std::invalid_argument("train config: epochs < 0");
    if (!(base_lr > 0)) throw std::invalid_argument("train config: base_lr");
    if (momentum < 0 || momentum >= 1)
      throw std::invalid_argument("train config: momentum must be in [0,1)");
    if (!(lr_decay_factor > 0))
      throw std::invalid_argument("train config: lr_decay_factor");
    if (images_per_step < 1)
      throw std::invalid_argument("train config: images_per_step < 1");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
      if (decay_epochs[i] >= epochs)
        throw std::invalid_argument("train config: decay epoch >= epochs");
      if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
        throw std::invalid_argument(
            "train config: decay epochs must be strictly increasing");
    }
    if (roi_sample_cap < 1 || rpn_sample_cap < 1)
      throw std::invalid_argument("train config: sample caps must be >= 1");
    if (msfmm != MsfmmSetting::off && vb_branch == VbBranchMode::off)
      throw std::invalid_argument(
          "train config: the similarity loss requires the vb branch");
    if (val_fraction < 0 || val_fraction >= 1)
      throw std::invalid_argument("train config: val_fraction not in [0,1)");
    if (eval_every < 0)
      throw std::invalid_argument("train config: eval_every < 0");
  }
};

/// Heavy-ball update: v <- momentum v + g, p <- p - lr v.
inline void sgd_step(ParamSet& p, const GradientSet& g, ParamSet& velocity,
                     double lr, double momentum) {
  auto pl = p.layers();
  const auto gl = g.layers();
  auto vl = velocity.layers();
  if (pl.size() != gl.size() || pl.size() != vl.size())
    throw std::invalid_argument("sgd_step: mismatched parameter sets");
  for (std::size_t k = 0; k < pl.size(); ++k) {
    auto& pw = *pl[k].second;
    const auto& gw = *gl[k].second;
    auto& vw = *vl[k].second;
    if (pw.w.size() != gw.w.size() || pw.w.size() != vw.w.size())
      throw std::invalid_argument("sgd_step: shape mismatch at " +
                                  pl[k].first);
    for (std::size_t i = 0; i < pw.w.size(); ++i) {
      vw.w[i] = momentum * vw.w[i] + gw.w[i];
      pw.w[i] -= lr * vw.w[i];
    }
    for (std::size_t i = 0; i < pw.b.size(); ++i) {
      vw.b[i] = momentum * vw.b[i] + gw.b[i];
      pw.b[i] -= lr * vw.b[i];
    }
  }
}

namespace detail {

struct FilteredGts {
  std::vector<Box> full;
  std::vector<Box> visible;
  std::vector<const Annotation*> anns;
};

inline FilteredGts training_gts(const Scene& scene) {
  FilteredGts g;
  for (const Annotation& a : scene.annotations) {
    if (a.ignore || !training_filter(a)) continue;
    g.full.push_back(a.full);
    g.visible.push_back(a.visible);
    g.anns.push_back(&a);
  }
  return g;
}

inline std::uint64_t jitter_stream(std::uint64_t seed,
                                   std::string_view scene_id, int epoch) {
  return mix64(mix64(mix64(seed, 0x6a697474ULL), hash_str(scene_id)),
               static_cast<std::uint64_t>(epoch));
}

inline std::uint64_t rpn_stream(std::uint64_t seed,
                                std::string_view scene_id) {
  return mix64(sample_stream_seed(seed, scene_id, Branch::fb), 0x52504eULL);
}

}  // namespace detail

/// Sampled per-branch batches of one scene, ready for forward passes.
struct SceneBatch {
  std::vector<ScoredBox> proposals;
  std::vector<AssignedProposal> fb;  // sampled
  std::vector<AssignedProposal> vb;  // sampled (empty when the branch is off)
  PositiveGroups groups;
  detail::FilteredGts gts;
  std::vector<AnchorRef> anchors;        // sampled anchors
  std::vector<SampleLabel> anchor_labels;
  std::vector<int> anchor_gt;            // index into gts.full, -1 negative
};

/// Builds the training batch of one scene: jittered proposal pool, per-branch
/// assignment per the IoU > 0.5 rule against full / visible boxes, 1:3
/// subsampling, positive groups, and the sampled anchor set for the proposal
/// scorer losses.
inline SceneBatch build_scene_batch(const ParamSet& params, const Scene& scene,
                                    const TrainConfig& cfg, int epoch) {
  SceneBatch b;
  b.gts = detail::training_gts(scene);

  ProposalConfig pc = cfg.proposals;
  pc.oracle_jitter = true;
  pc.jitter_seed = detail::jitter_stream(cfg.seed, scene.id, epoch);
  b.proposals = rpn_propose(params, scene, pc);

  std::vector<Box> boxes;
  boxes.reserve(b.proposals.size());
  for (const auto& p : b.proposals) boxes.push_back(p.box);

  const auto fb_assigned = assign(boxes, b.gts.full, Branch::fb);
  b.fb = sample(fb_assigned, cfg.roi_sample_cap, cfg.roi_pos_fraction,
                sample_stream_seed(cfg.seed, scene.id, Branch::fb));
  if (cfg.vb_branch != VbBranchMode::off) {
    const auto vb_assigned = assign(boxes, b.gts.visible, Branch::vb);
    b.vb = sample(vb_assigned, cfg.roi_sample_cap, cfg.roi_pos_fraction,
                  sample_stream_seed(cfg.seed, scene.id, Branch::vb));
    b.groups = group_positives(b.fb, b.vb);
  }

  const auto anchors = anchor_grid(scene, params.config);
  std::vector<Box> anchor_boxes;
  anchor_boxes.reserve(anchors.size());
  for (const auto& a : anchors) anchor_boxes.push_back(a.box);
  const auto anchor_assigned = assign(anchor_boxes, b.gts.full, Branch::fb);
  const auto picked =
      sample_indices(anchor_assigned, cfg.rpn_sample_cap,
                     cfg.rpn_pos_fraction,
                     detail::rpn_stream(cfg.seed, scene.id));
  for (std::size_t i : picked) {
    b.anchors.push_back(anchors[i]);
    b.anchor_labels.push_back(anchor_assigned[i].label);
    b.anchor_gt.push_back(anchor_assigned[i].gt_index);
  }
  return b;
}

/// Forward (and optionally backward) pass of one optimization step over a
/// mini-batch of scenes. Classification terms average over the step's
/// sampled batch, regression terms sum positives over the same denominator,
/// and the similarity term follows its group averaging with one negative
/// pseudo-group per scene in pos+neg mode. Returns the post-weight loss
/// breakdown; gradients accumulate into grads when non-null.
inline LossBreakdown compute_step_loss(const ParamSet& params,
                                       const std::vector<const Scene*>& scenes,
                                       const TrainConfig& cfg, int epoch,
                                       GradientSet* grads) {
  const bool vb_on = cfg.vb_branch != VbBranchMode::off;
  const bool vb_reg_on = cfg.vb_branch == VbBranchMode::cls_plus_reg;
  const bool msfm_on = vb_on && cfg.msfmm != MsfmmSetting::off;
  const LossWeights& w = cfg.weights;

  std::vector<SceneBatch> batches;
  batches.reserve(scenes.size());
  std::size_t n_fb = 0, n_vb = 0, n_rpn = 0;
  for (const Scene* s : scenes) {
    batches.push_back(build_scene_batch(params, *s, cfg, epoch));
    n_fb += batches.back().fb.size();
    n_vb += batches.back().vb.size();
    n_rpn += batches.back().anchors.size();
  }

  double rpn_cls = 0, rpn_reg = 0, fb_cls = 0, fb_reg = 0;
  double vb_cls = 0, vb_reg = 0, msfmm = 0;

  // flattened across the step for the similarity loss
  std::vector<std::vector<double>> fb_feats, vb_feats;
  std::vector<HeadTape> fb_tapes, vb_tapes;
  std::vector<std::array<double, 2>> fb_dcls, vb_dcls;
  std::vector<std::array<double, 4>> fb_dreg, vb_dreg;
  PositiveGroups merged;
  std::vector<MsfmNegatives> negatives;

  for (std::size_t si = 0; si < batches.size(); ++si) {
    const SceneBatch& b = batches[si];
    const Scene& scene = *scenes[si];
    const int fb_base = static_cast<int>(fb_tapes.size());
    const int vb_base = static_cast<int>(vb_tapes.size());

    for (const AssignedProposal& ap : b.fb) {
      const auto pooled = roi_pool(scene, ap.box, params.config.pool_grid);
      HeadTape t = fb_forward(params, pooled);
      const int label = ap.label == SampleLabel::positive ? 1 : 0;
      const auto ce = cross_entropy(t.cls_logits, label);
      fb_cls += ce.loss / static_cast<double>(n_fb);
      std::array<double, 2> dcls{};
      std::array<double, 4> dreg{};
      for (int j = 0; j < 2; ++j)
        dcls[j] = w.fb_cls * ce.d_logits[j] / static_cast<double>(n_fb);
      if (label == 1) {
        const auto target = encode_deltas(ap.box, b.gts.full[ap.gt_index]);
        const auto sl = smooth_l1(t.reg_deltas, target);
        fb_reg += sl.loss / static_cast<double>(n_fb);
        for (int j = 0; j < 4; ++j)
          dreg[j] = w.fb_reg * sl.d_pred[j] / static_cast<double>(n_fb);
      }
      fb_tapes.push_back(std::move(t));
      fb_feats.push_back(fb_tapes.back().fc2_out);
      fb_dcls.push_back(dcls);
      fb_dreg.push_back(dreg);
    }

    for (const AssignedProposal& ap : b.vb) {
      const auto pooled = roi_pool(scene, ap.box, params.config.pool_grid);
      HeadTape t = vb_forward(params, pooled, vb_reg_on);
      const int label = ap.label == SampleLabel::positive ? 1 : 0;
      const auto ce = cross_entropy(t.cls_logits, label);
      vb_cls += ce.loss / static_cast<double>(n_vb);
      std::array<double, 2> dcls{};
      std::array<double, 4> dreg{};
      for (int j = 0; j < 2; ++j)
        dcls[j] = w.vb_cls * ce.d_logits[j] / static_cast<double>(n_vb);
      if (vb_reg_on && label == 1) {
        const auto target = encode_deltas(ap.box, b.gts.visible[ap.gt_index]);
        const auto sl = smooth_l1(t.reg_deltas, target);
        vb_reg += sl.loss / static_cast<double>(n_vb);
        for (int j = 0; j < 4; ++j)
          dreg[j] = w.vb_reg * sl.d_pred[j] / static_cast<double>(n_vb);
      }
      vb_tapes.push_back(std::move(t));
      vb_feats.push_back(vb_tapes.back().fc2_out);
      vb_dcls.push_back(dcls);
      vb_dreg.push_back(dreg);
    }

    if (cfg.fb_reg_from_vb_positives) {
      for (const AssignedProposal& ap : b.vb) {
        if (ap.label != SampleLabel::positive) continue;
        const auto pooled = roi_pool(scene, ap.box, params.config.pool_grid);
        HeadTape t = fb_forward(params, pooled);
        const auto target = encode_deltas(ap.box, b.gts.full[ap.gt_index]);
        const auto sl = smooth_l1(t.reg_deltas, target);
        fb_reg += sl.loss / static_cast<double>(n_fb);
        std::array<double, 2> dcls{};
        std::array<double, 4> dreg{};
        for (int j = 0; j < 4; ++j)
          dreg[j] = w.fb_reg * sl.d_pred[j] / static_cast<double>(n_fb);
        fb_tapes.push_back(std::move(t));
        fb_feats.push_back(fb_tapes.back().fc2_out);
        fb_dcls.push_back(dcls);
        fb_dreg.push_back(dreg);
      }
    }

    if (msfm_on) {
      for (const PositiveGroup& g : b.groups.groups) {
        PositiveGroup shifted = g;
        for (int& m : shifted.fb_members) m += fb_base;
        for (int& m : shifted.vb_members) m += vb_base;
        merged.groups.push_back(std::move(shifted));
      }
      if (cfg.msfmm == MsfmmSetting::pos_plus_neg) {
        MsfmNegatives neg;
        for (std::size_t i = 0; i < b.fb.size(); ++i)
          if (b.fb[i].label == SampleLabel::negative)
            neg.fb_members.push_back(fb_base + static_cast<int>(i));
        for (std::size_t i = 0; i < b.vb.size(); ++i)
          if (b.vb[i].label == SampleLabel::negative)
            neg.vb_members.push_back(vb_base + static_cast<int>(i));
        negatives.push_back(std::move(neg));
      }
    }
  }
  merged.pedestrian_count = static_cast<int>(merged.groups.size());

  std::vector<std::vector<double>> fb_dfc2(fb_tapes.size());
  std::vector<std::vector<double>> vb_dfc2(vb_tapes.size());
  if (msfm_on && (!merged.groups.empty() || !negatives.empty())) {
    // groups whose mean would vanish cannot enter the cosine; drop them the
    // way a P == 0 step drops the whole term
    auto viable = [&](const std::vector<int>& members,
                      const std::vector<std::vector<double>>& feats) {
      std::vector<double> m(feats.empty() ? 0 : feats[0].size(), 0.0);
      for (int idx : members)
        for (std::size_t j = 0; j < m.size(); ++j)
          m[j] += feats[static_cast<std::size_t>(idx)][j];
      double n2 = 0.0;
      for (double v : m) n2 += v * v;
      return n2 > 1e-20;
    };
    PositiveGroups usable;
    for (auto& g : merged.groups)
      if (viable(g.fb_members, fb_feats) && viable(g.vb_members, vb_feats))
        usable.groups.push_back(g);
    usable.pedestrian_count = static_cast<int>(usable.groups.size());
    std::vector<MsfmNegatives> usable_negs;
    for (auto& n : negatives)
      if (!n.fb_members.empty() && !n.vb_members.empty() &&
          viable(n.fb_members, fb_feats) && viable(n.vb_members, vb_feats))
        usable_negs.push_back(n);

    const MsfmMode mode = cfg.msfmm == MsfmmSetting::pos_plus_neg
                              ? MsfmMode::pos_plus_neg
                              : MsfmMode::pos;
    const auto r = msfm_loss(usable, fb_feats, vb_feats, cfg.similarity, mode,
                             usable_negs);
    msfmm = r.loss;
    for (std::size_t i = 0; i < fb_dfc2.size(); ++i)
      if (!r.d_fb[i].empty()) {
        fb_dfc2[i] = r.d_fb[i];
        for (double& v : fb_dfc2[i]) v *= w.msfmm;
      }
    for (std::size_t i = 0; i < vb_dfc2.size(); ++i)
      if (!r.d_vb[i].empty()) {
        vb_dfc2[i] = r.d_vb[i];
        for (double& v : vb_dfc2[i]) v *= w.msfmm;
      }
  }

  if (grads) {
    for (std::size_t i = 0; i < fb_tapes.size(); ++i)
      head_backward(params, Branch::fb, fb_tapes[i], fb_dcls[i], fb_dreg[i],
                    fb_dfc2[i], *grads);
    for (std::size_t i = 0; i < vb_tapes.size(); ++i) {
      std::span<const double> dreg = vb_reg_on
                                         ? std::span<const double>(vb_dreg[i])
                                         : std::span<const double>();
      head_backward(params, Branch::vb, vb_tapes[i], vb_dcls[i], dreg,
                    vb_dfc2[i], *grads);
    }
  }

  for (std::size_t si = 0; si < batches.size(); ++si) {
    const SceneBatch& b = batches[si];
    const Scene& scene = *scenes[si];
    for (std::size_t i = 0; i < b.anchors.size(); ++i) {
      const AnchorTape t = rpn_forward(params, scene, b.anchors[i]);
      const int label = b.anchor_labels[i] == SampleLabel::positive ? 1 : 0;
      const auto ce = cross_entropy(t.cls_logits, label);
      rpn_cls += ce.loss / static_cast<double>(n_rpn);
      std::array<double, 2> dcls{};
      std::array<double, 4> dreg{};
      for (int j = 0; j < 2; ++j)
        dcls[j] = w.rpn_cls * ce.d_logits[j] / static_cast<double>(n_rpn);
      if (label == 1) {
        const auto target =
            encode_deltas(b.anchors[i].box, b.gts.full[b.anchor_gt[i]]);
        const auto sl = smooth_l1(t.reg_deltas, target);
        rpn_reg += sl.loss / static_cast<double>(n_rpn);
        for (int j = 0; j < 4; ++j)
          dreg[j] = w.rpn_reg * sl.d_pred[j] / static_cast<double>(n_rpn);
      }
      if (grads) rpn_backward(params, t, dcls, dreg, *grads);
    }
  }

  return total_loss(w.rpn_cls * rpn_cls, w.rpn_reg * rpn_reg,
                    w.fb_cls * fb_cls, w.fb_reg * fb_reg, w.vb_cls * vb_cls,
                    w.msfmm * msfmm, w.vb_reg * vb_reg);
}

struct StepRecord {
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

struct ValRecord {
  int epoch = 0;
  std::vector<std::pair<std::string, double>> mr;  // subset -> log-avg MR
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<ValRecord> val;
  ParamSet params;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> split_point(std::size_t n,
                                                       double val_fraction) {
  const auto n_val = static_cast<std::size_t>(
      std::llround(val_fraction * static_cast<double>(n)));
  return {n - n_val, n_val};
}

inline ValRecord validate_model(const ParamSet& params, const Dataset& ds,
                                std::size_t first_val, std::size_t n_val,
                                const TrainConfig& cfg, int epoch) {
  ValRecord rec;
  rec.epoch = epoch;
  InferenceConfig inf = cfg.inference;
  inf.vb_branch = cfg.vb_branch != VbBranchMode::off;
  std::vector<EvalImage> images;
  for (std::size_t i = first_val; i < first_val + n_val; ++i) {
    EvalImage img;
    img.annotations = ds.scenes[i].annotations;
    const auto dets = detect(ds.scenes[i], params, inf);
    for (const Detection& d : dets) img.dets.push_back({d.box, d.final_score});
    images.push_back(std::move(img));
  }
  if (images.empty()) return rec;
  for (const SubsetSpec& subset :
       {subset_reasonable(), subset_heavy(), subset_combined()}) {
    try {
      rec.mr.emplace_back(subset.name, log_avg_mr(curve(images, subset)));
    } catch (const std::domain_error&) {
      // subset has no targets in the validation split; leave it out
    }
  }
  return rec;
}

}  // namespace detail

/// Trains on the leading (1 - val_fraction) share of the dataset with
/// SGD + momentum, decaying the learning rate at the configured epochs
/// (epochs are 1-based). Deterministic for a fixed config and seed.
inline TrainHistory train(const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.scenes.empty())
    throw std::invalid_argument("train: dataset is empty");
  const auto [n_train, n_val] =
      detail::split_point(dataset.scenes.size(), cfg.val_fraction);
  if (n_train == 0) throw std::invalid_argument("train: no training scenes");

  TrainHistory history;
  Rng init_rng(mix64(cfg.seed, 0x696e6974ULL));
  history.params = random_init(cfg.model, init_rng);
  ParamSet velocity = ParamSet::zeros(cfg.model);
  double lr = cfg.base_lr;

  std::vector<std::size_t> order(n_train);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (std::find(cfg.decay_epochs.begin(), cfg.decay_epochs.end(), epoch) !=
        cfg.decay_epochs.end())
      lr *= cfg.lr_decay_factor;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(mix64(mix64(cfg.seed, 0x6f72646572ULL),
                        static_cast<std::uint64_t>(epoch)));
    order_rng.shuffle(order);

    int step_index = 0;
    for (std::size_t pos = 0; pos < order.size();
         pos += static_cast<std::size_t>(cfg.images_per_step), ++step_index) {
      std::vector<const Scene*> chunk;
      for (std::size_t k = pos;
           k < order.size() &&
           k < pos + static_cast<std::size_t>(cfg.images_per_step);
           ++k)
        chunk.push_back(&dataset.scenes[order[k]]);

      GradientSet grads = ParamSet::zeros(cfg.model);
      const LossBreakdown loss =
          compute_step_loss(history.params, chunk, cfg, epoch, &grads);
      if (!std::isfinite(loss.total))
        throw DivergenceError("training diverged at epoch " +
                              std::to_string(epoch) + " step " +
                              std::to_string(step_index));
      sgd_step(history.params, grads, velocity, lr, cfg.momentum);
      history.steps.push_back({epoch, step_index, lr, loss});
    }

    if (n_val > 0 && cfg.eval_every > 0 && epoch % cfg.eval_every == 0)
      history.val.push_back(detail::validate_model(
          history.params, dataset, n_train, n_val, cfg, epoch));
  }

  if (n_val > 0 &&
      (history.val.empty() || history.val.back().epoch != cfg.epochs))
    history.val.push_back(detail::validate_model(history.params, dataset,
                                                 n_train, n_val, cfg,
                                                 cfg.epochs));
  return history;
}

/// Mean cosine similarity between FB and VB group-mean features over
/// pedestrians of the given subset, measured with jittered proposal pools on
/// the given scenes (typically held-out data). Uses every positive without
/// subsampling.
inline double feature_similarity_report(const ParamSet& params,
                                        const Dataset& dataset,
                                        const SubsetSpec& subset,
                                        std::uint64_t probe_seed = 1811) {
  double acc = 0.0;
  long count = 0;
  ProposalConfig pc;
  pc.oracle_jitter = true;
  for (const Scene& scene : dataset.scenes) {
    const auto gts = detail::training_gts(scene);
    if (gts.full.empty()) continue;
    pc.jitter_seed = mix64(probe_seed, hash_str(scene.id));
    const auto proposals = rpn_propose(params, scene, pc);
    std::vector<Box> boxes;
    for (const auto& p : proposals) boxes.push_back(p.box);
    const auto fb_assigned = assign(boxes, gts.full, Branch::fb);
    const auto vb_assigned = assign(boxes, gts.visible, Branch::vb);
    const auto groups = group_positives(fb_assigned, vb_assigned);
    for (const PositiveGroup& g : groups.groups) {
      if (!subset_filter(*gts.anns[static_cast<std::size_t>(g.gt_index)],
                         subset))
        continue;
      const int dim = params.config.hidden_dim;
      std::vector<double> u(static_cast<std::size_t>(dim), 0.0);
      std::vector<double> w(static_cast<std::size_t>(dim), 0.0);
      for (int m : g.fb_members) {
        const auto pooled = roi_pool(scene, fb_assigned[m].box,
                                     params.config.pool_grid);
        const auto t = fb_forward(params, pooled);
        for (int j = 0; j < dim; ++j) u[j] += t.fc2_out[j];
      }
      for (int m : g.vb_members) {
        const auto pooled = roi_pool(scene, vb_assigned[m].box,
                                     params.config.pool_grid);
        const auto t = vb_forward(params, pooled);
        for (int j = 0; j < dim; ++j) w[j] += t.fc2_out[j];
      }
      double nu = 0, nw = 0, dot = 0;
      for (int j = 0; j < dim; ++j) {
        nu += u[j] * u[j];
        nw += w[j] * w[j];
        dot += u[j] * w[j];
      }
      if (nu < 1e-24 || nw < 1e-24) continue;
      acc += dot / std::sqrt(nu * nw);
      ++count;
    }
  }
  if (count == 0)
    throw std::domain_error("feature_similarity_report: no groups in subset");
  return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// ablation harness

struct NamedConfig {
  std::string name;
  TrainConfig config;
};

/// The branch/similarity configuration grid: baseline, the two branch
/// variants, and the similarity modes.
inline std::vector<NamedConfig> table1_grid(const TrainConfig& base) {
  auto with = [&](const std::string& name, VbBranchMode vb, MsfmmSetting ms) {
    TrainConfig c = base;
    c.vb_branch = vb;
    c.msfmm = ms;
    c.similarity = SimilarityKind::cosine;
    return NamedConfig{name, c};
  };
  return {with("baseline", VbBranchMode::off, MsfmmSetting::off),
          with("vb_cls_reg", VbBranchMode::cls_plus_reg, MsfmmSetting::off),
          with("vb_cls", VbBranchMode::cls, MsfmmSetting::off),
          with("msfm_pos_neg", VbBranchMode::cls, MsfmmSetting::pos_plus_neg),
          with("msfm_pos", VbBranchMode::cls, MsfmmSetting::pos)};
}

inline std::vector<NamedConfig> table2_grid(const TrainConfig& base) {
  auto with = [&](const std::string& name, SimilarityKind kind) {
    TrainConfig c = base;
    c.vb_branch = VbBranchMode::cls;
    c.msfmm = MsfmmSetting::pos;
    c.similarity = kind;
    return NamedConfig{name, c};
  };
  return {with("manhattan", SimilarityKind::manhattan),
          with("euclidean", SimilarityKind::euclidean),
          with("cosine", SimilarityKind::cosine)};
}

/// One (config, subset) cell of the ablation report.
struct AblationRow {
  std::string config;
  std::string subset;
  double mean_mr = 0.0;
  double stddev = 0.0;
  int seeds = 0;
};

/// Trains every grid configuration over n_seeds seeds (seed = base seed + s)
/// and reports mean and standard deviation of the final validation
/// log-average miss rate on the R and HO subsets. Cells run in parallel up
/// to n_threads; results are deterministic regardless of scheduling.
inline std::vector<AblationRow> ablate(const Dataset& dataset,
                                       const std::vector<NamedConfig>& grid,
                                       int n_seeds, int n_threads = 0) {
  if (n_seeds < 1) throw std::invalid_argument("ablate: n_seeds < 1");
  struct Job {
    std::size_t config_index;
    int seed_offset;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < grid.size(); ++c)
    for (int s = 0; s < n_seeds; ++s) jobs.push_back({c, s});

  struct JobResult {
    double r = 1.0;
    double ho = 1.0;
  };
  std::vector<JobResult> results(jobs.size());

  auto run_job = [&](std::size_t j) {
    TrainConfig cfg = grid[jobs[j].config_index].config;
    cfg.seed = cfg.seed + static_cast<std::uint64_t>(jobs[j].seed_offset);
    const TrainHistory h = train(dataset, cfg);
    if (h.val.empty())
      throw std::invalid_argument("ablate: dataset has no validation split");
    for (const auto& [subset, mr] : h.val.back().mr) {
      if (subset == "R") results[j].r = mr;
      if (subset == "HO") results[j].ho = mr;
    }
  };

  if (n_threads <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    n_threads = hw == 0 ? 1 : static_cast<int>(hw);
  }
  if (n_threads <= 1 || jobs.size() <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    std::vector<std::thread> pool;
    std::size_t next = 0;
    std::mutex gate;
    const auto worker = [&] {
      for (;;) {
        std::size_t j;
        {
          std::lock_guard lock(gate);
          if (next >= jobs.size()) return;
          j = next++;
        }
        run_job(j);
      }
    };
    const auto n = std::min<std::size_t>(
        static_cast<std::size_t>(n_threads), jobs.size());
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<AblationRow> rows;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    for (const char* subset : {"R", "HO"}) {
      std::vector<double> values;
      for (std::size_t j = 0; j < jobs.size(); ++j)
        if (jobs[j].config_index == c)
          values.push_back(std::string(subset) == "R" ? results[j].r
                                                      : results[j].ho);
      const double mean =
          std::accumulate(values.begin(), values.end(), 0.0) / values.size();
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      const double sd =
          values.size() > 1 ? std::sqrt(var / (values.size() - 1)) : 0.0;
      rows.push_back({grid[c].name, subset, mean, sd,
                      static_cast<int>(values.size())});
    }
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out,
                               const std::vector<AblationRow>& rows) {
  out << "config,subset,mean_mr,stddev,seeds\n";
  char buf[96];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%d\n", r.config.c_str(),
                  r.subset.c_str(), 100.0 * r.mean_mr, 100.0 * r.stddev,
                  r.seeds);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// config and history files

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["base_lr"] = c.base_lr;
  j["momentum"] = c.momentum;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["decay_epochs"] = c.decay_epochs;
  j["images_per_step"] = c.images_per_step;
  j["seed"] = c.seed;
  j["hidden_dim"] = c.model.hidden_dim;
  j["vb_branch"] = to_string(c.vb_branch);
  j["msfmm"] = to_string(c.msfmm);
  j["similarity"] = to_string(c.similarity);
  j["roi_sample_cap"] = c.roi_sample_cap;
  j["roi_pos_fraction"] = c.roi_pos_fraction;
  j["rpn_sample_cap"] = c.rpn_sample_cap;
  j["rpn_pos_fraction"] = c.rpn_pos_fraction;
  j["fb_reg_from_vb_positives"] = c.fb_reg_from_vb_positives;
  j["proposal_top_k"] = c.proposals.top_k;
  j["jitter_per_gt"] = c.proposals.jitter_per_gt;
  j["jitter_amplitude"] = c.proposals.jitter_amplitude;
  j["val_fraction"] = c.val_fraction;
  j["eval_every"] = c.eval_every;
  j["score_floor"] = c.inference.score_floor;
  j["nms_iou"] = c.inference.nms_iou;
  j["inference_top_k"] = c.inference.proposals.top_k;
  j["vb_probe_subboxes"] = c.inference.vb_probe_subboxes;
  j["vb_probe_fraction"] = c.inference.vb_probe_fraction;
  return j;
}

/// Parses a TrainConfig; every field is optional and falls back to the
/// default. Accepts the vocabulary off|cls|cls+reg, off|pos|pos+neg and
/// cosine|euclidean|manhattan for the switches.
inline TrainConfig train_config_from_json(const nlohmann::json& j,
                                          const std::string& where) {
  TrainConfig c;
  try {
    if (j.contains("epochs")) j["epochs"].get_to(c.epochs);
    if (j.contains("base_lr")) j["base_lr"].get_to(c.base_lr);
    if (j.contains("momentum")) j["momentum"].get_to(c.momentum);
    if (j.contains("lr_decay_factor"))
      j["lr_decay_factor"].get_to(c.lr_decay_factor);
    if (j.contains("decay_epochs")) {
      c.decay_epochs.clear();
      for (const auto& e : j["decay_epochs"])
        c.decay_epochs.push_back(e.get<int>());
    }
    if (j.contains("images_per_step"))
      j["images_per_step"].get_to(c.images_per_step);
    if (j.contains("seed")) j["seed"].get_to(c.seed);
    if (j.contains("hidden_dim")) j["hidden_dim"].get_to(c.model.hidden_dim);
    if (j.contains("vb_branch")) {
      const auto v = j["vb_branch"].get<std::string>();
      if (v == "off") c.vb_branch = VbBranchMode::off;
      else if (v == "cls") c.vb_branch = VbBranchMode::cls;
      else if (v == "cls+reg") c.vb_branch = VbBranchMode::cls_plus_reg;
      else throw DataError(where + ": unknown vb_branch \"" + v + "\"");
    }
    if (j.contains("msfmm")) {
      const auto v = j["msfmm"].get<std::string>();
      if (v == "off") c.msfmm = MsfmmSetting::off;
      else if (v == "pos") c.msfmm = MsfmmSetting::pos;
      else if (v == "pos+neg") c.msfmm = MsfmmSetting::pos_plus_neg;
      else throw DataError(where + ": unknown msfmm \"" + v + "\"");
    }
    if (j.contains("similarity")) {
      const auto v = j["similarity"].get<std::string>();
      if (v == "cosine") c.similarity = SimilarityKind::cosine;
      else if (v == "euclidean") c.similarity = SimilarityKind::euclidean;
      else if (v == "manhattan") c.similarity = SimilarityKind::manhattan;
      else throw DataError(where + ": unknown similarity \"" + v + "\"");
    }
    if (j.contains("roi_sample_cap"))
      j["roi_sample_cap"].get_to(c.roi_sample_cap);
    if (j.contains("roi_pos_fraction"))
      j["roi_pos_fraction"].get_to(c.roi_pos_fraction);
    if (j.contains("rpn_sample_cap"))
      j["rpn_sample_cap"].get_to(c.rpn_sample_cap);
    if (j.contains("rpn_pos_fraction"))
      j["rpn_pos_fraction"].get_to(c.rpn_pos_fraction);
    if (j.contains("fb_reg_from_vb_positives"))
      j["fb_reg_from_vb_positives"].get_to(c.fb_reg_from_vb_positives);
    if (j.contains("proposal_top_k"))
      j["proposal_top_k"].get_to(c.proposals.top_k);
    if (j.contains("jitter_per_gt"))
      j["jitter_per_gt"].get_to(c.proposals.jitter_per_gt);
    if (j.contains("jitter_amplitude"))
      j["jitter_amplitude"].get_to(c.proposals.jitter_amplitude);
    if (j.contains("val_fraction")) j["val_fraction"].get_to(c.val_fraction);
    if (j.contains("eval_every")) j["eval_every"].get_to(c.eval_every);
    if (j.contains("score_floor"))
      j["score_floor"].get_to(c.inference.score_floor);
    if (j.contains("nms_iou")) j["nms_iou"].get_to(c.inference.nms_iou);
    if (j.contains("inference_top_k"))
      j["inference_top_k"].get_to(c.inference.proposals.top_k);
    if (j.contains("vb_probe_subboxes"))
      j["vb_probe_subboxes"].get_to(c.inference.vb_probe_subboxes);
    if (j.contains("vb_probe_fraction"))
      j["vb_probe_fraction"].get_to(c.inference.vb_probe_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  return train_config_from_json(j, path);
}

inline void save_history(const TrainHistory& h, const TrainConfig& cfg,
                         const std::string& path) {
  nlohmann::ordered_json doc;
  doc["format"] = "msfm-history";
  doc["config"] = train_config_to_json(cfg);
  auto& steps = doc["steps"] = nlohmann::ordered_json::array();
  for (const StepRecord& s : h.steps) {
    steps.push_back(nlohmann::ordered_json{
        {"epoch", s.epoch},
        {"step", s.step},
        {"lr", s.lr},
        {"loss",
         nlohmann::ordered_json{{"rpn_cls", s.loss.rpn_cls},
                                {"rpn_reg", s.loss.rpn_reg},
                                {"fb_cls", s.loss.fb_cls},
                                {"fb_reg", s.loss.fb_reg},
                                {"vb_cls", s.loss.vb_cls},
                                {"vb_reg", s.loss.vb_reg},
                                {"msfmm", s.loss.msfmm},
                                {"total", s.loss.total}}}});
  }
  auto& val = doc["val"] = nlohmann::ordered_json::array();
  for (const ValRecord& v : h.val) {
    nlohmann::ordered_json mr;
    for (const auto& [subset, value] : v.mr) mr[subset] = value;
    val.push_back(nlohmann::ordered_json{{"epoch", v.epoch}, {"mr", mr}});
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << doc.dump() << "\n";
  if (!out) throw DataError("write failed: " + path);
}

/// Loads the steps/val part of a history file (parameters live in the
/// checkpoint, not here).
inline TrainHistory load_history(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open history: " + path);
  nlohmann::ordered_json doc;  // keeps the subset order of the writer
  try {
    doc = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  TrainHistory h;
  try {
    if (doc.at("format").get<std::string>() != "msfm-history")
      throw DataError(path + ": not a history file");
    for (const auto& js : doc.at("steps")) {
      StepRecord s;
      js.at("epoch").get_to(s.epoch);
      js.at("step").get_to(s.step);
      js.at("lr").get_to(s.lr);
      const auto& jl = js.at("loss");
      jl.at("rpn_cls").get_to(s.loss.rpn_cls);
      jl.at("rpn_reg").get_to(s.loss.rpn_reg);
      jl.at("fb_cls").get_to(s.loss.fb_cls);
      jl.at("fb_reg").get_to(s.loss.fb_reg);
      jl.at("vb_cls").get_to(s.loss.vb_cls);
      jl.at("vb_reg").get_to(s.loss.vb_reg);
      jl.at("msfmm").get_to(s.loss.msfmm);
      jl.at("total").get_to(s.loss.total);
      h.steps.push_back(s);
    }
    for (const auto& jv : doc.at("val")) {
      ValRecord v;
      jv.at("epoch").get_to(v.epoch);
      for (const auto& [subset, value] : jv.at("mr").items())
        v.mr.emplace_back(subset, value.get<double>());
      h.val.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return h;
}

}  // namespace msfm
