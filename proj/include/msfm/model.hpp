#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "msfm/errors.hpp"
#include "msfm/geometry.hpp"
#include "msfm/losses.hpp"
#include "msfm/rng.hpp"
#include "msfm/sampling.hpp"
#include "msfm/synth.hpp"

namespace msfm {

/// Dense affine map y = W x + b with row-major weights.
struct LinearLayer {
  int out_dim = 0;
  int in_dim = 0;
  std::vector<double> w;
  std::vector<double> b;

  void resize(int out, int in) {
    out_dim = out;
    in_dim = in;
    w.assign(static_cast<std::size_t>(out) * in, 0.0);
    b.assign(static_cast<std::size_t>(out), 0.0);
  }

  void forward(std::span<const double> x, std::span<double> y) const {
    for (int o = 0; o < out_dim; ++o) {
      const double* row = w.data() + static_cast<std::size_t>(o) * in_dim;
      double acc = b[static_cast<std::size_t>(o)];
      for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
      y[static_cast<std::size_t>(o)] = acc;
    }
  }

  // Accumulates dW += gy x^T, db += gy; adds W^T gy into gx when nonempty.
  void backward(std::span<const double> x, std::span<const double> gy,
                LinearLayer& grad, std::span<double> gx) const {
    for (int o = 0; o < out_dim; ++o) {
      const double g = gy[static_cast<std::size_t>(o)];
      const double* row = w.data() + static_cast<std::size_t>(o) * in_dim;
      double* grow = grad.w.data() + static_cast<std::size_t>(o) * in_dim;
      grad.b[static_cast<std::size_t>(o)] += g;
      for (int i = 0; i < in_dim; ++i) {
        grow[i] += g * x[i];
        if (!gx.empty()) gx[static_cast<std::size_t>(i)] += row[i] * g;
      }
    }
  }
};

/// Static shape of the detector: feature channels, pooling grids, FC width,
/// and the anchor shapes (width, height in px) of the proposal scorer. The
/// scorer is linear over a rpn_pool_grid x rpn_pool_grid pooled anchor
/// feature, so it can see where the occupant sits inside the anchor.
struct ModelConfig {
  int channels = 6;
  int pool_grid = 3;
  int rpn_pool_grid = 3;
  int hidden_dim = 64;
  std::vector<std::array<double, 2>> anchor_shapes{
      {23.0, 56.0}, {33.0, 80.0}, {43.0, 104.0}};

  int pooled_dim() const { return channels * pool_grid * pool_grid; }
  int rpn_dim() const { return channels * rpn_pool_grid * rpn_pool_grid; }

  void validate() const {
    if (channels < 1 || pool_grid < 1 || rpn_pool_grid < 1)
      throw std::invalid_argument("model config: bad channels/pool_grid");
    if (hidden_dim < 8)
      throw std::invalid_argument("model config: hidden_dim must be >= 8");
    if (anchor_shapes.empty())
      throw std::invalid_argument("model config: need at least one anchor");
    for (const auto& [w, h] : anchor_shapes)
      if (!(w > 0) || !(h > 0))
        throw std::invalid_argument("model config: bad anchor shape");
  }
};

/// All learnable tensors. The same struct carries gradients (shape-matched
/// by construction): rpn_* are per-anchor-shape linear scorers over the
/// C-channel anchor feature, the two head stacks are
/// pooled -> fc1 -> relu -> fc2 -> relu -> {cls, reg}. vb_reg exists for
/// the cls+reg branch variant and is ignored otherwise.
struct ParamSet {
  ModelConfig config;
  std::vector<LinearLayer> rpn_cls;
  std::vector<LinearLayer> rpn_reg;
  LinearLayer fb_fc1, fb_fc2, fb_cls, fb_reg;
  LinearLayer vb_fc1, vb_fc2, vb_cls, vb_reg;

  static ParamSet zeros(const ModelConfig& cfg) {
    cfg.validate();
    ParamSet p;
    p.config = cfg;
    p.rpn_cls.resize(cfg.anchor_shapes.size());
    p.rpn_reg.resize(cfg.anchor_shapes.size());
    for (auto& l : p.rpn_cls) l.resize(2, cfg.rpn_dim());
    for (auto& l : p.rpn_reg) l.resize(4, cfg.rpn_dim());
    const int in = cfg.pooled_dim();
    const int d = cfg.hidden_dim;
    p.fb_fc1.resize(d, in);
    p.fb_fc2.resize(d, d);
    p.fb_cls.resize(2, d);
    p.fb_reg.resize(4, d);
    p.vb_fc1.resize(d, in);
    p.vb_fc2.resize(d, d);
    p.vb_cls.resize(2, d);
    p.vb_reg.resize(4, d);
    return p;
  }

  std::vector<std::pair<std::string, LinearLayer*>> layers() {
    std::vector<std::pair<std::string, LinearLayer*>> out;
    for (std::size_t k = 0; k < rpn_cls.size(); ++k)
      out.emplace_back("rpn_cls[" + std::to_string(k) + "]", &rpn_cls[k]);
    for (std::size_t k = 0; k < rpn_reg.size(); ++k)
      out.emplace_back("rpn_reg[" + std::to_string(k) + "]", &rpn_reg[k]);
    out.emplace_back("fb_fc1", &fb_fc1);
    out.emplace_back("fb_fc2", &fb_fc2);
    out.emplace_back("fb_cls", &fb_cls);
    out.emplace_back("fb_reg", &fb_reg);
    out.emplace_back("vb_fc1", &vb_fc1);
    out.emplace_back("vb_fc2", &vb_fc2);
    out.emplace_back("vb_cls", &vb_cls);
    out.emplace_back("vb_reg", &vb_reg);
    return out;
  }

  std::vector<std::pair<std::string, const LinearLayer*>> layers() const {
    std::vector<std::pair<std::string, const LinearLayer*>> out;
    for (const auto& [name, l] : const_cast<ParamSet*>(this)->layers())
      out.emplace_back(name, l);
    return out;
  }
};

using GradientSet = ParamSet;

/// Fan-in scaled uniform init for weights; biases stay zero.
inline ParamSet random_init(const ModelConfig& cfg, Rng& rng) {
  ParamSet p = ParamSet::zeros(cfg);
  for (auto& [name, layer] : p.layers()) {
    const double a = 1.0 / std::sqrt(static_cast<double>(layer->in_dim));
    for (double& v : layer->w) v = rng.uniform(-a, a);
  }
  return p;
}

// ---------------------------------------------------------------------------
// pooling

/// Average-pools the feature grid over a grid x grid partition of the box.
/// Each output value averages the cells whose centers fall inside the
/// sub-rectangle (empty sub-cells give 0). Layout: channel-major, then
/// sub-row, then sub-column. The box is clipped to the scene first; a box
/// entirely outside the scene is a degenerate-box error.
inline std::vector<double> roi_pool(const Scene& scene, const Box& b,
                                    int grid) {
  if (grid < 1) throw std::invalid_argument("roi_pool: grid must be >= 1");
  const auto clipped = clip(b, scene.bounds);
  if (!clipped)
    throw std::invalid_argument("roi_pool: box degenerate after clipping");
  const Box r = *clipped;
  std::vector<double> out(
      static_cast<std::size_t>(scene.channels) * grid * grid, 0.0);
  const double sw = r.width() / grid;
  const double sh = r.height() / grid;
  for (int gy = 0; gy < grid; ++gy) {
    const auto [y0, y1] = detail::covered_cells(
        r.y1 + gy * sh, r.y1 + (gy + 1) * sh, scene.cell_size, scene.grid_h);
    for (int gx = 0; gx < grid; ++gx) {
      const auto [x0, x1] = detail::covered_cells(
          r.x1 + gx * sw, r.x1 + (gx + 1) * sw, scene.cell_size, scene.grid_w);
      const int count = (y1 - y0) * (x1 - x0);
      if (count <= 0) continue;
      for (int c = 0; c < scene.channels; ++c)
        out[(static_cast<std::size_t>(c) * grid + gy) * grid + gx] =
            scene.cell_sum(c, y0, x0, y1, x1) / count;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// head forward / backward

/// Forward intermediates of one head evaluation; everything backward needs.
struct HeadTape {
  std::vector<double> pooled;
  std::vector<double> fc1_pre, fc1_out;
  std::vector<double> fc2_pre, fc2_out;
  std::vector<double> cls_logits;  // 2
  std::vector<double> reg_deltas;  // 4; empty when the head has no regressor
};

namespace detail {

inline HeadTape head_forward(const LinearLayer& fc1, const LinearLayer& fc2,
                             const LinearLayer& cls, const LinearLayer* reg,
                             std::span<const double> pooled) {
  if (static_cast<int>(pooled.size()) != fc1.in_dim)
    throw std::invalid_argument("head forward: pooled dimension mismatch");
  HeadTape t;
  t.pooled.assign(pooled.begin(), pooled.end());
  const int d = fc1.out_dim;
  t.fc1_pre.resize(d);
  fc1.forward(pooled, t.fc1_pre);
  t.fc1_out.resize(d);
  for (int i = 0; i < d; ++i)
    t.fc1_out[i] = t.fc1_pre[i] > 0.0 ? t.fc1_pre[i] : 0.0;
  t.fc2_pre.resize(d);
  fc2.forward(t.fc1_out, t.fc2_pre);
  t.fc2_out.resize(d);
  for (int i = 0; i < d; ++i)
    t.fc2_out[i] = t.fc2_pre[i] > 0.0 ? t.fc2_pre[i] : 0.0;
  t.cls_logits.resize(2);
  cls.forward(t.fc2_out, t.cls_logits);
  if (reg) {
    t.reg_deltas.resize(4);
    reg->forward(t.fc2_out, t.reg_deltas);
  }
  return t;
}

inline void head_backward(const LinearLayer& fc1, const LinearLayer& fc2,
                          const LinearLayer& cls, const LinearLayer* reg,
                          const HeadTape& t, std::span<const double> d_cls,
                          std::span<const double> d_reg,
                          std::span<const double> d_fc2_extra,
                          LinearLayer& g_fc1, LinearLayer& g_fc2,
                          LinearLayer& g_cls, LinearLayer* g_reg) {
  const int d = fc1.out_dim;
  if (static_cast<int>(t.fc2_out.size()) != d ||
      static_cast<int>(t.pooled.size()) != fc1.in_dim)
    throw std::invalid_argument("head backward: tape does not match params");
  if (!d_reg.empty() && (!reg || t.reg_deltas.empty()))
    throw std::invalid_argument("head backward: reg gradient without tape");
  std::vector<double> g2(d, 0.0);
  if (!d_cls.empty()) cls.backward(t.fc2_out, d_cls, g_cls, g2);
  if (!d_reg.empty()) reg->backward(t.fc2_out, d_reg, *g_reg, g2);
  if (!d_fc2_extra.empty())
    for (int i = 0; i < d; ++i) g2[i] += d_fc2_extra[i];
  for (int i = 0; i < d; ++i)
    if (t.fc2_pre[i] <= 0.0) g2[i] = 0.0;  // relu; subgradient at 0 is 0
  std::vector<double> g1(d, 0.0);
  fc2.backward(t.fc1_out, g2, g_fc2, g1);
  for (int i = 0; i < d; ++i)
    if (t.fc1_pre[i] <= 0.0) g1[i] = 0.0;
  fc1.backward(t.pooled, g1, g_fc1, {});
}

}  // namespace detail

/// Full-body head: classification logits, regression deltas, and the fc2
/// activation consumed by the similarity loss.
inline HeadTape fb_forward(const ParamSet& p, std::span<const double> pooled) {
  return detail::head_forward(p.fb_fc1, p.fb_fc2, p.fb_cls, &p.fb_reg, pooled);
}

/// Visible-body head: classification only unless with_reg is set (the
/// cls+reg branch variant).
inline HeadTape vb_forward(const ParamSet& p, std::span<const double> pooled,
                           bool with_reg = false) {
  return detail::head_forward(p.vb_fc1, p.vb_fc2, p.vb_cls,
                              with_reg ? &p.vb_reg : nullptr, pooled);
}

/// Reverse pass for one head evaluation. Upstream gradients may be empty
/// spans; d_fc2_extra carries contributions entering at the fc2 output (the
/// similarity loss). Accumulates into grads.
inline void head_backward(const ParamSet& p, Branch branch, const HeadTape& t,
                          std::span<const double> d_cls,
                          std::span<const double> d_reg,
                          std::span<const double> d_fc2_extra,
                          GradientSet& grads) {
  if (branch == Branch::fb)
    detail::head_backward(p.fb_fc1, p.fb_fc2, p.fb_cls, &p.fb_reg, t, d_cls,
                          d_reg, d_fc2_extra, grads.fb_fc1, grads.fb_fc2,
                          grads.fb_cls, &grads.fb_reg);
  else
    detail::head_backward(p.vb_fc1, p.vb_fc2, p.vb_cls, &p.vb_reg, t, d_cls,
                          d_reg, d_fc2_extra, grads.vb_fc1, grads.vb_fc2,
                          grads.vb_cls, &grads.vb_reg);
}

// ---------------------------------------------------------------------------
// anchor scorer (the minimal proposal network)

struct AnchorRef {
  Box box;
  int shape = 0;
};

/// All anchors fully inside the scene, one per grid cell center and anchor
/// shape, ordered row-major then by shape.
inline std::vector<AnchorRef> anchor_grid(const Scene& scene,
                                          const ModelConfig& cfg) {
  std::vector<AnchorRef> out;
  for (int iy = 0; iy < scene.grid_h; ++iy) {
    for (int ix = 0; ix < scene.grid_w; ++ix) {
      const double cx = (ix + 0.5) * scene.cell_size;
      const double cy = (iy + 0.5) * scene.cell_size;
      for (std::size_t k = 0; k < cfg.anchor_shapes.size(); ++k) {
        const auto [w, h] = cfg.anchor_shapes[k];
        const Box b{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
        if (b.x1 >= scene.bounds.x1 && b.y1 >= scene.bounds.y1 &&
            b.x2 <= scene.bounds.x2 && b.y2 <= scene.bounds.y2)
          out.push_back({b, static_cast<int>(k)});
      }
    }
  }
  return out;
}

struct AnchorTape {
  std::vector<double> feat;  // channel means over the anchor box
  std::vector<double> cls_logits;
  std::vector<double> reg_deltas;
  int shape = 0;
};

inline AnchorTape rpn_forward(const ParamSet& p, const Scene& scene,
                              const AnchorRef& anchor) {
  AnchorTape t;
  t.shape = anchor.shape;
  t.feat = roi_pool(scene, anchor.box, p.config.rpn_pool_grid);
  t.cls_logits.resize(2);
  p.rpn_cls[static_cast<std::size_t>(anchor.shape)].forward(t.feat,
                                                            t.cls_logits);
  t.reg_deltas.resize(4);
  p.rpn_reg[static_cast<std::size_t>(anchor.shape)].forward(t.feat,
                                                            t.reg_deltas);
  return t;
}

inline void rpn_backward(const ParamSet& p, const AnchorTape& t,
                         std::span<const double> d_cls,
                         std::span<const double> d_reg, GradientSet& grads) {
  if (static_cast<int>(t.feat.size()) != p.config.rpn_dim())
    throw std::invalid_argument("rpn backward: tape does not match params");
  const auto k = static_cast<std::size_t>(t.shape);
  if (!d_cls.empty())
    p.rpn_cls[k].backward(t.feat, d_cls, grads.rpn_cls[k], {});
  if (!d_reg.empty())
    p.rpn_reg[k].backward(t.feat, d_reg, grads.rpn_reg[k], {});
}

/// Proposal generation settings. oracle_jitter unions jittered copies of the
/// ground-truth full and visible boxes into the pool (training aid only).
/// Each jitter draws its amplitude from [jitter_amplitude_min,
/// jitter_amplitude]; the wide end yields hard near-threshold negatives and
/// large regression offsets, the tight end guarantees positives (amplitude
/// below ~0.12 keeps IoU > 0.5 with the source box on every draw).
struct ProposalConfig {
  int top_k = 48;
  double nms_iou = 0.7;
  double score_clamp = 1e-12;
  bool oracle_jitter = false;
  int jitter_per_gt = 6;
  double jitter_amplitude = 0.24;
  double jitter_amplitude_min = 0.02;
  std::uint64_t jitter_seed = 0;
};

/// Scores and decodes every anchor, suppresses duplicates, keeps the top-K,
/// then unions jittered ground-truth boxes when enabled. Result is sorted by
/// descending score with input-order tie-break.
inline std::vector<ScoredBox> rpn_propose(const ParamSet& p,
                                          const Scene& scene,
                                          const ProposalConfig& cfg) {
  std::vector<ScoredBox> scored;
  for (const AnchorRef& a : anchor_grid(scene, p.config)) {
    const AnchorTape t = rpn_forward(p, scene, a);
    const Box decoded = decode_deltas(a.box, t.reg_deltas);
    const auto clipped = clip(decoded, scene.bounds);
    if (!clipped) continue;
    const double prob =
        std::clamp(pedestrian_prob(t.cls_logits), cfg.score_clamp,
                   1.0 - cfg.score_clamp);
    scored.push_back({*clipped, prob});
  }
  const auto kept = nms(scored, cfg.nms_iou);
  std::vector<ScoredBox> out;
  out.reserve(static_cast<std::size_t>(cfg.top_k));
  for (std::size_t i = 0;
       i < kept.size() && i < static_cast<std::size_t>(cfg.top_k); ++i)
    out.push_back(scored[kept[i]]);

  if (cfg.oracle_jitter) {
    Rng rng(cfg.jitter_seed);
    for (const Annotation& ann : scene.annotations) {
      if (ann.ignore || !training_filter(ann)) continue;
      for (const Box* gt : {&ann.full, &ann.visible}) {
        for (int j = 0; j < cfg.jitter_per_gt; ++j) {
          const double amp =
              rng.uniform(cfg.jitter_amplitude_min, cfg.jitter_amplitude);
          const Box jit = jitter_box(*gt, amp, rng);
          if (const auto c = clip(jit, scene.bounds))
            out.push_back({*c, 0.5});
        }
      }
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredBox& a, const ScoredBox& b) {
                     return a.score > b.score;
                   });
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints

inline void save_checkpoint(const ParamSet& p, const std::string& path,
                            std::string_view vb_branch = "cls") {
  nlohmann::ordered_json doc;
  doc["format"] = "msfm-checkpoint";
  doc["version"] = 1;
  doc["vb_branch"] = std::string(vb_branch);
  nlohmann::ordered_json model;
  model["channels"] = p.config.channels;
  model["pool_grid"] = p.config.pool_grid;
  model["hidden_dim"] = p.config.hidden_dim;
  auto& shapes = model["anchor_shapes"] = nlohmann::ordered_json::array();
  for (const auto& [w, h] : p.config.anchor_shapes)
    shapes.push_back(nlohmann::ordered_json::array({w, h}));
  doc["model"] = std::move(model);
  auto& layers = doc["layers"] = nlohmann::ordered_json::object();
  for (const auto& [name, layer] : p.layers()) {
    layers[name] = nlohmann::ordered_json{{"out", layer->out_dim},
                                          {"in", layer->in_dim},
                                          {"w", layer->w},
                                          {"b", layer->b}};
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << doc.dump() << "\n";
  if (!out) throw DataError("write failed: " + path);
}

inline ParamSet load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "msfm-checkpoint")
      throw DataError(path + ": not a checkpoint file");
    ModelConfig cfg;
    const auto& model = doc.at("model");
    model.at("channels").get_to(cfg.channels);
    model.at("pool_grid").get_to(cfg.pool_grid);
    model.at("hidden_dim").get_to(cfg.hidden_dim);
    cfg.anchor_shapes.clear();
    for (const auto& s : model.at("anchor_shapes"))
      cfg.anchor_shapes.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    ParamSet p = ParamSet::zeros(cfg);
    const auto& layers = doc.at("layers");
    for (auto& [name, layer] : p.layers()) {
      const auto& jl = layers.at(name);
      if (jl.at("out").get<int>() != layer->out_dim ||
          jl.at("in").get<int>() != layer->in_dim)
        throw DataError(path + ": shape mismatch for " + name);
      jl.at("w").get_to(layer->w);
      jl.at("b").get_to(layer->b);
      if (layer->w.size() !=
              static_cast<std::size_t>(layer->out_dim) * layer->in_dim ||
          layer->b.size() != static_cast<std::size_t>(layer->out_dim))
        throw DataError(path + ": array size mismatch for " + name);
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// The branch mode recorded when the checkpoint was written ("cls" for
/// checkpoints that never recorded one).
inline std::string checkpoint_vb_branch(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  if (doc.contains("vb_branch")) return doc["vb_branch"].get<std::string>();
  return "cls";
}

// ---------------------------------------------------------------------------
// gradient checking

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_layer;
  int worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  long checked = 0;
};

/// Compares the analytic gradient of loss_fn against central finite
/// differences coordinate by coordinate. loss_fn(params, grads_or_null) must
/// return the loss and, when the pointer is non-null, accumulate analytic
/// gradients into it. Error metric: |a - n| / max(|a|, |n|, 1), i.e.
/// relative error with a unit absolute floor. Above max_coords coordinates a
/// seeded random subsample is checked instead.
template <typename LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, const ParamSet& p,
                           double eps = 1e-4, long max_coords = 10000,
                           std::uint64_t subsample_seed = 1) {
  GradientSet analytic = ParamSet::zeros(p.config);
  loss_fn(p, &analytic);

  struct Coord {
    std::size_t layer;
    bool is_bias;
    std::size_t index;
  };
  std::vector<Coord> coords;
  {
    const auto layers = p.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
      for (std::size_t i = 0; i < layers[li].second->w.size(); ++i)
        coords.push_back({li, false, i});
      for (std::size_t i = 0; i < layers[li].second->b.size(); ++i)
        coords.push_back({li, true, i});
    }
  }
  if (static_cast<long>(coords.size()) > max_coords) {
    Rng rng(subsample_seed);
    rng.shuffle(coords);
    coords.resize(static_cast<std::size_t>(max_coords));
  }

  ParamSet work = p;
  auto work_layers = work.layers();
  const auto analytic_layers = analytic.layers();
  GradCheckReport report;
  for (const Coord& c : coords) {
    auto& arr = c.is_bias ? work_layers[c.layer].second->b
                          : work_layers[c.layer].second->w;
    const double keep = arr[c.index];
    arr[c.index] = keep + eps;
    const double hi = loss_fn(work, nullptr);
    arr[c.index] = keep - eps;
    const double lo = loss_fn(work, nullptr);
    arr[c.index] = keep;
    const double numeric = (hi - lo) / (2.0 * eps);
    const auto& g_arr = c.is_bias ? analytic_layers[c.layer].second->b
                                  : analytic_layers[c.layer].second->w;
    const double a = g_arr[c.index];
    const double err =
        std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
    ++report.checked;
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_layer = work_layers[c.layer].first;
      report.worst_coord = static_cast<int>(c.index);
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  return report;
}

}  // namespace msfm
