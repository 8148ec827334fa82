#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "msfm/geometry.hpp"
#include "msfm/synth.hpp"

namespace msfm {

enum class DetFlag { tp, fp, ignored };

/// Outcome of matching one image's detections against its annotations under
/// a subset spec. is_target / gt_matched are indexed by annotation.
struct MatchResult {
  std::vector<DetFlag> det_flags;
  std::vector<bool> is_target;
  std::vector<bool> gt_matched;
  int n_targets = 0;
  int n_tp = 0;
  int n_fp = 0;
  int n_ignored = 0;
};

/// Greedy matching: annotations passing the subset filter (and not
/// ignore-flagged) are targets, everything else is an ignore region. Each
/// detection, in descending score order, claims the unmatched target of
/// highest IoU >= iou_thr; failing that, overlap with an ignore region at
/// IoU >= iou_thr discards it; otherwise it is a false positive. Detections
/// must arrive sorted by descending score.
inline MatchResult match(const std::vector<ScoredBox>& dets,
                         const std::vector<Annotation>& annotations,
                         const SubsetSpec& subset, double iou_thr = 0.5) {
  if (!std::is_sorted(dets.begin(), dets.end(),
                      [](const ScoredBox& a, const ScoredBox& b) {
                        return a.score > b.score;
                      }))
    throw std::invalid_argument("match: detections must be sorted by score");

  MatchResult r;
  r.is_target.resize(annotations.size());
  r.gt_matched.assign(annotations.size(), false);
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    r.is_target[i] =
        !annotations[i].ignore && subset_filter(annotations[i], subset);
    if (r.is_target[i]) ++r.n_targets;
  }

  r.det_flags.reserve(dets.size());
  for (const ScoredBox& d : dets) {
    double best_iou = 0.0;
    std::size_t best = annotations.size();
    for (std::size_t i = 0; i < annotations.size(); ++i) {
      if (!r.is_target[i] || r.gt_matched[i]) continue;
      const double v = iou(d.box, annotations[i].full);
      if (v >= iou_thr && v > best_iou) {
        best_iou = v;
        best = i;
      }
    }
    if (best != annotations.size()) {
      r.gt_matched[best] = true;
      r.det_flags.push_back(DetFlag::tp);
      ++r.n_tp;
      continue;
    }
    bool ignored = false;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
      if (r.is_target[i]) continue;
      if (iou(d.box, annotations[i].full) >= iou_thr) {
        ignored = true;
        break;
      }
    }
    r.det_flags.push_back(ignored ? DetFlag::ignored : DetFlag::fp);
    (ignored ? r.n_ignored : r.n_fp) += 1;
  }
  return r;
}

struct CurvePoint {
  double fppi = 0.0;
  double miss_rate = 1.0;
};

/// Miss-rate vs FPPI points swept over every distinct detection score,
/// ordered by ascending FPPI (descending threshold).
struct EvalCurve {
  std::vector<CurvePoint> points;
  int n_images = 0;
  long n_targets = 0;
};

/// One image's inputs for curve building.
struct EvalImage {
  std::vector<ScoredBox> dets;  // sorted descending by score
  std::vector<Annotation> annotations;
};

/// Builds the miss-rate/FPPI curve over a set of images. Greedy matching of
/// a detection depends only on higher-scored detections, so matching once
/// per image and accumulating flags in score order equals re-matching at
/// every threshold.
inline EvalCurve curve(const std::vector<EvalImage>& images,
                       const SubsetSpec& subset, double iou_thr = 0.5) {
  if (images.empty()) throw std::invalid_argument("curve: no images");
  EvalCurve c;
  c.n_images = static_cast<int>(images.size());

  struct Flagged {
    double score;
    DetFlag flag;
  };
  std::vector<Flagged> flagged;
  for (const EvalImage& img : images) {
    const MatchResult m = match(img.dets, img.annotations, subset, iou_thr);
    c.n_targets += m.n_targets;
    for (std::size_t i = 0; i < img.dets.size(); ++i)
      flagged.push_back({img.dets[i].score, m.det_flags[i]});
  }
  if (c.n_targets == 0) throw std::domain_error("curve: no targets in subset");

  std::sort(flagged.begin(), flagged.end(),
            [](const Flagged& a, const Flagged& b) { return a.score > b.score; });
  long tp = 0, fp = 0;
  for (std::size_t i = 0; i < flagged.size();) {
    const double s = flagged[i].score;
    for (; i < flagged.size() && flagged[i].score == s; ++i) {
      if (flagged[i].flag == DetFlag::tp) ++tp;
      if (flagged[i].flag == DetFlag::fp) ++fp;
    }
    c.points.push_back(
        {static_cast<double>(fp) / c.n_images,
         1.0 - static_cast<double>(tp) / static_cast<double>(c.n_targets)});
  }
  if (c.points.empty()) c.points.push_back({0.0, 1.0});
  return c;
}

/// Log-average miss rate: geometric mean of the miss rate sampled at nine
/// FPPI references evenly log-spaced over [1e-2, 1e0]. At each reference the
/// curve value is the lowest miss rate among points at the largest achieved
/// FPPI <= the reference; references below every achieved FPPI read 1.
/// Miss rates are clamped to clamp_floor before the log.
inline double log_avg_mr(const EvalCurve& c, double clamp_floor = 1e-12) {
  double acc = 0.0;
  for (int k = 0; k < 9; ++k) {
    const double ref = std::pow(10.0, -2.0 + 0.25 * k);
    double best_fppi = -1.0;
    double mr = 1.0;
    for (const CurvePoint& p : c.points) {
      if (p.fppi > ref) continue;
      if (p.fppi > best_fppi) {
        best_fppi = p.fppi;
        mr = p.miss_rate;
      } else if (p.fppi == best_fppi) {
        mr = std::min(mr, p.miss_rate);
      }
    }
    acc += std::log(std::max(mr, clamp_floor));
  }
  return std::exp(acc / 9.0);
}

/// One row of the metric report.
struct MetricRow {
  std::string config_name;
  std::string subset;
  double log_avg_mr_percent = 0.0;
  int n_images = 0;
  long n_targets = 0;
};

inline void write_metric_csv(std::ostream& out,
                             const std::vector<MetricRow>& rows) {
  out << "config_name,subset,log_avg_mr_percent,n_images,n_targets\n";
  char buf[64];
  for (const MetricRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.log_avg_mr_percent);
    out << r.config_name << ',' << r.subset << ',' << buf << ','
        << r.n_images << ',' << r.n_targets << '\n';
  }
}

}  // namespace msfm
