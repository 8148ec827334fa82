#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "msfm/geometry.hpp"
#include "msfm/rng.hpp"

namespace msfm {

/// Which detection branch a proposal or feature belongs to: the full-body
/// branch (classification + regression) or the visible-body branch
/// (classification only).
enum class Branch { fb, vb };

enum class SampleLabel { negative, positive };

/// A proposal labeled against one branch's ground-truth set.
/// Positives have max_iou > 0.5 and a resolved pedestrian index; negatives
/// have gt_index == -1.
struct AssignedProposal {
  Box box;
  Branch branch = Branch::fb;
  SampleLabel label = SampleLabel::negative;
  int gt_index = -1;
  double max_iou = 0.0;
};

/// Labels every proposal by its maximum IoU over the branch's ground-truth
/// boxes. Positive iff max IoU > 0.5 (exactly 0.5 is negative); gt_index is
/// the argmax, ties resolved to the lowest index. Empty gts labels everything
/// negative.
inline std::vector<AssignedProposal> assign(const std::vector<Box>& proposals,
                                            const std::vector<Box>& gts,
                                            Branch branch) {
  std::vector<AssignedProposal> out;
  out.reserve(proposals.size());
  for (const Box& p : proposals) {
    AssignedProposal ap;
    ap.box = p;
    ap.branch = branch;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(p, gts[g]);
      if (v > ap.max_iou) {
        ap.max_iou = v;
        ap.gt_index = static_cast<int>(g);
      }
    }
    if (ap.max_iou > 0.5) {
      ap.label = SampleLabel::positive;
    } else {
      ap.label = SampleLabel::negative;
      ap.gt_index = -1;
    }
    out.push_back(ap);
  }
  return out;
}

/// Derives the sampling stream for one (scene, branch) pair so the two
/// branches draw independently.
inline std::uint64_t sample_stream_seed(std::uint64_t global_seed,
                                        std::string_view scene_id,
                                        Branch branch) {
  const std::uint64_t tag = branch == Branch::fb ? 0x4642ULL : 0x5642ULL;
  return mix64(mix64(global_seed, hash_str(scene_id)), tag);
}

namespace detail {

// Priority key for sampling, derived from the stream seed and the box bits
// rather than the input position. Permuting the input leaves each proposal's
// key unchanged, so the selected multiset is permutation-covariant.
inline std::uint64_t proposal_key(std::uint64_t stream_seed, const Box& b) {
  std::uint64_t bits[4];
  static_assert(sizeof(double) == sizeof(std::uint64_t));
  std::memcpy(&bits[0], &b.x1, sizeof(double));
  std::memcpy(&bits[1], &b.y1, sizeof(double));
  std::memcpy(&bits[2], &b.x2, sizeof(double));
  std::memcpy(&bits[3], &b.y2, sizeof(double));
  std::uint64_t h = stream_seed;
  for (std::uint64_t v : bits) h = mix64(h, v);
  return h;
}

inline std::vector<std::size_t> pick_by_priority(
    const std::vector<AssignedProposal>& assigned, SampleLabel want,
    std::size_t count, std::uint64_t stream_seed) {
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  for (std::size_t i = 0; i < assigned.size(); ++i)
    if (assigned[i].label == want)
      keyed.emplace_back(proposal_key(stream_seed, assigned[i].box), i);
  std::sort(keyed.begin(), keyed.end());
  if (keyed.size() > count) keyed.resize(count);
  std::vector<std::size_t> out;
  out.reserve(keyed.size());
  for (const auto& [key, idx] : keyed) out.push_back(idx);
  return out;
}

}  // namespace detail

/// Index form of sample(): positions into the assigned list, positives first,
/// then negatives, each in selection order.
inline std::vector<std::size_t> sample_indices(
    const std::vector<AssignedProposal>& assigned, int cap,
    double pos_fraction, std::uint64_t stream_seed) {
  if (cap <= 0) throw std::invalid_argument("sample: cap must be positive");
  if (!(pos_fraction >= 0.0 && pos_fraction <= 1.0))
    throw std::invalid_argument("sample: pos_fraction must be in [0, 1]");
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& a : assigned)
    (a.label == SampleLabel::positive ? n_pos : n_neg) += 1;

  const auto cap_u = static_cast<std::size_t>(cap);
  const auto target_pos = static_cast<std::size_t>(
      std::llround(pos_fraction * static_cast<double>(cap)));
  std::size_t take_pos = std::min(n_pos, target_pos);
  std::size_t take_neg = std::min(n_neg, cap_u - take_pos);
  take_pos = std::min(n_pos, cap_u - take_neg);

  auto out = detail::pick_by_priority(assigned, SampleLabel::positive,
                                      take_pos, mix64(stream_seed, 1));
  const auto neg_idx = detail::pick_by_priority(
      assigned, SampleLabel::negative, take_neg, mix64(stream_seed, 2));
  out.insert(out.end(), neg_idx.begin(), neg_idx.end());
  return out;
}

/// Subsamples an assigned proposal list to at most cap entries, targeting
/// cap * pos_fraction positives. A short class is taken whole and the deficit
/// is filled from the other class. Output lists positives first, then
/// negatives, each in selection order.
inline std::vector<AssignedProposal> sample(
    const std::vector<AssignedProposal>& assigned, int cap,
    double pos_fraction, std::uint64_t stream_seed) {
  std::vector<AssignedProposal> out;
  for (std::size_t i : sample_indices(assigned, cap, pos_fraction, stream_seed))
    out.push_back(assigned[i]);
  return out;
}

struct SampleSet {
  std::vector<AssignedProposal> fb;
  std::vector<AssignedProposal> vb;
  std::uint64_t seed = 0;
};

/// One pedestrian's positive members: indices into the FB and VB sample
/// lists the group was built from.
struct PositiveGroup {
  int gt_index = -1;
  std::vector<int> fb_members;
  std::vector<int> vb_members;
};

/// Per-pedestrian positive groups; only pedestrians with at least one
/// positive in both branches are retained, and pedestrian_count is their
/// number (the P of the similarity loss).
struct PositiveGroups {
  int pedestrian_count = 0;
  std::vector<PositiveGroup> groups;
};

inline PositiveGroups group_positives(
    const std::vector<AssignedProposal>& sample_fb,
    const std::vector<AssignedProposal>& sample_vb) {
  std::map<int, PositiveGroup> by_gt;
  for (std::size_t i = 0; i < sample_fb.size(); ++i) {
    const auto& a = sample_fb[i];
    if (a.label != SampleLabel::positive) continue;
    auto& g = by_gt[a.gt_index];
    g.gt_index = a.gt_index;
    g.fb_members.push_back(static_cast<int>(i));
  }
  for (std::size_t i = 0; i < sample_vb.size(); ++i) {
    const auto& a = sample_vb[i];
    if (a.label != SampleLabel::positive) continue;
    auto& g = by_gt[a.gt_index];
    g.gt_index = a.gt_index;
    g.vb_members.push_back(static_cast<int>(i));
  }
  PositiveGroups out;
  for (auto& [gt, g] : by_gt) {
    if (g.fb_members.empty() || g.vb_members.empty()) continue;
    out.groups.push_back(std::move(g));
  }
  out.pedestrian_count = static_cast<int>(out.groups.size());
  return out;
}

}  // namespace msfm
