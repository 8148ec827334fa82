// Acceptance suite: runs every gate at its stated tolerance and prints one
// pass/fail line per criterion. Exits non-zero if any gate fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "msfm/msfm.hpp"
#include "support/eval_oracle.hpp"
#include "support/nms_oracle.hpp"

using namespace msfm;

namespace {

int failures = 0;

void report(int idx, const std::string& name, bool ok,
            const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", idx, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// --------------------------------------------------------------- criterion 1

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_case;
  const double eps = 1e-4;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto sc = make_gradcheck_scenario(16, seed);
    auto check = [&](const std::string& label, LossTerm term,
                     SimilarityKind kind, MsfmMode mode) {
      const auto r = grad_check(
          [&](const ParamSet& p, GradientSet* g) {
            return scenario_loss(sc, p, term, kind, mode, g);
          },
          sc.params, eps);
      if (r.max_rel_err > worst) {
        worst = r.max_rel_err;
        worst_case = label + " seed " + std::to_string(seed);
      }
    };
    for (LossTerm term : {LossTerm::rpn_cls, LossTerm::rpn_reg,
                          LossTerm::fb_cls, LossTerm::fb_reg,
                          LossTerm::vb_cls, LossTerm::vb_reg,
                          LossTerm::composite})
      check(to_string(term), term, SimilarityKind::cosine, MsfmMode::pos);
    for (SimilarityKind kind :
         {SimilarityKind::cosine, SimilarityKind::euclidean,
          SimilarityKind::manhattan})
      for (MsfmMode mode : {MsfmMode::pos, MsfmMode::pos_plus_neg})
        check("msfm_" + to_string(kind), LossTerm::msfm, kind, mode);
  }
  const double secs = seconds_since(t0);
  report(1, "gradient correctness", worst < 1e-4 && secs < 60.0,
         fmt("max rel err %.3e (limit 1e-4, worst %s), %.1fs (limit 60s)",
             worst, worst_case.c_str(), secs));
}

// --------------------------------------------------------------- criterion 2

Box random_box(Rng& rng, double extent) {
  const double x1 = rng.uniform(0.0, extent);
  const double y1 = rng.uniform(0.0, extent);
  return Box{x1, y1, x1 + rng.uniform(1.0, extent * 0.5),
             y1 + rng.uniform(1.0, extent * 0.5)};
}

Annotation make_ped(const Box& full, double visibility, bool ignore) {
  Annotation a;
  a.full = full;
  a.height = full.height();
  a.visible = full;
  a.visible.y2 = full.y1 + std::max(0.05, visibility) * full.height();
  a.visibility = visibility;
  a.ignore = ignore;
  return a;
}

std::vector<EvalImage> random_eval_instance(Rng& rng) {
  std::vector<EvalImage> images(1 + rng.uniform_below(5));
  for (auto& img : images) {
    const int n_gt = static_cast<int>(rng.uniform_below(5));
    for (int g = 0; g < n_gt; ++g) {
      const double x = rng.uniform(0, 200), y = rng.uniform(0, 100);
      const double h = rng.uniform(30, 90);
      img.annotations.push_back(make_ped(Box{x, y, x + 0.45 * h, y + h},
                                         rng.uniform(0.1, 1.0),
                                         rng.uniform() < 0.1));
    }
    const int n_det = static_cast<int>(rng.uniform_below(10));
    for (int d = 0; d < n_det; ++d) {
      Box b;
      if (!img.annotations.empty() && rng.uniform() < 0.6) {
        const Box& gt =
            img.annotations[rng.uniform_below(img.annotations.size())].full;
        b = Box{gt.x1 + rng.uniform(-6, 6), gt.y1 + rng.uniform(-6, 6),
                gt.x2 + rng.uniform(-6, 6), gt.y2 + rng.uniform(-6, 6)};
        if (!box_valid(b)) b = gt;
      } else {
        const double x = rng.uniform(0, 200), y = rng.uniform(0, 100);
        b = Box{x, y, x + rng.uniform(5, 50), y + rng.uniform(5, 80)};
      }
      img.dets.push_back({b, rng.uniform_below(20) / 20.0 + 0.025});
    }
    std::stable_sort(img.dets.begin(), img.dets.end(),
                     [](const ScoredBox& a, const ScoredBox& b) {
                       return a.score > b.score;
                     });
  }
  return images;
}

void criterion_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(777);
  long nms_fail = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_below(200));
    std::vector<ScoredBox> dets;
    dets.reserve(n);
    for (int i = 0; i < n; ++i)
      dets.push_back({random_box(rng, 60.0), rng.uniform(0.01, 0.99)});
    const double thr = rng.uniform(0.2, 0.8);
    if (nms(dets, thr) != oracle::nms_reference(dets, thr)) ++nms_fail;
  }

  long eval_checked = 0, eval_fail = 0;
  double worst = 0.0;
  Rng erng(515151);
  while (eval_checked < 100) {
    const auto images = random_eval_instance(erng);
    for (const auto& subset :
         {subset_reasonable(), subset_heavy(), subset_combined()}) {
      bool targets = false;
      for (const auto& img : images)
        for (const auto& a : img.annotations)
          if (!a.ignore && subset_filter(a, subset)) targets = true;
      if (!targets) continue;
      const auto c = curve(images, subset);
      const auto ref = oracle::curve_reference(images, subset, 0.5);
      bool ok = c.points.size() == ref.size();
      if (ok)
        for (std::size_t i = 0; i < ref.size(); ++i) {
          worst = std::max(worst, std::abs(c.points[i].fppi - ref[i].first));
          worst = std::max(worst,
                           std::abs(c.points[i].miss_rate - ref[i].second));
          if (std::abs(c.points[i].fppi - ref[i].first) > 1e-12 ||
              std::abs(c.points[i].miss_rate - ref[i].second) > 1e-12)
            ok = false;
        }
      const double d =
          std::abs(log_avg_mr(c) - oracle::log_avg_mr_reference(ref));
      worst = std::max(worst, d);
      if (d > 1e-12) ok = false;
      if (!ok) ++eval_fail;
      ++eval_checked;
    }
  }
  const double secs = seconds_since(t0);
  report(2, "oracle equivalence",
         nms_fail == 0 && eval_fail == 0 && secs < 60.0,
         fmt("nms mismatches %ld/500, evaluator mismatches %ld/%ld "
             "(max dev %.2e, limit 1e-12), %.1fs (limit 60s)",
             nms_fail, eval_fail, eval_checked, worst, secs));
}

// --------------------------------------------------------------- criterion 3

void criterion_sampling() {
  GeneratorConfig gen;
  ModelConfig mc;
  mc.hidden_dim = 16;
  Rng prng(3);
  const ParamSet params = random_init(mc, prng);

  ProposalConfig pc;
  pc.oracle_jitter = true;
  pc.top_k = 256;
  pc.jitter_per_gt = 40;  // enough supply to reach the 128/384 target

  long bad_positive = 0, bad_composition = 0, bad_groups = 0;
  long composition_checked = 0, scenes_with_groups = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Scene scene = generate_scene(gen, seed);
    pc.jitter_seed = mix64(99, seed);
    const auto proposals = rpn_propose(params, scene, pc);
    std::vector<Box> boxes;
    for (const auto& p : proposals) boxes.push_back(p.box);

    std::vector<Box> gt_full, gt_vis;
    for (const auto& a : scene.annotations) {
      if (a.ignore || !training_filter(a)) continue;
      gt_full.push_back(a.full);
      gt_vis.push_back(a.visible);
    }

    SampleSet set;
    for (Branch branch : {Branch::fb, Branch::vb}) {
      const auto& gts = branch == Branch::fb ? gt_full : gt_vis;
      const auto assigned = assign(boxes, gts, branch);
      long supply_pos = 0, supply_neg = 0;
      for (const auto& a : assigned)
        (a.label == SampleLabel::positive ? supply_pos : supply_neg) += 1;
      const auto sampled =
          sample(assigned, 512, 0.25, sample_stream_seed(7, scene.id, branch));
      long pos = 0, neg = 0;
      for (const auto& a : sampled) {
        if (a.label == SampleLabel::positive) {
          ++pos;
          double best = 0.0;
          for (const auto& gt : gts) best = std::max(best, iou(a.box, gt));
          if (!(a.max_iou > 0.5) || !(best > 0.5) || a.gt_index < 0)
            ++bad_positive;
        } else {
          ++neg;
          if (a.max_iou > 0.5 || a.gt_index != -1) ++bad_positive;
        }
      }
      if (supply_pos >= 128 && supply_neg >= 384) {
        ++composition_checked;
        if (pos != 128 || neg != 384) ++bad_composition;
      }
      (branch == Branch::fb ? set.fb : set.vb) = sampled;
    }

    const auto groups = group_positives(set.fb, set.vb);
    if (groups.pedestrian_count > 0) ++scenes_with_groups;
    for (const auto& g : groups.groups) {
      if (g.fb_members.empty() || g.vb_members.empty()) ++bad_groups;
      for (int m : g.fb_members)
        if (set.fb[m].label != SampleLabel::positive ||
            set.fb[m].gt_index != g.gt_index)
          ++bad_groups;
      for (int m : g.vb_members)
        if (set.vb[m].label != SampleLabel::positive ||
            set.vb[m].gt_index != g.gt_index)
          ++bad_groups;
    }
  }
  report(3, "sampling invariants",
         bad_positive == 0 && bad_composition == 0 && bad_groups == 0 &&
             composition_checked > 500 && scenes_with_groups > 900,
         fmt("1000 scenes: label violations %ld, composition violations "
             "%ld/%ld, group violations %ld, scenes with groups %ld",
             bad_positive, bad_composition, composition_checked, bad_groups,
             scenes_with_groups));
}

// --------------------------------------------------------------- criterion 4

void criterion_similarity_loss() {
  bool ok = true;
  std::string detail;

  PositiveGroups one;
  one.groups.push_back({0, {0, 1}, {0}});
  one.pedestrian_count = 1;
  const auto parallel =
      msfm_loss(one, {{2, 0}, {0, 2}}, {{3, 3}}, SimilarityKind::cosine,
                MsfmMode::pos);
  if (std::abs(parallel.loss) > 1e-12) {
    ok = false;
    detail += fmt("parallel-mean loss %.2e; ", parallel.loss);
  }

  PositiveGroups single;
  single.groups.push_back({0, {0}, {0}});
  single.pedestrian_count = 1;
  const auto antipodal = msfm_loss(single, {{1, -2}}, {{-1, 2}},
                                   SimilarityKind::cosine, MsfmMode::pos);
  if (std::abs(antipodal.loss - 2.0) > 1e-12) {
    ok = false;
    detail += fmt("antipodal loss %.6f; ", antipodal.loss);
  }

  Rng rng(444);
  long range_fail = 0, scale_fail = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int m = 1 + static_cast<int>(rng.uniform_below(3));
    const int n = 1 + static_cast<int>(rng.uniform_below(3));
    PositiveGroups g;
    PositiveGroup grp;
    grp.gt_index = 0;
    for (int i = 0; i < m; ++i) grp.fb_members.push_back(i);
    for (int i = 0; i < n; ++i) grp.vb_members.push_back(i);
    g.groups.push_back(grp);
    g.pedestrian_count = 1;
    std::vector<std::vector<double>> fb(m, std::vector<double>(6));
    std::vector<std::vector<double>> vb(n, std::vector<double>(6));
    for (auto& f : fb)
      for (auto& v : f) v = rng.normal();
    for (auto& f : vb)
      for (auto& v : f) v = rng.normal();
    const double loss =
        msfm_loss(g, fb, vb, SimilarityKind::cosine, MsfmMode::pos).loss;
    if (!(loss >= 0.0 && loss <= 2.0)) ++range_fail;

    auto fb2 = fb;
    for (auto& f : fb2)
      for (auto& v : f) v *= 8.0;  // power of two: exact
    const double scaled =
        msfm_loss(g, fb2, vb, SimilarityKind::cosine, MsfmMode::pos).loss;
    if (scaled != loss) ++scale_fail;
    auto vb2 = vb;
    const double lambda = rng.uniform(0.05, 20.0);
    for (auto& f : vb2)
      for (auto& v : f) v *= lambda;
    const double scaled2 =
        msfm_loss(g, fb, vb2, SimilarityKind::cosine, MsfmMode::pos).loss;
    if (std::abs(scaled2 - loss) > 1e-12) ++scale_fail;
  }
  if (range_fail || scale_fail) ok = false;
  report(4, "similarity-loss analytics", ok,
         detail + fmt("10000 random groups: range violations %ld, "
                      "scale-invariance violations %ld",
                      range_fail, scale_fail));
}

// --------------------------------------------------------------- criterion 5

void criterion_fusion() {
  const std::array<double, 2> uniform{0.0, 0.0};
  bool ok = fuse_scores(uniform, uniform) == 0.25;
  Rng rng(555);
  long product_fail = 0, monotone_fail = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::array<double, 2> fb{rng.uniform(-8, 8), rng.uniform(-8, 8)};
    std::array<double, 2> vb{rng.uniform(-8, 8), rng.uniform(-8, 8)};
    const double fused = fuse_scores(fb, vb);
    if (std::abs(fused - pedestrian_prob(fb) * pedestrian_prob(vb)) > 1e-12)
      ++product_fail;
    auto fb_up = fb;
    fb_up[1] += rng.uniform(0.0, 4.0);
    auto vb_up = vb;
    vb_up[1] += rng.uniform(0.0, 4.0);
    if (fuse_scores(fb_up, vb) < fused || fuse_scores(fb, vb_up) < fused)
      ++monotone_fail;
  }
  if (product_fail || monotone_fail) ok = false;
  report(5, "score-fusion analytics", ok,
         fmt("uniform case %.12f (want 0.25), product violations %ld, "
             "monotonicity violations %ld over 10000 pairs",
             fuse_scores(uniform, uniform), product_fail, monotone_fail));
}

// --------------------------------------------------------------- criterion 6

void criterion_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  GeneratorConfig gen;  // defaults: 250 occluder-heavy scenes, 200/50 split
  const Dataset ds = generate_dataset(gen, 1);
  const TrainConfig base;  // defaults

  auto grid = table1_grid(base);
  const auto table2 = table2_grid(base);
  grid.insert(grid.end(), table2.begin(), table2.end());
  const auto rows = ablate(ds, grid, 5);
  const double grid_secs = seconds_since(t0);

  double baseline_ho = -1.0, msfm_ho = -1.0;
  for (const auto& r : rows) {
    if (r.config == "baseline" && r.subset == "HO") baseline_ho = r.mean_mr;
    if (r.config == "msfm_pos" && r.subset == "HO") msfm_ho = r.mean_mr;
  }

  // feature similarity on the held-out split, same seeds
  Dataset val;
  val.config = ds.config;
  const auto n_val =
      static_cast<std::size_t>(std::llround(base.val_fraction *
                                            static_cast<double>(ds.scenes.size())));
  for (std::size_t i = ds.scenes.size() - n_val; i < ds.scenes.size(); ++i)
    val.scenes.push_back(ds.scenes[i]);
  double sim_on = 0.0, sim_off = 0.0;
  for (int s = 0; s < 5; ++s) {
    TrainConfig on = base;
    on.seed = base.seed + static_cast<std::uint64_t>(s);
    TrainConfig off = on;
    off.msfmm = MsfmmSetting::off;
    sim_on += feature_similarity_report(train(ds, on).params, val,
                                        subset_combined());
    sim_off += feature_similarity_report(train(ds, off).params, val,
                                         subset_combined());
  }
  sim_on /= 5.0;
  sim_off /= 5.0;

  const double total_secs = seconds_since(t0);
  const bool ok = rows.size() == 16 && baseline_ho >= 0.0 && msfm_ho >= 0.0 &&
                  msfm_ho <= baseline_ho && sim_on > sim_off &&
                  grid_secs < 900.0;
  report(6, "occlusion ablation trend", ok,
         fmt("HO mean MR: msfm_pos %.2f%% <= baseline %.2f%%; feature "
             "similarity %.3f > %.3f (msfm off); grid %.0fs (limit 900s), "
             "total %.0fs",
             msfm_ho, baseline_ho, sim_on, sim_off, grid_secs, total_secs));
}

// --------------------------------------------------------------- criterion 7

void criterion_determinism() {
  GeneratorConfig gen;
  gen.scene_count = 40;
  const Dataset ds = generate_dataset(gen, 11);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.decay_epochs = {2};
  cfg.model.hidden_dim = 32;
  cfg.seed = 99;

  const TrainHistory a = train(ds, cfg);
  const TrainHistory b = train(ds, cfg);
  bool ok = a.steps.size() == b.steps.size() && a.val.size() == b.val.size();
  if (ok)
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
      const auto& la = a.steps[i].loss;
      const auto& lb = b.steps[i].loss;
      if (la.total != lb.total || la.msfmm != lb.msfmm ||
          la.rpn_cls != lb.rpn_cls || la.fb_reg != lb.fb_reg ||
          a.steps[i].lr != b.steps[i].lr)
        ok = false;
    }
  if (ok)
    for (std::size_t i = 0; i < a.val.size(); ++i)
      if (a.val[i].mr != b.val[i].mr) ok = false;
  const auto pa = a.params.layers();
  const auto pb = b.params.layers();
  if (ok)
    for (std::size_t k = 0; k < pa.size(); ++k)
      if (pa[k].second->w != pb[k].second->w ||
          pa[k].second->b != pb[k].second->b)
        ok = false;
  report(7, "determinism", ok,
         fmt("two runs, %zu steps and %zu validation records: %s", a.steps.size(),
             a.val.size(),
             ok ? "bit-identical losses, parameters and MR values"
                : "mismatch found"));
}

// --------------------------------------------------------------- criterion 8

void criterion_round_trips() {
  namespace fs = std::filesystem;
  const fs::path dir =
      fs::temp_directory_path() / ("msfm-acc-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  bool ok = true;
  std::string detail;

  // dataset identity
  GeneratorConfig gen;
  gen.scene_count = 8;
  gen.ignore_prob = 0.15;
  const Dataset ds = generate_dataset(gen, 77);
  save_dataset(ds, (dir / "ds.json").string());
  const Dataset back = load_dataset((dir / "ds.json").string());
  if (back.scenes.size() != ds.scenes.size()) ok = false;
  for (std::size_t i = 0; ok && i < ds.scenes.size(); ++i) {
    const Scene& x = ds.scenes[i];
    const Scene& y = back.scenes[i];
    if (x.id != y.id || x.seed != y.seed || !(x.bounds == y.bounds) ||
        x.feature_grid != y.feature_grid ||
        x.annotations.size() != y.annotations.size())
      ok = false;
    for (std::size_t k = 0; ok && k < x.annotations.size(); ++k) {
      const Annotation& p = x.annotations[k];
      const Annotation& q = y.annotations[k];
      if (!(p.full == q.full) || !(p.visible == q.visible) ||
          p.visibility != q.visibility || p.height != q.height ||
          p.ignore != q.ignore)
        ok = false;
    }
  }
  if (!ok) detail += "dataset round trip failed; ";

  // delta encode/decode identity
  Rng rng(88);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Box p = random_box(rng, 80.0);
    const Box g = random_box(rng, 80.0);
    const Box r = decode_deltas(p, encode_deltas(p, g));
    worst = std::max({worst, std::abs(r.x1 - g.x1), std::abs(r.y1 - g.y1),
                      std::abs(r.x2 - g.x2), std::abs(r.y2 - g.y2)});
  }
  if (worst > 1e-9) {
    ok = false;
    detail += fmt("delta round trip off by %.2e; ", worst);
  }

  // checkpoint exactness
  ModelConfig mc;
  mc.hidden_dim = 24;
  ParamSet params = random_init(mc, rng);
  for (auto& [name, layer] : params.layers())
    for (double& v : layer->b) v = rng.normal();
  save_checkpoint(params, (dir / "ck.json").string(), "cls");
  const ParamSet loaded = load_checkpoint((dir / "ck.json").string());
  const auto la = params.layers();
  const auto lb = loaded.layers();
  bool ck_ok = la.size() == lb.size();
  for (std::size_t k = 0; ck_ok && k < la.size(); ++k)
    if (la[k].second->w != lb[k].second->w ||
        la[k].second->b != lb[k].second->b)
      ck_ok = false;
  if (!ck_ok) {
    ok = false;
    detail += "checkpoint round trip not bit-exact; ";
  }

  fs::remove_all(dir);
  report(8, "round-trips", ok,
         ok ? fmt("dataset identity, delta max dev %.2e (limit 1e-9), "
                  "checkpoint bit-exact",
                  worst)
            : detail);
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_oracles();
  criterion_sampling();
  criterion_similarity_loss();
  criterion_fusion();
  criterion_trend();
  criterion_determinism();
  criterion_round_trips();
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
