#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msfm/errors.hpp"
#include "msfm/evaluation.hpp"
#include "msfm/gradcheck.hpp"
#include "msfm/inference.hpp"
#include "msfm/model.hpp"
#include "msfm/svg.hpp"
#include "msfm/synth.hpp"
#include "msfm/trainer.hpp"

namespace msfm::cli {

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  return out;
}

inline int run_gen(const std::string& config_path, std::uint64_t seed,
                   int count, const std::string& out_path) {
  GeneratorConfig cfg;
  if (!config_path.empty()) cfg = load_generator_config(config_path);
  if (count >= 0) cfg.scene_count = count;
  cfg.validate();
  const Dataset ds = generate_dataset(cfg, seed);
  save_dataset(ds, out_path);
  std::cout << "wrote " << ds.scenes.size() << " scenes to " << out_path
            << "\n";
  return 0;
}

inline int run_train(const std::string& data_path,
                     const std::string& config_path,
                     const std::string& checkpoint_path,
                     const std::string& history_path, long long seed) {
  const Dataset ds = load_dataset(data_path);
  TrainConfig cfg;
  if (!config_path.empty()) cfg = load_train_config(config_path);
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.validate();
  const TrainHistory history = train(ds, cfg);
  if (!checkpoint_path.empty())
    save_checkpoint(history.params, checkpoint_path,
                    to_string(cfg.vb_branch));
  if (!history_path.empty()) save_history(history, cfg, history_path);
  if (!history.val.empty()) {
    for (const auto& [subset, mr] : history.val.back().mr) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f", 100.0 * mr);
      std::cout << subset << " log-avg MR: " << buf << "%\n";
    }
  }
  return 0;
}

inline int run_eval(const std::string& data_path,
                    const std::string& checkpoint_path,
                    const std::string& subset_name,
                    const std::string& csv_path,
                    const std::string& detections_path,
                    const std::string& vb_override) {
  const Dataset ds = load_dataset(data_path);
  const ParamSet params = load_checkpoint(checkpoint_path);
  const SubsetSpec subset = subset_by_name(subset_name);

  std::string vb_tag = checkpoint_vb_branch(checkpoint_path);
  if (!vb_override.empty()) vb_tag = vb_override;
  InferenceConfig inf;
  inf.vb_branch = vb_tag != "off";

  std::vector<EvalImage> images;
  std::ofstream det_out;
  const bool dump = !detections_path.empty();
  if (dump) det_out = open_out(detections_path);
  bool first = true;
  for (const Scene& scene : ds.scenes) {
    const auto dets = detect(scene, params, inf);
    if (dump) {
      write_detections_csv(det_out, scene.id, dets, first);
      first = false;
    }
    EvalImage img;
    img.annotations = scene.annotations;
    for (const Detection& d : dets) img.dets.push_back({d.box, d.final_score});
    images.push_back(std::move(img));
  }
  const EvalCurve c = curve(images, subset);
  const double mr = log_avg_mr(c);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * mr);
  std::cout << subset.name << " log-avg MR: " << buf << "%\n";
  if (!csv_path.empty()) {
    auto out = open_out(csv_path);
    write_metric_csv(out, {{checkpoint_path, subset.name, 100.0 * mr,
                            c.n_images, c.n_targets}});
  }
  return 0;
}

inline int run_gradcheck(int dim, std::uint64_t seed, double eps,
                         double tolerance) {
  const auto scenario = make_gradcheck_scenario(dim, seed);
  bool all_ok = true;
  auto report_line = [&](const std::string& name, double err) {
    const bool ok = err < tolerance;
    all_ok = all_ok && ok;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", err);
    std::cout << name << " max_rel_err=" << buf << (ok ? " ok" : " FAIL")
              << "\n";
  };
  for (LossTerm term :
       {LossTerm::rpn_cls, LossTerm::rpn_reg, LossTerm::fb_cls,
        LossTerm::fb_reg, LossTerm::vb_cls, LossTerm::vb_reg}) {
    const auto r = grad_check(
        [&](const ParamSet& p, GradientSet* g) {
          return scenario_loss(scenario, p, term, SimilarityKind::cosine,
                               MsfmMode::pos, g);
        },
        scenario.params, eps);
    report_line(to_string(term), r.max_rel_err);
  }
  for (SimilarityKind kind : {SimilarityKind::cosine,
                              SimilarityKind::euclidean,
                              SimilarityKind::manhattan}) {
    for (MsfmMode mode : {MsfmMode::pos, MsfmMode::pos_plus_neg}) {
      const auto r = grad_check(
          [&](const ParamSet& p, GradientSet* g) {
            return scenario_loss(scenario, p, LossTerm::msfm, kind, mode, g);
          },
          scenario.params, eps);
      report_line("msfm_" + to_string(kind) +
                      (mode == MsfmMode::pos ? "_pos" : "_pos+neg"),
                  r.max_rel_err);
    }
  }
  const auto r = grad_check(
      [&](const ParamSet& p, GradientSet* g) {
        return scenario_loss(scenario, p, LossTerm::composite,
                             SimilarityKind::cosine, MsfmMode::pos, g);
      },
      scenario.params, eps);
  report_line("composite", r.max_rel_err);
  if (!all_ok) throw std::domain_error("gradient check failed");
  return 0;
}

inline int run_ablate(const std::string& data_path, const std::string& grid,
                      int seeds, const std::string& config_path,
                      const std::string& out_path, int threads) {
  const Dataset ds = load_dataset(data_path);
  TrainConfig base;
  if (!config_path.empty()) base = load_train_config(config_path);
  std::vector<NamedConfig> cells;
  if (grid == "table1")
    cells = table1_grid(base);
  else if (grid == "table2")
    cells = table2_grid(base);
  else
    throw std::invalid_argument("--grid must be table1 or table2");
  const auto rows = ablate(ds, cells, seeds, threads);
  if (out_path.empty()) {
    write_ablation_csv(std::cout, rows);
  } else {
    auto out = open_out(out_path);
    write_ablation_csv(out, rows);
    std::cout << "wrote " << rows.size() << " rows to " << out_path << "\n";
  }
  return 0;
}

inline int run_report(const std::string& history_path,
                      const std::string& out_dir) {
  const TrainHistory h = load_history(history_path);
  std::filesystem::create_directories(out_dir);

  std::vector<svg::Series> loss_series(8);
  const char* names[] = {"total",  "rpn_cls", "rpn_reg", "fb_cls",
                         "fb_reg", "vb_cls",  "vb_reg",  "msfmm"};
  for (int i = 0; i < 8; ++i) loss_series[i].label = names[i];
  for (std::size_t i = 0; i < h.steps.size(); ++i) {
    const auto& l = h.steps[i].loss;
    const double x = static_cast<double>(i);
    loss_series[0].points.emplace_back(x, l.total);
    loss_series[1].points.emplace_back(x, l.rpn_cls);
    loss_series[2].points.emplace_back(x, l.rpn_reg);
    loss_series[3].points.emplace_back(x, l.fb_cls);
    loss_series[4].points.emplace_back(x, l.fb_reg);
    loss_series[5].points.emplace_back(x, l.vb_cls);
    loss_series[6].points.emplace_back(x, l.vb_reg);
    loss_series[7].points.emplace_back(x, l.msfmm);
  }
  const std::string loss_path =
      (std::filesystem::path(out_dir) / "loss.svg").string();
  {
    auto out = open_out(loss_path);
    svg::write_line_chart(out, "Training loss", "step", "loss", loss_series);
  }

  std::vector<svg::Series> mr_series;
  for (const ValRecord& v : h.val) {
    for (const auto& [subset, mr] : v.mr) {
      auto it = std::find_if(mr_series.begin(), mr_series.end(),
                             [&](const svg::Series& s) {
                               return s.label == subset;
                             });
      if (it == mr_series.end()) {
        mr_series.push_back({subset, {}});
        it = mr_series.end() - 1;
      }
      it->points.emplace_back(static_cast<double>(v.epoch), 100.0 * mr);
    }
  }
  const std::string mr_path =
      (std::filesystem::path(out_dir) / "miss_rate.svg").string();
  {
    auto out = open_out(mr_path);
    svg::write_line_chart(out, "Validation log-average miss rate", "epoch",
                          "log-avg MR (%)", mr_series);
  }
  std::cout << loss_path << "\n" << mr_path << "\n";
  return 0;
}

}  // namespace detail

/// Entry point shared by the binary and the tests. Exit codes: 0 success,
/// 1 usage error, 2 data error, 3 numeric failure.
inline int run(const std::vector<std::string>& args) {
  CLI::App app{"mutual-supervised feature modulation detector toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 1;
  int gen_count = -1;
  gen->add_option("--config", gen_config, "generator config JSON");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--count", gen_count, "override scene count");
  gen->add_option("--out", gen_out, "output dataset path")->required();

  auto* tr = app.add_subcommand("train", "train a detector");
  std::string tr_data, tr_config, tr_ckpt, tr_hist;
  long long tr_seed = -1;
  tr->add_option("--data", tr_data, "dataset path")->required();
  tr->add_option("--config", tr_config, "train config JSON");
  tr->add_option("--out-checkpoint", tr_ckpt, "checkpoint output path");
  tr->add_option("--history", tr_hist, "history output path");
  tr->add_option("--seed", tr_seed, "override the config seed");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_data, ev_ckpt, ev_subset = "R", ev_csv, ev_dets, ev_vb;
  ev->add_option("--data", ev_data, "dataset path")->required();
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--subset", ev_subset, "R, HO or R+HO");
  ev->add_option("--csv", ev_csv, "metric CSV output path");
  ev->add_option("--dump-detections", ev_dets, "detections CSV output path");
  ev->add_option("--vb-branch", ev_vb,
                 "override the checkpoint's branch tag (off/cls/cls+reg)");

  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference check of every loss term");
  int gc_dim = 16;
  std::uint64_t gc_seed = 7;
  double gc_eps = 1e-4, gc_tol = 1e-4;
  gc->add_option("--dim", gc_dim, "hidden width");
  gc->add_option("--seed", gc_seed, "scenario seed");
  gc->add_option("--eps", gc_eps, "finite-difference step");
  gc->add_option("--tolerance", gc_tol, "max relative error allowed");

  auto* ab = app.add_subcommand("ablate", "run a configuration grid");
  std::string ab_data, ab_grid = "table1", ab_config, ab_out;
  int ab_seeds = 5, ab_threads = 0;
  ab->add_option("--data", ab_data, "dataset path")->required();
  ab->add_option("--grid", ab_grid, "table1 or table2");
  ab->add_option("--seeds", ab_seeds, "seeds per configuration");
  ab->add_option("--config", ab_config, "base train config JSON");
  ab->add_option("--out", ab_out, "CSV output path (default stdout)");
  ab->add_option("--threads", ab_threads, "worker threads (0 = auto)");

  auto* rp = app.add_subcommand("report", "render SVG reports from a history");
  std::string rp_hist, rp_out = ".";
  rp->add_option("--history", rp_hist, "history JSON path")->required();
  rp->add_option("--out-dir", rp_out, "output directory");

  try {
    // CLI11 consumes a reversed argument vector
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    if (*gen)
      return detail::run_gen(gen_config, gen_seed, gen_count, gen_out);
    if (*tr)
      return detail::run_train(tr_data, tr_config, tr_ckpt, tr_hist, tr_seed);
    if (*ev)
      return detail::run_eval(ev_data, ev_ckpt, ev_subset, ev_csv, ev_dets,
                              ev_vb);
    if (*gc) return detail::run_gradcheck(gc_dim, gc_seed, gc_eps, gc_tol);
    if (*ab)
      return detail::run_ablate(ab_data, ab_grid, ab_seeds, ab_config, ab_out,
                                ab_threads);
    if (*rp) return detail::run_report(rp_hist, rp_out);
    std::cerr << app.help();
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::domain_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace msfm::cli
