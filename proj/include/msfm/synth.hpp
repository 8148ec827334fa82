#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "msfm/errors.hpp"
#include "msfm/geometry.hpp"
#include "msfm/rng.hpp"

namespace msfm {

/// One pedestrian: full-body box, visible-body box contained in it, the
/// visibility ratio area(visible)/area(full), the full-body pixel height,
/// and an ignore flag excluding it from training and evaluation targets.
struct Annotation {
  Box full;
  Box visible;
  double visibility = 1.0;
  double height = 0.0;
  bool ignore = false;
};

/// Occlusion subset used for evaluation: visibility in (min, max], height at
/// least min_height.
struct SubsetSpec {
  std::string name;
  double min_visibility = 0.0;
  double max_visibility = 1.0;
  double min_height = 50.0;
};

inline SubsetSpec subset_reasonable() { return {"R", 0.65, 1.0, 50.0}; }
inline SubsetSpec subset_heavy() { return {"HO", 0.20, 0.65, 50.0}; }
inline SubsetSpec subset_combined() { return {"R+HO", 0.20, 1.0, 50.0}; }

/// Case-insensitive lookup of R / HO / R+HO.
inline SubsetSpec subset_by_name(std::string_view name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(c)));
  if (lower == "r") return subset_reasonable();
  if (lower == "ho") return subset_heavy();
  if (lower == "r+ho") return subset_combined();
  throw std::invalid_argument("unknown subset: " + std::string(name) +
                              " (expected R, HO or R+HO)");
}

inline bool subset_filter(const Annotation& a, const SubsetSpec& s) {
  return a.visibility > s.min_visibility &&
         a.visibility <= s.max_visibility && a.height >= s.min_height;
}

/// Training eligibility: at least 50 px tall and occluded less than 70%.
inline bool training_filter(const Annotation& a) {
  return a.height >= 50.0 && a.visibility > 0.30;
}

/// Settings for the synthetic occluded-scene generator. Scenes are a
/// channels x grid_h x grid_w feature field at cell_size px per cell;
/// pedestrians paint a fixed signature into channels 0-1, occluders
/// overwrite theirs into channels 2-3, and every cell of every channel
/// carries Gaussian noise on top.
struct GeneratorConfig {
  int grid_w = 24;
  int grid_h = 32;
  double cell_size = 4.0;
  int channels = 6;
  int scene_count = 250;
  int ped_count_min = 2;
  int ped_count_max = 5;
  int occluder_count_min = 3;
  int occluder_count_max = 7;
  double ped_height_min = 44.0;
  double ped_height_max = 110.0;
  double ped_aspect_min = 0.35;  // width / height
  double ped_aspect_max = 0.48;
  double occlusion_fraction_min = 0.20;
  double occlusion_fraction_max = 0.55;
  double attach_prob = 0.5;  // occluder targets a pedestrian vs free-standing
  double ped_amplitude = 2.0;
  double edge_amplitude = 2.0;  // head/feet rows of the full box, channel 4
  double occ_amplitude = 2.0;
  double occ_body_bleed = 0.0;  // occluders leak this share of ped_amplitude
                                // into the body channels (person-like clutter)
  // free-standing clutter scatters body-signature cells into an occluder
  // rectangle at this per-cell rate, mimicking an occluded pedestrian's
  // mixture statistics without a coherent visible region
  double ghost_body_fraction_min = 0.45;
  double ghost_body_fraction_max = 0.70;
  double noise_level = 0.35;
  double min_visible_fraction = 0.45;
  double ignore_prob = 0.0;

  double width_px() const { return grid_w * cell_size; }
  double height_px() const { return grid_h * cell_size; }
  Box bounds() const { return Box{0.0, 0.0, width_px(), height_px()}; }

  void validate() const {
    auto fail = [](const std::string& msg) {
      throw std::invalid_argument("generator config: " + msg);
    };
    if (grid_w < 4 || grid_h < 4) fail("grid must be at least 4x4 cells");
    if (cell_size <= 0) fail("cell_size must be positive");
    if (channels < 5) fail("need at least 5 channels for the signatures");
    if (scene_count < 0) fail("scene_count must be non-negative");
    if (ped_count_min < 0 || ped_count_max < ped_count_min)
      fail("empty pedestrian count range");
    if (occluder_count_min < 0 || occluder_count_max < occluder_count_min)
      fail("empty occluder count range");
    if (!(ped_height_min > 0) || ped_height_max < ped_height_min)
      fail("empty pedestrian height range");
    if (!(ped_aspect_min > 0) || ped_aspect_max < ped_aspect_min)
      fail("empty aspect range");
    if (ped_height_min > height_px() ||
        ped_height_min * ped_aspect_min > width_px())
      fail("grid too small to place one pedestrian");
    if (occlusion_fraction_min < 0 || occlusion_fraction_max >= 1.0 ||
        occlusion_fraction_max < occlusion_fraction_min)
      fail("occlusion fractions must satisfy 0 <= min <= max < 1");
    if (attach_prob < 0 || attach_prob > 1) fail("attach_prob not in [0,1]");
    if (noise_level < 0) fail("noise_level must be non-negative");
    if (min_visible_fraction <= 0 || min_visible_fraction >= 1)
      fail("min_visible_fraction must be in (0,1)");
    if (ghost_body_fraction_min < 0 || ghost_body_fraction_max > 1 ||
        ghost_body_fraction_max < ghost_body_fraction_min)
      fail("ghost body fractions must satisfy 0 <= min <= max <= 1");
    if (ignore_prob < 0 || ignore_prob > 1) fail("ignore_prob not in [0,1]");
  }
};

/// A generated scene: annotations plus the feature grid (channel-major,
/// then row, then column). The grid is a pure function of (config, seed) and
/// is never serialized. integral holds per-channel summed-area tables used
/// by pooling; it is derived from the grid on construction.
struct Scene {
  std::string id;
  std::uint64_t seed = 0;
  Box bounds;
  int channels = 0;
  int grid_w = 0;
  int grid_h = 0;
  double cell_size = 1.0;
  std::vector<double> feature_grid;
  std::vector<double> integral;  // channels x (grid_h+1) x (grid_w+1)
  std::vector<Annotation> annotations;

  double at(int c, int iy, int ix) const {
    return feature_grid[(static_cast<std::size_t>(c) * grid_h + iy) * grid_w +
                        ix];
  }

  void build_integral() {
    const int iw = grid_w + 1;
    const int ih = grid_h + 1;
    integral.assign(static_cast<std::size_t>(channels) * ih * iw, 0.0);
    for (int c = 0; c < channels; ++c) {
      double* s = integral.data() + static_cast<std::size_t>(c) * ih * iw;
      for (int y = 0; y < grid_h; ++y)
        for (int x = 0; x < grid_w; ++x)
          s[(y + 1) * iw + (x + 1)] = at(c, y, x) + s[y * iw + (x + 1)] +
                                      s[(y + 1) * iw + x] - s[y * iw + x];
    }
  }

  /// Sum of channel c over the half-open cell rectangle [x0,x1) x [y0,y1).
  double cell_sum(int c, int y0, int x0, int y1, int x1) const {
    const int iw = grid_w + 1;
    const double* s =
        integral.data() + static_cast<std::size_t>(c) * (grid_h + 1) * iw;
    return s[y1 * iw + x1] - s[y0 * iw + x1] - s[y1 * iw + x0] +
           s[y0 * iw + x0];
  }
};

namespace detail {

// Cell index range [first, last) whose centers fall in [lo, hi) along one
// axis, clamped to [0, n).
inline std::pair<int, int> covered_cells(double lo, double hi,
                                         double cell_size, int n) {
  int first = static_cast<int>(std::ceil(lo / cell_size - 0.5));
  int last = static_cast<int>(std::ceil(hi / cell_size - 0.5));
  first = std::clamp(first, 0, n);
  last = std::clamp(last, first, n);
  return {first, last};
}

enum class CutSide { bottom, left, right };

// Splits a visible box into the occluded strip (fraction f of the current
// extent, entering from side) and the remaining visible rectangle.
struct Cut {
  Box strip;
  Box remain;
};

inline Cut cut_from_side(const Box& v, CutSide side, double f) {
  Cut cut{v, v};
  if (side == CutSide::bottom) {
    cut.strip.y1 = v.y2 - f * v.height();
    cut.remain.y2 = cut.strip.y1;
  } else if (side == CutSide::left) {
    cut.strip.x2 = v.x1 + f * v.width();
    cut.remain.x1 = cut.strip.x2;
  } else {
    cut.strip.x1 = v.x2 - f * v.width();
    cut.remain.x2 = cut.strip.x1;
  }
  return cut;
}

// Free-standing confuser: per cell, either a body-signature cell or an
// occluder-signature cell, scattered at body_fraction. Body cells in the
// head and feet rows carry the edge marker like a real pedestrian would.
inline void paint_ghost(std::vector<double>& sig, const GeneratorConfig& g,
                        const Box& b, double body_fraction, Rng& rng) {
  const auto [x0, x1] = covered_cells(b.x1, b.x2, g.cell_size, g.grid_w);
  const auto [y0, y1] = covered_cells(b.y1, b.y2, g.cell_size, g.grid_h);
  const std::size_t plane = static_cast<std::size_t>(g.grid_h) * g.grid_w;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const std::size_t cell = static_cast<std::size_t>(y) * g.grid_w + x;
      for (int c = 0; c < g.channels; ++c) sig[c * plane + cell] = 0.0;
      if (rng.uniform() < body_fraction) {
        sig[0 * plane + cell] = g.ped_amplitude;
        sig[1 * plane + cell] = 0.5 * g.ped_amplitude;
      } else {
        sig[2 * plane + cell] = g.occ_amplitude;
        sig[3 * plane + cell] = 0.5 * g.occ_amplitude;
      }
    }
}

inline void paint_signature(std::vector<double>& sig, const GeneratorConfig& g,
                            const Box& b, int base_channel, double amplitude,
                            double edge_amplitude = 0.0,
                            double body_bleed = 0.0) {
  const auto [x0, x1] = covered_cells(b.x1, b.x2, g.cell_size, g.grid_w);
  const auto [y0, y1] = covered_cells(b.y1, b.y2, g.cell_size, g.grid_h);
  const std::size_t plane = static_cast<std::size_t>(g.grid_h) * g.grid_w;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const std::size_t cell = static_cast<std::size_t>(y) * g.grid_w + x;
      for (int c = 0; c < g.channels; ++c) sig[c * plane + cell] = 0.0;
      sig[base_channel * plane + cell] = amplitude;
      sig[(base_channel + 1) * plane + cell] = 0.5 * amplitude;
      if (body_bleed != 0.0) {
        sig[0 * plane + cell] = body_bleed;
        sig[1 * plane + cell] = 0.5 * body_bleed;
      }
      // extent cue: the head and feet rows carry their own channel
      if (edge_amplitude != 0.0 && (y == y0 || y == y1 - 1))
        sig[4 * plane + cell] = edge_amplitude;
    }
}

}  // namespace detail

/// Generates one scene deterministically from (config, seed). Pedestrians
/// are painted first; occluders either cut a rectangular strip from one side
/// (bottom/left/right) of a pedestrian, shrinking its visible box, or stand
/// free in the background. Cuts that would push visibility below
/// min_visible_fraction are skipped.
inline Scene generate_scene(const GeneratorConfig& cfg, std::uint64_t seed,
                            std::string id = "") {
  cfg.validate();
  Rng rng(seed);

  Scene scene;
  scene.id = id.empty() ? "scene-" + std::to_string(seed) : std::move(id);
  scene.seed = seed;
  scene.bounds = cfg.bounds();
  scene.channels = cfg.channels;
  scene.grid_w = cfg.grid_w;
  scene.grid_h = cfg.grid_h;
  scene.cell_size = cfg.cell_size;

  const std::size_t n_values =
      static_cast<std::size_t>(cfg.channels) * cfg.grid_h * cfg.grid_w;
  std::vector<double> noise(n_values);
  for (double& v : noise) v = cfg.noise_level * rng.normal();
  std::vector<double> sig(n_values, 0.0);

  // place pedestrians with disjoint full boxes
  const int n_ped = static_cast<int>(
      rng.uniform_int(cfg.ped_count_min, cfg.ped_count_max));
  std::vector<Box> fulls;
  for (int i = 0; i < n_ped; ++i) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double h = rng.uniform(cfg.ped_height_min, cfg.ped_height_max);
      const double w = h * rng.uniform(cfg.ped_aspect_min, cfg.ped_aspect_max);
      if (w > cfg.width_px() || h > cfg.height_px()) continue;
      const double x1 = rng.uniform(0.0, cfg.width_px() - w);
      const double y1 = rng.uniform(0.0, cfg.height_px() - h);
      const Box b{x1, y1, x1 + w, y1 + h};
      bool overlaps = false;
      for (const Box& other : fulls)
        if (intersection_area(b, other) > 0.0) overlaps = true;
      if (!overlaps) {
        fulls.push_back(b);
        break;
      }
    }
  }
  for (const Box& b : fulls)
    detail::paint_signature(sig, cfg, b, 0, cfg.ped_amplitude,
                            cfg.edge_amplitude);

  std::vector<Box> visibles = fulls;

  // occluders: attached cuts (at most one per pedestrian, so the visible
  // region is one of the canonical patterns) and free-standing confusers
  const int n_occ = static_cast<int>(
      rng.uniform_int(cfg.occluder_count_min, cfg.occluder_count_max));
  std::vector<bool> already_cut(fulls.size(), false);
  for (int i = 0; i < n_occ; ++i) {
    const bool any_uncut =
        std::find(already_cut.begin(), already_cut.end(), false) !=
        already_cut.end();
    const bool attach =
        !fulls.empty() && any_uncut && rng.uniform() < cfg.attach_prob;
    if (attach) {
      auto t = static_cast<std::size_t>(rng.uniform_below(fulls.size()));
      while (already_cut[t]) t = (t + 1) % fulls.size();
      const auto side = static_cast<detail::CutSide>(rng.uniform_below(3));
      const double f =
          rng.uniform(cfg.occlusion_fraction_min, cfg.occlusion_fraction_max);
      const auto cut = detail::cut_from_side(visibles[t], side, f);
      if (!box_valid(cut.remain) ||
          area(cut.remain) / area(fulls[t]) < cfg.min_visible_fraction)
        continue;
      detail::paint_signature(sig, cfg, cut.strip, 2, cfg.occ_amplitude,
                               0.0, cfg.occ_body_bleed * cfg.ped_amplitude);
      visibles[t] = cut.remain;
      already_cut[t] = true;
    } else {
      const double body_fraction = rng.uniform(cfg.ghost_body_fraction_min,
                                                cfg.ghost_body_fraction_max);
      for (int attempt = 0; attempt < 64; ++attempt) {
        const double h = rng.uniform(cfg.ped_height_min, cfg.ped_height_max);
        const double w =
            h * rng.uniform(cfg.ped_aspect_min, cfg.ped_aspect_max);
        if (w > cfg.width_px() || h > cfg.height_px()) continue;
        const double x1 = rng.uniform(0.0, cfg.width_px() - w);
        const double y1 = rng.uniform(0.0, cfg.height_px() - h);
        const Box b{x1, y1, x1 + w, y1 + h};
        bool overlaps = false;
        for (const Box& ped : fulls)
          if (intersection_area(b, ped) > 0.0) overlaps = true;
        if (!overlaps) {
          detail::paint_ghost(sig, cfg, b, body_fraction, rng);
          break;
        }
      }
    }
  }

  scene.feature_grid.resize(n_values);
  for (std::size_t k = 0; k < n_values; ++k)
    scene.feature_grid[k] = sig[k] + noise[k];
  scene.build_integral();

  for (std::size_t i = 0; i < fulls.size(); ++i) {
    Annotation a;
    a.full = fulls[i];
    a.visible = visibles[i];
    a.visibility = area(a.visible) / area(a.full);
    a.height = a.full.height();
    a.ignore = cfg.ignore_prob > 0.0 && rng.uniform() < cfg.ignore_prob;
    scene.annotations.push_back(a);
  }
  return scene;
}

struct Dataset {
  GeneratorConfig config;
  std::vector<Scene> scenes;
};

inline Dataset generate_dataset(const GeneratorConfig& cfg,
                                std::uint64_t base_seed) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.scenes.reserve(static_cast<std::size_t>(cfg.scene_count));
  for (int i = 0; i < cfg.scene_count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene-%04d", i);
    ds.scenes.push_back(generate_scene(
        cfg, mix64(base_seed, static_cast<std::uint64_t>(i)), name));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// dataset files

namespace detail {

inline nlohmann::ordered_json config_to_json(const GeneratorConfig& g) {
  return nlohmann::ordered_json{{"grid_w", g.grid_w},
                                {"grid_h", g.grid_h},
                                {"cell_size", g.cell_size},
                                {"channels", g.channels},
                                {"scene_count", g.scene_count},
                                {"ped_count_min", g.ped_count_min},
                                {"ped_count_max", g.ped_count_max},
                                {"occluder_count_min", g.occluder_count_min},
                                {"occluder_count_max", g.occluder_count_max},
                                {"ped_height_min", g.ped_height_min},
                                {"ped_height_max", g.ped_height_max},
                                {"ped_aspect_min", g.ped_aspect_min},
                                {"ped_aspect_max", g.ped_aspect_max},
                                {"occlusion_fraction_min", g.occlusion_fraction_min},
                                {"occlusion_fraction_max", g.occlusion_fraction_max},
                                {"attach_prob", g.attach_prob},
                                {"ped_amplitude", g.ped_amplitude},
                                {"edge_amplitude", g.edge_amplitude},
                                {"occ_body_bleed", g.occ_body_bleed},
                                {"ghost_body_fraction_min", g.ghost_body_fraction_min},
                                {"ghost_body_fraction_max", g.ghost_body_fraction_max},
                                {"occ_amplitude", g.occ_amplitude},
                                {"noise_level", g.noise_level},
                                {"min_visible_fraction", g.min_visible_fraction},
                                {"ignore_prob", g.ignore_prob}};
}

inline GeneratorConfig config_from_json(const nlohmann::json& j,
                                        const std::string& where) {
  GeneratorConfig g;
  try {
    j.at("grid_w").get_to(g.grid_w);
    j.at("grid_h").get_to(g.grid_h);
    j.at("cell_size").get_to(g.cell_size);
    j.at("channels").get_to(g.channels);
    j.at("scene_count").get_to(g.scene_count);
    j.at("ped_count_min").get_to(g.ped_count_min);
    j.at("ped_count_max").get_to(g.ped_count_max);
    j.at("occluder_count_min").get_to(g.occluder_count_min);
    j.at("occluder_count_max").get_to(g.occluder_count_max);
    j.at("ped_height_min").get_to(g.ped_height_min);
    j.at("ped_height_max").get_to(g.ped_height_max);
    j.at("ped_aspect_min").get_to(g.ped_aspect_min);
    j.at("ped_aspect_max").get_to(g.ped_aspect_max);
    j.at("occlusion_fraction_min").get_to(g.occlusion_fraction_min);
    j.at("occlusion_fraction_max").get_to(g.occlusion_fraction_max);
    j.at("attach_prob").get_to(g.attach_prob);
    j.at("ped_amplitude").get_to(g.ped_amplitude);
    j.at("edge_amplitude").get_to(g.edge_amplitude);
    j.at("occ_body_bleed").get_to(g.occ_body_bleed);
    j.at("ghost_body_fraction_min").get_to(g.ghost_body_fraction_min);
    j.at("ghost_body_fraction_max").get_to(g.ghost_body_fraction_max);
    j.at("occ_amplitude").get_to(g.occ_amplitude);
    j.at("noise_level").get_to(g.noise_level);
    j.at("min_visible_fraction").get_to(g.min_visible_fraction);
    j.at("ignore_prob").get_to(g.ignore_prob);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": bad generator_config: " + e.what());
  }
  return g;
}

inline nlohmann::ordered_json box_to_json(const Box& b) {
  return nlohmann::ordered_json::array({b.x1, b.y1, b.x2, b.y2});
}

inline Box box_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4)
    throw DataError(where + ": expected an array of 4 numbers");
  Box b;
  try {
    b = Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
            j[3].get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  if (!box_valid(b)) throw DataError(where + ": invalid box");
  return b;
}

}  // namespace detail

/// Reads a generator config JSON (same schema as the dataset file's
/// generator_config block; missing fields keep their defaults).
inline GeneratorConfig load_generator_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open generator config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  GeneratorConfig defaults;
  const auto merged = [&] {
    nlohmann::json full = detail::config_to_json(defaults);
    for (const auto& [key, value] : j.items()) {
      if (!full.contains(key))
        throw DataError(path + ": unknown generator field \"" + key + "\"");
      full[key] = value;
    }
    return full;
  }();
  GeneratorConfig g = detail::config_from_json(merged, path);
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(path + ": " + e.what());
  }
  return g;
}

/// Writes the dataset as a JSON document. Feature grids are not stored;
/// they regenerate from the per-scene seeds on load.
inline void save_dataset(const Dataset& ds, const std::string& path) {
  nlohmann::ordered_json doc;
  doc["generator_config"] = detail::config_to_json(ds.config);
  auto& scenes = doc["scenes"] = nlohmann::ordered_json::array();
  for (const Scene& s : ds.scenes) {
    nlohmann::ordered_json js;
    js["id"] = s.id;
    js["seed"] = s.seed;
    js["bounds"] = detail::box_to_json(s.bounds);
    auto& anns = js["annotations"] = nlohmann::ordered_json::array();
    for (const Annotation& a : s.annotations) {
      anns.push_back(nlohmann::ordered_json{{"full", detail::box_to_json(a.full)},
                                            {"visible", detail::box_to_json(a.visible)},
                                            {"visibility", a.visibility},
                                            {"height", a.height},
                                            {"ignore", a.ignore}});
    }
    scenes.push_back(std::move(js));
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw DataError("write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("generator_config") ||
      !doc.contains("scenes"))
    throw DataError(path + ": missing generator_config or scenes");

  Dataset ds;
  ds.config = detail::config_from_json(doc["generator_config"], path);
  try {
    ds.config.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(path + ": " + e.what());
  }

  const auto& scenes = doc["scenes"];
  if (!scenes.is_array()) throw DataError(path + ": scenes must be an array");
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const auto& js = scenes[si];
    const std::string where = path + ": scenes[" + std::to_string(si) + "]";
    if (!js.is_object() || !js.contains("id") || !js.contains("seed") ||
        !js.contains("bounds") || !js.contains("annotations"))
      throw DataError(where + ": missing id/seed/bounds/annotations");
    std::uint64_t seed;
    std::string id;
    try {
      seed = js["seed"].get<std::uint64_t>();
      id = js["id"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    Scene scene = generate_scene(ds.config, seed, id);
    const Box bounds = detail::box_from_json(js["bounds"], where + ".bounds");
    if (!(bounds == scene.bounds))
      throw DataError(where + ".bounds: does not match generator_config");

    scene.annotations.clear();
    const auto& anns = js["annotations"];
    if (!anns.is_array())
      throw DataError(where + ".annotations: must be an array");
    for (std::size_t ai = 0; ai < anns.size(); ++ai) {
      const auto& ja = anns[ai];
      const std::string awhere =
          where + ".annotations[" + std::to_string(ai) + "]";
      Annotation a;
      try {
        a.full = detail::box_from_json(ja.at("full"), awhere + ".full");
        a.visible =
            detail::box_from_json(ja.at("visible"), awhere + ".visible");
        a.visibility = ja.at("visibility").get<double>();
        a.height = ja.at("height").get<double>();
        a.ignore = ja.at("ignore").get<bool>();
      } catch (const nlohmann::json::exception& e) {
        throw DataError(awhere + ": " + e.what());
      }
      if (intersection_area(a.full, a.visible) <
          area(a.visible) * (1.0 - 1e-9))
        throw DataError(awhere + ": visible box not contained in full box");
      if (std::abs(a.visibility - area(a.visible) / area(a.full)) > 1e-9)
        throw DataError(awhere + ": visibility inconsistent with boxes");
      scene.annotations.push_back(a);
    }
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

}  // namespace msfm
