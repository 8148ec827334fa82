#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "msfm/synth.hpp"

using msfm::Annotation;
using msfm::Box;
using msfm::GeneratorConfig;
using msfm::Scene;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig g;
  g.scene_count = 5;
  return g;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("msfm-test-" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

}  // namespace

TEST_CASE("cut from a side leaves a rectangle", "[synth]") {
  // pedestrian (0,0,10,20) occluded from below over its lower half
  const auto cut =
      msfm::detail::cut_from_side(Box{0, 0, 10, 20}, msfm::detail::CutSide::bottom, 0.5);
  CHECK(cut.remain == Box{0, 0, 10, 10});
  CHECK(cut.strip == Box{0, 10, 10, 20});
  CHECK(msfm::area(cut.remain) / msfm::area(Box{0, 0, 10, 20}) == 0.5);

  const auto left =
      msfm::detail::cut_from_side(Box{0, 0, 10, 20}, msfm::detail::CutSide::left, 0.25);
  CHECK(left.remain == Box{2.5, 0, 10, 20});
  const auto right =
      msfm::detail::cut_from_side(Box{0, 0, 10, 20}, msfm::detail::CutSide::right, 0.25);
  CHECK(right.remain == Box{0, 0, 7.5, 20});
}

TEST_CASE("no occluders means full visibility", "[synth]") {
  GeneratorConfig g = small_config();
  g.occluder_count_min = 0;
  g.occluder_count_max = 0;
  const Scene s = msfm::generate_scene(g, 17);
  REQUIRE(!s.annotations.empty());
  for (const auto& a : s.annotations) {
    CHECK(a.visibility == 1.0);
    CHECK(a.visible == a.full);
  }
}

TEST_CASE("generation is deterministic", "[synth]") {
  const GeneratorConfig g = small_config();
  const Scene a = msfm::generate_scene(g, 99);
  const Scene b = msfm::generate_scene(g, 99);
  CHECK(a.feature_grid == b.feature_grid);
  REQUIRE(a.annotations.size() == b.annotations.size());
  for (std::size_t i = 0; i < a.annotations.size(); ++i) {
    CHECK(a.annotations[i].full == b.annotations[i].full);
    CHECK(a.annotations[i].visible == b.annotations[i].visible);
  }
  const Scene c = msfm::generate_scene(g, 100);
  CHECK(a.feature_grid != c.feature_grid);
}

TEST_CASE("generated annotations satisfy the invariants", "[synth]") {
  const GeneratorConfig g = small_config();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene s = msfm::generate_scene(g, seed);
    for (const auto& a : s.annotations) {
      CHECK(msfm::box_valid(a.full));
      CHECK(msfm::box_valid(a.visible));
      CHECK(msfm::intersection_area(a.full, a.visible) ==
            Catch::Approx(msfm::area(a.visible)).epsilon(1e-12));
      CHECK(std::abs(a.visibility -
                     msfm::area(a.visible) / msfm::area(a.full)) < 1e-9);
      CHECK(a.height == a.full.height());
      CHECK(a.full.x1 >= s.bounds.x1);
      CHECK(a.full.y1 >= s.bounds.y1);
      CHECK(a.full.x2 <= s.bounds.x2);
      CHECK(a.full.y2 <= s.bounds.y2);
      CHECK(a.visibility >= g.min_visible_fraction);
    }
    for (double v : s.feature_grid) CHECK(std::isfinite(v));
  }
}

TEST_CASE("occluded scenes exist and stay rectangular-consistent", "[synth]") {
  const GeneratorConfig g = small_config();
  int occluded = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Scene s = msfm::generate_scene(g, seed);
    for (const auto& a : s.annotations)
      if (a.visibility < 1.0) ++occluded;
  }
  CHECK(occluded > 20);
}

TEST_CASE("subset specs partition by visibility", "[synth]") {
  const auto r = msfm::subset_reasonable();
  const auto ho = msfm::subset_heavy();
  const auto both = msfm::subset_combined();

  Annotation a;
  a.full = Box{0, 0, 20, 60};
  a.height = 60;

  a.visibility = 0.9;
  CHECK(msfm::subset_filter(a, r));
  CHECK_FALSE(msfm::subset_filter(a, ho));
  CHECK(msfm::subset_filter(a, both));

  a.visibility = 0.5;
  CHECK_FALSE(msfm::subset_filter(a, r));
  CHECK(msfm::subset_filter(a, ho));
  CHECK(msfm::subset_filter(a, both));

  a.visibility = 0.9;
  a.height = 40;
  CHECK_FALSE(msfm::subset_filter(a, r));

  // boundary values: 0.65 belongs to HO, 0.20 to neither
  a.height = 60;
  a.visibility = 0.65;
  CHECK_FALSE(msfm::subset_filter(a, r));
  CHECK(msfm::subset_filter(a, ho));
  a.visibility = 0.20;
  CHECK_FALSE(msfm::subset_filter(a, ho));
  CHECK_FALSE(msfm::subset_filter(a, both));

  // R and HO are disjoint and both inside R+HO
  for (double v = 0.05; v < 1.0; v += 0.01) {
    a.visibility = v;
    const bool in_r = msfm::subset_filter(a, r);
    const bool in_ho = msfm::subset_filter(a, ho);
    const bool in_both = msfm::subset_filter(a, both);
    CHECK_FALSE((in_r && in_ho));
    if (in_r || in_ho) CHECK(in_both);
    if (in_both) CHECK((in_r || in_ho));
  }

  CHECK(msfm::subset_by_name("r+ho").name == "R+HO");
  CHECK(msfm::subset_by_name("HO").name == "HO");
  CHECK_THROWS_AS(msfm::subset_by_name("nope"), std::invalid_argument);
}

TEST_CASE("training filter thresholds", "[synth]") {
  Annotation a;
  a.full = Box{0, 0, 20, 55};
  a.height = 55;
  a.visibility = 0.40;
  CHECK(msfm::training_filter(a));
  a.visibility = 0.25;
  CHECK_FALSE(msfm::training_filter(a));
  a.visibility = 1.0;
  a.height = 49;
  CHECK_FALSE(msfm::training_filter(a));
}

TEST_CASE("pedestrian and occluder signatures are separable", "[synth]") {
  GeneratorConfig g = small_config();
  double diff_sum = 0.0;
  int scenes_used = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = msfm::generate_scene(g, seed);
    std::vector<double> ped_mean(g.channels, 0.0), occ_mean(g.channels, 0.0);
    int n_ped = 0, n_occ = 0;
    for (int y = 0; y < s.grid_h; ++y) {
      for (int x = 0; x < s.grid_w; ++x) {
        const double cx = (x + 0.5) * s.cell_size;
        const double cy = (y + 0.5) * s.cell_size;
        for (const auto& a : s.annotations) {
          const bool in_full = cx >= a.full.x1 && cx < a.full.x2 &&
                               cy >= a.full.y1 && cy < a.full.y2;
          if (!in_full) continue;
          const bool in_vis = cx >= a.visible.x1 && cx < a.visible.x2 &&
                              cy >= a.visible.y1 && cy < a.visible.y2;
          auto& mean = in_vis ? ped_mean : occ_mean;
          (in_vis ? n_ped : n_occ) += 1;
          for (int c = 0; c < g.channels; ++c) mean[c] += s.at(c, y, x);
          break;
        }
      }
    }
    if (n_ped == 0 || n_occ == 0) continue;
    double diff = 0.0;
    for (int c = 0; c < g.channels; ++c)
      diff += std::abs(ped_mean[c] / n_ped - occ_mean[c] / n_occ);
    diff_sum += diff / g.channels;
    ++scenes_used;
  }
  REQUIRE(scenes_used > 5);
  CHECK(diff_sum / scenes_used > g.noise_level);
}

TEST_CASE("config validation rejects bad ranges", "[synth]") {
  GeneratorConfig g = small_config();
  g.ped_count_max = g.ped_count_min - 1;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = small_config();
  g.grid_h = 2;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = small_config();
  g.ped_height_min = 1e5;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("dataset save/load round trip", "[synth]") {
  TempDir tmp;
  GeneratorConfig g = small_config();
  g.ignore_prob = 0.2;  // exercise the flag through serialization
  const auto ds = msfm::generate_dataset(g, 4242);
  REQUIRE(ds.scenes.size() == 5);
  const std::string path = tmp.file("data.json");
  msfm::save_dataset(ds, path);
  const auto back = msfm::load_dataset(path);

  REQUIRE(back.scenes.size() == ds.scenes.size());
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    const Scene& a = ds.scenes[i];
    const Scene& b = back.scenes[i];
    CHECK(a.id == b.id);
    CHECK(a.seed == b.seed);
    CHECK(a.bounds == b.bounds);
    CHECK(a.feature_grid == b.feature_grid);  // regenerated bit-exactly
    REQUIRE(a.annotations.size() == b.annotations.size());
    for (std::size_t k = 0; k < a.annotations.size(); ++k) {
      CHECK(a.annotations[k].full == b.annotations[k].full);
      CHECK(a.annotations[k].visible == b.annotations[k].visible);
      CHECK(a.annotations[k].visibility == b.annotations[k].visibility);
      CHECK(a.annotations[k].height == b.annotations[k].height);
      CHECK(a.annotations[k].ignore == b.annotations[k].ignore);
    }
  }
}

TEST_CASE("empty dataset round trips", "[synth]") {
  TempDir tmp;
  GeneratorConfig g = small_config();
  g.scene_count = 0;
  const auto ds = msfm::generate_dataset(g, 1);
  const std::string path = tmp.file("empty.json");
  msfm::save_dataset(ds, path);
  CHECK(msfm::load_dataset(path).scenes.empty());
}

TEST_CASE("malformed dataset files are rejected with diagnostics", "[synth]") {
  TempDir tmp;
  const auto ds = msfm::generate_dataset(small_config(), 7);
  const std::string path = tmp.file("data.json");
  msfm::save_dataset(ds, path);

  // truncated file
  std::string text;
  {
    std::ifstream in(path);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  const std::string trunc_path = tmp.file("trunc.json");
  {
    std::ofstream out(trunc_path);
    out << text.substr(0, text.size() / 2);
  }
  CHECK_THROWS_AS(msfm::load_dataset(trunc_path), msfm::DataError);

  // inconsistent visibility value
  auto doc = nlohmann::json::parse(text);
  doc["scenes"][0]["annotations"][0]["visibility"] = 0.123456;
  const std::string bad_path = tmp.file("bad.json");
  {
    std::ofstream out(bad_path);
    out << doc.dump();
  }
  try {
    msfm::load_dataset(bad_path);
    FAIL("expected DataError");
  } catch (const msfm::DataError& e) {
    CHECK(std::string(e.what()).find("annotations[0]") != std::string::npos);
  }

  CHECK_THROWS_AS(msfm::load_dataset(tmp.file("missing.json")),
                  msfm::DataError);
}
