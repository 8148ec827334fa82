#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <vector>

#include "msfm/losses.hpp"
#include "msfm/rng.hpp"
#include "support/finite_diff.hpp"

using msfm::Box;
using msfm::MsfmMode;
using msfm::PositiveGroup;
using msfm::PositiveGroups;
using msfm::Rng;
using msfm::SimilarityKind;

namespace {

PositiveGroups one_group(std::vector<int> fb, std::vector<int> vb) {
  PositiveGroups g;
  PositiveGroup grp;
  grp.gt_index = 0;
  grp.fb_members = std::move(fb);
  grp.vb_members = std::move(vb);
  g.groups.push_back(grp);
  g.pedestrian_count = 1;
  return g;
}

std::vector<std::vector<double>> random_feats(Rng& rng, int n, int dim) {
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (auto& f : out)
    for (auto& v : f) v = rng.normal();
  return out;
}

}  // namespace

TEST_CASE("cross entropy values", "[losses]") {
  CHECK(msfm::cross_entropy(std::array{0.0, 0.0}, 1).loss ==
        Catch::Approx(std::log(2.0)).epsilon(1e-14));
  // independent route: -log p with p = 1/(1+e^-20)
  CHECK(msfm::cross_entropy(std::array{10.0, -10.0}, 0).loss ==
        Catch::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-12));
  CHECK_THROWS_AS(msfm::cross_entropy(std::array{0.0, 0.0, 0.0}, 0),
                  std::invalid_argument);
}

TEST_CASE("cross entropy gradient matches finite differences", "[losses]") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits{rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const int label = static_cast<int>(rng.uniform_below(2));
    const auto res = msfm::cross_entropy(logits, label);
    const auto num = oracle::central_diff(
        [&](const std::vector<double>& x) {
          return msfm::cross_entropy(x, label).loss;
        },
        logits, 1e-5);
    CHECK(oracle::max_rel_err(res.d_logits, num) < 1e-6);
  }
}

TEST_CASE("delta encoding examples", "[losses]") {
  const Box p{0, 0, 10, 10};
  const auto zero = msfm::encode_deltas(p, p);
  for (double v : zero) CHECK(v == 0.0);
  const auto t = msfm::encode_deltas(p, Box{5, 5, 15, 15});
  CHECK(t[0] == Catch::Approx(0.5).epsilon(1e-14));
  CHECK(t[1] == Catch::Approx(0.5).epsilon(1e-14));
  CHECK(t[2] == 0.0);
  CHECK(t[3] == 0.0);
}

TEST_CASE("delta encode/decode round trip", "[losses]") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const double x1 = rng.uniform(0, 50), y1 = rng.uniform(0, 50);
    const Box p{x1, y1, x1 + rng.uniform(2, 40), y1 + rng.uniform(2, 40)};
    const double gx1 = rng.uniform(0, 50), gy1 = rng.uniform(0, 50);
    const Box g{gx1, gy1, gx1 + rng.uniform(2, 40), gy1 + rng.uniform(2, 40)};
    const Box back = msfm::decode_deltas(p, msfm::encode_deltas(p, g));
    CHECK(std::abs(back.x1 - g.x1) < 1e-9);
    CHECK(std::abs(back.y1 - g.y1) < 1e-9);
    CHECK(std::abs(back.x2 - g.x2) < 1e-9);
    CHECK(std::abs(back.y2 - g.y2) < 1e-9);
  }
}

TEST_CASE("smooth l1 branches", "[losses]") {
  const std::array<double, 4> z{0, 0, 0, 0};
  CHECK(msfm::smooth_l1(z, z).loss == 0.0);
  CHECK(msfm::smooth_l1(std::array{0.5, 0.0, 0.0, 0.0}, z).loss ==
        Catch::Approx(0.125).epsilon(1e-14));
  CHECK(msfm::smooth_l1(std::array{2.0, 0.0, 0.0, 0.0}, z).loss ==
        Catch::Approx(1.5).epsilon(1e-14));
  // gradient: quadratic branch returns d, linear branch returns sign(d)
  const auto r = msfm::smooth_l1(std::array{0.5, -3.0, 0.2, 4.0}, z);
  CHECK(r.d_pred[0] == 0.5);
  CHECK(r.d_pred[1] == -1.0);
  CHECK(r.d_pred[2] == Catch::Approx(0.2));
  CHECK(r.d_pred[3] == 1.0);
}

TEST_CASE("similarity loss hand cases", "[losses]") {
  // parallel means -> zero cosine loss
  {
    const auto groups = one_group({0, 1}, {0});
    std::vector<std::vector<double>> fb{{1, 0}, {0, 1}};
    std::vector<std::vector<double>> vb{{1, 1}};
    const auto r = msfm::msfm_loss(groups, fb, vb, SimilarityKind::cosine,
                                   MsfmMode::pos);
    CHECK(r.loss == Catch::Approx(0.0).margin(1e-12));
    CHECK(r.group_count == 1);
  }
  // orthogonal means -> 1; antipodal -> 2
  {
    const auto groups = one_group({0}, {0});
    std::vector<std::vector<double>> fb{{1, 0}};
    std::vector<std::vector<double>> vb{{0, 1}};
    CHECK(msfm::msfm_loss(groups, fb, vb, SimilarityKind::cosine,
                          MsfmMode::pos)
              .loss == Catch::Approx(1.0).epsilon(1e-14));
    vb = {{-1, 0}};
    CHECK(msfm::msfm_loss(groups, fb, vb, SimilarityKind::cosine,
                          MsfmMode::pos)
              .loss == Catch::Approx(2.0).epsilon(1e-14));
  }
}

TEST_CASE("similarity loss range and scale invariance", "[losses]") {
  Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const int m = 1 + static_cast<int>(rng.uniform_below(4));
    const int n = 1 + static_cast<int>(rng.uniform_below(4));
    const auto groups = [&] {
      std::vector<int> fb(m), vb(n);
      for (int i = 0; i < m; ++i) fb[i] = i;
      for (int i = 0; i < n; ++i) vb[i] = i;
      return one_group(fb, vb);
    }();
    auto fb = random_feats(rng, m, 8);
    auto vb = random_feats(rng, n, 8);
    const auto r =
        msfm::msfm_loss(groups, fb, vb, SimilarityKind::cosine, MsfmMode::pos);
    CHECK(r.loss >= 0.0);
    CHECK(r.loss <= 2.0);

    // uniform scaling of one side's members by a power of two is exact
    auto fb2 = fb;
    for (auto& f : fb2)
      for (auto& v : f) v *= 4.0;
    const auto r2 = msfm::msfm_loss(groups, fb2, vb, SimilarityKind::cosine,
                                    MsfmMode::pos);
    CHECK(r2.loss == r.loss);

    // arbitrary positive scale stays within rounding
    auto fb3 = fb;
    const double lambda = rng.uniform(0.1, 9.0);
    for (auto& f : fb3)
      for (auto& v : f) v *= lambda;
    const auto r3 = msfm::msfm_loss(groups, fb3, vb, SimilarityKind::cosine,
                                    MsfmMode::pos);
    CHECK(r3.loss == Catch::Approx(r.loss).margin(1e-12));
  }
}

TEST_CASE("similarity loss zero-mean signal and empty groups", "[losses]") {
  const auto groups = one_group({0}, {0});
  std::vector<std::vector<double>> fb{{0, 0}};
  std::vector<std::vector<double>> vb{{1, 0}};
  CHECK_THROWS_AS(
      msfm::msfm_loss(groups, fb, vb, SimilarityKind::cosine, MsfmMode::pos),
      std::domain_error);

  const auto empty = msfm::msfm_loss(PositiveGroups{}, {}, {},
                                     SimilarityKind::cosine, MsfmMode::pos);
  CHECK(empty.loss == 0.0);
  CHECK(empty.group_count == 0);
}

TEST_CASE("pos_plus_neg adds one pseudo-group per scene", "[losses]") {
  const auto groups = one_group({0}, {0});
  std::vector<std::vector<double>> fb{{1, 0}, {1, 1}, {3, 1}};
  std::vector<std::vector<double>> vb{{0, 1}, {2, 2}};
  std::vector<msfm::MsfmNegatives> negs{{{1, 2}, {1}}};
  const auto pos_only =
      msfm::msfm_loss(groups, fb, vb, SimilarityKind::cosine, MsfmMode::pos);
  const auto both = msfm::msfm_loss(groups, fb, vb, SimilarityKind::cosine,
                                    MsfmMode::pos_plus_neg, negs);
  CHECK(both.group_count == 2);
  // negative means: fb (2,1), vb (2,2); cos = 6/(sqrt(5)*sqrt(8))
  const double neg_term = 1.0 - 6.0 / (std::sqrt(5.0) * std::sqrt(8.0));
  CHECK(both.loss ==
        Catch::Approx(0.5 * (pos_only.loss + neg_term)).epsilon(1e-12));

  // an empty negative side drops the pseudo-group
  std::vector<msfm::MsfmNegatives> empty_side{{{}, {0}}};
  const auto skipped = msfm::msfm_loss(groups, fb, vb, SimilarityKind::cosine,
                                       MsfmMode::pos_plus_neg, empty_side);
  CHECK(skipped.group_count == 1);
  CHECK(skipped.loss == Catch::Approx(pos_only.loss));
}

TEST_CASE("similarity gradients match finite differences", "[losses]") {
  Rng rng(41);
  const int dim = 16;
  for (SimilarityKind kind : {SimilarityKind::cosine, SimilarityKind::euclidean,
                              SimilarityKind::manhattan}) {
    for (MsfmMode mode : {MsfmMode::pos, MsfmMode::pos_plus_neg}) {
      for (int trial = 0; trial < 10; ++trial) {
        PositiveGroups groups;
        PositiveGroup g1{0, {0, 1}, {0}};
        PositiveGroup g2{1, {2}, {1, 2}};
        groups.groups = {g1, g2};
        groups.pedestrian_count = 2;
        std::vector<msfm::MsfmNegatives> negs{{{3, 4}, {3, 4}}};

        // redraw features that land near a kink of the manhattan / euclidean
        // variants, where central differences would straddle the fold
        std::vector<std::vector<double>> fb, vb;
        for (int attempt = 0; attempt < 100; ++attempt) {
          fb = random_feats(rng, 5, dim);  // 3 positive + 2 negative
          vb = random_feats(rng, 5, dim);
          bool clear = true;
          auto normalized_mean = [&](const std::vector<std::vector<double>>& f,
                                     const std::vector<int>& members) {
            std::vector<double> m(dim, 0.0);
            for (int idx : members)
              for (int j = 0; j < dim; ++j) m[j] += f[idx][j];
            double n = 0;
            for (double v : m) n += v * v;
            n = std::sqrt(n);
            for (double& v : m) v /= n;
            return m;
          };
          std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs{
              {g1.fb_members, g1.vb_members},
              {g2.fb_members, g2.vb_members},
              {negs[0].fb_members, negs[0].vb_members}};
          for (const auto& [fbm, vbm] : pairs) {
            const auto u = normalized_mean(fb, fbm);
            const auto w = normalized_mean(vb, vbm);
            for (int j = 0; j < dim; ++j)
              if (std::abs(u[j] - w[j]) < 5e-3) clear = false;
          }
          if (clear) break;
        }

        auto flatten = [&](const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b) {
          std::vector<double> x;
          for (const auto& f : a) x.insert(x.end(), f.begin(), f.end());
          for (const auto& f : b) x.insert(x.end(), f.begin(), f.end());
          return x;
        };
        auto unflatten = [&](const std::vector<double>& x,
                             std::vector<std::vector<double>>& a,
                             std::vector<std::vector<double>>& b) {
          std::size_t k = 0;
          for (auto& f : a)
            for (auto& v : f) v = x[k++];
          for (auto& f : b)
            for (auto& v : f) v = x[k++];
        };

        const auto res = msfm::msfm_loss(groups, fb, vb, kind, mode, negs);
        std::vector<double> analytic;
        for (std::size_t i = 0; i < fb.size(); ++i) {
          const auto& s = res.d_fb[i];
          for (int j = 0; j < dim; ++j)
            analytic.push_back(s.empty() ? 0.0 : s[j]);
        }
        for (std::size_t i = 0; i < vb.size(); ++i) {
          const auto& s = res.d_vb[i];
          for (int j = 0; j < dim; ++j)
            analytic.push_back(s.empty() ? 0.0 : s[j]);
        }

        auto fbc = fb;
        auto vbc = vb;
        const auto numeric = oracle::central_diff(
            [&](const std::vector<double>& x) {
              unflatten(x, fbc, vbc);
              return msfm::msfm_loss(groups, fbc, vbc, kind, mode, negs).loss;
            },
            flatten(fb, vb), 1e-4);
        CHECK(oracle::max_rel_err(analytic, numeric) < 1e-4);
      }
    }
  }
}

TEST_CASE("total loss arithmetic", "[losses]") {
  CHECK(msfm::total_loss(0, 0, 0, 0, 0, 0).total == 0.0);
  CHECK(msfm::total_loss(1, 2, 3, 4, 5, 6).total == 21.0);
  const auto b = msfm::total_loss(0.5, 1.5, 2.0, 0.25, 3.0, 0.75);
  const auto d = msfm::total_loss(1.0, 3.0, 4.0, 0.5, 6.0, 1.5);
  CHECK(d.total == 2.0 * b.total);
  // the baseline configuration reduces to the four detection terms
  const auto base = msfm::total_loss(0.3, 0.4, 0.5, 0.6, 0.0, 0.0);
  CHECK(base.total == 0.3 + 0.4 + 0.5 + 0.6);
}
