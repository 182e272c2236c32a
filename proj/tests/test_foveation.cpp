#include <gtest/gtest.h>

#include "fovsteg/errors.hpp"
#include "fovsteg/foveation.hpp"
#include "property_checks.hpp"
#include "support.hpp"

using namespace fovsteg;

TEST(Eccentricity, ZeroAtFixation) {
  auto e = eccentricity_map(3, 3, GazePoint::center());
  EXPECT_EQ(e[1][1].item<double>(), 0.0);
}

TEST(Eccentricity, OppositeCornerIsOne) {
  for (auto [h, w] : std::vector<std::pair<int, int>>{{3, 3}, {5, 9}, {64, 64}, {17, 2}}) {
    auto e = eccentricity_map(h, w, GazePoint(0, 0));
    EXPECT_NEAR(e[h - 1][w - 1].item<double>(), 1.0, 1e-12);
    EXPECT_NEAR(e.max().item<double>(), 1.0, 1e-12);
  }
}

TEST(Eccentricity, CornerOfCenteredGazeIsHalf) {
  auto e = eccentricity_map(256, 256, GazePoint::center());
  EXPECT_NEAR(e[0][0].item<double>(), 0.5, 1e-12);
  EXPECT_NEAR(e[255][255].item<double>(), 0.5, 1e-12);
}

TEST(Eccentricity, MatchesOracleAndIsLipschitz) {
  const int h = 13, w = 21;
  GazePoint g(0.3, 0.8);
  auto e = eccentricity_map(h, w, g);
  const double diag = std::hypot(w - 1.0, h - 1.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      EXPECT_NEAR(e[y][x].item<double>(), oracle::eccentricity(y, x, h, w, g.x, g.y), 1e-12);
      if (x + 1 < w) EXPECT_LE(std::abs(e[y][x + 1].item<double>() - e[y][x].item<double>()), 1.0 / diag + 1e-12);
    }
}

TEST(PoolingSigma, ClampAndLinearRegion) {
  FoveationConfig cfg;
  cfg.alpha = 32;
  cfg.sigma_min = 0.5;
  cfg.sigma_max = 16;
  auto e = torch::tensor({0.0, 1.0, 0.25}, torch::kFloat64);
  auto s = pooling_sigma_map(e, cfg);
  EXPECT_DOUBLE_EQ(s[0].item<double>(), 0.5);
  EXPECT_DOUBLE_EQ(s[1].item<double>(), 16.0);
  EXPECT_DOUBLE_EQ(s[2].item<double>(), 8.0);
  auto ramp = pooling_sigma_map(torch::linspace(0, 1, 101, torch::kFloat64), cfg);
  EXPECT_TRUE((ramp.diff() >= 0).all().item<bool>());
}

TEST(FoveationConfigTest, DefaultsAndValidation) {
  auto cfg = FoveationConfig::for_width(256);
  EXPECT_DOUBLE_EQ(cfg.alpha, 32.0);
  EXPECT_DOUBLE_EQ(cfg.sigma_max, 8.0);
  EXPECT_DOUBLE_EQ(cfg.sigma_min, 0.5);
  EXPECT_EQ(cfg.levels, 5);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_NO_THROW(FoveationConfig::for_width(64).validate());
  auto bad = cfg;
  bad.levels = 1;
  EXPECT_THROW(bad.validate(), UsageError);
  bad = cfg;
  bad.sigma_max = 100;  // beyond sigma_0 * 2^4
  EXPECT_THROW(bad.validate(), UsageError);
  bad = cfg;
  bad.sigma_min = 9;
  EXPECT_THROW(bad.validate(), UsageError);
  nlohmann::json j = cfg;
  auto back = j.get<FoveationConfig>();
  EXPECT_DOUBLE_EQ(back.alpha, cfg.alpha);
  EXPECT_EQ(back.levels, cfg.levels);
}

TEST(GaussianKernel, MatchesOracleTaps) {
  for (double s : {0.5, 1.0, 2.3, 8.0}) {
    auto k = gaussian_kernel(s);
    auto o = oracle::taps(s);
    ASSERT_EQ(k.size(), o.size());
    for (std::size_t i = 0; i < k.size(); ++i) EXPECT_NEAR(k[i], o[i], 1e-15);
  }
}

TEST(ReflectIndices, MirrorWithoutRepeatingEdge) {
  auto idx = reflect_indices(4, 3);
  EXPECT_EQ(idx, (std::vector<long>{3, 2, 1, 0, 1, 2, 3, 2, 1, 0}));
  auto wide = reflect_indices(3, 7);
  for (long i = -7; i < 3 + 7; ++i) EXPECT_EQ(wide[i + 7], oracle::mirror(static_cast<int>(i), 3));
}

TEST(GaussianStack, ConstantImageStaysConstant) {
  auto img = torch::full({1, 3, 20, 20}, 0.37, torch::kFloat64);
  for (const auto& level : gaussian_stack(img, FoveationConfig::for_width(256))) {
    EXPECT_LE((level - 0.37).abs().max().item<double>(), 1e-12);
  }
}

TEST(GaussianStack, TinySigmaIsIdentity) {
  torch::manual_seed(0);
  auto img = torch::rand({1, 3, 9, 9}, torch::kFloat64);
  EXPECT_LE((gaussian_blur(img, 0.05) - img).abs().max().item<double>(), 1e-12);
}

TEST(GaussianStack, ImpulseMatchesDenseConvolution) {
  const int n = 31;
  auto img = torch::zeros({1, 1, 1, n}, torch::kFloat64);
  img[0][0][0][n / 2] = 1.0;
  // A 1-pixel-high image: vertical pass sees a single row and is an identity.
  auto out = gaussian_blur(img, 1.0);
  std::vector<double> x(n, 0.0);
  x[n / 2] = 1.0;
  auto ref = oracle::blur1d(x, 1.0);
  for (int i = 0; i < n; ++i) EXPECT_NEAR(out[0][0][0][i].item<double>(), ref[i], 1e-6);
}

TEST(GaussianStack, RandomImageMatchesDense2DOracleIncludingWideKernels) {
  torch::manual_seed(4);
  auto img = torch::rand({1, 1, 7, 11}, torch::kFloat64);
  auto p = testing_support::plane_of(img[0][0]);
  for (double s : {0.5, 1.0, 4.0}) {  // 4.0 has radius 12 > both sides
    auto out = gaussian_blur(img, s);
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 11; ++x) EXPECT_NEAR(out[0][0][y][x].item<double>(), oracle::window_mean(p, y, x, s), 1e-12);
  }
}

TEST(GaussianStack, LevelsStayWithinInputRange) {
  torch::manual_seed(1);
  auto img = torch::rand({2, 3, 16, 16}, torch::kFloat64) * 2 - 1;
  const double lo = img.min().item<double>(), hi = img.max().item<double>();
  for (const auto& level : gaussian_stack(img, FoveationConfig::for_width(256))) {
    EXPECT_GE(level.min().item<double>(), lo - 1e-6);
    EXPECT_LE(level.max().item<double>(), hi + 1e-6);
  }
}

TEST(FoveatedStatistics, ConstantImageHasNoVariance) {
  auto img = torch::full({1, 3, 16, 16}, -0.2, torch::kFloat64);
  auto st = foveated_statistics(img, GazePoint::center(), FoveationConfig::for_width(16));
  EXPECT_LE((st.mean + 0.2).abs().max().item<double>(), 1e-12);
  EXPECT_NEAR(st.std.max().item<double>(), std::sqrt(kStdEpsilon), 1e-12);
}

TEST(FoveatedStatistics, BaseSigmaEverywhereSelectsLevelZero) {
  FoveationConfig cfg;
  cfg.alpha = 0;
  cfg.sigma_min = cfg.sigma_0 = 0.5;
  cfg.sigma_max = 0.5;
  torch::manual_seed(2);
  auto img = torch::rand({1, 3, 12, 12}, torch::kFloat64);
  auto st = foveated_statistics(img, GazePoint(0.1, 0.2), cfg);
  EXPECT_EQ((st.mean - gaussian_blur(img, 0.5)).abs().max().item<double>(), 0.0);
}

TEST(FoveatedStatistics, MatchesDenseOracle) {
  for (auto g : {GazePoint::center(), GazePoint(0.1, 0.9)}) {
    EXPECT_LE(checks::pooled_stats_oracle_error(7, 16, g, checks::small_config()), 5e-3);
    EXPECT_LE(checks::pooled_stats_oracle_error(8, 16, g, FoveationConfig::for_width(64)), 5e-3);
  }
}

TEST(FoveatedStatistics, StdIsNonNegative) {
  torch::manual_seed(3);
  auto img = torch::rand({2, 3, 16, 16}, torch::kFloat64);
  auto st = foveated_statistics(img, GazePoint(0.7, 0.2), checks::small_config());
  EXPECT_TRUE((st.std >= 0).all().item<bool>());
}

TEST(MetamericLoss, IdentityAndSymmetry) {
  auto [id, sym] = checks::identity_and_symmetry(10, 24);
  EXPECT_LE(id, 1e-10);
  EXPECT_LE(sym, 1e-10);
}

TEST(MetamericLoss, NonNegativeAndShapeChecked) {
  torch::manual_seed(5);
  auto a = torch::rand({3, 16, 16}), b = torch::rand({3, 16, 16});
  EXPECT_GE(metameric_loss(a, b, GazePoint::center(), FoveationConfig::for_width(16)).item<double>(), 0.0);
  EXPECT_THROW(metameric_loss(a, torch::rand({3, 16, 15}), GazePoint::center(), FoveationConfig::for_width(16)),
               DataError);
}

TEST(MetamericLoss, FovealDominance) {
  auto mid = checks::growing_config();
  mid.alpha = 16.0;
  mid.sigma_max = 8.0;
  mid.levels = 5;
  for (const auto& cfg : {checks::growing_config(), mid}) {
    auto r = checks::foveal_dominance(20, cfg, checks::dominance_gaze());
    EXPECT_TRUE(r.mean_monotone()) << r.mean_loss[0] << " " << r.mean_loss[1] << " " << r.mean_loss[2];
    EXPECT_EQ(r.monotone_images, r.images);
  }
}

TEST(MetamericLoss, FovealPatchCostsMoreThanPeripheralPatch) {
  // Default pooling at 64x64, centered gaze: a patch at fixation vs. one in the far corner.
  auto r = checks::foveal_dominance(20, FoveationConfig::for_width(64), GazePoint::center());
  for (const auto& l : r.losses) EXPECT_GT(l[0], l[2]);
}

TEST(MetamericLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto g = checks::gradient_check(seed);
    EXPECT_LE(g.max_relative, 1e-2);
    EXPECT_LE(g.norm_relative, 1e-2);
  }
}

TEST(MetamericLoss, DegeneratePoolingReducesToMse) {
  FoveationConfig cfg;
  cfg.alpha = 0;
  cfg.sigma_0 = cfg.sigma_min = cfg.sigma_max = 0.01;
  cfg.w_mean = 1.0;
  torch::manual_seed(6);
  auto a = torch::rand({2, 3, 16, 16}, torch::kFloat64), b = torch::rand({2, 3, 16, 16}, torch::kFloat64);
  const double mse = (a - b).square().mean().item<double>();
  const double loss = metameric_loss(a, b, GazePoint::center(), cfg).item<double>();
  EXPECT_NEAR(loss, mse, 0.05 * mse);
}
