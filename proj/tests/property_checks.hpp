#pragma once

// Property checks shared by the unit tests and the acceptance binary.

#include <cmath>
#include <vector>

#include <torch/torch.h>

#include "fovsteg/domain.hpp"
#include "fovsteg/foveation.hpp"
#include "fovsteg/image_io.hpp"
#include "fovsteg/rng.hpp"
#include "fovsteg/synthetic.hpp"
#include "oracles.hpp"

namespace checks {

inline torch::Tensor synthetic_cover(std::uint64_t seed, int size) {
  fovsteg::Rng rng(seed);
  auto img = fovsteg::mat_to_tensor(fovsteg::synthesize_image(rng, size, size));
  return fovsteg::normalize(img).to(torch::kFloat64).unsqueeze(0);
}

struct DominanceResult {
  int images = 0;
  int monotone_images = 0;
  std::vector<double> mean_loss;  // per eccentricity
  std::vector<std::vector<double>> losses;  // per image, per eccentricity
  bool mean_monotone() const {
    for (std::size_t i = 1; i < mean_loss.size(); ++i)
      if (mean_loss[i] > mean_loss[i - 1]) return false;
    return true;
  }
};

/// Pooling that keeps growing over the whole tested eccentricity range
/// (alpha 32, sigma in [0.5, 16], six levels).
inline fovsteg::FoveationConfig growing_config() {
  fovsteg::FoveationConfig cfg;
  cfg.alpha = 32.0;
  cfg.sigma_min = 0.5;
  cfg.sigma_max = 16.0;
  cfg.levels = 6;
  return cfg;
}

/// Gaze for the dominance check: far enough from the corner that patches at
/// eccentricity 0, 0.25 and 0.45 along the diagonal all sit clear of the border.
inline fovsteg::GazePoint dominance_gaze() { return {0.15, 0.15}; }

/// Adds one fixed noise patch to a cover at eccentricities {0, 0.25, 0.45}
/// along the image diagonal from `gaze` and records the loss at each.
inline DominanceResult foveal_dominance(int images, const fovsteg::FoveationConfig& cfg, fovsteg::GazePoint gaze,
                                        int size = 64, int patch = 7, double amplitude = 0.1) {
  const std::vector<double> ecc{0.0, 0.25, 0.45};
  const double diag = std::sqrt(2.0) * (size - 1);
  DominanceResult r;
  r.images = images;
  r.mean_loss.assign(ecc.size(), 0.0);
  torch::NoGradGuard guard;
  for (int i = 0; i < images; ++i) {
    auto cover = synthetic_cover(1000 + i, size);
    torch::manual_seed(2000 + i);
    auto noise = torch::randn({1, 3, patch, patch}, torch::kFloat64) * amplitude;
    std::vector<double> losses;
    for (double e : ecc) {
      const double step = e * diag / std::sqrt(2.0);
      const long cx = std::lround(gaze.x * (size - 1) + step);
      const long cy = std::lround(gaze.y * (size - 1) + step);
      const long sx = std::clamp<long>(cx - patch / 2, 0, size - patch);
      const long sy = std::clamp<long>(cy - patch / 2, 0, size - patch);
      auto test = cover.clone();
      test.narrow(2, sy, patch).narrow(3, sx, patch).add_(noise);
      losses.push_back(fovsteg::metameric_loss(cover, test, gaze, cfg).item<double>());
    }
    bool mono = true;
    for (std::size_t j = 0; j < losses.size(); ++j) {
      r.mean_loss[j] += losses[j] / images;
      if (j > 0 && losses[j] > losses[j - 1]) mono = false;
    }
    r.monotone_images += mono;
    r.losses.push_back(losses);
  }
  return r;
}

inline fovsteg::FoveationConfig small_config() {
  fovsteg::FoveationConfig cfg;
  cfg.alpha = 8.0;
  cfg.sigma_min = 0.5;
  cfg.sigma_max = 2.0;
  cfg.levels = 3;
  cfg.sigma_0 = 0.5;
  return cfg;
}

struct GradientResult {
  double max_relative = 0.0;  // max |a - n| / max(|a|, |n|) over entries above the noise floor
  double norm_relative = 0.0;
};

/// Analytic gradient of the loss w.r.t. the test image vs central differences.
inline GradientResult gradient_check(std::uint64_t seed, double step = 1e-3) {
  torch::manual_seed(seed);
  auto ref = torch::rand({1, 3, 8, 8}, torch::kFloat64) * 2 - 1;
  auto test = (torch::rand({1, 3, 8, 8}, torch::kFloat64) * 2 - 1).requires_grad_(true);
  const auto cfg = small_config();
  const fovsteg::GazePoint gaze(0.3, 0.6);
  auto loss = fovsteg::metameric_loss(ref, test, gaze, cfg);
  auto analytic = torch::autograd::grad({loss}, {test})[0].detach();

  auto numeric = torch::zeros_like(analytic);
  torch::NoGradGuard guard;
  auto base = test.detach().clone();
  auto flat = base.view({-1});
  auto nflat = numeric.view({-1});
  for (long i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + step;
    const double up = fovsteg::metameric_loss(ref, base, gaze, cfg).item<double>();
    flat[i] = orig - step;
    const double down = fovsteg::metameric_loss(ref, base, gaze, cfg).item<double>();
    flat[i] = orig;
    nflat[i] = (up - down) / (2 * step);
  }
  GradientResult r;
  const double floor = 1e-3 * numeric.abs().max().item<double>();
  auto denom = torch::maximum(analytic.abs(), numeric.abs());
  auto mask = denom > floor;
  r.max_relative = ((analytic - numeric).abs() / denom).masked_select(mask).max().item<double>();
  r.norm_relative = ((analytic - numeric).norm() / numeric.norm()).item<double>();
  return r;
}

/// Largest deviation between the library's pooled statistics and the dense
/// per-pixel oracle on a random (3,size,size) image.
inline double pooled_stats_oracle_error(std::uint64_t seed, int size, fovsteg::GazePoint gaze,
                                        const fovsteg::FoveationConfig& cfg) {
  torch::manual_seed(seed);
  auto img = torch::rand({1, 3, size, size}, torch::kFloat64) * 2 - 1;
  auto stats = fovsteg::foveated_statistics(img, gaze, cfg);
  const oracle::FovParams fp{cfg.alpha, cfg.sigma_min, cfg.sigma_max, cfg.sigma_0, cfg.levels};
  double worst = 0.0;
  for (int c = 0; c < 3; ++c) {
    oracle::Plane p(size, size), mean, sd;
    auto ch = img[0][c].contiguous();
    std::copy(ch.data_ptr<double>(), ch.data_ptr<double>() + ch.numel(), p.v.begin());
    oracle::pooled_stats(p, gaze.x, gaze.y, fp, mean, sd);
    auto lm = stats.mean[0][c].contiguous();
    auto ls = stats.std[0][c].contiguous();
    for (int i = 0; i < size * size; ++i) {
      worst = std::max(worst, std::abs(lm.data_ptr<double>()[i] - mean.v[i]));
      worst = std::max(worst, std::abs(ls.data_ptr<double>()[i] - sd.v[i]));
    }
  }
  return worst;
}

/// Max |loss(A,A)| and max |loss(A,B) - loss(B,A)| over random pairs.
inline std::pair<double, double> identity_and_symmetry(int trials, int size) {
  double id = 0.0, sym = 0.0;
  const auto cfg = fovsteg::FoveationConfig::for_width(size);
  torch::NoGradGuard guard;
  for (int t = 0; t < trials; ++t) {
    torch::manual_seed(300 + t);
    auto a = torch::rand({2, 3, size, size}, torch::kFloat64) * 2 - 1;
    auto b = torch::rand({2, 3, size, size}, torch::kFloat64) * 2 - 1;
    fovsteg::GazePoint g(t / double(trials), 1.0 - t / double(trials));
    id = std::max(id, std::abs(fovsteg::metameric_loss(a, a, g, cfg).item<double>()));
    sym = std::max(sym, std::abs(fovsteg::metameric_loss(a, b, g, cfg).item<double>() -
                                 fovsteg::metameric_loss(b, a, g, cfg).item<double>()));
  }
  return {id, sym};
}

}  // namespace checks
