#include "fovsteg/foveation.hpp"

#include <algorithm>
#include <cmath>

#include "fovsteg/errors.hpp"

namespace fovsteg {

namespace F = torch::nn::functional;

FoveationConfig FoveationConfig::for_width(int width) {
  FoveationConfig cfg;
  cfg.alpha = 0.125 * width;
  cfg.sigma_max = std::max(cfg.sigma_min, width / 32.0);
  return cfg;
}

double FoveationConfig::level_sigma(int level) const { return sigma_0 * std::ldexp(1.0, level); }

void FoveationConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("invalid foveation config: " + m); };
  if (levels < 2) fail("levels must be >= 2");
  if (!(sigma_0 > 0.0)) fail("sigma_0 must be positive");
  if (!(sigma_min <= sigma_max)) fail("sigma_min must not exceed sigma_max");
  if (alpha < 0.0) fail("alpha must be non-negative");
  if (w_mean < 0.0 || w_std < 0.0) fail("statistic weights must be non-negative");
  // The stack has to span the pooling range, up to rounding.
  if (sigma_min < sigma_0 * (1.0 - 1e-9)) fail("sigma_min is below the base stack sigma");
  if (sigma_max > level_sigma(levels - 1) * (1.0 + 1e-9)) {
    fail("sigma_max exceeds the top stack level sigma " + std::to_string(level_sigma(levels - 1)));
  }
}

void to_json(nlohmann::json& j, const FoveationConfig& c) {
  j = nlohmann::json{{"alpha", c.alpha},         {"sigma_min", c.sigma_min},
                     {"sigma_max", c.sigma_max}, {"levels", c.levels},
                     {"sigma_0", c.sigma_0},     {"w_mean", c.w_mean},
                     {"w_std", c.w_std}};
}

void from_json(const nlohmann::json& j, FoveationConfig& c) {
  FoveationConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.sigma_min = j.value("sigma_min", d.sigma_min);
  c.sigma_max = j.value("sigma_max", d.sigma_max);
  c.levels = j.value("levels", d.levels);
  c.sigma_0 = j.value("sigma_0", d.sigma_0);
  c.w_mean = j.value("w_mean", d.w_mean);
  c.w_std = j.value("w_std", d.w_std);
}

torch::Tensor eccentricity_map(int height, int width, GazePoint gaze) {
  TORCH_CHECK(height >= 1 && width >= 1, "eccentricity_map needs a non-empty shape");
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const double gx = gaze.x * (width - 1);
  const double gy = gaze.y * (height - 1);
  const double diagonal = std::hypot(width - 1.0, height - 1.0);
  if (diagonal == 0.0) return torch::zeros({height, width}, opts);
  auto xs = torch::arange(width, opts) - gx;
  auto ys = torch::arange(height, opts) - gy;
  auto d2 = ys.square().unsqueeze(1) + xs.square().unsqueeze(0);
  return d2.sqrt() / diagonal;
}

torch::Tensor pooling_sigma_map(const torch::Tensor& eccentricity, const FoveationConfig& cfg) {
  return (eccentricity * cfg.alpha).clamp(cfg.sigma_min, cfg.sigma_max);
}

std::vector<double> gaussian_kernel(double sigma) {
  TORCH_CHECK(sigma > 0.0, "Gaussian sigma must be positive");
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    taps[i + radius] = v;
    sum += v;
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

std::vector<long> reflect_indices(long n, long radius) {
  std::vector<long> idx(n + 2 * radius);
  const long period = 2 * (n - 1);
  for (long i = -radius; i < n + radius; ++i) {
    long j = 0;
    if (n > 1) {
      j = ((i % period) + period) % period;
      if (j >= n) j = period - j;
    }
    idx[i + radius] = j;
  }
  return idx;
}

namespace {

// Pads dimension `dim` by `radius` on both sides with mirrored samples.
torch::Tensor reflect_pad(const torch::Tensor& x, long dim, long radius) {
  const long n = x.size(dim);
  if (radius < n) {
    // Fast path; the native reflect pad only works while radius < n.
    std::vector<long> pad = dim == 3 ? std::vector<long>{radius, radius, 0, 0}
                                     : std::vector<long>{0, 0, radius, radius};
    return F::pad(x, F::PadFuncOptions(pad).mode(torch::kReflect));
  }
  auto idx = torch::tensor(reflect_indices(n, radius), torch::kLong);
  return x.index_select(dim, idx);
}

}  // namespace

torch::Tensor gaussian_blur(const torch::Tensor& images, double sigma) {
  TORCH_CHECK(images.dim() == 4, "gaussian_blur expects (N,C,H,W)");
  const auto taps = gaussian_kernel(sigma);
  const long radius = static_cast<long>(taps.size() / 2);
  const long n = images.size(0), c = images.size(1), h = images.size(2), w = images.size(3);
  auto kernel = torch::tensor(taps, torch::kFloat64).to(images.dtype());

  auto x = images.reshape({n * c, 1, h, w});
  x = reflect_pad(x, 3, radius);
  x = F::conv2d(x, kernel.view({1, 1, 1, -1}));
  x = reflect_pad(x, 2, radius);
  x = F::conv2d(x, kernel.view({1, 1, -1, 1}));
  return x.reshape({n, c, h, w});
}

std::vector<torch::Tensor> gaussian_stack(const torch::Tensor& images, const FoveationConfig& cfg) {
  std::vector<torch::Tensor> stack;
  stack.reserve(cfg.levels);
  for (int l = 0; l < cfg.levels; ++l) stack.push_back(gaussian_blur(images, cfg.level_sigma(l)));
  return stack;
}

PooledStatistics foveated_statistics(const torch::Tensor& images, GazePoint gaze,
                                     const FoveationConfig& cfg) {
  auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
  TORCH_CHECK(x.dim() == 4, "foveated_statistics expects (N,C,H,W) or (C,H,W)");
  const long c = x.size(1), h = x.size(2), w = x.size(3);

  auto sigma = pooling_sigma_map(eccentricity_map(h, w, gaze), cfg);
  auto level = (sigma / cfg.sigma_0).log2().clamp(0.0, cfg.levels - 1.0);
  auto lo = level.floor();
  auto hi = (lo + 1.0).clamp_max(cfg.levels - 1.0);
  auto frac = level - lo;

  // Only levels that receive blend weight are computed.
  const int top = static_cast<int>(hi.max().item<double>());
  auto both = torch::cat({x, x.square()}, 1);
  torch::Tensor pooled;
  for (int l = 0; l <= top; ++l) {
    auto weight = (1.0 - frac) * (lo == l).to(torch::kFloat64) + frac * (hi == l).to(torch::kFloat64);
    // Level l is skipped entirely where both bracketing levels differ from it.
    if (weight.abs().max().item<double>() == 0.0) continue;
    auto term = gaussian_blur(both, cfg.level_sigma(l)) * weight.to(x.dtype());
    pooled = pooled.defined() ? pooled + term : term;
  }
  auto mean = pooled.narrow(1, 0, c);
  auto second = pooled.narrow(1, c, c);
  auto var = (second - mean.square()).clamp_min(kStdEpsilon);
  return {mean, var.sqrt()};
}

torch::Tensor metameric_loss_per_image(const torch::Tensor& reference, const torch::Tensor& test,
                                       GazePoint gaze, const FoveationConfig& cfg) {
  if (reference.sizes() != test.sizes()) {
    throw DataError("metameric loss needs equal shapes");
  }
  auto ref = reference.dim() == 3 ? reference.unsqueeze(0) : reference;
  auto tst = test.dim() == 3 ? test.unsqueeze(0) : test;
  auto a = foveated_statistics(ref, gaze, cfg);
  auto b = foveated_statistics(tst, gaze, cfg);
  auto dm = (a.mean - b.mean).square().mean({1, 2, 3});
  auto ds = (a.std - b.std).square().mean({1, 2, 3});
  return cfg.w_mean * dm + cfg.w_std * ds;
}

torch::Tensor metameric_loss(const torch::Tensor& reference, const torch::Tensor& test,
                             GazePoint gaze, const FoveationConfig& cfg) {
  return metameric_loss_per_image(reference, test, gaze, cfg).mean();
}

}  // namespace fovsteg
