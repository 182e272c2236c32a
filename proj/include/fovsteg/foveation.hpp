#pragma once

#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "fovsteg/domain.hpp"

namespace fovsteg {

/// Parameters of the foveated pooling loss.
///
/// The pooling sigma at a pixel grows linearly with its eccentricity,
/// s = clamp(alpha * e, sigma_min, sigma_max), and is realised by blending
/// adjacent levels of a full-resolution Gaussian blur stack whose level l
/// has sigma sigma_0 * 2^l. All lengths are in pixels.
struct FoveationConfig {
  double alpha = 32.0;
  double sigma_min = 0.5;
  double sigma_max = 8.0;
  int levels = 5;
  double sigma_0 = 0.5;
  double w_mean = 1.0;
  double w_std = 0.5;

  /// Defaults scaled to an image width: alpha = width/8, sigma_max = width/32.
  static FoveationConfig for_width(int width);

  /// Throws UsageError when the invariants do not hold.
  void validate() const;

  double level_sigma(int level) const;
};

void to_json(nlohmann::json& j, const FoveationConfig& c);
void from_json(const nlohmann::json& j, FoveationConfig& c);

/// Variance floor under the pooled standard deviation.
inline constexpr double kStdEpsilon = 1e-6;

/// Distance of every pixel to the gaze point as a fraction of the image
/// diagonal; pixel (x, y) sits at normalized position (x/(w-1), y/(h-1)).
/// Returns a (h,w) float64 tensor.
torch::Tensor eccentricity_map(int height, int width, GazePoint gaze);

/// clamp(alpha * e, sigma_min, sigma_max), elementwise.
torch::Tensor pooling_sigma_map(const torch::Tensor& eccentricity, const FoveationConfig& cfg);

/// Normalized 1D Gaussian taps for radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Indices into [0, n) for a window extended by `radius` on both sides,
/// mirrored about the edge samples (edge not repeated).
std::vector<long> reflect_indices(long n, long radius);

/// Separable Gaussian blur over the last two dims of an (N,C,H,W) tensor with
/// reflected borders. Differentiable.
torch::Tensor gaussian_blur(const torch::Tensor& images, double sigma);

/// Full-resolution blur stack; element l is blurred with cfg.level_sigma(l).
std::vector<torch::Tensor> gaussian_stack(const torch::Tensor& images, const FoveationConfig& cfg);

struct PooledStatistics {
  torch::Tensor mean;  // (N,C,H,W)
  torch::Tensor std;   // (N,C,H,W)
};

/// Eccentricity-dependent local mean and standard deviation.
PooledStatistics foveated_statistics(const torch::Tensor& images, GazePoint gaze,
                                     const FoveationConfig& cfg);

/// Per-image loss, shape (N,). Inputs are (N,C,H,W) or (C,H,W).
torch::Tensor metameric_loss_per_image(const torch::Tensor& reference, const torch::Tensor& test,
                                       GazePoint gaze, const FoveationConfig& cfg);

/// Scalar loss averaged over the batch.
torch::Tensor metameric_loss(const torch::Tensor& reference, const torch::Tensor& test,
                             GazePoint gaze, const FoveationConfig& cfg);

}  // namespace fovsteg
