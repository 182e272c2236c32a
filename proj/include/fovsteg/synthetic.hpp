#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "fovsteg/rng.hpp"

namespace fovsteg {

/// Procedural stand-in for photographic covers: a smooth two-color gradient,
/// 3-7 translucent ellipses/rectangles, a light blur and faint sinusoidal
/// texture. Returns an 8-bit BGR image.
cv::Mat synthesize_image(Rng& rng, int height, int width);

struct SynthOptions {
  std::size_t count = 100;
  std::uint64_t seed = 1;
  int min_size = 64;
  int max_size = 96;
};

/// Writes img_0000.png ... into `dir` (created if needed). Sizes are drawn
/// per image from [min_size, max_size]. Returns the written paths.
std::vector<std::filesystem::path> write_synthetic_folder(const std::filesystem::path& dir,
                                                          const SynthOptions& options);

}  // namespace fovsteg
