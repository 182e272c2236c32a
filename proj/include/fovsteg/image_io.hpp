#pragma once

#include <filesystem>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace fovsteg {

/// Reads an 8-bit image file as an RGB float tensor (3,H,W) in [0,1].
/// Throws DataError when the file cannot be decoded.
torch::Tensor read_image(const std::filesystem::path& path);

/// Writes a (3,H,W) [0,1] tensor as lossless 8-bit RGB PNG via temp-then-rename.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// 8-bit BGR/BGRA/gray Mat -> RGB float tensor (3,H,W) in [0,1].
torch::Tensor mat_to_tensor(const cv::Mat& mat);
/// (3,H,W) [0,1] tensor -> 8-bit BGR Mat, rounding to nearest.
cv::Mat tensor_to_mat(const torch::Tensor& image);

/// Writes `bytes` to `path` atomically (temp file in the same directory, then rename).
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

/// Temp path next to `path` used by the atomic writers.
std::filesystem::path temp_sibling(const std::filesystem::path& path);

}  // namespace fovsteg
