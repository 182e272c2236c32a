#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "fovsteg/data.hpp"
#include "fovsteg/domain.hpp"
#include "fovsteg/foveation.hpp"
#include "fovsteg/stegonet.hpp"

namespace fovsteg {

std::size_t bit_errors(const Payload& expected, const Payload& actual);
/// Fraction of matching positions.
double bit_accuracy(const Payload& expected, const Payload& actual);

/// Per-image mean squared error over (N,C,H,W), computed in float64.
torch::Tensor mse_per_image(const torch::Tensor& a, const torch::Tensor& b);
double mse(const torch::Tensor& a, const torch::Tensor& b);

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(peak^2 / mse); +infinity when mse == 0.
double psnr_from_mse(double mse, double peak = 1.0);
double psnr(const torch::Tensor& a, const torch::Tensor& b, double peak = 1.0);
/// Report value: PSNR with +infinity replaced by kPsnrCap.
double capped_psnr(double db);

/// Mean SSIM per image: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, valid-region map averaged over pixels and channels.
torch::Tensor ssim_per_image(const torch::Tensor& a, const torch::Tensor& b, double data_range = 1.0);
double ssim(const torch::Tensor& a, const torch::Tensor& b, double data_range = 1.0);

/// Pluggable learned perceptual distance (e.g. LPIPS). Inputs are (3,H,W)
/// images in [0,1].
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual std::string name() const = 0;
  virtual double distance(const torch::Tensor& a, const torch::Tensor& b) = 0;
};

inline constexpr int kReportSchemaVersion = 1;

struct ImageRecord {
  std::string cover_id;
  std::size_t bits = 0;
  std::size_t bit_errors = 0;
  double bit_acc = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double metameric = 0.0;
  std::optional<double> lpips;
};

struct ReportAggregate {
  std::size_t images = 0;
  std::size_t total_bits = 0;
  std::size_t total_bit_errors = 0;
  double bit_accuracy = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double metameric = 0.0;
  std::optional<double> lpips;
};

struct MetricsReport {
  int schema_version = kReportSchemaVersion;
  std::string split;
  int payloads_per_image = 1;
  std::uint64_t payload_seed = 0;
  std::vector<ImageRecord> images;
  ReportAggregate aggregate;

  /// Recomputes `aggregate` from `images`.
  void finalize();

  nlohmann::json to_json() const;
  std::string to_csv() const;
  /// Writes report.json and report.csv into `dir` (created if needed).
  void write(const std::filesystem::path& dir) const;
};

struct EvalOptions {
  Split split = Split::Test;
  int payloads_per_image = 1;
  std::uint64_t payload_seed = 0;
  GazePoint gaze;
  std::optional<FoveationConfig> foveation;  // defaults to for_width(resolution)
  PerceptualMetric* perceptual = nullptr;
  /// Skip the 8-bit rounding between hide and reveal.
  bool in_memory = false;
};

/// hide -> 8-bit quantization -> reveal over every cover in a split, with
/// all Table-style metrics on [0,1] images.
MetricsReport evaluate(StegoNet& net, const DatasetManifest& manifest, const EvalOptions& options);

}  // namespace fovsteg
