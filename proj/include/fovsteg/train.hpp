#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "fovsteg/backbone.hpp"
#include "fovsteg/data.hpp"
#include "fovsteg/foveation.hpp"
#include "fovsteg/stegonet.hpp"

namespace fovsteg {

enum class ImageLoss { Metameric, Mse };

std::string to_string(ImageLoss l);
ImageLoss image_loss_from_string(std::string_view s);

struct TrainConfig {
  int k = 100;
  int resolution = 256;
  double lambda_i = 1.5;
  /// Epoch at which lambda_i starts ramping up from 0; -1 means 10% of epochs.
  int warmup_start_epoch = -1;
  /// Ramp length in epochs; -1 means 10% of epochs.
  int warmup_ramp_epochs = -1;
  int batch_size = 8;
  double learning_rate = 2e-4;
  int epochs = 100;
  GazePolicy gaze_policy = GazePolicy::FixedCenter;
  bool quantization_bridge = true;
  std::uint64_t seed = 0;
  ImageLoss image_loss = ImageLoss::Metameric;
  int embedder_width = 512;
  int merger_hidden = 32;
  std::string retriever = "desk";
  std::optional<FoveationConfig> foveation;
  std::uint64_t val_payload_seed = 7;
  bool verbose = false;

  void validate() const;
  FoveationConfig foveation_or_default() const;
  int resolved_warmup_start() const;
  int resolved_warmup_ramp() const;
  /// Image-loss weight in effect during `epoch`.
  double lambda_at(int epoch) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Everything the `train` command needs, one section per stage.
struct ExperimentConfig {
  SplitSizes data{2000, 400, 400};
  BackboneSpec backbone;
  PretrainConfig pretrain;
  TrainConfig train;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct LossTerms {
  torch::Tensor total;
  torch::Tensor bce;
  torch::Tensor image;
};

/// BCE(sigmoid(logits), bits) averaged over bits and batch, plus `lambda`
/// times the configured image loss between cover and stego.
LossTerms total_loss(const torch::Tensor& bits, const torch::Tensor& logits, const torch::Tensor& cover,
                     const torch::Tensor& stego, GazePoint gaze, const TrainConfig& cfg, double lambda);

/// Throws RuntimeFailure with a diagnostic if any term is NaN or infinite.
void check_finite(const LossTerms& terms, int epoch, long step);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double bce = 0.0;
  double metameric = 0.0;  // mean image-loss term
  double val_bit_acc = 0.0;
  double val_psnr = 0.0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

struct ValidationResult {
  double bit_acc = 0.0;
  double psnr = 0.0;
};

/// Validation-split bit accuracy and mean PSNR after 8-bit quantization,
/// using payloads drawn from cfg.val_payload_seed.
ValidationResult validate_model(StegoNet& net, const DatasetManifest& manifest, const TrainConfig& cfg);

struct TrainResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::vector<EpochRecord> history;
  EpochRecord best;
  /// Validation metrics of the final model, recomputed after the last epoch.
  ValidationResult final_validation;
  StegoNet model{nullptr};
  /// Parameters the optimizer updated.
  std::vector<torch::Tensor> optimized_parameters;
};

/// Counts tensors present (by storage identity) in both lists.
std::size_t shared_parameter_count(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b);

/// Trains F, M and R against a frozen backbone. Writes best.ckpt, last.ckpt
/// and metrics.csv under `out_dir`. With `resume`, continues from that
/// checkpoint's epoch count up to cfg.epochs.
TrainResult train_model(const TrainConfig& cfg, const DatasetManifest& manifest,
                        std::shared_ptr<Backbone> backbone, const std::filesystem::path& out_dir,
                        const std::optional<std::filesystem::path>& resume = std::nullopt);

/// CSV with columns epoch,train_loss,bce,metameric,val_bit_acc,val_psnr.
std::string metrics_csv(const std::vector<EpochRecord>& history);

}  // namespace fovsteg
