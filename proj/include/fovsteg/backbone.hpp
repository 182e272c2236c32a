#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/script.h>
#include <torch/torch.h>

#include "fovsteg/data.hpp"

namespace fovsteg {

enum class BackboneVariant { Desk, External };

struct BackboneSpec {
  int downsample = 4;
  int latent_channels = 4;
  BackboneVariant variant = BackboneVariant::Desk;
  std::optional<std::filesystem::path> weights;
  bool frozen = false;
  // Desk architecture widths and attention switch.
  int base_channels = 16;
  int mid_channels = 48;
  bool attention = true;
};

void to_json(nlohmann::json& j, const BackboneSpec& s);
void from_json(const nlohmann::json& j, BackboneSpec& s);

/// Frozen image codec E/G. Images are (N,3,H,W) in [-1,1]; latents are
/// (N,c_z,H/f,W/f).
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual torch::Tensor encode(const torch::Tensor& images) = 0;
  /// Output is clamped to [-1,1]; gradients flow to the latent argument.
  virtual torch::Tensor decode(const torch::Tensor& latents) = 0;

  virtual const BackboneSpec& spec() const = 0;
  virtual std::string identifier() const = 0;
  virtual std::vector<torch::Tensor> parameters() = 0;

  /// Disables gradients for every parameter and switches to eval mode.
  virtual void freeze() = 0;

  /// SHA-256 over all parameter and buffer bytes in registration order.
  std::string content_hash();

 protected:
  void check_image(const torch::Tensor& images) const;
  void check_latent(const torch::Tensor& latents) const;
};

/// Hex SHA-256 of a sequence of tensors' raw float bytes.
std::string hash_tensors(const std::vector<torch::Tensor>& tensors);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d a_{nullptr}, b_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Single-head spatial self-attention with a residual connection.
class SelfAttentionImpl : public torch::nn::Module {
 public:
  explicit SelfAttentionImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Conv2d qkv_{nullptr}, out_{nullptr};
};
TORCH_MODULE(SelfAttention);

/// Continuous convolutional autoencoder with two stride-2 stages (f = 4).
class DeskAutoencoderImpl : public torch::nn::Module {
 public:
  explicit DeskAutoencoderImpl(const BackboneSpec& spec);
  torch::Tensor encode(const torch::Tensor& x);
  torch::Tensor decode(const torch::Tensor& z);

 private:
  torch::nn::Sequential encoder_{nullptr}, decoder_{nullptr};
};
TORCH_MODULE(DeskAutoencoder);

class DeskBackbone final : public Backbone {
 public:
  explicit DeskBackbone(BackboneSpec spec);

  torch::Tensor encode(const torch::Tensor& images) override;
  torch::Tensor decode(const torch::Tensor& latents) override;
  const BackboneSpec& spec() const override { return spec_; }
  std::string identifier() const override;
  std::vector<torch::Tensor> parameters() override;
  void freeze() override;

  DeskAutoencoder& module() { return net_; }

  void save(const std::filesystem::path& path);
  void save(torch::serialize::OutputArchive& archive);
  void load(torch::serialize::InputArchive& archive);

  /// Loads weights written by save(path); the spec must match the file.
  static std::shared_ptr<DeskBackbone> load_file(const std::filesystem::path& path);

 private:
  BackboneSpec spec_;
  DeskAutoencoder net_;
};

/// Adapter over an externally pretrained codec exported as TorchScript with
/// `encode(x)` and `decode(z)` methods (for example an LDM VQ-f4 model).
class ExternalBackbone final : public Backbone {
 public:
  ExternalBackbone(torch::jit::script::Module module, BackboneSpec spec);

  torch::Tensor encode(const torch::Tensor& images) override;
  torch::Tensor decode(const torch::Tensor& latents) override;
  const BackboneSpec& spec() const override { return spec_; }
  std::string identifier() const override;
  std::vector<torch::Tensor> parameters() override;
  void freeze() override;

 private:
  torch::jit::script::Module module_;
  BackboneSpec spec_;
};

/// Loads and shape-checks an external codec by probing it with a
/// `probe_resolution` square image.
std::shared_ptr<ExternalBackbone> load_external_backbone(const std::filesystem::path& weights,
                                                         BackboneSpec spec,
                                                         int probe_resolution = 64);

struct PretrainConfig {
  int epochs = 50;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double min_learning_rate = 1e-5;
  double target_psnr = 30.0;
  /// Training stops once held-out PSNR reaches this value.
  double stop_psnr = 30.0;
  std::uint64_t seed = 0;
  bool augment = true;
  bool verbose = false;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

struct PretrainResult {
  std::shared_ptr<DeskBackbone> backbone;
  double heldout_psnr = 0.0;
  int epochs_run = 0;
  bool reached_target = false;
};

/// Trains the desk autoencoder on the manifest's train split with plain
/// reconstruction MSE, evaluates held-out PSNR on the validation split after
/// every epoch, keeps the best weights, saves them to `weights_out` and
/// returns the frozen backbone.
PretrainResult pretrain_desk_backbone(const DatasetManifest& manifest, const BackboneSpec& spec,
                                      const PretrainConfig& cfg,
                                      const std::filesystem::path& weights_out);

/// Mean held-out reconstruction PSNR (dB, [0,1] range) over a split.
double reconstruction_psnr(Backbone& backbone, const DatasetManifest& manifest, Split split);

}  // namespace fovsteg
