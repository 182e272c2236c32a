#pragma once

#include <memory>
#include <string>

#include <torch/torch.h>

#include "fovsteg/backbone.hpp"
#include "fovsteg/domain.hpp"

namespace fovsteg {

/// Payload embedder F: bits -> latent-shaped tensor.
///
/// Bits enter as +/-1, pass through Linear(k, width), SiLU and
/// Linear(width, c_z*h*w), and are scaled by a learnable gain initialised
/// to 0.1.
class PayloadEmbedderImpl : public torch::nn::Module {
 public:
  PayloadEmbedderImpl(int k, int width, int latent_channels, int latent_h, int latent_w,
                      double gain = 0.1);

  /// bits: (N,k) with 0/1 values. Returns (N,c_z,h,w).
  torch::Tensor forward(const torch::Tensor& bits);
  /// First-layer pre-activations, (N,width).
  torch::Tensor pre_activation(const torch::Tensor& bits);

  torch::Tensor& gain() { return gain_; }
  int k() const { return k_; }

 private:
  int k_, channels_, h_, w_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
  torch::Tensor gain_;
};
TORCH_MODULE(PayloadEmbedder);

/// Merger M: Z_m = Z_i + conv_b(SiLU(conv_a(Z_i + Z_p))), conv_b zero-initialised.
class LatentMergerImpl : public torch::nn::Module {
 public:
  LatentMergerImpl(int latent_channels, int hidden);
  torch::Tensor forward(const torch::Tensor& image_latent, const torch::Tensor& payload_latent);

  torch::nn::Conv2d& conv_a() { return conv_a_; }
  torch::nn::Conv2d& conv_b() { return conv_b_; }

 private:
  torch::nn::Conv2d conv_a_{nullptr}, conv_b_{nullptr};
};
TORCH_MODULE(LatentMerger);

/// Two 3x3 convs with batch norm and an identity or 1x1 projection skip.
class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(int in, int out, int stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d a_{nullptr}, b_{nullptr};
  torch::nn::BatchNorm2d na_{nullptr}, nb_{nullptr};
  torch::nn::Sequential skip_{nullptr};
};
TORCH_MODULE(BasicBlock);

/// 1x1 -> 3x3 -> 1x1 bottleneck with expansion 4.
class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int in, int width, int stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr}, c3_{nullptr};
  torch::nn::BatchNorm2d n1_{nullptr}, n2_{nullptr}, n3_{nullptr};
  torch::nn::Sequential skip_{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Retriever R: image -> k logits.
///
/// "desk" is a reduced residual network (stem + four basic blocks; nine 3x3
/// convolutions and three 1x1 shortcuts) whose 8x-downsampled feature map is flattened into the
/// classifier. "resnet50" is the 50-layer bottleneck network with global
/// average pooling.
class RetrieverImpl : public torch::nn::Module {
 public:
  RetrieverImpl(const std::string& profile, int k, int resolution);
  torch::Tensor forward(const torch::Tensor& images);

  const std::string& profile() const { return profile_; }

 private:
  std::string profile_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Retriever);

enum class BridgeMode { Train, Eval };

/// 8-bit file-boundary surrogate on [-1,1] images. Train mode adds uniform
/// noise one quantization step wide with an identity gradient; eval mode
/// rounds to the nearest 8-bit level.
torch::Tensor quantization_bridge(const torch::Tensor& images, BridgeMode mode);

/// The trainable part (F, M, R) plus a non-owned-by-autograd frozen backbone.
/// Only F, M and R are registered, so parameters() never includes the codec.
class StegoNetImpl : public torch::nn::Module {
 public:
  StegoNetImpl(const ModelMetadata& meta, std::shared_ptr<Backbone> backbone);

  /// covers: (N,3,R,R) in [-1,1]; bits: (N,k). Returns stego images in [-1,1].
  torch::Tensor hide(const torch::Tensor& covers, const torch::Tensor& bits);
  torch::Tensor reveal_logits(const torch::Tensor& stego);
  /// Hard decisions at logit 0, (N,k) of 0/1.
  torch::Tensor reveal_bits(const torch::Tensor& stego);

  const ModelMetadata& metadata() const { return meta_; }
  Backbone& backbone() { return *backbone_; }
  std::shared_ptr<Backbone> backbone_ptr() { return backbone_; }

  PayloadEmbedder& embedder() { return embedder_; }
  LatentMerger& merger() { return merger_; }
  Retriever& retriever() { return retriever_; }

 private:
  void check_resolution(const torch::Tensor& images) const;

  ModelMetadata meta_;
  std::shared_ptr<Backbone> backbone_;
  PayloadEmbedder embedder_{nullptr};
  LatentMerger merger_{nullptr};
  Retriever retriever_{nullptr};
};
TORCH_MODULE(StegoNet);

/// Single-image hide: cover (3,R,R) in [-1,1] -> stego (3,R,R) in [-1,1].
torch::Tensor hide_image(StegoNet& net, const torch::Tensor& cover, const Payload& payload);
/// Single-image reveal.
Payload reveal_image(StegoNet& net, const torch::Tensor& stego);

}  // namespace fovsteg
