#include "fovsteg/stegonet.hpp"

#include <cmath>

#include "fovsteg/errors.hpp"

namespace fovsteg {

namespace F = torch::nn::functional;

PayloadEmbedderImpl::PayloadEmbedderImpl(int k, int width, int latent_channels, int latent_h,
                                         int latent_w, double gain)
    : k_(k), channels_(latent_channels), h_(latent_h), w_(latent_w) {
  fc1_ = register_module("fc1", torch::nn::Linear(k, width));
  fc2_ = register_module("fc2", torch::nn::Linear(width, latent_channels * latent_h * latent_w));
  gain_ = register_parameter("gain", torch::full({1}, gain));
  // Roughly unit-variance output before the gain.
  torch::NoGradGuard guard;
  torch::nn::init::normal_(fc1_->weight, 0.0, std::sqrt(1.0 / k));
  torch::nn::init::zeros_(fc1_->bias);
  torch::nn::init::normal_(fc2_->weight, 0.0, std::sqrt(3.0 / width));
  torch::nn::init::zeros_(fc2_->bias);
}

torch::Tensor PayloadEmbedderImpl::pre_activation(const torch::Tensor& bits) {
  if (bits.dim() != 2 || bits.size(1) != k_) {
    throw UsageError("payload length mismatch: model expects " + std::to_string(k_) + " bits, got " +
                     (bits.dim() == 2 ? std::to_string(bits.size(1)) : c10::str(bits.sizes())));
  }
  return fc1_(bits * 2.0 - 1.0);
}

torch::Tensor PayloadEmbedderImpl::forward(const torch::Tensor& bits) {
  auto h = F::silu(pre_activation(bits));
  return gain_ * fc2_(h).view({bits.size(0), channels_, h_, w_});
}

LatentMergerImpl::LatentMergerImpl(int latent_channels, int hidden) {
  conv_a_ = register_module(
      "conv_a", torch::nn::Conv2d(torch::nn::Conv2dOptions(latent_channels, hidden, 3).padding(1)));
  conv_b_ = register_module(
      "conv_b", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, latent_channels, 3).padding(1)));
  torch::NoGradGuard guard;
  torch::nn::init::zeros_(conv_b_->weight);
  torch::nn::init::zeros_(conv_b_->bias);
}

torch::Tensor LatentMergerImpl::forward(const torch::Tensor& image_latent,
                                        const torch::Tensor& payload_latent) {
  if (image_latent.sizes() != payload_latent.sizes()) {
    throw DataError("merger needs equal latent shapes, got " + c10::str(image_latent.sizes()) + " and " +
                    c10::str(payload_latent.sizes()));
  }
  auto sum = image_latent + payload_latent;
  return image_latent + conv_b_(F::silu(conv_a_(sum)));
}

namespace {

torch::nn::Conv2d conv_nb(int in, int out, int kernel, int stride) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false));
}

torch::nn::Sequential projection(int in, int out, int stride) {
  if (in == out && stride == 1) return nullptr;
  return torch::nn::Sequential(conv_nb(in, out, 1, stride), torch::nn::BatchNorm2d(out));
}

}  // namespace

BasicBlockImpl::BasicBlockImpl(int in, int out, int stride) {
  a_ = register_module("a", conv_nb(in, out, 3, stride));
  na_ = register_module("na", torch::nn::BatchNorm2d(out));
  b_ = register_module("b", conv_nb(out, out, 3, 1));
  nb_ = register_module("nb", torch::nn::BatchNorm2d(out));
  auto skip = projection(in, out, stride);
  if (skip) skip_ = register_module("skip", skip);
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
  auto y = nb_(b_(torch::relu(na_(a_(x)))));
  return torch::relu(y + (skip_ ? skip_->forward(x) : x));
}

BottleneckImpl::BottleneckImpl(int in, int width, int stride) {
  const int out = width * 4;
  c1_ = register_module("c1", conv_nb(in, width, 1, 1));
  n1_ = register_module("n1", torch::nn::BatchNorm2d(width));
  c2_ = register_module("c2", conv_nb(width, width, 3, stride));
  n2_ = register_module("n2", torch::nn::BatchNorm2d(width));
  c3_ = register_module("c3", conv_nb(width, out, 1, 1));
  n3_ = register_module("n3", torch::nn::BatchNorm2d(out));
  auto skip = projection(in, out, stride);
  if (skip) skip_ = register_module("skip", skip);
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(n1_(c1_(x)));
  y = torch::relu(n2_(c2_(y)));
  y = n3_(c3_(y));
  return torch::relu(y + (skip_ ? skip_->forward(x) : x));
}

RetrieverImpl::RetrieverImpl(const std::string& profile, int k, int resolution) : profile_(profile) {
  torch::nn::Sequential net;
  long features = 0;
  if (profile == "desk") {
    if (resolution % 8 != 0) throw UsageError("desk retriever needs a resolution divisible by 8");
    net->push_back(conv_nb(3, 32, 3, 1));
    net->push_back(torch::nn::BatchNorm2d(32));
    net->push_back(torch::nn::ReLU());
    net->push_back(BasicBlock(32, 32, 2));
    net->push_back(BasicBlock(32, 64, 2));
    net->push_back(BasicBlock(64, 64, 2));
    net->push_back(BasicBlock(64, 64, 1));
    net->push_back(torch::nn::Flatten());
    features = 64L * (resolution / 8) * (resolution / 8);
  } else if (profile == "resnet50") {
    net->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
    net->push_back(torch::nn::BatchNorm2d(64));
    net->push_back(torch::nn::ReLU());
    net->push_back(torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(3).stride(2).padding(1)));
    int in = 64;
    const int blocks[] = {3, 4, 6, 3};
    const int widths[] = {64, 128, 256, 512};
    for (int stage = 0; stage < 4; ++stage) {
      for (int b = 0; b < blocks[stage]; ++b) {
        const int stride = (b == 0 && stage > 0) ? 2 : 1;
        net->push_back(Bottleneck(in, widths[stage], stride));
        in = widths[stage] * 4;
      }
    }
    net->push_back(torch::nn::AdaptiveAvgPool2d(torch::nn::AdaptiveAvgPool2dOptions(1)));
    net->push_back(torch::nn::Flatten());
    features = in;
  } else {
    throw UsageError("unknown retriever profile '" + profile + "' (expected desk|resnet50)");
  }
  features_ = register_module("features", net);
  head_ = register_module("head", torch::nn::Linear(features, k));
}

torch::Tensor RetrieverImpl::forward(const torch::Tensor& images) {
  return head_(features_->forward(images));
}

torch::Tensor quantization_bridge(const torch::Tensor& images, BridgeMode mode) {
  constexpr double step = 2.0 / 255.0;  // one 8-bit level in [-1,1] units
  if (mode == BridgeMode::Train) {
    auto noise = (torch::rand_like(images) - 0.5) * step;
    return images + noise.detach();
  }
  auto unit = ((images.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0).round() / 255.0;
  return unit * 2.0 - 1.0;
}

StegoNetImpl::StegoNetImpl(const ModelMetadata& meta, std::shared_ptr<Backbone> backbone)
    : meta_(meta), backbone_(std::move(backbone)) {
  if (!backbone_) throw UsageError("a backbone is required");
  const auto& bs = backbone_->spec();
  if (bs.latent_channels != meta_.latent_channels || bs.downsample != meta_.downsample) {
    throw ModelMismatchError("backbone latent layout (f=" + std::to_string(bs.downsample) +
                             ", c_z=" + std::to_string(bs.latent_channels) +
                             ") does not match model metadata (f=" + std::to_string(meta_.downsample) +
                             ", c_z=" + std::to_string(meta_.latent_channels) + ")");
  }
  if (meta_.k <= 0) throw UsageError("payload length k must be positive");
  if (meta_.resolution % meta_.downsample != 0) {
    throw UsageError("resolution must be a multiple of the downsample factor");
  }
  const int lat = meta_.resolution / meta_.downsample;
  embedder_ = register_module(
      "embedder", PayloadEmbedder(meta_.k, meta_.embedder_width, meta_.latent_channels, lat, lat));
  merger_ = register_module("merger", LatentMerger(meta_.latent_channels, meta_.merger_hidden));
  retriever_ =
      register_module("retriever", Retriever(meta_.retriever_profile, meta_.k, meta_.resolution));
}

void StegoNetImpl::check_resolution(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3) throw DataError("expected (N,3,H,W) images");
  if (images.size(2) != meta_.resolution || images.size(3) != meta_.resolution) {
    throw ModelMismatchError("image is " + std::to_string(images.size(3)) + "x" +
                             std::to_string(images.size(2)) + " but the model was trained at " +
                             std::to_string(meta_.resolution) + "x" + std::to_string(meta_.resolution));
  }
}

torch::Tensor StegoNetImpl::hide(const torch::Tensor& covers, const torch::Tensor& bits) {
  check_resolution(covers);
  if (bits.dim() != 2 || bits.size(1) != meta_.k) {
    throw ModelMismatchError("model expects " + std::to_string(meta_.k) + "-bit payloads, got shape " +
                             c10::str(bits.sizes()));
  }
  if (bits.size(0) != covers.size(0)) throw DataError("covers and payloads differ in batch size");
  torch::Tensor image_latent;
  {
    torch::NoGradGuard guard;
    image_latent = backbone_->encode(covers);
  }
  auto payload_latent = embedder_(bits);
  return backbone_->decode(merger_(image_latent, payload_latent));
}

torch::Tensor StegoNetImpl::reveal_logits(const torch::Tensor& stego) {
  check_resolution(stego);
  return retriever_(stego);
}

torch::Tensor StegoNetImpl::reveal_bits(const torch::Tensor& stego) {
  return (reveal_logits(stego) > 0).to(torch::kFloat32);
}

torch::Tensor hide_image(StegoNet& net, const torch::Tensor& cover, const Payload& payload) {
  if (payload.size() != static_cast<std::size_t>(net->metadata().k)) {
    throw ModelMismatchError("model expects " + std::to_string(net->metadata().k) + "-bit payloads, got " +
                             std::to_string(payload.size()));
  }
  torch::NoGradGuard guard;
  return net->hide(cover.unsqueeze(0), payload.to_tensor().unsqueeze(0)).squeeze(0);
}

Payload reveal_image(StegoNet& net, const torch::Tensor& stego) {
  torch::NoGradGuard guard;
  return Payload::from_tensor(net->reveal_bits(stego.unsqueeze(0)).squeeze(0));
}

}  // namespace fovsteg
