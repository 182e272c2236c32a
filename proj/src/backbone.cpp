#include "fovsteg/backbone.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

#include <openssl/evp.h>

#include "fovsteg/domain.hpp"
#include "fovsteg/errors.hpp"
#include "fovsteg/image_io.hpp"

namespace fovsteg {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

void to_json(nlohmann::json& j, const BackboneSpec& s) {
  j = nlohmann::json{{"downsample", s.downsample},
                     {"latent_channels", s.latent_channels},
                     {"variant", s.variant == BackboneVariant::Desk ? "desk" : "external"},
                     {"frozen", s.frozen},
                     {"base_channels", s.base_channels},
                     {"mid_channels", s.mid_channels},
                     {"attention", s.attention}};
  if (s.weights) j["weights"] = s.weights->string();
}

void from_json(const nlohmann::json& j, BackboneSpec& s) {
  BackboneSpec d;
  s.downsample = j.value("downsample", d.downsample);
  s.latent_channels = j.value("latent_channels", d.latent_channels);
  auto variant = j.value("variant", std::string("desk"));
  if (variant == "desk") {
    s.variant = BackboneVariant::Desk;
  } else if (variant == "external") {
    s.variant = BackboneVariant::External;
  } else {
    throw UsageError("unknown backbone variant '" + variant + "'");
  }
  s.frozen = j.value("frozen", d.frozen);
  s.base_channels = j.value("base_channels", d.base_channels);
  s.mid_channels = j.value("mid_channels", d.mid_channels);
  s.attention = j.value("attention", d.attention);
  if (j.contains("weights") && !j["weights"].is_null()) s.weights = j["weights"].get<std::string>();
}

std::string hash_tensors(const std::vector<torch::Tensor>& tensors) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  for (const auto& t : tensors) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    EVP_DigestUpdate(ctx.get(), c.data_ptr(), c.numel() * c.element_size());
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  return to_hex(std::span<const std::uint8_t>(digest, len));
}

std::string Backbone::content_hash() { return hash_tensors(parameters()); }

void Backbone::check_image(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3) throw DataError("encode expects (N,3,H,W) images");
  validate_image_shape(images, spec().downsample);
}

void Backbone::check_latent(const torch::Tensor& latents) const {
  if (latents.dim() != 4 || latents.size(1) != spec().latent_channels) {
    throw DataError("decode expects (N," + std::to_string(spec().latent_channels) +
                    ",h,w) latents, got " + c10::str(latents.sizes()));
  }
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  a_ = register_module("a", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
  b_ = register_module("b", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return x + b_(F::silu(a_(F::silu(x))));
}

SelfAttentionImpl::SelfAttentionImpl(int channels) {
  norm_ = register_module("norm", torch::nn::GroupNorm(std::gcd(8, channels), channels));
  qkv_ = register_module("qkv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 3 * channels, 1)));
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x) {
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto qkv = qkv_(norm_(x)).reshape({n, 3, c, h * w});
  auto q = qkv.select(1, 0), k = qkv.select(1, 1), v = qkv.select(1, 2);
  auto attn = torch::softmax(torch::bmm(q.transpose(1, 2), k) / std::sqrt(double(c)), -1);
  auto y = torch::bmm(v, attn.transpose(1, 2)).reshape({n, c, h, w});
  return x + out_(y);
}

namespace {

torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1) {
  int pad = kernel == 4 ? 1 : kernel / 2;
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(pad));
}

torch::nn::Upsample upsample2x() {
  return torch::nn::Upsample(
      torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

}  // namespace

DeskAutoencoderImpl::DeskAutoencoderImpl(const BackboneSpec& spec) {
  if (spec.downsample != 4) throw UsageError("the desk autoencoder only supports f = 4");
  const int c1 = spec.base_channels, c2 = spec.mid_channels, cz = spec.latent_channels;
  torch::nn::Sequential enc(conv(3, c1, 3), ResidualBlock(c1), conv(c1, c2, 4, 2), ResidualBlock(c2),
                            conv(c2, c2, 4, 2), ResidualBlock(c2));
  if (spec.attention) enc->push_back(SelfAttention(c2));
  enc->push_back(torch::nn::SiLU());
  enc->push_back(conv(c2, cz, 3));

  torch::nn::Sequential dec(conv(cz, c2, 3));
  if (spec.attention) dec->push_back(SelfAttention(c2));
  dec->push_back(ResidualBlock(c2));
  dec->push_back(upsample2x());
  dec->push_back(conv(c2, c2, 3));
  dec->push_back(ResidualBlock(c2));
  dec->push_back(upsample2x());
  dec->push_back(conv(c2, c1, 3));
  dec->push_back(ResidualBlock(c1));
  dec->push_back(torch::nn::SiLU());
  dec->push_back(conv(c1, 3, 3));

  encoder_ = register_module("encoder", enc);
  decoder_ = register_module("decoder", dec);
}

torch::Tensor DeskAutoencoderImpl::encode(const torch::Tensor& x) { return encoder_->forward(x); }
torch::Tensor DeskAutoencoderImpl::decode(const torch::Tensor& z) { return decoder_->forward(z); }

DeskBackbone::DeskBackbone(BackboneSpec spec) : spec_(std::move(spec)), net_(spec_) {
  spec_.variant = BackboneVariant::Desk;
  if (spec_.frozen) freeze();
}

torch::Tensor DeskBackbone::encode(const torch::Tensor& images) {
  check_image(images);
  return net_->encode(images);
}

torch::Tensor DeskBackbone::decode(const torch::Tensor& latents) {
  check_latent(latents);
  return net_->decode(latents).clamp(-1.0, 1.0);
}

std::string DeskBackbone::identifier() const {
  return "desk-ae-f" + std::to_string(spec_.downsample) + "-c" + std::to_string(spec_.latent_channels) +
         (spec_.attention ? "-attn" : "");
}

std::vector<torch::Tensor> DeskBackbone::parameters() {
  auto params = net_->parameters();
  for (auto& b : net_->buffers()) params.push_back(b);
  return params;
}

void DeskBackbone::freeze() {
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  net_->eval();
  spec_.frozen = true;
}

void DeskBackbone::save(torch::serialize::OutputArchive& archive) {
  nlohmann::json j = spec_;
  j.erase("weights");
  archive.write("spec", c10::IValue(j.dump()));
  torch::serialize::OutputArchive weights;
  net_->save(weights);
  archive.write("weights", weights);
}

void DeskBackbone::save(const fs::path& path) {
  torch::serialize::OutputArchive archive;
  save(archive);
  auto tmp = temp_sibling(path);
  archive.save_to(tmp.string());
  fs::rename(tmp, path);
}

void DeskBackbone::load(torch::serialize::InputArchive& archive) {
  torch::serialize::InputArchive weights;
  archive.read("weights", weights);
  torch::NoGradGuard guard;
  net_->load(weights);
  if (spec_.frozen) freeze();
}

std::shared_ptr<DeskBackbone> DeskBackbone::load_file(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("backbone weights not found: " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw DataError("cannot read backbone weights " + path.string() + ": " + e.what_without_backtrace());
  }
  c10::IValue spec_value;
  archive.read("spec", spec_value);
  BackboneSpec spec = nlohmann::json::parse(spec_value.toStringRef());
  spec.weights = path;
  spec.frozen = true;
  auto bb = std::make_shared<DeskBackbone>(spec);
  try {
    bb->load(archive);
  } catch (const c10::Error& e) {
    throw ModelMismatchError("backbone weights do not match the declared architecture: " +
                             std::string(e.what_without_backtrace()));
  }
  return bb;
}

ExternalBackbone::ExternalBackbone(torch::jit::script::Module module, BackboneSpec spec)
    : module_(std::move(module)), spec_(std::move(spec)) {
  spec_.variant = BackboneVariant::External;
  freeze();
}

torch::Tensor ExternalBackbone::encode(const torch::Tensor& images) {
  check_image(images);
  return module_.get_method("encode")({images}).toTensor();
}

torch::Tensor ExternalBackbone::decode(const torch::Tensor& latents) {
  check_latent(latents);
  return module_.get_method("decode")({latents}).toTensor().clamp(-1.0, 1.0);
}

std::string ExternalBackbone::identifier() const {
  return "external-f" + std::to_string(spec_.downsample) + "-c" + std::to_string(spec_.latent_channels) +
         ":" + (spec_.weights ? spec_.weights->filename().string() : std::string("?"));
}

std::vector<torch::Tensor> ExternalBackbone::parameters() {
  std::vector<torch::Tensor> out;
  for (const auto& p : module_.parameters()) out.push_back(p);
  for (const auto& b : module_.buffers()) out.push_back(b);
  return out;
}

void ExternalBackbone::freeze() {
  for (auto p : module_.parameters()) p.set_requires_grad(false);
  module_.eval();
  spec_.frozen = true;
}

std::shared_ptr<ExternalBackbone> load_external_backbone(const fs::path& weights, BackboneSpec spec,
                                                         int probe_resolution) {
  if (!fs::exists(weights)) throw DataError("external backbone weights not found: " + weights.string());
  torch::jit::script::Module module;
  try {
    module = torch::jit::load(weights.string());
  } catch (const c10::Error& e) {
    throw DataError("cannot load external backbone " + weights.string() + ": " + e.what_without_backtrace());
  }
  for (const char* method : {"encode", "decode"}) {
    if (!module.find_method(method)) {
      throw ModelMismatchError("external backbone " + weights.string() + " has no '" + method + "' method");
    }
  }
  spec.weights = weights;
  auto bb = std::make_shared<ExternalBackbone>(std::move(module), spec);

  torch::NoGradGuard guard;
  const long r = probe_resolution;
  const long lr = r / spec.downsample;
  auto probe = torch::zeros({1, 3, r, r});
  auto z = bb->encode(probe);
  const std::vector<long> expected_z{1, spec.latent_channels, lr, lr};
  if (z.sizes().vec() != expected_z) {
    throw ModelMismatchError("external backbone latent shape mismatch: expected " +
                             c10::str(c10::IntArrayRef(expected_z)) + ", found " + c10::str(z.sizes()));
  }
  auto x = bb->decode(z);
  const std::vector<long> expected_x{1, 3, r, r};
  if (x.sizes().vec() != expected_x) {
    throw ModelMismatchError("external backbone output shape mismatch: expected " +
                             c10::str(c10::IntArrayRef(expected_x)) + ", found " + c10::str(x.sizes()));
  }
  return bb;
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"min_learning_rate", c.min_learning_rate},
                     {"target_psnr", c.target_psnr},
                     {"stop_psnr", c.stop_psnr},
                     {"seed", c.seed},
                     {"augment", c.augment}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  PretrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.min_learning_rate = j.value("min_learning_rate", d.min_learning_rate);
  c.target_psnr = j.value("target_psnr", d.target_psnr);
  c.stop_psnr = j.value("stop_psnr", d.stop_psnr);
  c.seed = j.value("seed", d.seed);
  c.augment = j.value("augment", d.augment);
  c.verbose = j.value("verbose", d.verbose);
}

double reconstruction_psnr(Backbone& backbone, const DatasetManifest& manifest, Split split) {
  torch::NoGradGuard guard;
  auto entries = manifest.split(split);
  if (entries.empty()) throw DataError("split '" + to_string(split) + "' is empty");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < entries.size(); i += 16) {
    std::vector<ManifestEntry> chunk(entries.begin() + i,
                                     entries.begin() + std::min(entries.size(), i + 16));
    auto x = load_batch(chunk, manifest.resolution, false, nullptr, false);
    auto y = backbone.decode(backbone.encode(x));
    auto mse = (denormalize(y) - denormalize(x)).square().mean({1, 2, 3});
    auto psnr = (10.0 * torch::log10(1.0 / mse)).clamp_max(100.0);
    total += psnr.sum().item<double>();
    count += chunk.size();
  }
  return total / count;
}

PretrainResult pretrain_desk_backbone(const DatasetManifest& manifest, const BackboneSpec& spec,
                                      const PretrainConfig& cfg, const fs::path& weights_out) {
  auto train = manifest.split(Split::Train);
  if (train.empty()) throw DataError("pretraining needs a non-empty train split");
  if (manifest.split(Split::Val).empty()) throw DataError("pretraining needs a validation split");

  torch::manual_seed(cfg.seed);
  BackboneSpec s = spec;
  s.frozen = false;
  auto bb = std::make_shared<DeskBackbone>(s);
  auto& net = bb->module();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.learning_rate));

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (train.size() + bs - 1) / bs;
  const double total_steps = static_cast<double>(steps_per_epoch * cfg.epochs);
  std::size_t step = 0;

  PretrainResult result;
  result.heldout_psnr = -1.0;
  std::vector<torch::Tensor> best;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, epoch));
    auto order = train;
    rng.shuffle(order);
    net->train();
    for (std::size_t i = 0; i < order.size(); i += bs, ++step) {
      std::vector<ManifestEntry> chunk(order.begin() + i, order.begin() + std::min(order.size(), i + bs));
      auto x = load_batch(chunk, manifest.resolution, cfg.augment, &rng, true);
      if (x.size(0) == 0) continue;
      const double t = step / total_steps;
      const double lr = cfg.min_learning_rate +
                        0.5 * (cfg.learning_rate - cfg.min_learning_rate) * (1.0 + std::cos(M_PI * t));
      for (auto& group : opt.param_groups()) group.options().set_lr(lr);
      auto loss = F::mse_loss(net->decode(net->encode(x)), x);
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
    net->eval();
    const double psnr = reconstruction_psnr(*bb, manifest, Split::Val);
    result.epochs_run = epoch + 1;
    if (cfg.verbose) std::cerr << "pretrain epoch " << epoch << " held-out PSNR " << psnr << " dB\n";
    if (psnr > result.heldout_psnr) {
      result.heldout_psnr = psnr;
      best.clear();
      for (const auto& p : net->parameters()) best.push_back(p.detach().clone());
    }
    if (psnr >= cfg.stop_psnr) break;
  }

  {
    torch::NoGradGuard guard;
    auto params = net->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(best[i]);
  }
  bb->freeze();
  result.reached_target = result.heldout_psnr >= cfg.target_psnr;
  if (!result.reached_target) {
    std::cerr << "warning: desk backbone reached " << result.heldout_psnr << " dB held-out PSNR, below the "
              << cfg.target_psnr << " dB target; weights saved anyway\n";
  }
  if (!weights_out.empty()) bb->save(weights_out);
  result.backbone = bb;
  return result;
}

}  // namespace fovsteg
