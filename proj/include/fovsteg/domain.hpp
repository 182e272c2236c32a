#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace fovsteg {

/// Fixed-length bit message. Every element is exactly 0 or 1 and k > 0.
class Payload {
 public:
  explicit Payload(std::vector<std::uint8_t> bits);

  std::size_t size() const noexcept { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  /// Float tensor of shape (k,) holding 0/1.
  torch::Tensor to_tensor() const;
  /// Thresholds at 0.5; accepts any (k,) tensor.
  static Payload from_tensor(const torch::Tensor& bits);

  bool operator==(const Payload&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// First k bits of `raw`, most significant bit first.
Payload bits_from_bytes(std::span<const std::uint8_t> raw, std::size_t k);
/// Packs bits MSB-first, zero-padding the final byte.
std::vector<std::uint8_t> bytes_from_bits(const Payload& payload);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> from_hex(std::string_view digits);

/// Resolves `hex:<digits>` or `file:<path>` into raw bytes.
std::vector<std::uint8_t> parse_payload_argument(std::string_view arg);

/// Normalized fixation point; (0.5, 0.5) is the image center.
struct GazePoint {
  double x = 0.5;
  double y = 0.5;

  GazePoint() = default;
  GazePoint(double gx, double gy);

  static GazePoint center() { return {}; }
  /// Parses "X,Y".
  static GazePoint parse(std::string_view text);
};

enum class GazePolicy { FixedCenter, UniformSampled };

std::string to_string(GazePolicy p);
GazePolicy gaze_policy_from_string(std::string_view s);

inline constexpr std::string_view kCheckpointVersion = "fovsteg-ckpt-1";

struct ModelMetadata {
  int k = 0;
  int resolution = 0;
  int downsample = 4;
  int latent_channels = 4;
  GazePolicy gaze_policy = GazePolicy::FixedCenter;
  double lambda_i = 1.5;
  std::string image_loss = "metameric";
  std::string backbone_id;
  std::string backbone_hash;
  std::string retriever_profile = "desk";
  int embedder_width = 512;
  int merger_hidden = 32;
  std::string version = std::string(kCheckpointVersion);
};

void to_json(nlohmann::json& j, const ModelMetadata& m);
void from_json(const nlohmann::json& j, ModelMetadata& m);

/// [0,1] -> [-1,1]. Throws DataError when any value lies outside [0,1].
torch::Tensor normalize(const torch::Tensor& image);
/// [-1,1] -> [0,1].
torch::Tensor denormalize(const torch::Tensor& image);

/// Checks a (3,H,W) or (N,3,H,W) image against the backbone factor.
void validate_image_shape(const torch::Tensor& image, int downsample);

}  // namespace fovsteg
