#include "fovsteg/domain.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fovsteg/errors.hpp"

namespace fovsteg {

Payload::Payload(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  if (bits_.empty()) throw UsageError("payload must contain at least one bit");
  for (auto b : bits_) {
    if (b > 1) throw UsageError("payload bits must be 0 or 1");
  }
}

torch::Tensor Payload::to_tensor() const {
  auto t = torch::empty({static_cast<long>(bits_.size())}, torch::kFloat32);
  auto acc = t.accessor<float, 1>();
  for (std::size_t i = 0; i < bits_.size(); ++i) acc[i] = bits_[i];
  return t;
}

Payload Payload::from_tensor(const torch::Tensor& bits) {
  auto flat = bits.detach().to(torch::kCPU, torch::kFloat32).contiguous().view(-1);
  std::vector<std::uint8_t> out(flat.numel());
  auto acc = flat.accessor<float, 1>();
  for (long i = 0; i < flat.numel(); ++i) out[i] = acc[i] > 0.5f ? 1 : 0;
  return Payload(std::move(out));
}

Payload bits_from_bytes(std::span<const std::uint8_t> raw, std::size_t k) {
  if (k == 0) throw UsageError("payload length k must be positive");
  if (8 * raw.size() < k) {
    throw UsageError("payload too short: " + std::to_string(k) + " bits required, " +
                     std::to_string(8 * raw.size()) + " provided");
  }
  std::vector<std::uint8_t> bits(k);
  for (std::size_t i = 0; i < k; ++i) bits[i] = (raw[i / 8] >> (7 - i % 8)) & 1u;
  return Payload(std::move(bits));
}

std::vector<std::uint8_t> bytes_from_bits(const Payload& payload) {
  std::vector<std::uint8_t> out((payload.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (payload[i]) out[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  }
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::vector<std::uint8_t> from_hex(std::string_view digits) {
  if (digits.size() % 2 != 0) throw UsageError("hex payload must have an even number of digits");
  std::vector<std::uint8_t> out(digits.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = hex_value(digits[2 * i]);
    int lo = hex_value(digits[2 * i + 1]);
    if (hi < 0 || lo < 0) throw UsageError("invalid hex digit in payload");
    out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return out;
}

std::vector<std::uint8_t> parse_payload_argument(std::string_view arg) {
  if (arg.starts_with("hex:")) return from_hex(arg.substr(4));
  if (arg.starts_with("file:")) {
    std::string path(arg.substr(5));
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read payload file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  throw UsageError("payload must be given as hex:<digits> or file:<path>");
}

GazePoint::GazePoint(double gx, double gy)
    : x(std::clamp(gx, 0.0, 1.0)), y(std::clamp(gy, 0.0, 1.0)) {}

GazePoint GazePoint::parse(std::string_view text) {
  auto comma = text.find(',');
  if (comma == std::string_view::npos) throw UsageError("gaze must be given as X,Y");
  try {
    return {std::stod(std::string(text.substr(0, comma))),
            std::stod(std::string(text.substr(comma + 1)))};
  } catch (const std::exception&) {
    throw UsageError("gaze must be given as X,Y with real coordinates");
  }
}

std::string to_string(GazePolicy p) {
  return p == GazePolicy::FixedCenter ? "center" : "uniform";
}

GazePolicy gaze_policy_from_string(std::string_view s) {
  if (s == "center") return GazePolicy::FixedCenter;
  if (s == "uniform") return GazePolicy::UniformSampled;
  throw UsageError("unknown gaze policy '" + std::string(s) + "' (expected center|uniform)");
}

void to_json(nlohmann::json& j, const ModelMetadata& m) {
  j = nlohmann::json{{"k", m.k},
                     {"resolution", m.resolution},
                     {"downsample", m.downsample},
                     {"latent_channels", m.latent_channels},
                     {"gaze_policy", to_string(m.gaze_policy)},
                     {"lambda_i", m.lambda_i},
                     {"image_loss", m.image_loss},
                     {"backbone_id", m.backbone_id},
                     {"backbone_hash", m.backbone_hash},
                     {"retriever_profile", m.retriever_profile},
                     {"embedder_width", m.embedder_width},
                     {"merger_hidden", m.merger_hidden},
                     {"version", m.version}};
}

void from_json(const nlohmann::json& j, ModelMetadata& m) {
  static constexpr const char* required[] = {
      "k", "resolution", "downsample", "latent_channels", "gaze_policy",
      "lambda_i", "backbone_id", "backbone_hash", "version"};
  for (const char* key : required) {
    if (!j.contains(key)) {
      throw ModelMismatchError(std::string("checkpoint metadata is missing '") + key + "'");
    }
  }
  j.at("k").get_to(m.k);
  j.at("resolution").get_to(m.resolution);
  j.at("downsample").get_to(m.downsample);
  j.at("latent_channels").get_to(m.latent_channels);
  m.gaze_policy = gaze_policy_from_string(j.at("gaze_policy").get<std::string>());
  j.at("lambda_i").get_to(m.lambda_i);
  j.at("backbone_id").get_to(m.backbone_id);
  j.at("backbone_hash").get_to(m.backbone_hash);
  j.at("version").get_to(m.version);
  m.image_loss = j.value("image_loss", "metameric");
  m.retriever_profile = j.value("retriever_profile", "desk");
  m.embedder_width = j.value("embedder_width", 512);
  m.merger_hidden = j.value("merger_hidden", 32);
}

torch::Tensor normalize(const torch::Tensor& image) {
  if (image.numel() > 0) {
    double lo = image.min().item<double>();
    double hi = image.max().item<double>();
    if (lo < 0.0 || hi > 1.0) {
      std::ostringstream msg;
      msg << "image values must lie in [0,1] before normalization (found [" << lo << ", " << hi
          << "])";
      throw DataError(msg.str());
    }
  }
  return image * 2.0 - 1.0;
}

torch::Tensor denormalize(const torch::Tensor& image) { return (image + 1.0) * 0.5; }

void validate_image_shape(const torch::Tensor& image, int downsample) {
  if (image.dim() != 3 && image.dim() != 4) {
    throw DataError("image tensor must be (3,H,W) or (N,3,H,W)");
  }
  auto h = image.size(-2);
  auto w = image.size(-1);
  if (image.size(-3) != 3) throw DataError("image must have 3 channels");
  if (h % downsample != 0 || w % downsample != 0) {
    throw DataError("image size " + std::to_string(h) + "x" + std::to_string(w) +
                    " is not divisible by the backbone factor " + std::to_string(downsample) +
                    "; pad to a multiple of " + std::to_string(downsample));
  }
}

}  // namespace fovsteg
