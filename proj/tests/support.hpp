#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <torch/torch.h>

#include "fovsteg/backbone.hpp"
#include "fovsteg/data.hpp"
#include "fovsteg/synthetic.hpp"
#include "oracles.hpp"

namespace testing_support {

inline oracle::Plane plane_of(const torch::Tensor& t2d) {
  auto t = t2d.to(torch::kFloat64).contiguous();
  oracle::Plane p(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
  std::copy(t.data_ptr<double>(), t.data_ptr<double>() + t.numel(), p.v.begin());
  return p;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("fovsteg_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Two synthetic sources and a manifest with the given per-split sizes.
inline fovsteg::DatasetManifest tiny_dataset(const std::filesystem::path& root, fovsteg::SplitSizes sizes,
                                             int resolution, std::size_t per_source, std::uint64_t seed = 3) {
  fovsteg::SynthOptions a{per_source, 11, 20, 40};
  fovsteg::SynthOptions b{per_source, 12, 20, 40};
  fovsteg::write_synthetic_folder(root / "a", a);
  fovsteg::write_synthetic_folder(root / "b", b);
  return fovsteg::build_manifest({root / "a", root / "b"}, sizes, seed, resolution);
}

inline std::shared_ptr<fovsteg::DeskBackbone> small_backbone(std::uint64_t seed = 0) {
  torch::manual_seed(seed);
  fovsteg::BackboneSpec spec;
  spec.base_channels = 8;
  spec.mid_channels = 16;
  auto bb = std::make_shared<fovsteg::DeskBackbone>(spec);
  bb->freeze();
  return bb;
}

}  // namespace testing_support
