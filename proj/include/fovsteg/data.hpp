#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fovsteg/rng.hpp"

namespace fovsteg {

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split split_from_string(std::string_view s);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  std::size_t total() const { return train + val + test; }
  std::size_t of(Split s) const;
};

struct ManifestEntry {
  Split split;
  std::string source;
  std::string path;
};

/// Reproducible train/val/test assignment of image files.
struct DatasetManifest {
  std::uint64_t seed = 0;
  SplitSizes sizes;
  int resolution = 0;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(Split s) const;

  /// Line format `<split>\t<source>\t<path>` after a `#` header carrying
  /// seed, sizes and resolution.
  std::string serialize() const;
  static DatasetManifest parse(const std::string& text);

  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

/// Sorted list of decodable-looking image files (png/jpg/jpeg/bmp) in `dir`.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Shuffles each folder with `seed` and draws equal per-source quotas for
/// every split. Throws DataError when a source cannot cover its quota.
DatasetManifest build_manifest(const std::vector<std::filesystem::path>& dirs, SplitSizes sizes,
                               std::uint64_t seed, int resolution);

/// Fraction of the shorter side kept by an augmenting crop.
inline constexpr double kMinCropScale = 0.8;

/// Loads one image as a (3,R,R) tensor in [-1,1].
///
/// With `augment`, a random square crop of scale U[0.8,1] of the shorter side
/// is taken at a random position; otherwise the centered square of the
/// shorter side. Crops larger than R are area-downsampled to R, smaller ones
/// are padded with mid-gray (0 in [-1,1]) to R x R, at a random offset when
/// augmenting and centered otherwise.
torch::Tensor load_example(const ManifestEntry& entry, int resolution, bool augment, Rng* rng);

/// Stacks examples into (N,3,R,R). With `skip_bad`, undecodable files are
/// logged and dropped; otherwise the DataError propagates.
torch::Tensor load_batch(const std::vector<ManifestEntry>& entries, int resolution, bool augment,
                         Rng* rng, bool skip_bad);

}  // namespace fovsteg
