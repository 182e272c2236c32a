#include "fovsteg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fovsteg/errors.hpp"
#include "fovsteg/image_io.hpp"

namespace fovsteg {

namespace fs = std::filesystem;

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw UsageError("unknown split '" + std::string(s) + "' (expected train|val|test)");
}

std::size_t SplitSizes::of(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return 0;
}

std::vector<ManifestEntry> DatasetManifest::split(Split s) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == s) out.push_back(e);
  }
  return out;
}

std::string DatasetManifest::serialize() const {
  std::ostringstream out;
  out << "# fovsteg manifest v1\n";
  out << "# seed=" << seed << "\n";
  out << "# sizes=" << sizes.train << "/" << sizes.val << "/" << sizes.test << "\n";
  out << "# resolution=" << resolution << "\n";
  for (const auto& e : entries) {
    out << to_string(e.split) << '\t' << e.source << '\t' << e.path << '\n';
  }
  return out.str();
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto key = line.substr(2, eq - 2);
      auto value = line.substr(eq + 1);
      if (key == "seed") {
        m.seed = std::stoull(value);
      } else if (key == "resolution") {
        m.resolution = std::stoi(value);
      } else if (key == "sizes") {
        char sep;
        std::istringstream v(value);
        v >> m.sizes.train >> sep >> m.sizes.val >> sep >> m.sizes.test;
      }
      continue;
    }
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw DataError("malformed manifest line " + std::to_string(lineno));
    }
    m.entries.push_back({split_from_string(line.substr(0, t1)), line.substr(t1 + 1, t2 - t1 - 1),
                         line.substr(t2 + 1)});
  }
  return m;
}

void DatasetManifest::save(const fs::path& path) const { atomic_write(path, serialize()); }

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

namespace {

// Splits `count` into `parts` near-equal shares, remainder to the first parts.
std::vector<std::size_t> quotas(std::size_t count, std::size_t parts) {
  std::vector<std::size_t> q(parts, count / parts);
  for (std::size_t i = 0; i < count % parts; ++i) ++q[i];
  return q;
}

std::vector<std::string> source_tags(const std::vector<fs::path>& dirs) {
  std::vector<std::string> tags;
  std::map<std::string, int> seen;
  for (const auto& d : dirs) {
    auto name = fs::path(d).lexically_normal().filename().string();
    if (name.empty()) name = fs::path(d).lexically_normal().parent_path().filename().string();
    if (name.empty()) name = "source";
    int n = seen[name]++;
    tags.push_back(n == 0 ? name : name + "_" + std::to_string(n));
  }
  return tags;
}

}  // namespace

DatasetManifest build_manifest(const std::vector<fs::path>& dirs, SplitSizes sizes,
                               std::uint64_t seed, int resolution) {
  if (dirs.empty()) throw UsageError("at least one data directory is required");
  DatasetManifest m;
  m.seed = seed;
  m.sizes = sizes;
  m.resolution = resolution;

  const auto tags = source_tags(dirs);
  const std::size_t n_src = dirs.size();
  const auto q_train = quotas(sizes.train, n_src);
  const auto q_val = quotas(sizes.val, n_src);
  const auto q_test = quotas(sizes.test, n_src);

  Rng rng(seed);
  std::vector<std::vector<fs::path>> pools;
  for (std::size_t s = 0; s < n_src; ++s) {
    auto files = list_images(dirs[s]);
    const std::size_t need = q_train[s] + q_val[s] + q_test[s];
    if (files.size() < need) {
      throw DataError("source '" + tags[s] + "' has " + std::to_string(files.size()) +
                      " images but the requested splits need " + std::to_string(need));
    }
    rng.shuffle(files);
    pools.push_back(std::move(files));
  }

  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    const auto& q = split == Split::Train ? q_train : split == Split::Val ? q_val : q_test;
    std::vector<ManifestEntry> chunk;
    for (std::size_t s = 0; s < n_src; ++s) {
      const std::size_t offset = split == Split::Train ? 0
                                 : split == Split::Val ? q_train[s]
                                                       : q_train[s] + q_val[s];
      for (std::size_t i = 0; i < q[s]; ++i) {
        chunk.push_back({split, tags[s], pools[s][offset + i].string()});
      }
    }
    // Interleave sources within a split.
    rng.shuffle(chunk);
    m.entries.insert(m.entries.end(), chunk.begin(), chunk.end());
  }
  return m;
}

torch::Tensor load_example(const ManifestEntry& entry, int resolution, bool augment, Rng* rng) {
  if (augment && rng == nullptr) throw UsageError("augmentation requires a random generator");
  cv::Mat mat = cv::imread(entry.path, cv::IMREAD_COLOR);
  if (mat.empty()) throw DataError("cannot decode image: " + entry.path);

  const int shorter = std::min(mat.rows, mat.cols);
  int side = shorter;
  int y = (mat.rows - side) / 2;
  int x = (mat.cols - side) / 2;
  if (augment) {
    side = std::max(1, static_cast<int>(std::lround(rng->uniform(kMinCropScale, 1.0) * shorter)));
    y = static_cast<int>(rng->below(mat.rows - side + 1));
    x = static_cast<int>(rng->below(mat.cols - side + 1));
  }
  cv::Mat crop = mat(cv::Rect(x, y, side, side));
  if (side > resolution) {
    cv::resize(crop, crop, cv::Size(resolution, resolution), 0, 0, cv::INTER_AREA);
    side = resolution;
  }

  // Mid-gray canvas: 0.5 in [0,1] is 0 after normalization.
  auto canvas = torch::full({3, resolution, resolution}, 0.5f);
  const int oy = augment ? static_cast<int>(rng->below(resolution - side + 1)) : (resolution - side) / 2;
  const int ox = augment ? static_cast<int>(rng->below(resolution - side + 1)) : (resolution - side) / 2;
  canvas.narrow(1, oy, side).narrow(2, ox, side).copy_(mat_to_tensor(crop.clone()));
  return canvas * 2.0 - 1.0;
}

torch::Tensor load_batch(const std::vector<ManifestEntry>& entries, int resolution, bool augment,
                         Rng* rng, bool skip_bad) {
  std::vector<torch::Tensor> images;
  images.reserve(entries.size());
  for (const auto& e : entries) {
    try {
      images.push_back(load_example(e, resolution, augment, rng));
    } catch (const DataError& err) {
      if (!skip_bad) throw;
      std::cerr << "warning: skipping " << e.path << ": " << err.what() << "\n";
    }
  }
  if (images.empty()) return torch::empty({0, 3, resolution, resolution});
  return torch::stack(images);
}

}  // namespace fovsteg
