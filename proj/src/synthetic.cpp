#include "fovsteg/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fovsteg/errors.hpp"

namespace fovsteg {

namespace fs = std::filesystem;

cv::Mat synthesize_image(Rng& rng, int height, int width) {
  if (height < 8 || width < 8) throw UsageError("synthetic images need at least 8x8 pixels");
  const double h = height, w = width;
  cv::Vec3f c0, c1;
  for (int c = 0; c < 3; ++c) c0[c] = static_cast<float>(rng.uniform());
  for (int c = 0; c < 3; ++c) c1[c] = static_cast<float>(rng.uniform());
  const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);

  cv::Mat img(height, width, CV_32FC3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double t = (x / w - 0.5) * std::cos(ang) + (y / h - 0.5) * std::sin(ang) + 0.5;
      t = std::clamp(t, 0.0, 1.0);
      img.at<cv::Vec3f>(y, x) = c0 + (c1 - c0) * static_cast<float>(t);
    }
  }

  const int shapes = 3 + static_cast<int>(rng.below(5));
  for (int s = 0; s < shapes; ++s) {
    cv::Scalar col(rng.uniform(), rng.uniform(), rng.uniform());
    cv::Mat layer = img.clone();
    const int cx = static_cast<int>(rng.uniform(0, w));
    const int cy = static_cast<int>(rng.uniform(0, h));
    if (rng.uniform() < 0.6) {
      cv::Size axes(static_cast<int>(rng.uniform(3, w / 3)), static_cast<int>(rng.uniform(3, h / 3)));
      cv::ellipse(layer, {cx, cy}, axes, rng.uniform(0, 180), 0, 360, col, -1, cv::LINE_AA);
    } else {
      cv::Point p2(cx + static_cast<int>(rng.uniform(4, w / 3)), cy + static_cast<int>(rng.uniform(4, h / 3)));
      cv::rectangle(layer, {cx, cy}, p2, col, -1, cv::LINE_AA);
    }
    const double a = rng.uniform(0.5, 1.0);
    cv::addWeighted(img, 1.0 - a, layer, a, 0.0, img);
  }
  cv::GaussianBlur(img, img, cv::Size(0, 0), 1.2);

  for (int t = 0; t < 2; ++t) {
    const double fx = rng.uniform(0.05, 0.3), fy = rng.uniform(0.05, 0.3), ph = rng.uniform(0, 6.28);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const float v = static_cast<float>(0.03 * std::sin(fx * x + fy * y + ph));
        img.at<cv::Vec3f>(y, x) += cv::Vec3f(v, v, v);
      }
    }
  }

  cv::Mat out;
  img.convertTo(out, CV_8UC3, 255.0);  // saturates to [0,255] and rounds
  return out;
}

std::vector<fs::path> write_synthetic_folder(const fs::path& dir, const SynthOptions& options) {
  if (options.min_size < 8 || options.max_size < options.min_size) {
    throw UsageError("invalid synthetic size range");
  }
  fs::create_directories(dir);
  Rng rng(options.seed);
  const auto span = static_cast<std::uint64_t>(options.max_size - options.min_size + 1);
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < options.count; ++i) {
    const int h = options.min_size + static_cast<int>(rng.below(span));
    const int w = options.min_size + static_cast<int>(rng.below(span));
    cv::Mat img = synthesize_image(rng, h, w);
    char name[32];
    std::snprintf(name, sizeof name, "img_%04zu.png", i);
    const fs::path path = dir / name;
    if (!cv::imwrite(path.string(), img)) throw RuntimeFailure("cannot write " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace fovsteg
