#include "fovsteg/image_io.hpp"

#include <fstream>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <unistd.h>

#include "fovsteg/errors.hpp"

namespace fovsteg {

namespace fs = std::filesystem;

torch::Tensor mat_to_tensor(const cv::Mat& mat) {
  cv::Mat rgb;
  switch (mat.channels()) {
    case 1: cv::cvtColor(mat, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(mat, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(mat, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw DataError("unsupported channel count " + std::to_string(mat.channels()));
  }
  if (rgb.depth() != CV_8U) throw DataError("only 8-bit images are supported");
  if (!rgb.isContinuous()) rgb = rgb.clone();
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0).contiguous();
}

cv::Mat tensor_to_mat(const torch::Tensor& image) {
  TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "expected a (3,H,W) image tensor");
  auto u8 = image.detach()
                .to(torch::kCPU, torch::kFloat32)
                .clamp(0.0, 1.0)
                .mul(255.0)
                .round()
                .to(torch::kUInt8)
                .permute({1, 2, 0})
                .contiguous();
  cv::Mat rgb(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC3,
              u8.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

torch::Tensor read_image(const fs::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw DataError("cannot decode image: " + path.string());
  if (mat.depth() == CV_16U) mat.convertTo(mat, CV_8U, 1.0 / 257.0);
  return mat_to_tensor(mat);
}

fs::path temp_sibling(const fs::path& path) {
  auto name = path.filename().string();
  return path.parent_path() / ("." + name + ".tmp" + std::to_string(::getpid()));
}

void write_png(const fs::path& path, const torch::Tensor& image) {
  std::vector<uchar> buf;
  if (!cv::imencode(".png", tensor_to_mat(image), buf)) {
    throw RuntimeFailure("PNG encoding failed for " + path.string());
  }
  atomic_write(path, std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

void atomic_write(const fs::path& path, std::string_view bytes) {
  auto tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw RuntimeFailure("write failed for " + path.string() + " (disk full?)");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw RuntimeFailure("cannot move " + tmp.string() + " into place: " + ec.message());
  }
}

}  // namespace fovsteg
