#include "fovsteg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "fovsteg/errors.hpp"
#include "fovsteg/image_io.hpp"

namespace fovsteg {

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

std::size_t bit_errors(const Payload& expected, const Payload& actual) {
  if (expected.size() != actual.size()) {
    throw UsageError("bit accuracy needs equal lengths (" + std::to_string(expected.size()) + " vs " +
                     std::to_string(actual.size()) + ")");
  }
  std::size_t errors = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) errors += expected[i] != actual[i];
  return errors;
}

double bit_accuracy(const Payload& expected, const Payload& actual) {
  const auto errors = bit_errors(expected, actual);
  // One correctly rounded division, so 1999/2000 is exactly the literal 0.9995.
  return static_cast<double>(expected.size() - errors) / static_cast<double>(expected.size());
}

namespace {

torch::Tensor as_batch(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw DataError("image shapes differ: " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  }
}

}  // namespace

torch::Tensor mse_per_image(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b);
  auto d = as_batch(a).to(torch::kFloat64) - as_batch(b).to(torch::kFloat64);
  return d.square().mean({1, 2, 3});
}

double mse(const torch::Tensor& a, const torch::Tensor& b) {
  return mse_per_image(a, b).mean().item<double>();
}

double psnr_from_mse(double mse, double peak) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const torch::Tensor& a, const torch::Tensor& b, double peak) {
  return psnr_from_mse(mse(a, b), peak);
}

double capped_psnr(double db) { return std::min(db, kPsnrCap); }

torch::Tensor ssim_per_image(const torch::Tensor& a, const torch::Tensor& b, double data_range) {
  require_same_shape(a, b);
  auto x = as_batch(a).to(torch::kFloat64);
  auto y = as_batch(b).to(torch::kFloat64);
  const long n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  constexpr int window = 11;
  constexpr double sigma = 1.5;
  if (h < window || w < window) throw DataError("SSIM needs images of at least 11x11");

  auto t = torch::arange(window, torch::kFloat64) - (window - 1) / 2.0;
  auto g = torch::exp(-t.square() / (2.0 * sigma * sigma));
  g = g / g.sum();
  auto kernel = torch::outer(g, g).view({1, 1, window, window});

  auto filt = [&](const torch::Tensor& v) { return F::conv2d(v.reshape({n * c, 1, h, w}), kernel); };
  auto mx = filt(x), my = filt(y);
  auto sxx = filt(x * x) - mx * mx;
  auto syy = filt(y * y) - my * my;
  auto sxy = filt(x * y) - mx * my;
  const double c1 = std::pow(0.01 * data_range, 2), c2 = std::pow(0.03 * data_range, 2);
  auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.view({n, -1}).mean(1);
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, double data_range) {
  return ssim_per_image(a, b, data_range).mean().item<double>();
}

void MetricsReport::finalize() {
  std::sort(images.begin(), images.end(),
            [](const ImageRecord& l, const ImageRecord& r) { return l.cover_id < r.cover_id; });
  ReportAggregate agg;
  agg.images = images.size();
  double lp = 0.0;
  bool have_lpips = !images.empty();
  for (const auto& r : images) {
    agg.total_bits += r.bits;
    agg.total_bit_errors += r.bit_errors;
    agg.mse += r.mse;
    agg.psnr += r.psnr;
    agg.ssim += r.ssim;
    agg.metameric += r.metameric;
    if (r.lpips) {
      lp += *r.lpips;
    } else {
      have_lpips = false;
    }
  }
  if (agg.images > 0) {
    const double n = static_cast<double>(agg.images);
    agg.mse /= n;
    agg.psnr /= n;
    agg.ssim /= n;
    agg.metameric /= n;
    if (have_lpips) agg.lpips = lp / n;
  }
  agg.bit_accuracy =
      agg.total_bits == 0 ? 0.0
                          : static_cast<double>(agg.total_bits - agg.total_bit_errors) /
                                static_cast<double>(agg.total_bits);
  aggregate = agg;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : images) {
    rows.push_back({{"cover_id", r.cover_id},
                    {"bits", r.bits},
                    {"bit_errors", r.bit_errors},
                    {"bit_acc", r.bit_acc},
                    {"mse", r.mse},
                    {"psnr", r.psnr},
                    {"ssim", r.ssim},
                    {"metameric", r.metameric},
                    {"lpips", optional_json(r.lpips)}});
  }
  return {{"schema_version", schema_version},
          {"split", split},
          {"payloads_per_image", payloads_per_image},
          {"payload_seed", payload_seed},
          {"images", rows},
          {"aggregate",
           {{"images", aggregate.images},
            {"total_bits", aggregate.total_bits},
            {"total_bit_errors", aggregate.total_bit_errors},
            {"bit_accuracy", aggregate.bit_accuracy},
            {"mse", aggregate.mse},
            {"psnr", aggregate.psnr},
            {"ssim", aggregate.ssim},
            {"metameric", aggregate.metameric},
            {"lpips", optional_json(aggregate.lpips)}}}};
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "cover_id,bits,bit_errors,bit_acc,mse,psnr,ssim,metameric,lpips\n";
  for (const auto& r : images) {
    out << r.cover_id << ',' << r.bits << ',' << r.bit_errors << ',' << r.bit_acc << ',' << r.mse << ','
        << r.psnr << ',' << r.ssim << ',' << r.metameric << ',';
    if (r.lpips) out << *r.lpips;
    out << '\n';
  }
  return out.str();
}

void MetricsReport::write(const fs::path& dir) const {
  fs::create_directories(dir);
  atomic_write(dir / "report.json", to_json().dump(2) + "\n");
  atomic_write(dir / "report.csv", to_csv());
}

MetricsReport evaluate(StegoNet& net, const DatasetManifest& manifest, const EvalOptions& options) {
  const auto& meta = net->metadata();
  if (manifest.resolution != 0 && manifest.resolution != meta.resolution) {
    throw ModelMismatchError("manifest resolution " + std::to_string(manifest.resolution) +
                             " does not match model resolution " + std::to_string(meta.resolution));
  }
  if (options.payloads_per_image < 1) throw UsageError("payloads per image must be >= 1");
  const auto entries = manifest.split(options.split);
  if (entries.empty()) throw DataError("split '" + to_string(options.split) + "' is empty");
  const auto fov = options.foveation.value_or(FoveationConfig::for_width(meta.resolution));

  torch::NoGradGuard guard;
  net->eval();
  Rng payload_rng(options.payload_seed);

  MetricsReport report;
  report.split = to_string(options.split);
  report.payloads_per_image = options.payloads_per_image;
  report.payload_seed = options.payload_seed;

  constexpr std::size_t chunk = 16;
  for (std::size_t i = 0; i < entries.size(); i += chunk) {
    std::vector<ManifestEntry> part(entries.begin() + i, entries.begin() + std::min(entries.size(), i + chunk));
    auto covers = load_batch(part, meta.resolution, false, nullptr, false);
    const long n = covers.size(0);
    std::vector<ImageRecord> records(n);
    for (long j = 0; j < n; ++j) records[j].cover_id = part[j].path;

    for (int rep = 0; rep < options.payloads_per_image; ++rep) {
      std::vector<torch::Tensor> rows;
      for (long j = 0; j < n; ++j) rows.push_back(Payload(payload_rng.bits(meta.k)).to_tensor());
      auto bits = torch::stack(rows);
      auto stego = net->hide(covers, bits);
      if (!options.in_memory) stego = quantization_bridge(stego, BridgeMode::Eval);
      auto decoded = net->reveal_bits(stego);

      auto errors = (decoded != bits).sum(1).to(torch::kLong);
      auto a = denormalize(covers), b = denormalize(stego);
      auto m = mse_per_image(a, b);
      auto s = ssim_per_image(a, b);
      auto mm = metameric_loss_per_image(a.to(torch::kFloat64), b.to(torch::kFloat64), options.gaze, fov);
      for (long j = 0; j < n; ++j) {
        auto& r = records[j];
        r.bits += meta.k;
        r.bit_errors += errors[j].item<long>();
        r.mse += m[j].item<double>();
        r.psnr += capped_psnr(psnr_from_mse(m[j].item<double>()));
        r.ssim += s[j].item<double>();
        r.metameric += mm[j].item<double>();
        if (options.perceptual) {
          r.lpips = r.lpips.value_or(0.0) + options.perceptual->distance(a[j], b[j]);
        }
      }
    }
    const double reps = options.payloads_per_image;
    for (auto& r : records) {
      r.bit_acc = static_cast<double>(r.bits - r.bit_errors) / static_cast<double>(r.bits);
      r.mse /= reps;
      r.psnr /= reps;
      r.ssim /= reps;
      r.metameric /= reps;
      if (r.lpips) *r.lpips /= reps;
      report.images.push_back(std::move(r));
    }
  }
  report.finalize();
  return report;
}

}  // namespace fovsteg
