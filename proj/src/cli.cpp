#include "fovsteg/cli.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "fovsteg/backbone.hpp"
#include "fovsteg/checkpoint.hpp"
#include "fovsteg/data.hpp"
#include "fovsteg/domain.hpp"
#include "fovsteg/errors.hpp"
#include "fovsteg/image_io.hpp"
#include "fovsteg/metrics.hpp"
#include "fovsteg/synthetic.hpp"
#include "fovsteg/train.hpp"

namespace fovsteg {

namespace fs = std::filesystem;

namespace {

struct TrainArgs {
  std::string config;
  std::vector<std::string> data_dirs;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string manifest;
  std::string backbone;
  std::string resume;
  bool verbose = false;
};

struct HideArgs {
  std::string ckpt, cover, payload, gaze = "0.5,0.5", out;
};

struct RevealArgs {
  std::string ckpt, stego, out = "hex";
};

struct EvalArgs {
  std::string ckpt, manifest, split = "test", report;
  int payloads_per_image = 1;
  std::uint64_t seed = 0;
  std::string gaze = "0.5,0.5";
  bool in_memory = false;
};

struct MetricsArgs {
  std::string a, b, gaze = "0.5,0.5";
};

struct SynthArgs {
  std::string out;
  std::size_t count = 100;
  std::uint64_t seed = 1;
  int min_size = 64;
  int max_size = 96;
};

std::shared_ptr<Backbone> obtain_backbone(const ExperimentConfig& exp, const TrainArgs& args,
                                          const DatasetManifest& manifest, const fs::path& out_dir,
                                          std::ostream& out) {
  if (!args.backbone.empty()) return DeskBackbone::load_file(args.backbone);
  if (exp.backbone.variant == BackboneVariant::External) {
    if (!exp.backbone.weights) throw UsageError("external backbone requires backbone.weights");
    return load_external_backbone(*exp.backbone.weights, exp.backbone, exp.train.resolution);
  }
  if (exp.backbone.weights) return DeskBackbone::load_file(*exp.backbone.weights);
  const fs::path cached = out_dir / "backbone.pt";
  if (fs::exists(cached)) {
    out << "using existing backbone " << cached.string() << "\n";
    return DeskBackbone::load_file(cached);
  }
  out << "pretraining desk backbone\n";
  auto pre = pretrain_desk_backbone(manifest, exp.backbone, exp.pretrain, cached);
  out << "backbone held-out PSNR " << std::fixed << std::setprecision(2) << pre.heldout_psnr << " dB after "
      << pre.epochs_run << " epochs\n";
  return pre.backbone;
}

CommandResult cmd_train(const TrainArgs& args, std::ostream& out) {
  ExperimentConfig exp = load_experiment_config(args.config);
  if (args.seed) {
    exp.train.seed = *args.seed;
    exp.pretrain.seed = *args.seed;
  }
  exp.train.verbose = exp.train.verbose || args.verbose;
  exp.pretrain.verbose = exp.pretrain.verbose || args.verbose;
  exp.train.validate();
  const fs::path out_dir = args.out;
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  const fs::path manifest_path = args.manifest.empty() ? out_dir / "manifest.txt" : fs::path(args.manifest);
  if (fs::exists(manifest_path)) {
    manifest = DatasetManifest::load(manifest_path);
    out << "loaded manifest " << manifest_path.string() << "\n";
  } else {
    if (args.data_dirs.empty()) throw UsageError("--data-dir is required when no manifest exists");
    std::vector<fs::path> dirs(args.data_dirs.begin(), args.data_dirs.end());
    manifest = build_manifest(dirs, exp.data, exp.train.seed, exp.train.resolution);
    manifest.save(manifest_path);
    out << "wrote manifest " << manifest_path.string() << "\n";
  }

  auto backbone = obtain_backbone(exp, args, manifest, out_dir, out);
  std::optional<fs::path> resume;
  if (!args.resume.empty()) resume = fs::path(args.resume);
  auto result = train_model(exp.train, manifest, backbone, out_dir, resume);

  std::ostringstream msg;
  msg << std::fixed << std::setprecision(4) << "trained " << result.history.size() << " epochs; best val bit acc "
      << result.best.val_bit_acc << ", val PSNR " << std::setprecision(2) << result.best.val_psnr << " dB";
  return {0, msg.str(), {result.best_checkpoint, result.last_checkpoint, out_dir / "metrics.csv"}};
}

CommandResult cmd_hide(const HideArgs& args) {
  auto loaded = load_checkpoint(args.ckpt);
  auto& net = loaded.net;
  const auto& meta = net->metadata();
  const Payload payload = bits_from_bytes(parse_payload_argument(args.payload), static_cast<std::size_t>(meta.k));
  const GazePoint gaze = GazePoint::parse(args.gaze);

  auto cover01 = read_image(args.cover);
  if (cover01.size(1) != meta.resolution || cover01.size(2) != meta.resolution) {
    throw ModelMismatchError("cover is " + std::to_string(cover01.size(2)) + "x" + std::to_string(cover01.size(1)) +
                             " but the checkpoint was trained at " + std::to_string(meta.resolution) + "x" +
                             std::to_string(meta.resolution));
  }
  net->eval();
  auto stego = hide_image(net, normalize(cover01), payload);
  auto stego01 = denormalize(quantization_bridge(stego, BridgeMode::Eval));
  write_png(args.out, stego01);

  auto a = cover01.unsqueeze(0).to(torch::kFloat64);
  auto b = stego01.unsqueeze(0).to(torch::kFloat64);
  const double db = psnr(a, b);
  const double meta_loss = metameric_loss(a, b, gaze, loaded.foveation).item<double>();
  std::ostringstream msg;
  msg << std::fixed << std::setprecision(2) << "PSNR " << capped_psnr(db) << " dB" << std::setprecision(6)
      << ", metameric " << meta_loss << " (gaze " << gaze.x << "," << gaze.y << ")";
  return {0, msg.str(), {args.out}};
}

CommandResult cmd_reveal(const RevealArgs& args) {
  auto loaded = load_checkpoint(args.ckpt);
  auto& net = loaded.net;
  auto stego01 = read_image(args.stego);
  net->eval();
  const Payload bits = reveal_image(net, normalize(stego01));
  const auto bytes = bytes_from_bits(bits);
  if (args.out == "hex") return {0, "hex:" + to_hex(bytes), {}};
  if (args.out.rfind("file:", 0) == 0) {
    const fs::path path = args.out.substr(5);
    atomic_write(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    return {0, "wrote " + std::to_string(bits.size()) + " bits to " + path.string(), {path}};
  }
  throw UsageError("--out must be 'hex' or 'file:<path>'");
}

CommandResult cmd_eval(const EvalArgs& args, PerceptualMetric* perceptual) {
  auto loaded = load_checkpoint(args.ckpt);
  auto manifest = DatasetManifest::load(args.manifest);
  if (manifest.resolution != 0 && manifest.resolution != loaded.net->metadata().resolution) {
    throw ModelMismatchError("manifest resolution " + std::to_string(manifest.resolution) +
                             " differs from checkpoint resolution " +
                             std::to_string(loaded.net->metadata().resolution));
  }
  EvalOptions opts;
  opts.split = split_from_string(args.split);
  opts.payloads_per_image = args.payloads_per_image;
  opts.payload_seed = args.seed;
  opts.gaze = GazePoint::parse(args.gaze);
  opts.foveation = loaded.foveation;
  opts.perceptual = perceptual;
  opts.in_memory = args.in_memory;
  if (opts.payloads_per_image < 1) throw UsageError("--payloads-per-image must be >= 1");
  auto report = evaluate(loaded.net, manifest, opts);
  report.write(args.report);
  const auto& ag = report.aggregate;
  std::ostringstream msg;
  msg << std::setprecision(6) << "images " << ag.images << ", bits " << ag.total_bits << ", bit errors "
      << ag.total_bit_errors << ", bit acc " << ag.bit_accuracy << ", PSNR " << ag.psnr << ", SSIM " << ag.ssim
      << ", metameric " << ag.metameric;
  const fs::path dir = args.report;
  return {0, msg.str(), {dir / "report.json", dir / "report.csv"}};
}

CommandResult cmd_metrics(const MetricsArgs& args) {
  auto a = read_image(args.a).unsqueeze(0).to(torch::kFloat64);
  auto b = read_image(args.b).unsqueeze(0).to(torch::kFloat64);
  if (a.sizes() != b.sizes()) throw DataError("images differ in size");
  const GazePoint gaze = GazePoint::parse(args.gaze);
  const auto fov = FoveationConfig::for_width(static_cast<int>(a.size(3)));
  const double m = mse(a, b);
  std::ostringstream msg;
  msg << std::setprecision(8) << "mse " << m << "\npsnr " << capped_psnr(psnr_from_mse(m)) << "\nssim "
      << ssim(a, b) << "\nmetameric " << metameric_loss(a, b, gaze, fov).item<double>();
  return {0, msg.str(), {}};
}

CommandResult cmd_synth(const SynthArgs& args) {
  SynthOptions o{args.count, args.seed, args.min_size, args.max_size};
  auto files = write_synthetic_folder(args.out, o);
  return {0, "wrote " + std::to_string(files.size()) + " images to " + args.out, {}};
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Foveated latent steganography"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Build/load the manifest, obtain the backbone and train F, M and R");
  t->add_option("--config", train.config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--data-dir", train.data_dirs, "Image folder, one per source");
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--seed", train.seed, "Overrides train.seed and pretrain.seed");
  t->add_option("--manifest", train.manifest, "Existing manifest (default <out>/manifest.txt)");
  t->add_option("--backbone", train.backbone, "Pretrained desk backbone file");
  t->add_option("--resume", train.resume, "Checkpoint to continue from");
  t->add_flag("-v,--verbose", train.verbose, "Per-epoch progress on stderr");

  HideArgs hide;
  auto* h = app.add_subcommand("hide", "Embed a payload into a cover image");
  h->add_option("--ckpt", hide.ckpt)->required();
  h->add_option("--cover", hide.cover)->required();
  h->add_option("--payload", hide.payload, "hex:<digits> or file:<path>")->required();
  h->add_option("--gaze", hide.gaze, "Gaze X,Y used for the reported metameric loss");
  h->add_option("--out", hide.out, "Stego PNG")->required();

  RevealArgs reveal;
  auto* r = app.add_subcommand("reveal", "Recover the payload from a stego image");
  r->add_option("--ckpt", reveal.ckpt)->required();
  r->add_option("--stego", reveal.stego)->required();
  r->add_option("--out", reveal.out, "hex or file:<path>");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  e->add_option("--ckpt", ev.ckpt)->required();
  e->add_option("--manifest", ev.manifest)->required();
  e->add_option("--split", ev.split);
  e->add_option("--report", ev.report, "Report directory")->required();
  e->add_option("--payloads-per-image", ev.payloads_per_image);
  e->add_option("--seed", ev.seed, "Payload seed");
  e->add_option("--gaze", ev.gaze);
  e->add_flag("--in-memory", ev.in_memory, "Skip 8-bit quantization between hide and reveal");

  MetricsArgs mt;
  auto* m = app.add_subcommand("metrics", "Compare two images");
  m->add_option("--a", mt.a)->required();
  m->add_option("--b", mt.b)->required();
  m->add_option("--gaze", mt.gaze);

  SynthArgs sy;
  auto* s = app.add_subcommand("synth", "Write a folder of procedural cover images");
  s->add_option("--out", sy.out)->required();
  s->add_option("--count", sy.count);
  s->add_option("--seed", sy.seed);
  s->add_option("--min-size", sy.min_size);
  s->add_option("--max-size", sy.max_size);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& ex) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return static_cast<int>(ErrorKind::Usage);
  }

  try {
    CommandResult res;
    if (*t) res = cmd_train(train, out);
    else if (*h) res = cmd_hide(hide);
    else if (*r) res = cmd_reveal(reveal);
    else if (*e) res = cmd_eval(ev, nullptr);
    else if (*m) res = cmd_metrics(mt);
    else res = cmd_synth(sy);
    out << res.message << "\n";
    for (const auto& p : res.artifacts) out << "wrote " << p.string() << "\n";
    return res.exit_code;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return static_cast<int>(ex.kind());
  } catch (const c10::Error& ex) {
    err << "error: " << ex.what_without_backtrace() << "\n";
    return static_cast<int>(ErrorKind::Runtime);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return static_cast<int>(ErrorKind::Runtime);
  }
}

}  // namespace fovsteg
