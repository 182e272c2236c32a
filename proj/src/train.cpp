#include "fovsteg/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include "fovsteg/checkpoint.hpp"
#include "fovsteg/errors.hpp"
#include "fovsteg/image_io.hpp"
#include "fovsteg/metrics.hpp"

namespace fovsteg {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

std::string to_string(ImageLoss l) { return l == ImageLoss::Metameric ? "metameric" : "mse"; }

ImageLoss image_loss_from_string(std::string_view s) {
  if (s == "metameric") return ImageLoss::Metameric;
  if (s == "mse") return ImageLoss::Mse;
  throw UsageError("unknown image loss '" + std::string(s) + "' (expected metameric|mse)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("invalid train config: " + m); };
  if (k <= 0) fail("k must be positive");
  if (resolution <= 0 || resolution % 8 != 0) fail("resolution must be a positive multiple of 8");
  if (lambda_i < 0.0) fail("lambda_i must be non-negative");
  if (warmup_start_epoch < -1) fail("warm-up start must be >= 0");
  if (warmup_ramp_epochs < -1) fail("warm-up ramp must be >= 0");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (epochs < 0) fail("epochs must be >= 0");
  foveation_or_default().validate();
}

FoveationConfig TrainConfig::foveation_or_default() const {
  return foveation.value_or(FoveationConfig::for_width(resolution));
}

int TrainConfig::resolved_warmup_start() const {
  return warmup_start_epoch >= 0 ? warmup_start_epoch : epochs / 10;
}

int TrainConfig::resolved_warmup_ramp() const {
  return warmup_ramp_epochs >= 0 ? warmup_ramp_epochs : epochs / 10;
}

double TrainConfig::lambda_at(int epoch) const {
  const int start = resolved_warmup_start();
  const int ramp = resolved_warmup_ramp();
  if (epoch < start) return 0.0;
  if (ramp == 0) return lambda_i;
  return lambda_i * std::min(1.0, static_cast<double>(epoch - start + 1) / ramp);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"k", c.k},
                     {"resolution", c.resolution},
                     {"lambda_i", c.lambda_i},
                     {"warmup_start_epoch", c.warmup_start_epoch},
                     {"warmup_ramp_epochs", c.warmup_ramp_epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"gaze_policy", to_string(c.gaze_policy)},
                     {"quantization_bridge", c.quantization_bridge},
                     {"seed", c.seed},
                     {"image_loss", to_string(c.image_loss)},
                     {"embedder_width", c.embedder_width},
                     {"merger_hidden", c.merger_hidden},
                     {"retriever", c.retriever},
                     {"val_payload_seed", c.val_payload_seed}};
  if (c.foveation) j["foveation"] = *c.foveation;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.k = j.value("k", d.k);
  c.resolution = j.value("resolution", d.resolution);
  c.lambda_i = j.value("lambda_i", d.lambda_i);
  c.warmup_start_epoch = j.value("warmup_start_epoch", d.warmup_start_epoch);
  c.warmup_ramp_epochs = j.value("warmup_ramp_epochs", d.warmup_ramp_epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.gaze_policy = gaze_policy_from_string(j.value("gaze_policy", std::string("center")));
  c.quantization_bridge = j.value("quantization_bridge", d.quantization_bridge);
  c.seed = j.value("seed", d.seed);
  c.image_loss = image_loss_from_string(j.value("image_loss", std::string("metameric")));
  c.embedder_width = j.value("embedder_width", d.embedder_width);
  c.merger_hidden = j.value("merger_hidden", d.merger_hidden);
  c.retriever = j.value("retriever", d.retriever);
  c.val_payload_seed = j.value("val_payload_seed", d.val_payload_seed);
  c.verbose = j.value("verbose", d.verbose);
  if (j.contains("foveation")) {
    c.foveation = j["foveation"].get<FoveationConfig>();
  } else {
    c.foveation.reset();
  }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"data", {{"train", c.data.train}, {"val", c.data.val}, {"test", c.data.test}}},
                     {"backbone", c.backbone},
                     {"pretrain", c.pretrain},
                     {"train", c.train}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (j.contains("data")) {
    const auto& d = j["data"];
    c.data.train = d.value("train", c.data.train);
    c.data.val = d.value("val", c.data.val);
    c.data.test = d.value("test", c.data.test);
  }
  if (j.contains("backbone")) c.backbone = j["backbone"].get<BackboneSpec>();
  if (j.contains("pretrain")) c.pretrain = j["pretrain"].get<PretrainConfig>();
  if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file: " + path.string());
  try {
    return nlohmann::json::parse(in).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed config " + path.string() + ": " + e.what());
  }
}

LossTerms total_loss(const torch::Tensor& bits, const torch::Tensor& logits, const torch::Tensor& cover,
                     const torch::Tensor& stego, GazePoint gaze, const TrainConfig& cfg, double lambda) {
  LossTerms t;
  t.bce = F::binary_cross_entropy_with_logits(logits, bits);
  if (lambda == 0.0) {
    t.image = torch::zeros({}, stego.options());
    t.total = t.bce;
    return t;
  }
  t.image = cfg.image_loss == ImageLoss::Metameric
                ? metameric_loss(cover, stego, gaze, cfg.foveation_or_default())
                : F::mse_loss(stego, cover);
  t.total = t.bce + lambda * t.image;
  return t;
}

void check_finite(const LossTerms& terms, int epoch, long step) {
  const double total = terms.total.item<double>();
  if (std::isfinite(total)) return;
  std::ostringstream msg;
  msg << "non-finite loss at epoch " << epoch << " step " << step << " (total=" << total
      << ", bce=" << terms.bce.item<double>() << ", image=" << terms.image.item<double>() << ")";
  throw RuntimeFailure(msg.str());
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch},         {"train_loss", r.train_loss},
                     {"bce", r.bce},             {"metameric", r.metameric},
                     {"val_bit_acc", r.val_bit_acc}, {"val_psnr", r.val_psnr}};
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
  j.at("epoch").get_to(r.epoch);
  j.at("train_loss").get_to(r.train_loss);
  j.at("bce").get_to(r.bce);
  j.at("metameric").get_to(r.metameric);
  j.at("val_bit_acc").get_to(r.val_bit_acc);
  j.at("val_psnr").get_to(r.val_psnr);
}

std::string metrics_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "epoch,train_loss,bce,metameric,val_bit_acc,val_psnr\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_loss << ',' << r.bce << ',' << r.metameric << ',' << r.val_bit_acc << ','
        << r.val_psnr << '\n';
  }
  return out.str();
}

ValidationResult validate_model(StegoNet& net, const DatasetManifest& manifest, const TrainConfig& cfg) {
  EvalOptions opts;
  opts.split = Split::Val;
  opts.payload_seed = cfg.val_payload_seed;
  opts.foveation = cfg.foveation_or_default();
  auto report = evaluate(net, manifest, opts);
  return {report.aggregate.bit_accuracy, report.aggregate.psnr};
}

std::size_t shared_parameter_count(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  std::unordered_set<const void*> ids;
  for (const auto& t : a) ids.insert(t.unsafeGetTensorImpl());
  std::size_t shared = 0;
  for (const auto& t : b) shared += ids.count(t.unsafeGetTensorImpl());
  return shared;
}

namespace {

ModelMetadata metadata_for(const TrainConfig& cfg, Backbone& backbone) {
  ModelMetadata m;
  m.k = cfg.k;
  m.resolution = cfg.resolution;
  m.downsample = backbone.spec().downsample;
  m.latent_channels = backbone.spec().latent_channels;
  m.gaze_policy = cfg.gaze_policy;
  m.lambda_i = cfg.lambda_i;
  m.image_loss = to_string(cfg.image_loss);
  m.backbone_id = backbone.identifier();
  m.backbone_hash = backbone.content_hash();
  m.retriever_profile = cfg.retriever;
  m.embedder_width = cfg.embedder_width;
  m.merger_hidden = cfg.merger_hidden;
  return m;
}

bool better(const EpochRecord& candidate, const EpochRecord& incumbent) {
  if (candidate.val_bit_acc != incumbent.val_bit_acc) return candidate.val_bit_acc > incumbent.val_bit_acc;
  return candidate.val_psnr > incumbent.val_psnr;
}

nlohmann::json train_state(const TrainConfig& cfg, int epochs_done, const std::vector<EpochRecord>& history,
                           const std::optional<EpochRecord>& best) {
  nlohmann::json j{{"epochs_done", epochs_done}, {"config", cfg}, {"history", history}};
  j["best"] = best ? nlohmann::json(*best) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

TrainResult train_model(const TrainConfig& cfg, const DatasetManifest& manifest,
                        std::shared_ptr<Backbone> backbone, const fs::path& out_dir,
                        const std::optional<fs::path>& resume) {
  cfg.validate();
  if (manifest.resolution != 0 && manifest.resolution != cfg.resolution) {
    throw ModelMismatchError("manifest resolution " + std::to_string(manifest.resolution) +
                             " differs from the training resolution " + std::to_string(cfg.resolution));
  }
  const auto train_entries = manifest.split(Split::Train);
  if (train_entries.empty()) throw DataError("train split is empty");
  if (manifest.split(Split::Val).empty()) throw DataError("validation split is empty");
  fs::create_directories(out_dir);

  const auto fov = cfg.foveation_or_default();
  backbone->freeze();

  StegoNet net{nullptr};
  std::vector<EpochRecord> history;
  std::optional<EpochRecord> best;
  int start_epoch = 0;
  if (resume) {
    auto loaded = load_checkpoint(*resume);
    require_compatible(loaded.net->metadata(), cfg.k, cfg.resolution);
    if (loaded.net->metadata().backbone_hash != backbone->content_hash()) {
      throw ModelMismatchError("resume checkpoint was trained against a different backbone");
    }
    net = StegoNet(loaded.net->metadata(), backbone);
    {
      torch::NoGradGuard guard;
      auto src = loaded.net->named_parameters();
      for (auto& p : net->named_parameters()) p.value().copy_(src[p.key()]);
      auto src_buf = loaded.net->named_buffers();
      for (auto& b : net->named_buffers()) b.value().copy_(src_buf[b.key()]);
    }
    const auto& st = loaded.train_state;
    start_epoch = st.value("epochs_done", 0);
    if (st.contains("history")) history = st["history"].get<std::vector<EpochRecord>>();
    if (st.contains("best") && !st["best"].is_null()) best = st["best"].get<EpochRecord>();
  } else {
    torch::manual_seed(cfg.seed);
    net = StegoNet(metadata_for(cfg, *backbone), backbone);
  }

  auto params = net->parameters();
  torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.learning_rate).weight_decay(0.0));
  if (resume) load_optimizer_state(*resume, opt);

  TrainResult result;
  result.best_checkpoint = out_dir / "best.ckpt";
  result.last_checkpoint = out_dir / "last.ckpt";
  result.optimized_parameters = params;

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, epoch));
    torch::manual_seed(mix_seed(cfg.seed, 100000 + epoch));
    const double lambda = cfg.lambda_at(epoch);
    auto order = train_entries;
    rng.shuffle(order);

    net->train();
    double sum_total = 0.0, sum_bce = 0.0, sum_image = 0.0;
    long steps = 0;
    for (std::size_t i = 0; i < order.size(); i += bs) {
      std::vector<ManifestEntry> chunk(order.begin() + i, order.begin() + std::min(order.size(), i + bs));
      auto covers = load_batch(chunk, cfg.resolution, true, &rng, true);
      const long n = covers.size(0);
      if (n == 0) continue;
      std::vector<torch::Tensor> rows;
      for (long j = 0; j < n; ++j) rows.push_back(Payload(rng.bits(cfg.k)).to_tensor());
      auto bits = torch::stack(rows);
      GazePoint gaze = cfg.gaze_policy == GazePolicy::UniformSampled ? GazePoint(rng.uniform(), rng.uniform())
                                                                      : GazePoint::center();

      auto stego = net->hide(covers, bits);
      auto seen = cfg.quantization_bridge ? quantization_bridge(stego, BridgeMode::Train) : stego;
      auto logits = net->reveal_logits(seen);
      auto terms = total_loss(bits, logits, covers, stego, gaze, cfg, lambda);
      check_finite(terms, epoch, steps);

      opt.zero_grad();
      terms.total.backward();
      opt.step();

      sum_total += terms.total.item<double>();
      sum_bce += terms.bce.item<double>();
      sum_image += terms.image.item<double>();
      ++steps;
    }

    auto val = validate_model(net, manifest, cfg);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = steps ? sum_total / steps : 0.0;
    rec.bce = steps ? sum_bce / steps : 0.0;
    rec.metameric = steps ? sum_image / steps : 0.0;
    rec.val_bit_acc = val.bit_acc;
    rec.val_psnr = val.psnr;
    history.push_back(rec);
    if (cfg.verbose) {
      std::cerr << "epoch " << epoch << " lambda " << lambda << " loss " << rec.train_loss << " bce " << rec.bce
                << " image " << rec.metameric << " val_acc " << rec.val_bit_acc << " val_psnr " << rec.val_psnr
                << "\n";
    }

    const bool improved = !best || better(rec, *best);
    if (improved) best = rec;
    try {
      auto state = train_state(cfg, epoch + 1, history, best);
      if (improved) save_checkpoint(result.best_checkpoint, net, fov, state, &opt);
      save_checkpoint(result.last_checkpoint, net, fov, state, &opt);
      atomic_write(out_dir / "metrics.csv", metrics_csv(history));
    } catch (const RuntimeFailure& e) {
      throw RuntimeFailure(std::string(e.what()) + " [training aborted after epoch " + std::to_string(epoch) +
                           "; earlier checkpoints in " + out_dir.string() + " remain valid]");
    }
  }

  if (!fs::exists(result.last_checkpoint)) {
    // Zero-epoch run: persist the initial model so callers always get files.
    auto state = train_state(cfg, start_epoch, history, best);
    save_checkpoint(result.last_checkpoint, net, fov, state, &opt);
    if (!fs::exists(result.best_checkpoint)) save_checkpoint(result.best_checkpoint, net, fov, state, &opt);
    atomic_write(out_dir / "metrics.csv", metrics_csv(history));
  }

  result.final_validation = validate_model(net, manifest, cfg);
  result.history = history;
  result.best = best.value_or(EpochRecord{});
  result.model = net;
  return result;
}

}  // namespace fovsteg
