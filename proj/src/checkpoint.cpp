#include "fovsteg/checkpoint.hpp"

#include "fovsteg/errors.hpp"
#include "fovsteg/image_io.hpp"

namespace fovsteg {

namespace fs = std::filesystem;

void save_checkpoint(const fs::path& path, StegoNet& net, const FoveationConfig& foveation,
                     const nlohmann::json& train_state, torch::optim::Optimizer* optimizer) {
  torch::serialize::OutputArchive archive;
  nlohmann::json meta = net->metadata();
  meta["backbone_hash"] = net->backbone().content_hash();
  meta["backbone_id"] = net->backbone().identifier();
  nlohmann::json header{{"metadata", meta},
                        {"foveation", foveation},
                        {"backbone", net->backbone().spec()},
                        {"train_state", train_state}};
  archive.write("header", c10::IValue(header.dump()));

  torch::serialize::OutputArchive model;
  net->save(model);
  archive.write("model", model);

  if (auto* desk = dynamic_cast<DeskBackbone*>(&net->backbone())) {
    torch::serialize::OutputArchive bb;
    desk->save(bb);
    archive.write("backbone", bb);
  }
  if (optimizer) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    archive.write("optimizer", opt);
  }

  auto tmp = temp_sibling(path);
  auto fail = [&](const std::string& why) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw RuntimeFailure("checkpoint write failed for " + path.string() + " (disk full?); " +
                         "previous checkpoint left in place: " + why);
  };
  try {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    archive.save_to(tmp.string());
  } catch (const c10::Error& e) {
    fail(e.what_without_backtrace());
  } catch (const std::exception& e) {
    fail(e.what());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail("cannot move the temporary file into place: " + ec.message());
}

namespace {

torch::serialize::InputArchive open_archive(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw DataError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return archive;
}

}  // namespace

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  auto archive = open_archive(path);
  c10::IValue header_value;
  if (!archive.try_read("header", header_value)) {
    throw ModelMismatchError(path.string() + " is not a fovsteg checkpoint");
  }
  auto header = nlohmann::json::parse(header_value.toStringRef());
  ModelMetadata meta = header.at("metadata").get<ModelMetadata>();
  if (meta.version != kCheckpointVersion) {
    throw ModelMismatchError("checkpoint version '" + meta.version + "' is not supported (expected '" +
                             std::string(kCheckpointVersion) + "')");
  }
  BackboneSpec bspec = header.at("backbone").get<BackboneSpec>();

  std::shared_ptr<Backbone> backbone;
  if (bspec.variant == BackboneVariant::Desk) {
    bspec.frozen = true;
    auto desk = std::make_shared<DeskBackbone>(bspec);
    torch::serialize::InputArchive bb;
    if (!archive.try_read("backbone", bb)) throw ModelMismatchError("checkpoint has no backbone weights");
    desk->load(bb);
    backbone = desk;
  } else {
    if (!bspec.weights) throw ModelMismatchError("checkpoint references no external backbone weights");
    backbone = load_external_backbone(*bspec.weights, bspec, meta.resolution);
  }
  const auto hash = backbone->content_hash();
  if (hash != meta.backbone_hash) {
    throw ModelMismatchError("backbone hash mismatch: checkpoint expects " + meta.backbone_hash + ", found " +
                             hash);
  }

  LoadedCheckpoint out;
  out.net = StegoNet(meta, backbone);
  torch::serialize::InputArchive model;
  archive.read("model", model);
  try {
    torch::NoGradGuard guard;
    out.net->load(model);
  } catch (const c10::Error& e) {
    throw ModelMismatchError("checkpoint weights do not match its metadata: " +
                             std::string(e.what_without_backtrace()));
  }
  out.net->eval();
  out.foveation = header.at("foveation").get<FoveationConfig>();
  out.train_state = header.value("train_state", nlohmann::json::object());
  return out;
}

bool load_optimizer_state(const fs::path& path, torch::optim::Optimizer& optimizer) {
  auto archive = open_archive(path);
  torch::serialize::InputArchive opt;
  if (!archive.try_read("optimizer", opt)) return false;
  optimizer.load(opt);
  return true;
}

void require_compatible(const ModelMetadata& meta, int k, int resolution) {
  if (meta.k != k) {
    throw ModelMismatchError("model payload length is " + std::to_string(meta.k) + " bits, expected " +
                             std::to_string(k));
  }
  if (meta.resolution != resolution) {
    throw ModelMismatchError("model resolution is " + std::to_string(meta.resolution) + ", expected " +
                             std::to_string(resolution));
  }
}

}  // namespace fovsteg
