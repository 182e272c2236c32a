#include <fstream>

#include <gtest/gtest.h>

#include "fovsteg/checkpoint.hpp"
#include "fovsteg/errors.hpp"
#include "support.hpp"

using namespace fovsteg;
using testing_support::TempDir;

namespace {

StegoNet tiny_net(std::uint64_t seed = 0) {
  ModelMetadata m;
  m.k = 10;
  m.resolution = 16;
  m.embedder_width = 32;
  m.merger_hidden = 8;
  auto bb = testing_support::small_backbone(seed);
  torch::manual_seed(seed + 5);
  return StegoNet(m, bb);
}

void write_with_header(const std::filesystem::path& path, StegoNet& net, const nlohmann::json& header) {
  torch::serialize::OutputArchive archive;
  archive.write("header", c10::IValue(header.dump()));
  torch::serialize::OutputArchive model;
  net->save(model);
  archive.write("model", model);
  torch::serialize::OutputArchive bb;
  dynamic_cast<DeskBackbone&>(net->backbone()).save(bb);
  archive.write("backbone", bb);
  archive.save_to(path.string());
}

nlohmann::json header_for(StegoNet& net) {
  nlohmann::json meta = net->metadata();
  meta["backbone_hash"] = net->backbone().content_hash();
  return {{"metadata", meta},
          {"foveation", FoveationConfig::for_width(16)},
          {"backbone", net->backbone().spec()},
          {"train_state", nlohmann::json::object()}};
}

}  // namespace

TEST(Checkpoint, RoundTripReproducesOutputs) {
  TempDir dir("ckpt");
  auto net = tiny_net();
  net->eval();
  auto fov = FoveationConfig::for_width(16);
  save_checkpoint(dir / "m.ckpt", net, fov, {{"epochs_done", 3}});

  auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded.net->metadata().k, 10);
  EXPECT_EQ(loaded.net->metadata().resolution, 16);
  EXPECT_EQ(loaded.net->backbone().content_hash(), net->backbone().content_hash());
  EXPECT_EQ(loaded.train_state.at("epochs_done").get<int>(), 3);
  EXPECT_DOUBLE_EQ(loaded.foveation.alpha, fov.alpha);

  torch::manual_seed(2);
  auto covers = torch::rand({2, 3, 16, 16}) * 2 - 1;
  auto bits = torch::randint(0, 2, {2, 10}).to(torch::kFloat32);
  torch::NoGradGuard guard;
  auto a = net->hide(covers, bits);
  auto b = loaded.net->hide(covers, bits);
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_TRUE(torch::equal(net->reveal_logits(a), loaded.net->reveal_logits(b)));
}

TEST(Checkpoint, OptimizerStateIsOptional) {
  TempDir dir("ckpt");
  auto net = tiny_net();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(1e-3));
  save_checkpoint(dir / "without.ckpt", net, FoveationConfig::for_width(16), {});
  save_checkpoint(dir / "with.ckpt", net, FoveationConfig::for_width(16), {}, &opt);
  EXPECT_FALSE(load_optimizer_state(dir / "without.ckpt", opt));
  EXPECT_TRUE(load_optimizer_state(dir / "with.ckpt", opt));
}

TEST(Checkpoint, VersionMismatchIsRefused) {
  TempDir dir("ckpt");
  auto net = tiny_net();
  auto header = header_for(net);
  header["metadata"]["version"] = "fovsteg-ckpt-0";
  write_with_header(dir / "old.ckpt", net, header);
  try {
    load_checkpoint(dir / "old.ckpt");
    FAIL() << "expected ModelMismatchError";
  } catch (const ModelMismatchError& e) {
    EXPECT_NE(std::string(e.what()).find("fovsteg-ckpt-0"), std::string::npos);
  }
}

TEST(Checkpoint, BackboneHashMismatchIsRefused) {
  TempDir dir("ckpt");
  auto net = tiny_net();
  auto header = header_for(net);
  header["metadata"]["backbone_hash"] = std::string(64, '0');
  write_with_header(dir / "tampered.ckpt", net, header);
  try {
    load_checkpoint(dir / "tampered.ckpt");
    FAIL() << "expected ModelMismatchError";
  } catch (const ModelMismatchError& e) {
    EXPECT_NE(std::string(e.what()).find("hash mismatch"), std::string::npos);
  }
}

TEST(Checkpoint, MissingAndCorruptFilesAreDataErrors) {
  TempDir dir("ckpt");
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), DataError);
  std::ofstream(dir / "junk.ckpt") << "not an archive";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), DataError);
}

TEST(Checkpoint, FailedWriteLeavesNoTemporaryAndKeepsTarget) {
  TempDir dir("ckpt");
  auto net = tiny_net();
  // The destination is a non-empty directory, so the final rename cannot succeed.
  std::filesystem::create_directories(dir / "busy.ckpt");
  std::ofstream(dir / "busy.ckpt" / "keep") << "x";
  EXPECT_THROW(save_checkpoint(dir / "busy.ckpt", net, FoveationConfig::for_width(16), {}), RuntimeFailure);
  EXPECT_TRUE(std::filesystem::exists(dir / "busy.ckpt" / "keep"));
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    EXPECT_EQ(e.path().filename().string().find(".tmp"), std::string::npos) << e.path();
  }

  std::ofstream(dir / "plain") << "x";
  EXPECT_THROW(save_checkpoint(dir / "plain" / "m.ckpt", net, FoveationConfig::for_width(16), {}),
               RuntimeFailure);
}

TEST(Checkpoint, RequireCompatible) {
  ModelMetadata m;
  m.k = 100;
  m.resolution = 256;
  EXPECT_NO_THROW(require_compatible(m, 100, 256));
  EXPECT_THROW(require_compatible(m, 200, 256), ModelMismatchError);
  EXPECT_THROW(require_compatible(m, 100, 128), ModelMismatchError);
}
