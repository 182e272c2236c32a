#pragma once

#include <filesystem>
#include <memory>

#include <json.hpp>
#include <torch/torch.h>

#include "fovsteg/foveation.hpp"
#include "fovsteg/stegonet.hpp"

namespace fovsteg {

/// A loaded model: trainable weights, the frozen backbone they were trained
/// against, and the metadata needed to use them.
struct LoadedCheckpoint {
  StegoNet net{nullptr};
  FoveationConfig foveation;
  nlohmann::json train_state;
};

/// Writes one archive holding metadata (JSON), foveation config, training
/// state, the F/M/R weights, the desk backbone weights (external backbones
/// are referenced by path and hash) and optionally the optimizer state.
/// The write is atomic.
void save_checkpoint(const std::filesystem::path& path, StegoNet& net, const FoveationConfig& foveation,
                     const nlohmann::json& train_state, torch::optim::Optimizer* optimizer = nullptr);

/// Loads a checkpoint and verifies version and backbone hash.
/// Throws ModelMismatchError on version or hash mismatch, DataError when the
/// file cannot be read.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Restores optimizer state saved alongside the weights, if present.
bool load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer);

/// Refuses models whose k or resolution differ from the expectation.
void require_compatible(const ModelMetadata& meta, int k, int resolution);

}  // namespace fovsteg
