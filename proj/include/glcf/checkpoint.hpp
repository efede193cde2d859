#pragma once

#include <filesystem>
#include <vector>

#include "glcf/config.hpp"
#include "glcf/model.hpp"
#include "glcf/training.hpp"

namespace glcf {

// Trainable parameters in a TensorArchive; metadata carries the resolved run
// config under "__config__", the loss history and the backbone identity
// (seed, source, parameter digest).
struct Checkpoint {
  GlcfModel model{nullptr};
  RunConfig config;
  std::vector<LossRecord> history;
};

void save_checkpoint(const std::filesystem::path& path, GlcfModel& model, const RunConfig& config,
                     const std::vector<LossRecord>& history);

// Rebuilds the model from the embedded config and loads its parameters. A
// backbone whose digest differs from the recorded one raises ContractError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace glcf
