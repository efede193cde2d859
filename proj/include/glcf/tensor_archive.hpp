#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

namespace glcf {

using TensorMap = std::map<std::string, torch::Tensor>;

// On-disk layout:
//   "GLCFTNSR" | u32 LE manifest length | UTF-8 JSON manifest | payload
// The manifest is an object whose "tensors" array lists {name, shape, dtype, offset};
// offsets are byte offsets into the payload. Any other top-level keys are carried
// through untouched as metadata (checkpoints use "__config__").
struct TensorArchive {
  TensorMap tensors;
  nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr char kArchiveMagic[8] = {'G', 'L', 'C', 'F', 'T', 'N', 'S', 'R'};

void save_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive);

// Full archive including metadata.
TensorArchive read_tensor_archive(const std::filesystem::path& path);

// Tensors only.
TensorMap load_tensor_archive(const std::filesystem::path& path);

// In-memory variants used by the file functions; exposed for corruption tests.
std::string encode_tensor_archive(const TensorArchive& archive);
TensorArchive decode_tensor_archive(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace glcf
