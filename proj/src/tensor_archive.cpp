#include "glcf/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "glcf/errors.hpp"

namespace glcf {
namespace {

static_assert(std::endian::native == std::endian::little,
              "TensorArchive payloads are little-endian; big-endian hosts are not supported");

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint32_t get_u32(const std::string& in, size_t pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_tensor_archive(const TensorArchive& archive) {
  nlohmann::json manifest = archive.metadata.is_object() ? archive.metadata : nlohmann::json::object();
  nlohmann::json entries = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, tensor] : archive.tensors) {
    auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.sizes().vec();
    e["dtype"] = "f32";
    e["offset"] = payload.size();
    entries.push_back(std::move(e));
    const auto nbytes = static_cast<size_t>(t.numel()) * sizeof(float);
    payload.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  manifest["tensors"] = std::move(entries);
  const std::string text = manifest.dump();

  std::string out(kArchiveMagic, sizeof(kArchiveMagic));
  put_u32(out, static_cast<uint32_t>(text.size()));
  out += text;
  out += payload;
  return out;
}

TensorArchive decode_tensor_archive(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kArchiveMagic, 8) != 0) {
    throw CorruptArchiveError("bad archive header: " + origin);
  }
  const size_t manifest_len = get_u32(bytes, 8);
  if (12 + manifest_len > bytes.size()) {
    throw CorruptArchiveError("manifest length exceeds file size: " + origin);
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(12, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArchiveError("manifest is not valid JSON (" + std::string(e.what()) + "): " + origin);
  }
  if (!manifest.is_object()) throw CorruptArchiveError("manifest must be a JSON object: " + origin);

  const size_t payload_start = 12 + manifest_len;
  const size_t payload_size = bytes.size() - payload_start;

  TensorArchive archive;
  std::set<std::string> seen;
  size_t payload_end = 0;
  const auto entries = manifest.contains("tensors") ? manifest.at("tensors") : nlohmann::json::array();
  if (!entries.is_array()) throw CorruptArchiveError("manifest 'tensors' must be an array: " + origin);
  for (const auto& e : entries) {
    std::string name;
    std::vector<int64_t> shape;
    std::string dtype;
    size_t offset = 0;
    try {
      name = e.at("name").get<std::string>();
      shape = e.at("shape").get<std::vector<int64_t>>();
      dtype = e.at("dtype").get<std::string>();
      offset = e.at("offset").get<size_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw CorruptArchiveError("malformed manifest entry (" + std::string(ex.what()) + "): " + origin);
    }
    if (dtype != "f32") throw UnsupportedFormatError("unsupported dtype '" + dtype + "' for " + name);
    if (!seen.insert(name).second) throw CorruptArchiveError("duplicate tensor name '" + name + "'");
    int64_t numel = 1;
    for (auto d : shape) {
      if (d < 0) throw CorruptArchiveError("negative dimension in '" + name + "'");
      numel *= d;
    }
    const size_t nbytes = static_cast<size_t>(numel) * sizeof(float);
    if (offset > payload_size || nbytes > payload_size - offset) {
      throw CorruptArchiveError("tensor '" + name + "' spans past the payload (" + std::to_string(payload_size) +
                                " bytes): " + origin);
    }
    payload_end = std::max(payload_end, offset + nbytes);
    auto t = torch::empty(shape, torch::kFloat32);
    if (nbytes > 0) std::memcpy(t.data_ptr(), bytes.data() + payload_start + offset, nbytes);
    archive.tensors.emplace(name, std::move(t));
  }
  if (payload_end != payload_size) {
    throw CorruptArchiveError("payload holds " + std::to_string(payload_size) + " bytes but manifest declares " +
                              std::to_string(payload_end) + ": " + origin);
  }
  manifest.erase("tensors");
  archive.metadata = std::move(manifest);
  return archive;
}

void save_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw MissingInputError("cannot open for writing: " + path.string());
  const auto bytes = encode_tensor_archive(archive);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TensorArchive read_tensor_archive(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingInputError("archive not found: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_tensor_archive(ss.str(), path.string());
}

TensorMap load_tensor_archive(const std::filesystem::path& path) { return read_tensor_archive(path).tensors; }

}  // namespace glcf
