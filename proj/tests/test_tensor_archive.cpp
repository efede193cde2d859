#include <gtest/gtest.h>

#include <cstring>

#include "glcf/errors.hpp"
#include "glcf/tensor_archive.hpp"
#include "test_support.hpp"

using namespace glcf;

TEST(TensorArchive, EmptyManifestGivesEmptyMap) {
  TensorArchive ar;
  auto back = decode_tensor_archive(encode_tensor_archive(ar));
  EXPECT_TRUE(back.tensors.empty());
}

TEST(TensorArchive, RoundtripIsIdentity) {
  const auto dir = glcf::testing::scratch_dir("archive_roundtrip");
  TensorArchive ar;
  ar.tensors["w"] = torch::ones({2, 2});
  ar.tensors["b.c"] = torch::randn({3, 1, 4});
  ar.tensors["scalar"] = torch::tensor(3.5f).reshape({});
  ar.metadata["__config__"] = {{"k", 1}};
  save_tensor_archive(dir / "a.glcf", ar);
  auto back = read_tensor_archive(dir / "a.glcf");
  ASSERT_EQ(back.tensors.size(), 3u);
  for (const auto& [name, t] : ar.tensors) {
    ASSERT_EQ(back.tensors.at(name).sizes(), t.sizes()) << name;
    EXPECT_TRUE(torch::equal(back.tensors.at(name), t)) << name;
  }
  EXPECT_EQ(back.metadata["__config__"]["k"], 1);
  EXPECT_EQ(load_tensor_archive(dir / "a.glcf").size(), 3u);
}

TEST(TensorArchive, HeaderLayout) {
  TensorArchive ar;
  ar.tensors["w"] = torch::ones({2, 2});
  const auto bytes = encode_tensor_archive(ar);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 8), "GLCFTNSR");
  uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 4);
  auto manifest = nlohmann::json::parse(bytes.substr(12, len));
  ASSERT_EQ(manifest["tensors"].size(), 1u);
  EXPECT_EQ(manifest["tensors"][0]["dtype"], "f32");
  EXPECT_EQ(manifest["tensors"][0]["offset"], 0);
  EXPECT_EQ(bytes.size(), 12u + len + 16u);
}

namespace {

std::string archive_with_manifest(const nlohmann::json& manifest, size_t payload_bytes) {
  const auto m = manifest.dump();
  std::string out(kArchiveMagic, 8);
  const auto len = static_cast<uint32_t>(m.size());
  out.append(reinterpret_cast<const char*>(&len), 4);
  out += m;
  out.append(payload_bytes, '\0');
  return out;
}

}  // namespace

TEST(TensorArchive, ShortPayloadIsCorrupt) {
  nlohmann::json m{{"tensors", {{{"name", "w"}, {"shape", {4}}, {"dtype", "f32"}, {"offset", 0}}}}};
  EXPECT_THROW(decode_tensor_archive(archive_with_manifest(m, 12)), CorruptArchiveError);
  EXPECT_NO_THROW(decode_tensor_archive(archive_with_manifest(m, 16)));
  EXPECT_THROW(decode_tensor_archive(archive_with_manifest(m, 20)), CorruptArchiveError);
}

TEST(TensorArchive, UnknownDtypeIsUnsupported) {
  nlohmann::json m{{"tensors", {{{"name", "w"}, {"shape", {2}}, {"dtype", "f64"}, {"offset", 0}}}}};
  EXPECT_THROW(decode_tensor_archive(archive_with_manifest(m, 16)), UnsupportedFormatError);
}

TEST(TensorArchive, RejectsBadMagicDuplicateNamesAndTruncation) {
  TensorArchive ar;
  ar.tensors["w"] = torch::ones({2});
  auto bytes = encode_tensor_archive(ar);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_tensor_archive(bad), CorruptArchiveError);
  EXPECT_THROW(decode_tensor_archive(bytes.substr(0, 10)), CorruptArchiveError);

  nlohmann::json dup{{"tensors",
                      {{{"name", "w"}, {"shape", {1}}, {"dtype", "f32"}, {"offset", 0}},
                       {{"name", "w"}, {"shape", {1}}, {"dtype", "f32"}, {"offset", 4}}}}};
  EXPECT_THROW(decode_tensor_archive(archive_with_manifest(dup, 8)), CorruptArchiveError);
}

TEST(TensorArchive, MissingFileIsMissingInput) {
  try {
    read_tensor_archive("/nonexistent/x.glcf");
    FAIL();
  } catch (const GlcfError& e) {
    EXPECT_EQ(e.exit_code(), 3);
  }
}
