#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "glcf/backbone.hpp"

namespace glcf::testing {

// Fresh, empty scratch directory unique to this process.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("glcf_test_" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline FeaturePyramid random_pyramid(int64_t batch, const std::array<int64_t, 3>& channels,
                                     const std::array<int64_t, 3>& sizes, torch::Dtype dtype = torch::kDouble) {
  FeaturePyramid p;
  for (size_t i = 0; i < 3; ++i) p[i] = torch::randn({batch, channels[i], sizes[i], sizes[i]}, dtype);
  return p;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline double rel_err(double a, double b) {
  const double d = std::max(std::abs(a), std::abs(b));
  return d == 0.0 ? 0.0 : std::abs(a - b) / d;
}

}  // namespace glcf::testing
