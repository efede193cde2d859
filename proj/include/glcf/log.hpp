#pragma once

#include <filesystem>
#include <string>

// Thin logging facade. The implementation is compiled without the torch
// include path because libtorch ships its own fmt, which clashes with the one
// spdlog was built against.
namespace glcf::log {

void info(const std::string& msg);
void warn(const std::string& msg);
void error(const std::string& msg);

// Mirrors every subsequent message into `path` (truncated). Replaces any earlier file sink.
void to_file(const std::filesystem::path& path);
// Stops writing to the console; the file sink, if any, is kept.
void quiet(bool on);
void flush();

}  // namespace glcf::log
