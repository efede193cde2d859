#include "glcf/log.hpp"

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <memory>
#include <mutex>

namespace glcf::log {

namespace {

struct State {
  std::mutex mu;
  std::shared_ptr<spdlog::sinks::sink> console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
  std::shared_ptr<spdlog::sinks::sink> file;
  bool quiet = false;
  std::shared_ptr<spdlog::logger> logger;

  State() { rebuild(); }

  void rebuild() {
    std::vector<spdlog::sink_ptr> sinks;
    if (!quiet) sinks.push_back(console);
    if (file) sinks.push_back(file);
    logger = std::make_shared<spdlog::logger>("glcf", sinks.begin(), sinks.end());
    logger->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
    logger->flush_on(spdlog::level::warn);
  }
};

State& state() {
  static State s;
  return s;
}

}  // namespace

void info(const std::string& msg) { state().logger->info(msg); }
void warn(const std::string& msg) { state().logger->warn(msg); }
void error(const std::string& msg) { state().logger->error(msg); }

void to_file(const std::filesystem::path& path) {
  auto& s = state();
  std::lock_guard lock(s.mu);
  if (s.logger) s.logger->flush();
  s.file = std::make_shared<spdlog::sinks::basic_file_sink_mt>(path.string(), true);
  s.rebuild();
}

void quiet(bool on) {
  auto& s = state();
  std::lock_guard lock(s.mu);
  s.quiet = on;
  s.rebuild();
}

void flush() { state().logger->flush(); }

}  // namespace glcf::log
