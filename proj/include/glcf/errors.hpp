#pragma once

#include <stdexcept>
#include <string>

namespace glcf {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorCategory {
  kConfig = 2,
  kMissingInput = 3,
  kNumericFault = 4,
  kContract = 5,
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kMissingInput: return "missing_input";
    case ErrorCategory::kNumericFault: return "numeric_fault";
    case ErrorCategory::kContract: return "contract";
  }
  return "unknown";
}

class GlcfError : public std::runtime_error {
 public:
  GlcfError(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

struct ConfigError : GlcfError {
  explicit ConfigError(const std::string& w) : GlcfError(ErrorCategory::kConfig, w) {}
};

struct MissingInputError : GlcfError {
  explicit MissingInputError(const std::string& w) : GlcfError(ErrorCategory::kMissingInput, w) {}
};

struct NumericFault : GlcfError {
  explicit NumericFault(const std::string& w) : GlcfError(ErrorCategory::kNumericFault, w) {}
};

struct ContractError : GlcfError {
  explicit ContractError(const std::string& w) : GlcfError(ErrorCategory::kContract, w) {}
};

// Archive problems are input problems from the CLI's point of view.
struct CorruptArchiveError : GlcfError {
  explicit CorruptArchiveError(const std::string& w) : GlcfError(ErrorCategory::kMissingInput, w) {}
};

struct UnsupportedFormatError : GlcfError {
  explicit UnsupportedFormatError(const std::string& w) : GlcfError(ErrorCategory::kMissingInput, w) {}
};

}  // namespace glcf
