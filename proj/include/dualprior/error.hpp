#pragma once

#include <stdexcept>
#include <string>

namespace dualprior {

// Exit-code categories surfaced by the CLI.
enum class ErrorCategory : int {
    kConfig = 2,
    kData = 3,
    kNumeric = 4,
    kIo = 5,
};

class Error : public std::runtime_error {
   public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

   private:
    ErrorCategory category_;
};

class ConfigError : public Error {
   public:
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::kConfig, what) {}
};

class DataError : public Error {
   public:
    explicit DataError(const std::string& what) : Error(ErrorCategory::kData, what) {}
};

class NumericError : public Error {
   public:
    explicit NumericError(const std::string& what) : Error(ErrorCategory::kNumeric, what) {}
};

class ShapeError : public NumericError {
   public:
    explicit ShapeError(const std::string& what) : NumericError(what) {}
};

class IoError : public Error {
   public:
    explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};

}  // namespace dualprior
