#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pseudolabel {

// Shapes that do not line up (matmul inner dims, batch width, ...).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Out-of-range numeric parameter (probabilities, fractions, counts).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inconsistent combination of settings, e.g. MC sampling on a model without dropout.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed on-disk artifact. `offset` is the byte position in `file` where
// reading went wrong.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& file, std::uint64_t offset, const std::string& what)
      : std::runtime_error(file + " @" + std::to_string(offset) + ": " + what),
        file_(file),
        offset_(offset) {}

  const std::string& file() const noexcept { return file_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string file_;
  std::uint64_t offset_;
};

// File could not be opened, created or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pseudolabel
