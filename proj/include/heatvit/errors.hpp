#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace heatvit {

/// Malformed input file. `offset` is a byte offset for binary formats and a
/// 1-based line number for text formats.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace heatvit
