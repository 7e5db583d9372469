#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tagseg {

// Misconfiguration: inconsistent shapes, bad thresholds, malformed config files.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss.
struct divergence_error : std::runtime_error {
  explicit divergence_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A filter stage removed every record.
struct data_exhaustion_error : std::runtime_error {
  explicit data_exhaustion_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file; `offset` is the byte position where parsing failed.
struct parse_error : std::runtime_error {
  std::size_t offset;
  parse_error(const std::string& msg, std::size_t byte_offset)
      : std::runtime_error(msg + " (byte " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
};

}  // namespace tagseg
