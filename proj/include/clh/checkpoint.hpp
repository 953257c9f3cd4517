#pragma once

#include <filesystem>
#include <string>

#include "clh/micromodel.hpp"
#include "clh/strategies.hpp"

namespace clh {

struct Checkpoint {
  ModelState model;
  OptState opt;
  StrategyState strategy;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Versioned little-endian binary image: magic, version, payload, CRC-32 of
/// the payload. Doubles are stored bit-for-bit.
std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws RuntimeFailure on bad magic, unsupported version, truncation or a
/// checksum mismatch.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Written to a temporary sibling and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes text atomically (temporary file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace clh
