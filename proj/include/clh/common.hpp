#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace clh {

// Error categories map onto CLI exit codes (2, 3, 4).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ResumeMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Builds a generator from a seed plus any number of stream tags and strings.
/// Equal inputs give equal streams; std::seed_seq is fully specified so the
/// result does not depend on the standard library's hash functions.
class SeedBuilder {
 public:
  explicit SeedBuilder(std::uint64_t seed) { push(seed); }

  SeedBuilder& push(std::uint64_t v) {
    words_.push_back(static_cast<std::uint32_t>(v));
    words_.push_back(static_cast<std::uint32_t>(v >> 32));
    return *this;
  }

  SeedBuilder& push(std::string_view s) {
    push(static_cast<std::uint64_t>(s.size()));
    for (unsigned char c : s) words_.push_back(c);
    return *this;
  }

  Rng rng() const {
    std::seed_seq seq(words_.begin(), words_.end());
    return Rng(seq);
  }

  std::uint64_t derive() const {
    auto r = rng();
    return r();
  }

 private:
  std::basic_string<std::uint32_t> words_;
};

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n), n > 0.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(rng);
}

std::uint32_t crc32_of(std::string_view bytes);

std::string hex32(std::uint32_t v);

}  // namespace clh
