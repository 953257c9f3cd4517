#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "clh/manifest.hpp"

namespace clh::test {

/// n languages "l00".."l<n-1>" with `domains` batches each; hours vary with
/// the language index so the hours ranking is strict.
inline Catalog synthetic_catalog(int languages, int domains, std::int64_t n_train = 40, std::int64_t n_test = 6) {
  std::vector<BatchMeta> rows;
  for (int l = 0; l < languages; ++l) {
    char lang[16];
    std::snprintf(lang, sizeof lang, "l%02d", l);
    for (int d = 0; d < domains; ++d) {
      BatchMeta b;
      b.language = lang;
      b.domain = "d" + std::to_string(l) + "-" + std::to_string(d);
      b.batch_id = std::string(lang) + "-" + std::to_string(d);
      b.hours_cents = 100 * (languages - l) + 10 * d + 50;
      b.n_train = n_train;
      b.n_test = n_test;
      rows.push_back(b);
    }
  }
  return Catalog(std::move(rows));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("clh-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace clh::test
