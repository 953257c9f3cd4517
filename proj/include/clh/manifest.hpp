#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace clh {

/// One data-collection batch: the speech gathered for a (language, district)
/// pair. Hours are held as integer hundredths so aggregates are exact.
struct BatchMeta {
  std::string batch_id;
  std::string language;
  std::string domain;
  std::int64_t hours_cents = 0;
  std::int64_t n_train = 0;
  std::int64_t n_test = 0;

  double hours() const { return static_cast<double>(hours_cents) / 100.0; }

  friend bool operator==(const BatchMeta&, const BatchMeta&) = default;
};

/// Sample counts used when a catalog row leaves them blank.
std::int64_t default_n_train(std::int64_t hours_cents);
std::int64_t default_n_test(std::int64_t hours_cents);

/// Immutable, validated batch universe with derived indexes.
class Catalog {
 public:
  Catalog() = default;
  /// Validates invariants; throws ValidationError naming the offending rows
  /// (1-based, in input order).
  explicit Catalog(std::vector<BatchMeta> batches);

  const std::vector<BatchMeta>& batches() const { return batches_; }
  std::size_t size() const { return batches_.size(); }
  const BatchMeta& batch(std::size_t index) const { return batches_.at(index); }

  /// Sorted language codes.
  const std::vector<std::string>& languages() const { return languages_; }
  /// Distinct domain names, sorted.
  const std::vector<std::string>& domains() const { return domains_; }
  const std::map<std::string, std::vector<std::string>>& domains_by_language() const {
    return domains_by_language_;
  }
  /// Batch indexes of a language in catalog order.
  const std::vector<std::size_t>& batches_of(std::string_view language) const;

  bool contains(std::string_view batch_id) const;
  /// Throws ValidationError for unknown ids.
  std::size_t index_of(std::string_view batch_id) const;

  /// CRC-32 of the canonical CSV serialization.
  std::uint32_t digest() const;

  friend bool operator==(const Catalog& a, const Catalog& b) { return a.batches_ == b.batches_; }

 private:
  std::vector<BatchMeta> batches_;
  std::vector<std::string> languages_;
  std::vector<std::string> domains_;
  std::map<std::string, std::vector<std::string>> domains_by_language_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> by_language_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

enum class CatalogFormat { Csv, Json };

Catalog parse_catalog_csv(std::string_view text);
Catalog parse_catalog_json(std::string_view text);

/// Format is chosen by extension (.json) or by a leading '{' / '['.
Catalog load_catalog(const std::filesystem::path& path);
std::string serialize_catalog(const Catalog& catalog, CatalogFormat format);
void save_catalog(const Catalog& catalog, const std::filesystem::path& path,
                  CatalogFormat format = CatalogFormat::Csv);

/// Total hours per language, exact in hundredths.
std::map<std::string, std::int64_t> language_hours_cents(const Catalog& catalog);
std::map<std::string, double> language_hours(const Catalog& catalog);

/// Languages ordered by total hours, descending; ties by ascending code.
std::vector<std::string> languages_by_hours(const Catalog& catalog);

/// Parses "12", "12.5", "12.50" into hundredths. Throws std::invalid_argument.
std::int64_t parse_hours_cents(std::string_view text);
std::string format_hours(std::int64_t cents);

/// Location of the bundled 22-language catalog in the source tree.
std::filesystem::path bundled_catalog_path();

}  // namespace clh
