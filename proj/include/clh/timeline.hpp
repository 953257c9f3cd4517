#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "clh/manifest.hpp"

namespace clh {

enum class Scenario { LIL, DIL, LIDIL };

std::string to_string(Scenario s);
/// Accepts "lil" / "dil" / "lidil" in any case.
Scenario parse_scenario(std::string_view text);

struct Episode {
  int index = 0;
  std::vector<std::string> batch_ids;  // sorted

  friend bool operator==(const Episode&, const Episode&) = default;
};

struct Timeline {
  Scenario scenario = Scenario::LIL;
  std::vector<Episode> episodes;
  int tau = 0;  // == episodes.size() - 1
  std::uint64_t seed = 0;
  std::uint32_t catalog_digest = 0;

  friend bool operator==(const Timeline&, const Timeline&) = default;
};

struct TimelineOptions {
  /// Incremental episode count for DIL / LIDIL. LIL always has one episode
  /// per non-base language, so tau is derived there.
  int tau = 11;
  int base_languages = 11;
};

/// E_0 holds every batch of the hours-ranked top languages; each later episode
/// holds every batch of one new language, in seeded-random order.
Timeline build_lil(const Catalog& catalog, std::uint64_t seed, const TimelineOptions& opts = {});
/// E_0 holds ceil(d/2) random districts of every language; the rest are
/// spread over E_1..E_tau.
Timeline build_dil(const Catalog& catalog, std::uint64_t seed, const TimelineOptions& opts = {});
/// E_0 holds ceil(d/2) random districts of the hours-ranked top languages;
/// everything else is spread over E_1..E_tau.
Timeline build_lidil(const Catalog& catalog, std::uint64_t seed, const TimelineOptions& opts = {});
Timeline build_timeline(Scenario scenario, const Catalog& catalog, std::uint64_t seed,
                        const TimelineOptions& opts = {});

struct Violation {
  std::string rule;
  int episode = -1;  // -1 when not tied to one episode
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool has(std::string_view rule) const;
};

ValidationReport validate_timeline(const Timeline& timeline, const Catalog& catalog,
                                   const TimelineOptions& opts = {});

/// Number of languages first seen in each episode.
std::vector<int> new_language_counts(const Timeline& timeline, const Catalog& catalog);
/// Sorted language set of one episode.
std::vector<std::string> episode_languages(const Episode& episode, const Catalog& catalog);
/// Catalog indexes of an episode's batches.
std::vector<std::size_t> episode_batch_indexes(const Episode& episode, const Catalog& catalog);

struct EpisodeSummary {
  int index = 0;
  std::size_t batches = 0;
  std::size_t languages = 0;
  std::vector<std::string> new_languages;
  std::int64_t hours_cents = 0;
  std::size_t cumulative_languages = 0;
  std::size_t cumulative_domains = 0;
};

std::vector<EpisodeSummary> summarize_timeline(const Timeline& timeline, const Catalog& catalog);
std::string format_summary(const Timeline& timeline, const Catalog& catalog);

/// Structured text with sorted keys; equal timelines serialize to equal bytes.
std::string serialize_timeline(const Timeline& timeline);
Timeline parse_timeline(std::string_view text);
Timeline load_timeline(const std::filesystem::path& path);
void save_timeline(const Timeline& timeline, const std::filesystem::path& path);

}  // namespace clh
