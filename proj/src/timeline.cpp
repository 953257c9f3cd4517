#include "clh/timeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "clh/common.hpp"

namespace clh {
namespace {

constexpr std::uint64_t kLilTag = 0x4c494cu;
constexpr std::uint64_t kDilTag = 0x44494cu;
constexpr std::uint64_t kLidilTag = 0x4c4944494cu;

std::uint64_t scenario_tag(Scenario s) {
  switch (s) {
    case Scenario::LIL: return kLilTag;
    case Scenario::DIL: return kDilTag;
    case Scenario::LIDIL: return kLidilTag;
  }
  return 0;
}

std::vector<std::string> base_languages(const Catalog& catalog, int count) {
  auto ranked = languages_by_hours(catalog);
  ranked.resize(std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(count)));
  std::sort(ranked.begin(), ranked.end());
  return ranked;
}

void require_languages(const Catalog& catalog, const TimelineOptions& opts, Scenario s) {
  const auto need = static_cast<std::size_t>(opts.base_languages) + 1;
  if (catalog.languages().size() < need)
    throw ValidationError(to_string(s) + " needs at least " + std::to_string(need) + " languages; catalog has " +
                          std::to_string(catalog.languages().size()));
}

/// ceil(d/2) seeded-random batches of a language; the rest go to `rest`.
void split_half(const Catalog& catalog, const std::string& lang, std::uint64_t seed, Scenario s,
                std::vector<std::size_t>& base, std::vector<std::size_t>& rest) {
  auto ids = catalog.batches_of(lang);
  auto rng = SeedBuilder(seed).push(scenario_tag(s)).push("half").push(lang).rng();
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::size_t keep = (ids.size() + 1) / 2;
  base.insert(base.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep));
  rest.insert(rest.end(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end());
}

Episode make_episode(int index, const std::vector<std::size_t>& batches, const Catalog& catalog) {
  Episode e;
  e.index = index;
  for (auto i : batches) e.batch_ids.push_back(catalog.batch(i).batch_id);
  std::sort(e.batch_ids.begin(), e.batch_ids.end());
  return e;
}

/// Uniform random episode per leftover batch, then fill any empty episode
/// with one batch taken from the currently largest episode.
Timeline spread(Scenario scenario, const Catalog& catalog, std::uint64_t seed, int tau,
                std::vector<std::size_t> base, std::vector<std::size_t> rest) {
  std::sort(rest.begin(), rest.end());
  const int effective_tau = std::min<int>(tau, static_cast<int>(rest.size()));
  std::vector<std::vector<std::size_t>> slots(static_cast<std::size_t>(effective_tau));
  if (effective_tau > 0) {
    auto rng = SeedBuilder(seed).push(scenario_tag(scenario)).push("assign").rng();
    for (auto b : rest) slots[uniform_index(rng, static_cast<std::uint64_t>(effective_tau))].push_back(b);
    for (auto& slot : slots) {
      if (!slot.empty()) continue;
      auto largest = std::max_element(slots.begin(), slots.end(),
                                      [](const auto& a, const auto& b) { return a.size() < b.size(); });
      slot.push_back(largest->back());
      largest->pop_back();
    }
  }
  Timeline t;
  t.scenario = scenario;
  t.seed = seed;
  t.tau = effective_tau;
  t.catalog_digest = catalog.digest();
  t.episodes.push_back(make_episode(0, base, catalog));
  for (int i = 0; i < effective_tau; ++i) t.episodes.push_back(make_episode(i + 1, slots[i], catalog));
  return t;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::LIL: return "lil";
    case Scenario::DIL: return "dil";
    case Scenario::LIDIL: return "lidil";
  }
  return "?";
}

Scenario parse_scenario(std::string_view text) {
  auto s = lower(text);
  if (s == "lil") return Scenario::LIL;
  if (s == "dil") return Scenario::DIL;
  if (s == "lidil") return Scenario::LIDIL;
  throw ValidationError("unknown scenario '" + std::string(text) + "' (expected lil, dil or lidil)");
}

Timeline build_lil(const Catalog& catalog, std::uint64_t seed, const TimelineOptions& opts) {
  require_languages(catalog, opts, Scenario::LIL);
  const auto base = base_languages(catalog, opts.base_languages);
  std::vector<std::string> incoming;
  for (const auto& l : catalog.languages())
    if (!std::binary_search(base.begin(), base.end(), l)) incoming.push_back(l);
  auto rng = SeedBuilder(seed).push(kLilTag).push("order").rng();
  std::shuffle(incoming.begin(), incoming.end(), rng);

  Timeline t;
  t.scenario = Scenario::LIL;
  t.seed = seed;
  t.catalog_digest = catalog.digest();
  std::vector<std::size_t> first;
  for (const auto& l : base) {
    const auto& ids = catalog.batches_of(l);
    first.insert(first.end(), ids.begin(), ids.end());
  }
  t.episodes.push_back(make_episode(0, first, catalog));
  for (const auto& l : incoming)
    t.episodes.push_back(make_episode(static_cast<int>(t.episodes.size()), catalog.batches_of(l), catalog));
  t.tau = static_cast<int>(t.episodes.size()) - 1;
  return t;
}

Timeline build_dil(const Catalog& catalog, std::uint64_t seed, const TimelineOptions& opts) {
  std::vector<std::size_t> base, rest;
  for (const auto& l : catalog.languages()) split_half(catalog, l, seed, Scenario::DIL, base, rest);
  return spread(Scenario::DIL, catalog, seed, opts.tau, std::move(base), std::move(rest));
}

Timeline build_lidil(const Catalog& catalog, std::uint64_t seed, const TimelineOptions& opts) {
  require_languages(catalog, opts, Scenario::LIDIL);
  const auto chosen = base_languages(catalog, opts.base_languages);
  std::vector<std::size_t> base, rest;
  for (const auto& l : catalog.languages()) {
    if (std::binary_search(chosen.begin(), chosen.end(), l)) {
      split_half(catalog, l, seed, Scenario::LIDIL, base, rest);
    } else {
      const auto& ids = catalog.batches_of(l);
      rest.insert(rest.end(), ids.begin(), ids.end());
    }
  }
  return spread(Scenario::LIDIL, catalog, seed, opts.tau, std::move(base), std::move(rest));
}

Timeline build_timeline(Scenario scenario, const Catalog& catalog, std::uint64_t seed, const TimelineOptions& opts) {
  switch (scenario) {
    case Scenario::LIL: return build_lil(catalog, seed, opts);
    case Scenario::DIL: return build_dil(catalog, seed, opts);
    case Scenario::LIDIL: return build_lidil(catalog, seed, opts);
  }
  throw ValidationError("unknown scenario");
}

bool ValidationReport::has(std::string_view rule) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.rule == rule; });
}

std::vector<std::string> episode_languages(const Episode& episode, const Catalog& catalog) {
  std::set<std::string> langs;
  for (const auto& id : episode.batch_ids)
    if (catalog.contains(id)) langs.insert(catalog.batch(catalog.index_of(id)).language);
  return {langs.begin(), langs.end()};
}

std::vector<std::size_t> episode_batch_indexes(const Episode& episode, const Catalog& catalog) {
  std::vector<std::size_t> out;
  out.reserve(episode.batch_ids.size());
  for (const auto& id : episode.batch_ids) out.push_back(catalog.index_of(id));
  return out;
}

std::vector<int> new_language_counts(const Timeline& timeline, const Catalog& catalog) {
  std::set<std::string> seen;
  std::vector<int> out;
  for (const auto& e : timeline.episodes) {
    int fresh = 0;
    for (const auto& l : episode_languages(e, catalog)) fresh += seen.insert(l).second ? 1 : 0;
    out.push_back(fresh);
  }
  return out;
}

ValidationReport validate_timeline(const Timeline& timeline, const Catalog& catalog, const TimelineOptions& opts) {
  ValidationReport report;
  auto add = [&](std::string rule, int ep, std::string msg) {
    report.violations.push_back({std::move(rule), ep, std::move(msg)});
  };
  if (timeline.episodes.empty()) {
    add("structure", -1, "timeline has no episodes");
    return report;
  }
  if (timeline.tau != static_cast<int>(timeline.episodes.size()) - 1)
    add("structure", -1,
        "tau = " + std::to_string(timeline.tau) + " but there are " + std::to_string(timeline.episodes.size()) +
            " episodes");

  std::map<std::string, int> owner;
  for (std::size_t t = 0; t < timeline.episodes.size(); ++t) {
    const auto& e = timeline.episodes[t];
    const int ti = static_cast<int>(t);
    if (e.index != ti) add("structure", ti, "episode at position " + std::to_string(t) + " has index " + std::to_string(e.index));
    if (e.batch_ids.empty()) add("nonempty", ti, "E_" + std::to_string(t) + " is empty");
    for (const auto& id : e.batch_ids) {
      if (!catalog.contains(id)) {
        add("unknown-batch", ti, "E_" + std::to_string(t) + " references unknown batch '" + id + "'");
        continue;
      }
      auto [it, fresh] = owner.emplace(id, ti);
      if (!fresh)
        add("disjoint", ti,
            "batch '" + id + "' is in E_" + std::to_string(it->second) + " and E_" + std::to_string(t));
    }
  }
  for (const auto& b : catalog.batches())
    if (!owner.count(b.batch_id)) add("cover", -1, "batch '" + b.batch_id + "' is in no episode");

  const auto base_langs = episode_languages(timeline.episodes[0], catalog);
  const auto fresh = new_language_counts(timeline, catalog);
  const auto nb = static_cast<std::size_t>(opts.base_languages);
  switch (timeline.scenario) {
    case Scenario::LIL: {
      if (base_langs.size() != nb)
        add("lil-base", 0, "E_0 has " + std::to_string(base_langs.size()) + " languages, expected " + std::to_string(nb));
      for (const auto& l : base_langs) {
        for (auto bi : catalog.batches_of(l)) {
          auto it = owner.find(catalog.batch(bi).batch_id);
          if (it == owner.end() || it->second != 0) {
            add("lil-base", 0, "E_0 lacks batch '" + catalog.batch(bi).batch_id + "' of base language " + l);
          }
        }
      }
      for (std::size_t t = 1; t < timeline.episodes.size(); ++t) {
        const auto langs = episode_languages(timeline.episodes[t], catalog);
        if (langs.size() != 1 || fresh[t] != 1)
          add("lil-episode", static_cast<int>(t),
              "E_" + std::to_string(t) + " must hold exactly one unseen language (has " + std::to_string(langs.size()) +
                  " languages, " + std::to_string(fresh[t]) + " new)");
      }
      break;
    }
    case Scenario::DIL: {
      if (base_langs.size() != catalog.languages().size())
        add("dil-base", 0, "E_0 covers " + std::to_string(base_langs.size()) + " of " +
                               std::to_string(catalog.languages().size()) + " languages");
      for (std::size_t t = 1; t < timeline.episodes.size(); ++t)
        if (fresh[t] > 0)
          add("dil-episode", static_cast<int>(t),
              "E_" + std::to_string(t) + " introduces " + std::to_string(fresh[t]) + " language(s) absent from E_0");
      break;
    }
    case Scenario::LIDIL: {
      if (base_langs.size() != nb)
        add("lidil-base", 0, "E_0 has " + std::to_string(base_langs.size()) + " languages, expected " + std::to_string(nb));
      bool any_new = false;
      for (std::size_t t = 1; t < fresh.size(); ++t) any_new = any_new || fresh[t] > 0;
      if (!any_new) add("lidil-episode", -1, "no episode after E_0 introduces a new language");
      break;
    }
  }
  return report;
}

std::vector<EpisodeSummary> summarize_timeline(const Timeline& timeline, const Catalog& catalog) {
  std::vector<EpisodeSummary> out;
  std::set<std::string> seen_langs, seen_domains;
  for (const auto& e : timeline.episodes) {
    EpisodeSummary s;
    s.index = e.index;
    s.batches = e.batch_ids.size();
    std::set<std::string> langs;
    for (auto bi : episode_batch_indexes(e, catalog)) {
      const auto& b = catalog.batch(bi);
      s.hours_cents += b.hours_cents;
      langs.insert(b.language);
      seen_domains.insert(b.domain);
    }
    s.languages = langs.size();
    for (const auto& l : langs)
      if (seen_langs.insert(l).second) s.new_languages.push_back(l);
    s.cumulative_languages = seen_langs.size();
    s.cumulative_domains = seen_domains.size();
    out.push_back(std::move(s));
  }
  return out;
}

std::string format_summary(const Timeline& timeline, const Catalog& catalog) {
  std::ostringstream os;
  os << "scenario " << to_string(timeline.scenario) << "  seed " << timeline.seed << "  tau " << timeline.tau << "\n";
  os << "episode  batches  languages  new  hours     cum_langs  cum_domains  new_languages\n";
  for (const auto& s : summarize_timeline(timeline, catalog)) {
    char line[128];
    std::snprintf(line, sizeof line, "%7d  %7zu  %9zu  %3zu  %-8s  %9zu  %11zu  ", s.index, s.batches, s.languages,
                  s.new_languages.size(), format_hours(s.hours_cents).c_str(), s.cumulative_languages,
                  s.cumulative_domains);
    os << line;
    for (std::size_t i = 0; i < s.new_languages.size(); ++i) os << (i ? "," : "") << s.new_languages[i];
    os << "\n";
  }
  return os.str();
}

std::string serialize_timeline(const Timeline& timeline) {
  nlohmann::json doc;
  doc["format"] = "clh-timeline";
  doc["version"] = 1;
  doc["scenario"] = to_string(timeline.scenario);
  doc["seed"] = timeline.seed;
  doc["tau"] = timeline.tau;
  doc["catalog_digest"] = hex32(timeline.catalog_digest);
  auto eps = nlohmann::json::array();
  for (const auto& e : timeline.episodes) eps.push_back({{"index", e.index}, {"batch_ids", e.batch_ids}});
  doc["episodes"] = std::move(eps);
  return doc.dump(2) + "\n";
}

Timeline parse_timeline(std::string_view text) {
  try {
    auto doc = nlohmann::json::parse(text);
    if (doc.value("format", "") != "clh-timeline") throw ValidationError("not a timeline file");
    if (doc.at("version").get<int>() != 1) throw ValidationError("unsupported timeline version");
    Timeline t;
    t.scenario = parse_scenario(doc.at("scenario").get<std::string>());
    t.seed = doc.at("seed").get<std::uint64_t>();
    t.tau = doc.at("tau").get<int>();
    t.catalog_digest = static_cast<std::uint32_t>(std::stoul(doc.at("catalog_digest").get<std::string>(), nullptr, 16));
    for (const auto& e : doc.at("episodes")) {
      Episode ep;
      ep.index = e.at("index").get<int>();
      ep.batch_ids = e.at("batch_ids").get<std::vector<std::string>>();
      t.episodes.push_back(std::move(ep));
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed timeline: ") + e.what());
  }
}

Timeline load_timeline(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open timeline '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_timeline(ss.str());
}

void save_timeline(const Timeline& timeline, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write timeline '" + path.string() + "'");
  out << serialize_timeline(timeline);
}

}  // namespace clh
