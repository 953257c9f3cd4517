#include "clh/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "clh/common.hpp"

#ifndef CLH_DATA_DIR
#define CLH_DATA_DIR "data"
#endif

namespace clh {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

std::int64_t parse_count(std::string_view s) {
  if (s.empty()) throw std::invalid_argument("empty count");
  std::int64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') throw std::invalid_argument("not a nonnegative integer: '" + std::string(s) + "'");
    v = v * 10 + (c - '0');
    if (v > (std::int64_t{1} << 50)) throw std::invalid_argument("count too large");
  }
  return v;
}

[[noreturn]] void row_error(std::size_t row, const std::string& what) {
  throw ValidationError("catalog row " + std::to_string(row) + ": " + what);
}

}  // namespace

std::int64_t default_n_train(std::int64_t hours_cents) { return hours_cents; }

std::int64_t default_n_test(std::int64_t hours_cents) {
  return std::max<std::int64_t>(1, (hours_cents * 4 + 50) / 100);
}

std::int64_t parse_hours_cents(std::string_view text) {
  auto s = trim(text);
  if (s.empty()) throw std::invalid_argument("empty hours");
  auto dot = s.find('.');
  auto whole = s.substr(0, dot);
  std::int64_t cents = parse_count(whole.empty() ? std::string_view("0") : whole) * 100;
  if (dot != std::string_view::npos) {
    auto frac = s.substr(dot + 1);
    if (frac.size() > 2) {
      // Allow trailing zeros beyond two places ("1.2500") but nothing finer.
      if (frac.substr(2).find_first_not_of('0') != std::string_view::npos)
        throw std::invalid_argument("hours finer than 0.01: '" + std::string(s) + "'");
      frac = frac.substr(0, 2);
    }
    if (frac.empty()) throw std::invalid_argument("bad hours: '" + std::string(s) + "'");
    std::int64_t f = parse_count(frac);
    cents += frac.size() == 1 ? f * 10 : f;
  }
  return cents;
}

std::string format_hours(std::int64_t cents) {
  std::string frac = std::to_string(cents % 100);
  if (frac.size() < 2) frac.insert(0, "0");
  return std::to_string(cents / 100) + "." + frac;
}

Catalog::Catalog(std::vector<BatchMeta> batches) : batches_(std::move(batches)) {
  std::map<std::pair<std::string, std::string>, std::size_t> pairs;
  for (std::size_t i = 0; i < batches_.size(); ++i) {
    const auto& b = batches_[i];
    const std::size_t row = i + 1;
    if (b.batch_id.empty()) row_error(row, "empty batch_id");
    if (b.language.empty()) row_error(row, "empty language");
    if (b.domain.empty()) row_error(row, "empty domain");
    if (b.hours_cents <= 0) row_error(row, "hours must be positive");
    if (b.n_train < 1) row_error(row, "n_train must be >= 1");
    if (b.n_test < 1) row_error(row, "n_test must be >= 1");
    auto [it, fresh] = by_id_.emplace(b.batch_id, i);
    if (!fresh)
      row_error(row, "duplicate batch_id '" + b.batch_id + "' (first at row " + std::to_string(it->second + 1) + ")");
    auto [pit, pfresh] = pairs.emplace(std::make_pair(b.language, b.domain), i);
    if (!pfresh)
      row_error(row, "duplicate (language, domain) = (" + b.language + ", " + b.domain + ") also at row " +
                         std::to_string(pit->second + 1));
    by_language_[b.language].push_back(i);
    domains_by_language_[b.language].push_back(b.domain);
    domains_.push_back(b.domain);
  }
  for (auto& [lang, doms] : domains_by_language_) {
    languages_.push_back(lang);
    std::sort(doms.begin(), doms.end());
  }
  std::sort(domains_.begin(), domains_.end());
  domains_.erase(std::unique(domains_.begin(), domains_.end()), domains_.end());
}

const std::vector<std::size_t>& Catalog::batches_of(std::string_view language) const {
  auto it = by_language_.find(language);
  if (it == by_language_.end()) throw ValidationError("unknown language '" + std::string(language) + "'");
  return it->second;
}

bool Catalog::contains(std::string_view batch_id) const { return by_id_.find(batch_id) != by_id_.end(); }

std::size_t Catalog::index_of(std::string_view batch_id) const {
  auto it = by_id_.find(batch_id);
  if (it == by_id_.end()) throw ValidationError("unknown batch id '" + std::string(batch_id) + "'");
  return it->second;
}

std::uint32_t Catalog::digest() const { return crc32_of(serialize_catalog(*this, CatalogFormat::Csv)); }

Catalog parse_catalog_csv(std::string_view text) {
  std::vector<BatchMeta> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  char delim = ',';
  std::map<std::string, std::size_t> col;
  auto field = [&](const std::vector<std::string_view>& f, const char* name) -> std::string_view {
    auto it = col.find(name);
    if (it == col.end() || it->second >= f.size()) return {};
    return f[it->second];
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (!have_header) {
      delim = t.find('\t') != std::string_view::npos ? '\t' : ',';
      auto names = split(t, delim);
      for (std::size_t i = 0; i < names.size(); ++i) col[std::string(names[i])] = i;
      for (const char* req : {"batch_id", "language_iso", "domain", "hours"})
        if (!col.count(req))
          throw ValidationError("catalog header (line " + std::to_string(line_no) + ") lacks column '" + req + "'");
      have_header = true;
      continue;
    }
    const std::size_t row = rows.size() + 1;
    auto f = split(t, delim);
    if (f.size() > col.size()) row_error(row, "too many fields (line " + std::to_string(line_no) + ")");
    BatchMeta b;
    b.batch_id = std::string(field(f, "batch_id"));
    b.language = std::string(field(f, "language_iso"));
    b.domain = std::string(field(f, "domain"));
    try {
      b.hours_cents = parse_hours_cents(field(f, "hours"));
      auto nt = field(f, "n_train");
      auto ns = field(f, "n_test");
      b.n_train = nt.empty() ? default_n_train(b.hours_cents) : parse_count(nt);
      b.n_test = ns.empty() ? default_n_test(b.hours_cents) : parse_count(ns);
    } catch (const std::invalid_argument& e) {
      row_error(row, std::string("malformed field (line ") + std::to_string(line_no) + "): " + e.what());
    }
    rows.push_back(std::move(b));
  }
  if (!have_header) throw ValidationError("catalog is missing its header row");
  return Catalog(std::move(rows));
}

Catalog parse_catalog_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("catalog JSON parse error: ") + e.what());
  }
  const nlohmann::json* arr = &doc;
  if (doc.is_object()) {
    if (!doc.contains("batches")) throw ValidationError("catalog JSON object lacks 'batches'");
    arr = &doc["batches"];
  }
  if (!arr->is_array()) throw ValidationError("catalog JSON 'batches' must be an array");
  std::vector<BatchMeta> rows;
  for (const auto& r : *arr) {
    const std::size_t row = rows.size() + 1;
    if (!r.is_object()) row_error(row, "record is not an object");
    BatchMeta b;
    try {
      b.batch_id = r.at("batch_id").get<std::string>();
      b.language = r.at("language_iso").get<std::string>();
      b.domain = r.at("domain").get<std::string>();
      const auto& h = r.at("hours");
      if (h.is_string()) {
        b.hours_cents = parse_hours_cents(h.get<std::string>());
      } else if (h.is_number_integer()) {
        b.hours_cents = h.get<std::int64_t>() * 100;
      } else if (h.is_number()) {
        b.hours_cents = parse_hours_cents(nlohmann::json(h).dump());
      } else {
        row_error(row, "hours must be a number or decimal string");
      }
      b.n_train = r.contains("n_train") ? r["n_train"].get<std::int64_t>() : default_n_train(b.hours_cents);
      b.n_test = r.contains("n_test") ? r["n_test"].get<std::int64_t>() : default_n_test(b.hours_cents);
    } catch (const nlohmann::json::exception& e) {
      row_error(row, std::string("malformed record: ") + e.what());
    } catch (const std::invalid_argument& e) {
      row_error(row, std::string("malformed record: ") + e.what());
    }
    rows.push_back(std::move(b));
  }
  return Catalog(std::move(rows));
}

Catalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open catalog '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  auto first = text.find_first_not_of(" \t\r\n");
  const bool json = path.extension() == ".json" ||
                    (first != std::string::npos && (text[first] == '{' || text[first] == '['));
  return json ? parse_catalog_json(text) : parse_catalog_csv(text);
}

std::string serialize_catalog(const Catalog& catalog, CatalogFormat format) {
  if (format == CatalogFormat::Json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : catalog.batches()) {
      arr.push_back({{"batch_id", b.batch_id},
                     {"language_iso", b.language},
                     {"domain", b.domain},
                     {"hours", format_hours(b.hours_cents)},
                     {"n_train", b.n_train},
                     {"n_test", b.n_test}});
    }
    return nlohmann::json{{"batches", arr}}.dump(2) + "\n";
  }
  std::string out = "batch_id,language_iso,domain,hours,n_train,n_test\n";
  for (const auto& b : catalog.batches()) {
    out += b.batch_id + "," + b.language + "," + b.domain + "," + format_hours(b.hours_cents) + "," +
           std::to_string(b.n_train) + "," + std::to_string(b.n_test) + "\n";
  }
  return out;
}

void save_catalog(const Catalog& catalog, const std::filesystem::path& path, CatalogFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write catalog '" + path.string() + "'");
  out << serialize_catalog(catalog, format);
}

std::map<std::string, std::int64_t> language_hours_cents(const Catalog& catalog) {
  std::map<std::string, std::int64_t> out;
  for (const auto& b : catalog.batches()) out[b.language] += b.hours_cents;
  return out;
}

std::map<std::string, double> language_hours(const Catalog& catalog) {
  std::map<std::string, double> out;
  for (const auto& [lang, cents] : language_hours_cents(catalog)) out[lang] = static_cast<double>(cents) / 100.0;
  return out;
}

std::vector<std::string> languages_by_hours(const Catalog& catalog) {
  auto hours = language_hours_cents(catalog);
  std::vector<std::string> langs = catalog.languages();
  std::stable_sort(langs.begin(), langs.end(), [&](const std::string& a, const std::string& b) {
    if (hours[a] != hours[b]) return hours[a] > hours[b];
    return a < b;
  });
  return langs;
}

std::filesystem::path bundled_catalog_path() {
  return std::filesystem::path(CLH_DATA_DIR) / "catalog_22lang.csv";
}

}  // namespace clh
