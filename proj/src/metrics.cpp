#include "clh/metrics.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "clh/common.hpp"

namespace clh {
namespace {

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

void check_episode(int t, int lo, int hi, const char* what) {
  if (t < lo || t > hi)
    throw ValidationError(std::string(what) + ": episode " + std::to_string(t) + " outside [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + "]");
}

}  // namespace

MerScore mer_text(const std::string& ref, const std::string& hyp) {
  const auto r = words(ref), h = words(hyp);
  return mer(std::span<const std::string>(r), std::span<const std::string>(h));
}

MerMatrix::MerMatrix(int tau) : tau_(tau) {
  if (tau < 0) throw ValidationError("tau must be >= 0");
}

double MerMatrix::at(int t, int i) const {
  check_episode(t, 0, rows() - 1, "MER matrix row");
  check_episode(i, 0, t, "MER matrix column");
  return rows_[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
}

void MerMatrix::push_row(std::vector<double> row) {
  const int t = rows();
  if (t > tau_) throw ValidationError("MER matrix already complete");
  if (static_cast<int>(row.size()) != t + 1)
    throw ValidationError("MER row " + std::to_string(t) + " needs " + std::to_string(t + 1) + " entries");
  for (double v : row)
    if (!(std::isnan(v) || (v >= 0.0 && v <= 1.0))) throw ValidationError("MER entry outside [0, 1]");
  rows_.push_back(std::move(row));
}

std::vector<double> MerMatrix::diagonal() const {
  std::vector<double> d;
  for (int t = 0; t < rows(); ++t) d.push_back(rows_[static_cast<std::size_t>(t)].back());
  return d;
}

double amer(const MerMatrix& matrix, int t, const AmerOptions& opts) {
  check_episode(t, opts.include_base ? 0 : 1, matrix.rows() - 1, "AMER");
  const auto& row = matrix.row(t);
  const std::size_t first = opts.include_base ? 0 : 1;
  double sum = 0.0;
  for (std::size_t i = first; i < row.size(); ++i) sum += row[i];
  return sum / static_cast<double>(row.size() - first);
}

double fwt(std::span<const double> strategy_diag, const ReferenceDiagonals& refs, int t) {
  check_episode(t, 1, static_cast<int>(std::min(strategy_diag.size(), refs.incft.size())) - 1, "FWT");
  return refs.incft[static_cast<std::size_t>(t)] - strategy_diag[static_cast<std::size_t>(t)];
}

double bwt(const MerMatrix& matrix, int t) {
  check_episode(t, 1, matrix.rows() - 1, "BWT");
  double sum = 0.0;
  for (int i = 0; i < t; ++i) sum += matrix.at(i, i) - matrix.at(t, i);
  return sum / static_cast<double>(t);
}

double im(std::span<const double> strategy_diag, const ReferenceDiagonals& refs, int t) {
  check_episode(t, 0, static_cast<int>(std::min(strategy_diag.size(), refs.jointft.size())) - 1, "IM");
  return strategy_diag[static_cast<std::size_t>(t)] - refs.jointft[static_cast<std::size_t>(t)];
}

std::vector<MetricRow> metric_series(const MerMatrix& matrix, const ReferenceDiagonals& refs,
                                     const AmerOptions& opts) {
  const auto diag = matrix.diagonal();
  std::vector<MetricRow> out;
  for (int t = 0; t < matrix.rows(); ++t) {
    MetricRow r;
    r.episode = t;
    r.amer = (!opts.include_base && t == 0) ? std::nan("") : amer(matrix, t, opts);
    auto keep = [](double v) { return std::isnan(v) ? std::optional<double>{} : std::optional<double>{v}; };
    if (t >= 1 && static_cast<std::size_t>(t) < refs.incft.size()) r.fwt = keep(fwt(diag, refs, t));
    if (t >= 1) r.bwt = keep(bwt(matrix, t));
    if (static_cast<std::size_t>(t) < refs.jointft.size()) r.im = keep(im(diag, refs, t));
    out.push_back(r);
  }
  return out;
}

nlohmann::json to_json(const MerMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int t = 0; t < m.rows(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (double v : m.row(t)) row.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    rows.push_back(std::move(row));
  }
  return {{"tau", m.tau()}, {"rows", rows}};
}

MerMatrix mer_matrix_from_json(const nlohmann::json& j) {
  MerMatrix m(j.at("tau").get<int>());
  for (const auto& r : j.at("rows")) {
    std::vector<double> row;
    for (const auto& v : r) row.push_back(v.is_null() ? std::nan("") : v.get<double>());
    m.push_row(std::move(row));
  }
  return m;
}

nlohmann::json to_json(const ReferenceDiagonals& r) { return {{"incft", r.incft}, {"jointft", r.jointft}}; }

ReferenceDiagonals reference_diagonals_from_json(const nlohmann::json& j) {
  return {j.at("incft").get<std::vector<double>>(), j.at("jointft").get<std::vector<double>>()};
}

nlohmann::json to_json(const std::vector<MetricRow>& series) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : series)
    arr.push_back({{"episode", r.episode},
                   {"amer", std::isnan(r.amer) ? nlohmann::json(nullptr) : nlohmann::json(r.amer)},
                   {"fwt", opt(r.fwt)},
                   {"bwt", opt(r.bwt)},
                   {"im", opt(r.im)}});
  return arr;
}

std::vector<MetricRow> metric_series_from_json(const nlohmann::json& j) {
  auto opt = [](const nlohmann::json& v) { return v.is_null() ? std::optional<double>{} : v.get<double>(); };
  std::vector<MetricRow> out;
  for (const auto& r : j) {
    MetricRow m;
    m.episode = r.at("episode").get<int>();
    m.amer = r.at("amer").is_null() ? std::nan("") : r.at("amer").get<double>();
    m.fwt = opt(r.at("fwt"));
    m.bwt = opt(r.at("bwt"));
    m.im = opt(r.at("im"));
    out.push_back(m);
  }
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string mer_matrix_csv(const MerMatrix& m) {
  std::string out = "episode";
  for (int i = 0; i <= m.tau(); ++i) out += ",E" + std::to_string(i);
  out += "\n";
  for (int t = 0; t < m.rows(); ++t) {
    out += std::to_string(t);
    for (int i = 0; i <= m.tau(); ++i) out += "," + (i <= t ? format_double(m.at(t, i)) : std::string());
    out += "\n";
  }
  return out;
}

std::string metric_series_csv(const std::vector<MetricRow>& series) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::string out = "episode,AMER,FWT,BWT,IM\n";
  for (const auto& r : series)
    out += std::to_string(r.episode) + "," + format_double(r.amer) + "," + opt(r.fwt) + "," + opt(r.bwt) + "," +
           opt(r.im) + "\n";
  return out;
}

}  // namespace clh
