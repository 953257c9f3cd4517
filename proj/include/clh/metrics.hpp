#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace clh {

enum class EditOp : std::uint8_t { Hit, Sub, Del, Ins };

struct MerScore {
  std::int64_t hits = 0;
  std::int64_t subs = 0;
  std::int64_t dels = 0;
  std::int64_t ins = 0;

  std::int64_t errors() const { return subs + dels + ins; }
  /// (S + D + I) / (H + S + D + I); 0 when nothing was aligned.
  double mer() const {
    const auto denom = hits + subs + dels + ins;
    return denom == 0 ? 0.0 : static_cast<double>(errors()) / static_cast<double>(denom);
  }
  MerScore& operator+=(const MerScore& o) {
    hits += o.hits;
    subs += o.subs;
    dels += o.dels;
    ins += o.ins;
    return *this;
  }
  friend bool operator==(const MerScore&, const MerScore&) = default;
};

/// Minimum-edit alignment with unit costs. Among alignments of equal cost the
/// backtrace (from the sequence ends) prefers hit, then substitution, then
/// deletion, then insertion. Returns the operations in forward order.
template <typename T>
std::vector<EditOp> align(std::span<const T> ref, std::span<const T> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::uint32_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<std::uint32_t>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<std::uint32_t>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::uint32_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0u : 1u);
      at(i, j) = std::min({diag, at(i - 1, j) + 1u, at(i, j - 1) + 1u});
    }
  }
  std::vector<EditOp> ops;
  ops.reserve(n + m);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::uint32_t here = at(i, j);
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i - 1, j - 1) + (same ? 0u : 1u) == here) {
        ops.push_back(same ? EditOp::Hit : EditOp::Sub);
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i - 1, j) + 1u == here) {
      ops.push_back(EditOp::Del);
      --i;
      continue;
    }
    ops.push_back(EditOp::Ins);
    --j;
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

inline MerScore score_ops(std::span<const EditOp> ops) {
  MerScore s;
  for (auto op : ops) {
    switch (op) {
      case EditOp::Hit: ++s.hits; break;
      case EditOp::Sub: ++s.subs; break;
      case EditOp::Del: ++s.dels; break;
      case EditOp::Ins: ++s.ins; break;
    }
  }
  return s;
}

template <typename T>
MerScore mer(std::span<const T> ref, std::span<const T> hyp) {
  const auto ops = align(ref, hyp);
  return score_ops(ops);
}

inline MerScore mer(const std::vector<int>& ref, const std::vector<int>& hyp) {
  return mer(std::span<const int>(ref), std::span<const int>(hyp));
}

/// Whitespace-tokenized convenience overload.
MerScore mer_text(const std::string& ref, const std::string& hyp);

/// Lower-triangular MER_{t,i}, 0 <= i <= t <= tau.
class MerMatrix {
 public:
  MerMatrix() = default;
  explicit MerMatrix(int tau);

  int tau() const { return tau_; }
  /// Rows filled so far.
  int rows() const { return static_cast<int>(rows_.size()); }
  bool complete() const { return rows() == tau_ + 1; }

  double at(int t, int i) const;
  const std::vector<double>& row(int t) const { return rows_.at(static_cast<std::size_t>(t)); }
  /// Appends row t = rows(); it must have exactly t + 1 entries in [0, 1].
  /// NaN marks an entry that was not evaluated.
  void push_row(std::vector<double> row);
  std::vector<double> diagonal() const;

  friend bool operator==(const MerMatrix&, const MerMatrix&) = default;

 private:
  int tau_ = 0;
  std::vector<std::vector<double>> rows_;
};

struct ReferenceDiagonals {
  std::vector<double> incft;
  std::vector<double> jointft;

  friend bool operator==(const ReferenceDiagonals&, const ReferenceDiagonals&) = default;
};

struct AmerOptions {
  /// Count E_0's test set in the average (the default reading).
  bool include_base = true;
};

/// Mean of row t. With include_base = false the mean runs over i = 1..t
/// (t >= 1 required).
double amer(const MerMatrix& matrix, int t, const AmerOptions& opts = {});
/// incft[t] - MER_{t,t}; t >= 1.
double fwt(std::span<const double> strategy_diag, const ReferenceDiagonals& refs, int t);
/// (1/t) sum_{i<t} (MER_{i,i} - MER_{t,i}); t >= 1.
double bwt(const MerMatrix& matrix, int t);
/// MER_{t,t} - jointft[t]; t >= 0.
double im(std::span<const double> strategy_diag, const ReferenceDiagonals& refs, int t);

struct MetricRow {
  int episode = 0;
  double amer = 0.0;
  std::optional<double> fwt;
  std::optional<double> bwt;
  std::optional<double> im;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

/// One row per filled matrix row. FWT/IM are present only when the reference
/// diagonals reach that episode.
std::vector<MetricRow> metric_series(const MerMatrix& matrix, const ReferenceDiagonals& refs,
                                     const AmerOptions& opts = {});

nlohmann::json to_json(const MerMatrix& m);
MerMatrix mer_matrix_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ReferenceDiagonals& r);
ReferenceDiagonals reference_diagonals_from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<MetricRow>& series);
std::vector<MetricRow> metric_series_from_json(const nlohmann::json& j);

/// Flat tables with round-trip precision.
std::string mer_matrix_csv(const MerMatrix& m);
std::string metric_series_csv(const std::vector<MetricRow>& series);

/// Shortest round-trip decimal for a double.
std::string format_double(double v);

}  // namespace clh
