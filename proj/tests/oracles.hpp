#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "clh/metrics.hpp"
#include "clh/micromodel.hpp"

namespace clh::oracle {

/// Exhaustive minimum-edit search. Walks every monotone alignment from the
/// sequence ends, trying hit, substitution, deletion, insertion in that
/// order, and keeps the first alignment of strictly lower cost. Among
/// equal-cost alignments that is the one whose reversed operation string is
/// lexicographically smallest.
struct BruteMer {
  const std::vector<int>& ref;
  const std::vector<int>& hyp;
  int best = std::numeric_limits<int>::max();
  std::vector<EditOp> path, best_path;

  BruteMer(const std::vector<int>& r, const std::vector<int>& h) : ref(r), hyp(h) {
    dfs(static_cast<int>(ref.size()), static_cast<int>(hyp.size()), 0);
  }

  void dfs(int i, int j, int cost) {
    if (cost >= best) return;
    if (i == 0 && j == 0) {
      best = cost;
      best_path = path;
      return;
    }
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1]) step(EditOp::Hit, i - 1, j - 1, cost);
    if (i > 0 && j > 0 && ref[i - 1] != hyp[j - 1]) step(EditOp::Sub, i - 1, j - 1, cost + 1);
    if (i > 0) step(EditOp::Del, i - 1, j, cost + 1);
    if (j > 0) step(EditOp::Ins, i, j - 1, cost + 1);
  }

  void step(EditOp op, int i, int j, int cost) {
    path.push_back(op);
    dfs(i, j, cost);
    path.pop_back();
  }

  MerScore score() const {
    MerScore s;
    for (auto op : best_path) {
      switch (op) {
        case EditOp::Hit: ++s.hits; break;
        case EditOp::Sub: ++s.subs; break;
        case EditOp::Del: ++s.dels; break;
        case EditOp::Ins: ++s.ins; break;
      }
    }
    return s;
  }
};

inline MerScore brute_mer(const std::vector<int>& ref, const std::vector<int>& hyp) {
  return BruteMer(ref, hyp).score();
}

/// All sequences of length 0..max_len over {0..alphabet-1}.
inline std::vector<std::vector<int>> all_sequences(int max_len, int alphabet) {
  std::vector<std::vector<int>> out{{}};
  std::vector<std::vector<int>> frontier{{}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& s : frontier)
      for (int a = 0; a < alphabet; ++a) {
        auto t = s;
        t.push_back(a);
        next.push_back(t);
      }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

// Row-major lower-triangular matrices as plain nested vectors.
using Rows = std::vector<std::vector<double>>;

inline double amer(const Rows& m, int t) {
  return std::accumulate(m[t].begin(), m[t].begin() + t + 1, 0.0) / (t + 1);
}
inline double amer_without_base(const Rows& m, int t) {
  return std::accumulate(m[t].begin() + 1, m[t].begin() + t + 1, 0.0) / t;
}
inline double fwt(const Rows& m, const std::vector<double>& incft, int t) { return incft[t] - m[t][t]; }
inline double bwt(const Rows& m, int t) {
  double s = 0;
  for (int i = 0; i < t; ++i) s += m[i][i] - m[t][i];
  return s / t;
}
inline double im(const Rows& m, const std::vector<double>& joint, int t) { return m[t][t] - joint[t]; }

/// |a - n| / max(|a|, |n|, floor)
inline double rel_err(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Largest relative error between analytic gradients and central finite
/// differences of f over every entry of the named tensors.
inline double max_fd_error(ParamMap& params, const GradientSet& analytic, const std::vector<std::string>& names,
                           const std::function<double()>& f, double h = 1e-5) {
  double worst = 0.0;
  for (const auto& name : names) {
    Matrix& p = params.at(name);
    const auto it = analytic.find(name);
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double keep = p.data()[k];
      p.data()[k] = keep + h;
      const double up = f();
      p.data()[k] = keep - h;
      const double down = f();
      p.data()[k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = it == analytic.end() ? 0.0 : it->second.data()[k];
      worst = std::max(worst, rel_err(a, numeric));
    }
  }
  return worst;
}

}  // namespace clh::oracle
