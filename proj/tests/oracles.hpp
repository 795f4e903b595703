#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. They favour the most literal formulation over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace oracle {

// True iff some run of >= L consecutive values is >= tau.
inline bool has_run(const std::vector<double>& p, int L, double tau) {
  int run = 0;
  for (double v : p) {
    run = v >= tau ? run + 1 : 0;
    if (run >= L) return true;
  }
  return false;
}

// Max over windows of the window minimum, by direct enumeration.
inline double window_score(const std::vector<double>& p, int L) {
  double best = 0.0;
  for (std::size_t s = 0; s + static_cast<std::size_t>(L) <= p.size(); ++s) {
    double m = p[s];
    for (int k = 1; k < L; ++k) m = std::min(m, p[s + k]);
    best = std::max(best, m);
  }
  return best;
}

// Pairwise Mann-Whitney count: returns 2*U (integer) and n_pos*n_neg.
struct PairCount {
  std::int64_t twice_u = 0;
  std::int64_t pairs = 0;
  double value() const { return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pairs)); }
};

inline PairCount pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  PairCount c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      ++c.pairs;
      if (s[i] > s[j]) c.twice_u += 2;
      else if (s[i] == s[j]) c.twice_u += 1;
    }
  }
  return c;
}

// Exhaustive single-feature split search with class-weighted Gini.
// Candidates are midpoints between consecutive distinct values; the first
// (smallest) threshold wins exact ties. Empty when all values are equal.
struct GiniSplit {
  double threshold;
  double impurity;
};

inline std::optional<GiniSplit> best_gini_split(const std::vector<double>& x, const std::vector<int>& y,
                                                double w0, double w1) {
  std::vector<double> values = x;
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::optional<GiniSplit> best;
  for (std::size_t k = 0; k + 1 < values.size(); ++k) {
    const double t = (values[k] + values[k + 1]) / 2.0;
    double l[2] = {0, 0}, r[2] = {0, 0};
    for (std::size_t i = 0; i < x.size(); ++i) (x[i] <= t ? l : r)[y[i]] += y[i] ? w1 : w0;
    auto node = [](double a, double b) {
      const double n = a + b;
      if (n == 0.0) return 0.0;
      const double pa = a / n, pb = b / n;
      return n * (1.0 - pa * pa - pb * pb);
    };
    const double imp = node(l[0], l[1]) + node(r[0], r[1]);
    if (!best || imp < best->impurity - 1e-9 * std::max(1.0, std::abs(best->impurity))) best = GiniSplit{t, imp};
  }
  return best;
}

}  // namespace oracle
