#pragma once

// Brute-force reference computations shared by the unit and acceptance tests.
// Nothing here calls into the DP code it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "semicrf/engine.hpp"
#include "semicrf/event_model.hpp"

namespace oracle {

using semicrf::Interval;
using semicrf::IntervalScores;

// Configuration total evaluated directly from the containment definition.
inline double phi(const IntervalScores& s, const std::vector<Interval>& y, int start = 0) {
  double total = 0.0;
  for (const auto& iv : y) total += s.score(iv.onset, iv.offset);
  for (int i = start + 1; i < s.num_frames(); ++i) {
    bool covered = false;
    for (const auto& iv : y) covered = covered || (iv.onset <= i - 1 && i <= iv.offset);
    if (!covered) total += s.eps(i - 1);
  }
  return total;
}

inline std::vector<std::vector<Interval>> configurations_from(int T, int start) {
  std::vector<std::vector<Interval>> out;
  for (auto& c : semicrf::enumerate_configurations(T)) {
    if (std::all_of(c.begin(), c.end(), [&](const Interval& iv) { return iv.onset >= start; })) {
      out.push_back(std::move(c));
    }
  }
  return out;
}

struct Argmax {
  std::vector<Interval> config;
  double score;
};

// Highest score, then fewest intervals.
inline Argmax brute_argmax(const IntervalScores& s, int start = 0) {
  Argmax best{{}, -std::numeric_limits<double>::infinity()};
  bool first = true;
  for (const auto& c : configurations_from(s.num_frames(), start)) {
    const double v = phi(s, c, start);
    if (first || v > best.score || (v == best.score && c.size() < best.config.size())) {
      best = {c, v};
      first = false;
    }
  }
  return best;
}

inline double brute_log_partition(const IntervalScores& s, int start = 0) {
  std::vector<double> values;
  for (const auto& c : configurations_from(s.num_frames(), start)) values.push_back(phi(s, c, start));
  const double m = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - m);
  return m + std::log(sum);
}

// Central differences of a scalar function of one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-5) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Composite Simpson rule on [a,b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

// Continuous Bernoulli density written from its lambda form.
inline double cb_density(double x, double lambda) {
  const double c = std::abs(lambda - 0.5) < 1e-12
                       ? 2.0
                       : 2.0 * std::atanh(1.0 - 2.0 * lambda) / (1.0 - 2.0 * lambda);
  return c * std::pow(lambda, x) * std::pow(1.0 - lambda, 1.0 - x);
}

// Gaussian kernel that random Fourier features with N(0, gamma^-2) frequencies
// approximate.
inline double rbf_kernel(double sq_dist, double gamma = 1.0) {
  return std::exp(-sq_dist / (2.0 * gamma * gamma));
}

// Size of a maximum bipartite matching by exhaustive search (small inputs).
inline int brute_max_matching(int left, int right, const std::vector<std::pair<int, int>>& edges) {
  int best = 0;
  std::vector<char> used_r(static_cast<std::size_t>(right), 0);
  std::function<void(int, int)> go = [&](int l, int size) {
    if (l == left) {
      best = std::max(best, size);
      return;
    }
    go(l + 1, size);
    for (const auto& [a, b] : edges) {
      if (a == l && !used_r[static_cast<std::size_t>(b)]) {
        used_r[static_cast<std::size_t>(b)] = 1;
        go(l + 1, size + 1);
        used_r[static_cast<std::size_t>(b)] = 0;
      }
    }
  };
  go(0, 0);
  return best;
}

}  // namespace oracle
