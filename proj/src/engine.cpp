#include "semicrf/engine.hpp"

#include <algorithm>
#include <string>

namespace semicrf {

IntervalScores::IntervalScores(int num_frames)
    : num_frames_(num_frames),
      upper_(upper_size(std::max(num_frames, 0)), 0.0),
      eps_(static_cast<std::size_t>(std::max(num_frames - 1, 0)), 0.0) {
  if (num_frames < 1) throw ValidationError("IntervalScores needs at least one frame");
}

IntervalScores::IntervalScores(int num_frames, std::vector<double> upper, std::vector<double> eps)
    : num_frames_(num_frames), upper_(std::move(upper)), eps_(std::move(eps)) {
  if (num_frames < 1) throw ValidationError("IntervalScores needs at least one frame");
  if (upper_.size() != upper_size(num_frames)) {
    throw ValidationError("upper has " + std::to_string(upper_.size()) + " entries, expected " +
                          std::to_string(upper_size(num_frames)));
  }
  if (eps_.size() != static_cast<std::size_t>(num_frames - 1)) {
    throw ValidationError("eps has " + std::to_string(eps_.size()) + " entries, expected " +
                          std::to_string(num_frames - 1));
  }
}

void IntervalScores::validate() const {
  for (std::size_t k = 0; k < upper_.size(); ++k) {
    if (!std::isfinite(upper_[k])) {
      throw ValidationError("non-finite interval score at upper index " + std::to_string(k));
    }
  }
  for (std::size_t k = 0; k < eps_.size(); ++k) {
    if (!std::isfinite(eps_[k])) {
      throw ValidationError("non-finite eps score at index " + std::to_string(k));
    }
  }
}

namespace {

void check_start(const IntervalScores& scores, int start_frame) {
  if (start_frame < 0 || start_frame >= scores.num_frames()) {
    throw ValidationError("start_frame " + std::to_string(start_frame) + " outside [0, " +
                          std::to_string(scores.num_frames()) + ")");
  }
}

void check_configuration(const IntervalScores& scores, std::span<const Interval> intervals,
                         int start_frame) {
  for (const auto& iv : intervals) {
    if (iv.onset < start_frame || iv.offset < iv.onset || iv.offset >= scores.num_frames()) {
      throw ValidationError("interval [" + std::to_string(iv.onset) + "," +
                            std::to_string(iv.offset) + "] out of range");
    }
  }
  std::vector<Interval> sorted(intervals.begin(), intervals.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("duplicate interval in configuration");
  }
  if (!validate_non_overlap(sorted)) throw ValidationError("configuration has overlapping intervals");
}

}  // namespace

double total_score(const IntervalScores& scores, std::span<const Interval> intervals,
                   int start_frame) {
  check_start(scores, start_frame);
  check_configuration(scores, intervals, start_frame);
  const int T = scores.num_frames();
  std::vector<char> covered(static_cast<std::size_t>(std::max(T - 1, 0)), 0);
  double total = 0.0;
  for (const auto& iv : intervals) {
    total += scores.score(iv.onset, iv.offset);
    for (int u = iv.onset; u < iv.offset; ++u) covered[u] = 1;
  }
  for (int u = start_frame; u + 1 < T; ++u) {
    if (!covered[u]) total += scores.eps(u);
  }
  return total;
}

DecodeResult map_decode(const IntervalScores& scores, int start_frame) {
  check_start(scores, start_frame);
  scores.validate();
  const auto tab = semiring::forward<semiring::MaxPlus>(scores, start_frame);

  DecodeResult result;
  int t = scores.num_frames() - 1;
  bool at_open = true;
  while (t >= start_frame) {
    if (at_open) {
      if (tab.open_choice[t] == 1) result.intervals.push_back({t, t});
      at_open = false;
      continue;
    }
    if (t == start_frame) break;
    const int s = tab.closed_choice[t];
    if (s >= 0) {
      result.intervals.push_back({s, t});
      t = s;
    } else {
      t = t - 1;
    }
    at_open = true;
  }
  std::sort(result.intervals.begin(), result.intervals.end());
  result.total = total_score(scores, result.intervals, start_frame);
  return result;
}

double log_partition(const IntervalScores& scores, int start_frame) {
  check_start(scores, start_frame);
  scores.validate();
  const auto tab = semiring::forward<semiring::LogSum>(scores, start_frame);
  return tab.open.back();
}

double log_likelihood(const IntervalScores& scores, std::span<const Interval> intervals) {
  return total_score(scores, intervals) - log_partition(scores);
}

Marginals interval_marginals(const IntervalScores& scores, int start_frame) {
  check_start(scores, start_frame);
  scores.validate();
  const int T = scores.num_frames();
  const auto tab = semiring::forward<semiring::LogSum>(scores, start_frame);
  const double log_z = tab.open.back();

  // Outside scores: everything after state closed(t) / open(t).
  std::vector<double> closed_out(T), open_out(T);
  for (int t = T - 1; t >= start_frame; --t) {
    if (t == T - 1) {
      open_out[t] = 0.0;
    } else {
      semiring::LogSum::Accumulator acc;
      acc.add(scores.eps(t) + closed_out[t + 1], 0);
      for (int u = t + 1; u < T; ++u) acc.add(scores.score(t, u) + closed_out[u], 0);
      open_out[t] = acc.result();
    }
    semiring::LogSum::Accumulator diag;
    diag.add(open_out[t], 0);
    diag.add(scores.score(t, t) + open_out[t], 0);
    closed_out[t] = diag.result();
  }

  Marginals m;
  m.num_frames = T;
  m.intervals.assign(IntervalScores::upper_size(T), 0.0);
  m.uncovered.assign(static_cast<std::size_t>(T - 1), 0.0);
  for (int s = start_frame; s < T; ++s) {
    const std::size_t row = IntervalScores::upper_index(T, s, s);
    m.intervals[row] = std::exp(tab.closed[s] + scores.score(s, s) + open_out[s] - log_z);
    for (int t = s + 1; t < T; ++t) {
      m.intervals[row + (t - s)] =
          std::exp(tab.open[s] + scores.score(s, t) + closed_out[t] - log_z);
    }
    if (s + 1 < T) m.uncovered[s] = std::exp(tab.open[s] + scores.eps(s) + closed_out[s + 1] - log_z);
  }
  return m;
}

}  // namespace semicrf
