#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "semicrf/error.hpp"
#include "semicrf/event_model.hpp"

namespace semicrf {

// Scores for one event type over T frames: every candidate interval [i,j],
// i <= j (upper triangle, row-major, diagonal included), plus the inactivity
// score of each unit interval [i,i+1] at eps[i].
class IntervalScores {
 public:
  explicit IntervalScores(int num_frames = 1);
  IntervalScores(int num_frames, std::vector<double> upper, std::vector<double> eps);

  int num_frames() const { return num_frames_; }

  static std::size_t upper_size(int num_frames) {
    return static_cast<std::size_t>(num_frames) * (num_frames + 1) / 2;
  }
  static std::size_t upper_index(int num_frames, int i, int j) {
    return static_cast<std::size_t>(i) * num_frames - static_cast<std::size_t>(i) * (i - 1) / 2 +
           static_cast<std::size_t>(j - i);
  }

  double score(int i, int j) const { return upper_[upper_index(num_frames_, i, j)]; }
  double& score(int i, int j) { return upper_[upper_index(num_frames_, i, j)]; }
  double eps(int i) const { return eps_[static_cast<std::size_t>(i)]; }
  double& eps(int i) { return eps_[static_cast<std::size_t>(i)]; }

  std::span<const double> upper() const { return upper_; }
  std::span<double> upper() { return upper_; }
  std::span<const double> eps() const { return eps_; }
  std::span<double> eps() { return eps_; }

  // Throws ValidationError on non-finite entries.
  void validate() const;

 private:
  int num_frames_;
  std::vector<double> upper_;
  std::vector<double> eps_;
};

struct DecodeResult {
  std::vector<Interval> intervals;
  double total = 0.0;
};

// Posterior inclusion probabilities. `intervals` follows the IntervalScores
// upper layout; `uncovered[i]` is P(unit [i,i+1] not covered).
struct Marginals {
  int num_frames = 0;
  std::vector<double> intervals;
  std::vector<double> uncovered;

  double at(int i, int j) const {
    return intervals[IntervalScores::upper_index(num_frames, i, j)];
  }
};

// Sum of interval scores in Y plus eps of every unit [i-1,i] (i-1 >= start_frame)
// not contained in an interval of Y.
double total_score(const IntervalScores& scores, std::span<const Interval> intervals,
                   int start_frame = 0);

// Highest scoring configuration over frames [start_frame, T-1]. Ties prefer
// fewer intervals, then the inactivity path, then the smaller start frame.
DecodeResult map_decode(const IntervalScores& scores, int start_frame = 0);

double log_partition(const IntervalScores& scores, int start_frame = 0);

double log_likelihood(const IntervalScores& scores, std::span<const Interval> intervals);

Marginals interval_marginals(const IntervalScores& scores, int start_frame = 0);

// --- semiring recurrence ---------------------------------------------------
//
//   closed(t) = (+)( open(t-1) (x) eps(t-1),  (+)_{s<t} open(s) (x) score(s,t) )
//   open(t)   = closed(t) (+) closed(t) (x) score(t,t)
//
// with closed(start) = one. closed(t) accounts for everything ending at or
// before t except a single-frame event at t; open(t) also decides [t,t].
// Each configuration has exactly one derivation.

namespace semiring {

struct LogSum {
  using Value = double;
  static Value zero() { return -std::numeric_limits<double>::infinity(); }
  static Value one() { return 0.0; }
  static Value extend(Value v, double w, int /*added_intervals*/) { return v + w; }

  class Accumulator {
   public:
    void add(Value v, int /*choice*/) {
      if (v == -std::numeric_limits<double>::infinity()) return;
      if (v > max_) {
        sum_ = sum_ * std::exp(max_ - v) + 1.0;
        max_ = v;
      } else {
        sum_ += std::exp(v - max_);
      }
    }
    Value result() const { return sum_ == 0.0 ? zero() : max_ + std::log(sum_); }
    int choice() const { return 0; }

   private:
    double max_ = -std::numeric_limits<double>::infinity();
    double sum_ = 0.0;
  };
};

// (max, +) over (score, interval count), ordered by score then fewer intervals;
// the first candidate offered wins remaining ties.
struct MaxPlus {
  struct Value {
    double score;
    int count;
  };
  static Value zero() { return {-std::numeric_limits<double>::infinity(), 0}; }
  static Value one() { return {0.0, 0}; }
  static Value extend(Value v, double w, int added_intervals) {
    return {v.score + w, v.count + added_intervals};
  }
  static bool better(const Value& a, const Value& b) {
    return a.score > b.score || (a.score == b.score && a.count < b.count);
  }

  class Accumulator {
   public:
    void add(Value v, int choice) {
      if (!seen_ || better(v, best_)) {
        best_ = v;
        choice_ = choice;
        seen_ = true;
      }
    }
    Value result() const { return seen_ ? best_ : zero(); }
    int choice() const { return choice_; }

   private:
    Value best_ = zero();
    int choice_ = -1;
    bool seen_ = false;
  };
};

// Number of configurations (as double; exact up to 2^53).
struct Counting {
  using Value = double;
  static Value zero() { return 0.0; }
  static Value one() { return 1.0; }
  static Value extend(Value v, double /*w*/, int /*added*/) { return v; }
  class Accumulator {
   public:
    void add(Value v, int) { sum_ += v; }
    Value result() const { return sum_; }
    int choice() const { return 0; }

   private:
    double sum_ = 0.0;
  };
};

template <typename S>
struct Tables {
  std::vector<typename S::Value> closed;
  std::vector<typename S::Value> open;
  // closed: -1 for the inactivity path, else start frame s of [s,t].
  std::vector<int> closed_choice;
  // open: 1 when the single-frame event [t,t] was taken.
  std::vector<int> open_choice;
};

template <typename S>
Tables<S> forward(const IntervalScores& scores, int start_frame) {
  const int T = scores.num_frames();
  Tables<S> tab;
  tab.closed.assign(T, S::zero());
  tab.open.assign(T, S::zero());
  tab.closed_choice.assign(T, -1);
  tab.open_choice.assign(T, 0);
  for (int t = start_frame; t < T; ++t) {
    if (t == start_frame) {
      tab.closed[t] = S::one();
    } else {
      typename S::Accumulator acc;
      acc.add(S::extend(tab.open[t - 1], scores.eps(t - 1), 0), -1);
      for (int s = start_frame; s < t; ++s) {
        acc.add(S::extend(tab.open[s], scores.score(s, t), 1), s);
      }
      tab.closed[t] = acc.result();
      tab.closed_choice[t] = acc.choice();
    }
    typename S::Accumulator diag;
    diag.add(tab.closed[t], 0);
    diag.add(S::extend(tab.closed[t], scores.score(t, t), 1), 1);
    tab.open[t] = diag.result();
    tab.open_choice[t] = diag.choice();
  }
  return tab;
}

}  // namespace semiring

}  // namespace semicrf
