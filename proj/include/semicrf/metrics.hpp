#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "semicrf/event_model.hpp"

namespace semicrf {

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// precision = matched/est, recall = matched/ref (1 when both sides are empty,
// 0 when only the denominator is empty); f1 = 0 when P + R = 0.
PRF make_prf(double matched_est, double est_total, double matched_ref, double ref_total);

struct NoteTolerances {
  double onset = 0.05;         // seconds, inclusive
  double offset_min = 0.05;    // seconds
  double offset_ratio = 0.2;   // of reference duration
  double velocity = 0.1;       // on normalized velocities
  double slack = 1e-9;         // absorbs rounding in inclusive comparisons
};

enum class NoteMode { kOnset, kOffset, kVelocity };

// Activation precision/recall from per-type unions of dequantized intervals.
PRF activation_prf(const Recording& ref, const Recording& est);

// Per type max matching under the mode's criteria, summed over types. Velocity
// mode adds a check on velocities rescaled by a least-squares fit; a pair with
// no velocity on either side passes it, a pair with one missing fails.
PRF note_prf(const Recording& ref, const Recording& est, NoteMode mode, const NoteTolerances& tol = {});

// Maximum-cardinality matching; adjacency[l] lists right vertices of l in
// preference order. Returns (left, right) pairs sorted by left.
std::vector<std::pair<int, int>> max_bipartite_matching(int num_right,
                                                        const std::vector<std::vector<int>>& adjacency);

struct RecordingMetrics {
  std::string name;
  PRF activation, note_onset, note_offset, note_velocity;
};

// Throws ValidationError when the recordings' event-type sets differ.
RecordingMetrics evaluate_recording(const Recording& ref, const Recording& est, const std::string& name = "",
                                    const NoteTolerances& tol = {});

// Unweighted mean of each P, R, F1; throws ValidationError on empty input.
RecordingMetrics average_over_recordings(std::span<const RecordingMetrics> reports);

nlohmann::json metrics_report_json(std::span<const RecordingMetrics> per_recording);
std::string metrics_report_table(std::span<const RecordingMetrics> per_recording);

}  // namespace semicrf
