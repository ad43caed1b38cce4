#pragma once

#include <compare>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace semicrf {

// Closed frame interval [onset, offset]. onset == offset is a single-frame event.
struct Interval {
  int onset = 0;
  int offset = 0;

  friend auto operator<=>(const Interval&, const Interval&) = default;
};

// True when the two closed intervals violate the non-overlap predicate
// (a.onset >= b.offset or b.onset >= a.offset). Touching endpoints are allowed,
// which also admits [t,t] next to [s,t] and [t,u].
bool overlaps(const Interval& a, const Interval& b);

bool validate_non_overlap(std::span<const Interval> intervals);

struct Event {
  Interval interval;
  std::optional<int> velocity;
  std::optional<double> refined_onset;
  std::optional<double> refined_offset;
  bool has_onset = true;
  bool has_offset = true;

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventSet {
  std::string type;
  std::vector<Event> events;

  std::vector<Interval> intervals() const;
  friend bool operator==(const EventSet&, const EventSet&) = default;
};

struct Recording {
  double hop_seconds = 0.01;
  int num_frames = 0;
  std::vector<EventSet> tracks;

  const EventSet* find_track(const std::string& type) const;
  EventSet& track(const std::string& type);  // creates an empty track if absent
  friend bool operator==(const Recording&, const Recording&) = default;
};

// Ascending (onset, offset). Throws ValidationError on overlapping or duplicate
// intervals.
std::vector<Event> canonical_sort(std::vector<Event> events);

// Throws ValidationError naming the track and event index on the first
// violated invariant.
void validate_recording(const Recording& recording);

inline constexpr int kEnumerationBound = 8;

// Every valid interval configuration over T frames, each once, as sorted
// sequences. Exhaustive search over candidate intervals; used as an oracle.
std::vector<std::vector<Interval>> enumerate_configurations(int num_frames,
                                                            int bound = kEnumerationBound);

// Events file (JSON).
Recording recording_from_json(const std::string& text);
std::string recording_to_json(const Recording& recording);
Recording read_events(const std::filesystem::path& path);
void write_events(const std::filesystem::path& path, const Recording& recording);

}  // namespace semicrf
