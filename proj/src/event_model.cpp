#include "semicrf/event_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semicrf/error.hpp"

namespace semicrf {

using nlohmann::json;

bool overlaps(const Interval& a, const Interval& b) {
  return !(a.onset >= b.offset || b.onset >= a.offset);
}

bool validate_non_overlap(std::span<const Interval> intervals) {
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    for (std::size_t j = i + 1; j < intervals.size(); ++j) {
      if (overlaps(intervals[i], intervals[j])) return false;
    }
  }
  return true;
}

std::vector<Interval> EventSet::intervals() const {
  std::vector<Interval> out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back(e.interval);
  return out;
}

const EventSet* Recording::find_track(const std::string& type) const {
  for (const auto& t : tracks) {
    if (t.type == type) return &t;
  }
  return nullptr;
}

EventSet& Recording::track(const std::string& type) {
  for (auto& t : tracks) {
    if (t.type == type) return t;
  }
  tracks.push_back(EventSet{type, {}});
  return tracks.back();
}

std::vector<Event> canonical_sort(std::vector<Event> events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.interval < b.interval; });
  // Sorted by onset: once b starts after a ends, no later interval can hit a.
  for (std::size_t i = 0; i < events.size(); ++i) {
    for (std::size_t j = i + 1; j < events.size(); ++j) {
      const auto& a = events[i].interval;
      const auto& b = events[j].interval;
      if (b.onset > a.offset) break;
      if (a == b) {
        throw ValidationError("duplicate interval [" + std::to_string(a.onset) + "," +
                              std::to_string(a.offset) + "]");
      }
      if (overlaps(a, b)) {
        throw ValidationError("overlapping intervals [" + std::to_string(a.onset) + "," +
                              std::to_string(a.offset) + "] and [" + std::to_string(b.onset) +
                              "," + std::to_string(b.offset) + "]");
      }
    }
  }
  return events;
}

namespace {

std::string where(const std::string& type, std::size_t index) {
  return "track '" + type + "' event " + std::to_string(index);
}

bool inside_open_half(double v) { return std::isfinite(v) && v > -0.5 && v < 0.5; }

}  // namespace

void validate_recording(const Recording& recording) {
  if (!(recording.hop_seconds > 0.0) || !std::isfinite(recording.hop_seconds)) {
    throw ValidationError("hop_seconds must be a positive number");
  }
  if (recording.num_frames <= 0) throw ValidationError("num_frames must be positive");
  for (std::size_t t = 0; t < recording.tracks.size(); ++t) {
    const auto& track = recording.tracks[t];
    for (std::size_t u = t + 1; u < recording.tracks.size(); ++u) {
      if (recording.tracks[u].type == track.type) {
        throw ValidationError("duplicate track type '" + track.type + "'");
      }
    }
    for (std::size_t i = 0; i < track.events.size(); ++i) {
      const auto& e = track.events[i];
      if (e.interval.onset < 0 || e.interval.offset < e.interval.onset) {
        throw ValidationError(where(track.type, i) + ": onset_frame must be <= offset_frame");
      }
      if (e.interval.offset >= recording.num_frames) {
        throw ValidationError(where(track.type, i) + ": frame beyond num_frames");
      }
      if (e.velocity && (*e.velocity < 0 || *e.velocity > 127)) {
        throw ValidationError(where(track.type, i) + ": velocity outside 0..127");
      }
      if (e.refined_onset && !inside_open_half(*e.refined_onset)) {
        throw ValidationError(where(track.type, i) + ": refined_onset outside (-0.5, 0.5)");
      }
      if (e.refined_offset && !inside_open_half(*e.refined_offset)) {
        throw ValidationError(where(track.type, i) + ": refined_offset outside (-0.5, 0.5)");
      }
      if (i > 0 && !(track.events[i - 1].interval < e.interval)) {
        throw ValidationError(where(track.type, i) + ": events not in canonical order");
      }
    }
    const auto iv = track.intervals();
    if (!validate_non_overlap(iv)) {
      for (std::size_t i = 0; i < iv.size(); ++i) {
        for (std::size_t j = i + 1; j < iv.size(); ++j) {
          if (overlaps(iv[i], iv[j])) {
            throw ValidationError(where(track.type, j) + ": overlaps event " + std::to_string(i));
          }
        }
      }
    }
  }
}

namespace {

void extend_configurations(const std::vector<Interval>& candidates, std::size_t next,
                           std::vector<Interval>& chosen,
                           std::vector<std::vector<Interval>>& out) {
  if (next == candidates.size()) {
    auto sorted = chosen;
    std::sort(sorted.begin(), sorted.end());
    out.push_back(std::move(sorted));
    return;
  }
  extend_configurations(candidates, next + 1, chosen, out);
  const Interval& c = candidates[next];
  for (const auto& x : chosen) {
    if (overlaps(x, c)) return;
  }
  chosen.push_back(c);
  extend_configurations(candidates, next + 1, chosen, out);
  chosen.pop_back();
}

}  // namespace

std::vector<std::vector<Interval>> enumerate_configurations(int num_frames, int bound) {
  if (num_frames < 1) throw ValidationError("enumeration needs at least one frame");
  if (num_frames > bound) {
    throw ValidationError("enumeration limited to " + std::to_string(bound) + " frames");
  }
  std::vector<Interval> candidates;
  for (int i = 0; i < num_frames; ++i) {
    for (int j = i; j < num_frames; ++j) candidates.push_back({i, j});
  }
  std::vector<std::vector<Interval>> out;
  std::vector<Interval> chosen;
  extend_configurations(candidates, 0, chosen, out);
  std::sort(out.begin(), out.end());
  return out;
}

// --- events file -----------------------------------------------------------

namespace {

template <typename T>
T required(const json& j, const char* key, const std::string& ctx) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(ctx + ": missing '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(ctx + ": '" + key + "' has the wrong type");
  }
}

Event event_from_json(const json& j, const std::string& ctx) {
  if (!j.is_object()) throw ValidationError(ctx + ": event must be an object");
  Event e;
  e.interval.onset = required<int>(j, "onset_frame", ctx);
  e.interval.offset = required<int>(j, "offset_frame", ctx);
  if (j.contains("velocity")) e.velocity = required<int>(j, "velocity", ctx);
  if (j.contains("refined_onset")) e.refined_onset = required<double>(j, "refined_onset", ctx);
  if (j.contains("refined_offset")) e.refined_offset = required<double>(j, "refined_offset", ctx);
  if (j.contains("has_onset")) e.has_onset = required<bool>(j, "has_onset", ctx);
  if (j.contains("has_offset")) e.has_offset = required<bool>(j, "has_offset", ctx);
  return e;
}

json event_to_json(const Event& e) {
  json j;
  j["onset_frame"] = e.interval.onset;
  j["offset_frame"] = e.interval.offset;
  if (e.velocity) j["velocity"] = *e.velocity;
  if (e.refined_onset) j["refined_onset"] = *e.refined_onset;
  if (e.refined_offset) j["refined_offset"] = *e.refined_offset;
  j["has_onset"] = e.has_onset;
  j["has_offset"] = e.has_offset;
  return j;
}

}  // namespace

Recording recording_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& err) {
    throw ValidationError(std::string("malformed events JSON: ") + err.what());
  }
  if (!root.is_object()) throw ValidationError("events file must be a JSON object");
  Recording rec;
  rec.hop_seconds = required<double>(root, "hop_seconds", "events file");
  rec.num_frames = required<int>(root, "num_frames", "events file");
  const auto tracks = root.find("tracks");
  if (tracks == root.end() || !tracks->is_array()) {
    throw ValidationError("events file: 'tracks' must be an array");
  }
  for (std::size_t t = 0; t < tracks->size(); ++t) {
    const auto& jt = (*tracks)[t];
    const std::string ctx = "track " + std::to_string(t);
    EventSet set;
    set.type = required<std::string>(jt, "type", ctx);
    const auto events = jt.find("events");
    if (events == jt.end() || !events->is_array()) {
      throw ValidationError("track '" + set.type + "': 'events' must be an array");
    }
    for (std::size_t i = 0; i < events->size(); ++i) {
      set.events.push_back(event_from_json((*events)[i], where(set.type, i)));
    }
    std::stable_sort(set.events.begin(), set.events.end(),
                     [](const Event& a, const Event& b) { return a.interval < b.interval; });
    rec.tracks.push_back(std::move(set));
  }
  validate_recording(rec);
  return rec;
}

std::string recording_to_json(const Recording& recording) {
  validate_recording(recording);
  json root;
  root["hop_seconds"] = recording.hop_seconds;
  root["num_frames"] = recording.num_frames;
  root["tracks"] = json::array();
  for (const auto& t : recording.tracks) {
    json jt;
    jt["type"] = t.type;
    jt["events"] = json::array();
    for (const auto& e : t.events) jt["events"].push_back(event_to_json(e));
    root["tracks"].push_back(std::move(jt));
  }
  return root.dump(2) + "\n";
}

Recording read_events(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open events file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return recording_from_json(buf.str());
}

void write_events(const std::filesystem::path& path, const Recording& recording) {
  const auto text = recording_to_json(recording);
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write events file " + path.string());
  out << text;
}

}  // namespace semicrf
