#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "semicrf/engine.hpp"

namespace semicrf {

struct ScoreTrack {
  std::string type;
  IntervalScores scores;
};

struct ScoresFile {
  int num_frames = 0;
  std::vector<ScoreTrack> tracks;
};

// {"T": int, "tracks": [{"type", "upper": T(T+1)/2 numbers, "eps": T-1 numbers}]}
// Errors name the offending track. Non-finite values are rejected; JSON has no
// NaN literal, so the strings "NaN", "Infinity", "-Infinity" are accepted as
// numbers only to be reported as non-finite.
ScoresFile scores_from_json(const std::string& text);
std::string scores_to_json(const ScoresFile& file);
ScoresFile read_scores(const std::filesystem::path& path);
void write_scores(const std::filesystem::path& path, const ScoresFile& file);

}  // namespace semicrf
