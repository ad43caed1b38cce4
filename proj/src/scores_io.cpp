#include "semicrf/scores_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semicrf/error.hpp"

namespace semicrf {

using nlohmann::json;

namespace {

double number(const json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    if (s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-Infinity") return -std::numeric_limits<double>::infinity();
  }
  throw ValidationError(where + " is not a number");
}

std::vector<double> numbers(const json& track, const char* key, const std::string& name) {
  if (!track.contains(key) || !track[key].is_array()) {
    throw ValidationError(name + ": missing array '" + key + "'");
  }
  std::vector<double> out;
  out.reserve(track[key].size());
  for (std::size_t i = 0; i < track[key].size(); ++i) {
    const double x = number(track[key][i], name + ": " + key + "[" + std::to_string(i) + "]");
    if (!std::isfinite(x)) throw ValidationError(name + ": non-finite value at " + key + "[" + std::to_string(i) + "]");
    out.push_back(x);
  }
  return out;
}

}  // namespace

ScoresFile scores_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("scores file is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("T") || !j["T"].is_number_integer()) {
    throw ValidationError("scores file needs an integer 'T'");
  }
  if (!j.contains("tracks") || !j["tracks"].is_array()) throw ValidationError("scores file needs a 'tracks' array");
  ScoresFile f;
  f.num_frames = j["T"].get<int>();
  if (f.num_frames < 1) throw ValidationError("scores file: T must be >= 1");
  for (std::size_t n = 0; n < j["tracks"].size(); ++n) {
    const json& t = j["tracks"][n];
    std::string name = "track " + std::to_string(n);
    if (!t.is_object() || !t.contains("type") || !t["type"].is_string()) {
      throw ValidationError(name + ": missing string 'type'");
    }
    const auto type = t["type"].get<std::string>();
    name = "track '" + type + "'";
    for (const auto& prev : f.tracks) {
      if (prev.type == type) throw ValidationError(name + ": duplicate type");
    }
    try {
      f.tracks.push_back({type, IntervalScores(f.num_frames, numbers(t, "upper", name), numbers(t, "eps", name))});
    } catch (const ValidationError& e) {
      const std::string what = e.what();
      if (what.rfind(name, 0) == 0) throw;
      throw ValidationError(name + ": " + what);
    }
  }
  return f;
}

std::string scores_to_json(const ScoresFile& file) {
  json tracks = json::array();
  for (const auto& t : file.tracks) {
    const auto up = t.scores.upper();
    const auto ep = t.scores.eps();
    tracks.push_back({{"type", t.type},
                      {"upper", std::vector<double>(up.begin(), up.end())},
                      {"eps", std::vector<double>(ep.begin(), ep.end())}});
  }
  return json{{"T", file.num_frames}, {"tracks", tracks}}.dump(1);
}

ScoresFile read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scores file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return scores_from_json(buf.str());
}

void write_scores(const std::filesystem::path& path, const ScoresFile& file) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write scores file " + path.string());
  out << scores_to_json(file);
}

}  // namespace semicrf
