#include "semicrf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "semicrf/error.hpp"

namespace semicrf {

namespace {

struct Note {
  double onset, offset;
  std::optional<int> velocity;
};

std::vector<Note> dequantize(const EventSet& track, double hop) {
  std::vector<Note> out;
  for (const auto& e : track.events) {
    out.push_back({(e.interval.onset + e.refined_onset.value_or(0.0)) * hop,
                   (e.interval.offset + e.refined_offset.value_or(0.0)) * hop, e.velocity});
  }
  return out;
}

using Span = std::pair<double, double>;

std::vector<Span> union_of(const std::vector<Note>& notes) {
  std::vector<Span> s;
  for (const auto& n : notes) {
    if (n.offset > n.onset) s.emplace_back(n.onset, n.offset);
  }
  std::sort(s.begin(), s.end());
  std::vector<Span> merged;
  for (const auto& x : s) {
    if (!merged.empty() && x.first <= merged.back().second) {
      merged.back().second = std::max(merged.back().second, x.second);
    } else {
      merged.push_back(x);
    }
  }
  return merged;
}

double length(const std::vector<Span>& s) {
  double total = 0.0;
  for (const auto& [a, b] : s) total += b - a;
  return total;
}

double intersection(const std::vector<Span>& a, const std::vector<Span>& b) {
  double total = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    total += std::max(0.0, std::min(a[i].second, b[j].second) - std::max(a[i].first, b[j].first));
    if (a[i].second < b[j].second) {
      ++i;
    } else {
      ++j;
    }
  }
  return total;
}

std::set<std::string> type_set(const Recording& r) {
  std::set<std::string> s;
  for (const auto& t : r.tracks) s.insert(t.type);
  return s;
}

void check_universe(const Recording& ref, const Recording& est) {
  if (type_set(ref) != type_set(est)) throw ValidationError("reference and estimate event types differ");
}

const EventSet kEmpty{};

const EventSet& track_or_empty(const Recording& r, const std::string& type) {
  const EventSet* t = r.find_track(type);
  return t ? *t : kEmpty;
}

int match_size_for(const std::vector<Note>& ref, const std::vector<Note>& est,
                   const std::function<bool(std::size_t, std::size_t)>& admissible) {
  std::vector<std::vector<int>> adj(ref.size());
  for (std::size_t r = 0; r < ref.size(); ++r) {
    for (std::size_t e = 0; e < est.size(); ++e) {
      if (admissible(r, e)) adj[r].push_back(static_cast<int>(e));
    }
  }
  return static_cast<int>(max_bipartite_matching(static_cast<int>(est.size()), adj).size());
}

}  // namespace

PRF make_prf(double matched_est, double est_total, double matched_ref, double ref_total) {
  PRF p;
  if (est_total <= 0.0 && ref_total <= 0.0) return {1.0, 1.0, 1.0};
  p.precision = est_total > 0.0 ? matched_est / est_total : 0.0;
  p.recall = ref_total > 0.0 ? matched_ref / ref_total : 0.0;
  p.f1 = p.precision + p.recall > 0.0 ? 2.0 * p.precision * p.recall / (p.precision + p.recall) : 0.0;
  return p;
}

PRF activation_prf(const Recording& ref, const Recording& est) {
  check_universe(ref, est);
  double inter = 0.0, ref_len = 0.0, est_len = 0.0;
  for (const auto& rt : ref.tracks) {
    const auto a = union_of(dequantize(rt, ref.hop_seconds));
    const auto b = union_of(dequantize(track_or_empty(est, rt.type), est.hop_seconds));
    inter += intersection(a, b);
    ref_len += length(a);
    est_len += length(b);
  }
  return make_prf(inter, est_len, inter, ref_len);
}

std::vector<std::pair<int, int>> max_bipartite_matching(int num_right,
                                                        const std::vector<std::vector<int>>& adjacency) {
  std::vector<int> owner(static_cast<std::size_t>(num_right), -1);
  std::vector<char> seen;
  std::function<bool(int)> augment = [&](int l) {
    for (int r : adjacency[static_cast<std::size_t>(l)]) {
      if (seen[static_cast<std::size_t>(r)]) continue;
      seen[static_cast<std::size_t>(r)] = 1;
      if (owner[static_cast<std::size_t>(r)] < 0 || augment(owner[static_cast<std::size_t>(r)])) {
        owner[static_cast<std::size_t>(r)] = l;
        return true;
      }
    }
    return false;
  };
  for (int l = 0; l < static_cast<int>(adjacency.size()); ++l) {
    seen.assign(static_cast<std::size_t>(num_right), 0);
    augment(l);
  }
  std::vector<std::pair<int, int>> m;
  for (int r = 0; r < num_right; ++r) {
    if (owner[static_cast<std::size_t>(r)] >= 0) m.emplace_back(owner[static_cast<std::size_t>(r)], r);
  }
  std::sort(m.begin(), m.end());
  return m;
}

PRF note_prf(const Recording& ref, const Recording& est, NoteMode mode, const NoteTolerances& tol) {
  check_universe(ref, est);
  double matched = 0.0, n_ref = 0.0, n_est = 0.0;
  for (const auto& rt : ref.tracks) {
    const auto r = dequantize(rt, ref.hop_seconds);
    const auto e = dequantize(track_or_empty(est, rt.type), est.hop_seconds);
    n_ref += static_cast<double>(r.size());
    n_est += static_cast<double>(e.size());
    auto timing = [&](std::size_t i, std::size_t j) {
      if (std::abs(e[j].onset - r[i].onset) > tol.onset + tol.slack) return false;
      if (mode == NoteMode::kOnset) return true;
      const double off_tol = std::max(tol.offset_min, tol.offset_ratio * (r[i].offset - r[i].onset));
      return std::abs(e[j].offset - r[i].offset) <= off_tol + tol.slack;
    };
    if (mode != NoteMode::kVelocity) {
      matched += match_size_for(r, e, timing);
      continue;
    }
    // velocity: fit est -> normalized ref velocities on the timing matches,
    // then keep pairs within tolerance and match again
    std::vector<std::vector<int>> adj(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (std::size_t j = 0; j < e.size(); ++j) {
        if (timing(i, j)) adj[i].push_back(static_cast<int>(j));
      }
    }
    const auto m = max_bipartite_matching(static_cast<int>(e.size()), adj);
    double vmax = 0.0;
    for (const auto& n : r) vmax = std::max(vmax, static_cast<double>(n.velocity.value_or(0)));
    std::vector<std::pair<double, double>> pts;
    for (const auto& [i, j] : m) {
      const auto& rv = r[static_cast<std::size_t>(i)].velocity;
      const auto& ev = e[static_cast<std::size_t>(j)].velocity;
      if (rv && ev && vmax > 0) pts.emplace_back(*ev, *rv / vmax);
    }
    Eigen::Vector2d fit = Eigen::Vector2d::Zero();
    if (!pts.empty()) {
      Eigen::MatrixXd A(pts.size(), 2);
      Eigen::VectorXd y(pts.size());
      for (std::size_t k = 0; k < pts.size(); ++k) {
        A(static_cast<Eigen::Index>(k), 0) = pts[k].first;
        A(static_cast<Eigen::Index>(k), 1) = 1.0;
        y(static_cast<Eigen::Index>(k)) = pts[k].second;
      }
      fit = A.completeOrthogonalDecomposition().solve(y);
    }
    // both velocities absent: nothing to compare; one absent: no match
    matched += match_size_for(r, e, [&](std::size_t i, std::size_t j) {
      if (!timing(i, j)) return false;
      if (!r[i].velocity && !e[j].velocity) return true;
      if (!r[i].velocity || !e[j].velocity || pts.empty()) return false;
      const double pred = fit(0) * *e[j].velocity + fit(1);
      return std::abs(pred - *r[i].velocity / vmax) <= tol.velocity + tol.slack;
    });
  }
  return make_prf(matched, n_est, matched, n_ref);
}

RecordingMetrics evaluate_recording(const Recording& ref, const Recording& est, const std::string& name,
                                    const NoteTolerances& tol) {
  RecordingMetrics m;
  m.name = name;
  m.activation = activation_prf(ref, est);
  m.note_onset = note_prf(ref, est, NoteMode::kOnset, tol);
  m.note_offset = note_prf(ref, est, NoteMode::kOffset, tol);
  m.note_velocity = note_prf(ref, est, NoteMode::kVelocity, tol);
  return m;
}

RecordingMetrics average_over_recordings(std::span<const RecordingMetrics> reports) {
  if (reports.empty()) throw ValidationError("average over zero recordings");
  RecordingMetrics avg;
  avg.name = "average";
  const double n = static_cast<double>(reports.size());
  auto acc = [&](PRF& dst, const PRF& src) {
    dst.precision += src.precision / n;
    dst.recall += src.recall / n;
    dst.f1 += src.f1 / n;
  };
  for (const auto& r : reports) {
    acc(avg.activation, r.activation);
    acc(avg.note_onset, r.note_onset);
    acc(avg.note_offset, r.note_offset);
    acc(avg.note_velocity, r.note_velocity);
  }
  return avg;
}

namespace {

nlohmann::json prf_json(const PRF& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
}

nlohmann::json metrics_json(const RecordingMetrics& m) {
  return {{"name", m.name},
          {"activation", prf_json(m.activation)},
          {"note_onset", prf_json(m.note_onset)},
          {"note_offset", prf_json(m.note_offset)},
          {"note_offset_velocity", prf_json(m.note_velocity)}};
}

}  // namespace

nlohmann::json metrics_report_json(std::span<const RecordingMetrics> per_recording) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : per_recording) per.push_back(metrics_json(m));
  return {{"per_recording", per}, {"average", metrics_json(average_over_recordings(per_recording))}};
}

std::string metrics_report_table(std::span<const RecordingMetrics> per_recording) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s | %-20s | %-20s | %-20s | %-20s\n", "recording", "activation P/R/F1",
                "note P/R/F1", "+offset P/R/F1", "+offset+vel P/R/F1");
  out << line << std::string(24 + 4 * 23, '-') << '\n';
  auto row = [&](const RecordingMetrics& m) {
    auto cell = [](const PRF& p) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%6.2f %6.2f %6.2f", 100 * p.precision, 100 * p.recall, 100 * p.f1);
      return std::string(buf);
    };
    std::snprintf(line, sizeof line, "%-24s | %-20s | %-20s | %-20s | %-20s\n", m.name.substr(0, 24).c_str(),
                  cell(m.activation).c_str(), cell(m.note_onset).c_str(), cell(m.note_offset).c_str(),
                  cell(m.note_velocity).c_str());
    out << line;
  };
  for (const auto& m : per_recording) row(m);
  out << std::string(24 + 4 * 23, '-') << '\n';
  row(average_over_recordings(per_recording));
  return out.str();
}

}  // namespace semicrf
