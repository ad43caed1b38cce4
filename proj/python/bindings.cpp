#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "semicrf/engine.hpp"
#include "semicrf/error.hpp"
#include "semicrf/event_model.hpp"
#include "semicrf/interval_scoring.hpp"
#include "semicrf/metrics.hpp"
#include "semicrf/nn/gradcheck_suite.hpp"
#include "semicrf/pipeline.hpp"
#include "semicrf/scores_io.hpp"

namespace py = pybind11;
using namespace semicrf;

namespace {

std::vector<std::pair<int, int>> as_pairs(const std::vector<Interval>& v) {
  std::vector<std::pair<int, int>> out;
  for (const auto& iv : v) out.emplace_back(iv.onset, iv.offset);
  return out;
}

std::vector<Interval> as_intervals(const std::vector<std::pair<int, int>>& v) {
  std::vector<Interval> out;
  for (const auto& [a, b] : v) out.push_back({a, b});
  return out;
}

// T x T matrix view of the upper triangle; NaN below the diagonal
Eigen::MatrixXd upper_matrix(int T, const std::function<double(int, int)>& at) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(T, T, std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < T; ++i)
    for (int j = i; j < T; ++j) m(i, j) = at(i, j);
  return m;
}

IntervalScores from_matrix(const Eigen::MatrixXd& upper, const Eigen::VectorXd& eps) {
  const int T = static_cast<int>(upper.rows());
  if (upper.cols() != T) throw ValidationError("score matrix must be square");
  if (eps.size() != std::max(T - 1, 0)) throw ValidationError("eps must have T-1 entries");
  IntervalScores s(T);
  for (int i = 0; i < T; ++i)
    for (int j = i; j < T; ++j) s.score(i, j) = upper(i, j);
  for (int i = 0; i + 1 < T; ++i) s.eps(i) = eps(i);
  s.validate();
  return s;
}

py::dict prf_dict(const PRF& p) {
  py::dict d;
  d["precision"] = p.precision;
  d["recall"] = p.recall;
  d["f1"] = p.f1;
  return d;
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Semi-Markov CRF event transcription: exact inference, interval scoring and evaluation";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<InfeasibleError>(m, "InfeasibleError", PyExc_ArithmeticError);

  py::class_<IntervalScores>(m, "IntervalScores")
      .def(py::init(&from_matrix), py::arg("upper"), py::arg("eps"),
           "Scores from a T x T matrix (upper triangle incl. diagonal used) and T-1 eps values")
      .def_property_readonly("num_frames", &IntervalScores::num_frames)
      .def("score", py::overload_cast<int, int>(&IntervalScores::score, py::const_), py::arg("i"), py::arg("j"))
      .def("upper_matrix",
           [](const IntervalScores& s) {
             return upper_matrix(s.num_frames(), [&](int i, int j) { return s.score(i, j); });
           })
      .def_property_readonly("eps", [](const IntervalScores& s) {
        return std::vector<double>(s.eps().begin(), s.eps().end());
      });

  m.def(
      "map_decode",
      [](const IntervalScores& s, int start_frame) {
        const auto r = map_decode(s, start_frame);
        return py::make_tuple(as_pairs(r.intervals), r.total);
      },
      py::arg("scores"), py::arg("start_frame") = 0, "Highest scoring interval set as ([(onset, offset)], total)");
  m.def("log_partition", &log_partition, py::arg("scores"), py::arg("start_frame") = 0);
  m.def(
      "log_likelihood",
      [](const IntervalScores& s, const std::vector<std::pair<int, int>>& y) {
        const auto iv = as_intervals(y);
        return log_likelihood(s, iv);
      },
      py::arg("scores"), py::arg("intervals"));
  m.def(
      "total_score",
      [](const IntervalScores& s, const std::vector<std::pair<int, int>>& y, int start) {
        const auto iv = as_intervals(y);
        return total_score(s, iv, start);
      },
      py::arg("scores"), py::arg("intervals"), py::arg("start_frame") = 0);
  m.def(
      "interval_marginals",
      [](const IntervalScores& s, int start_frame) {
        const auto mg = interval_marginals(s, start_frame);
        return py::make_tuple(upper_matrix(mg.num_frames, [&](int i, int j) { return mg.at(i, j); }), mg.uncovered);
      },
      py::arg("scores"), py::arg("start_frame") = 0,
      "(T x T inclusion probabilities, NaN below diagonal; P(unit [i,i+1] uncovered))");

  m.def(
      "read_scores",
      [](const std::string& path) {
        const auto f = read_scores(path);
        std::vector<std::pair<std::string, IntervalScores>> out;
        for (const auto& t : f.tracks) out.emplace_back(t.type, t.scores);
        return out;
      },
      py::arg("path"), "List of (type, IntervalScores) from a scores JSON file");

  m.def(
      "scaled_inner_product_scores",
      [](const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::VectorXd& b) {
        return scaled_inner_product_scores(q, k, b);
      },
      py::arg("q"), py::arg("k"), py::arg("b"));
  m.def(
      "ideal_score_matrix",
      [](const std::vector<std::pair<int, int>>& y, int T, double eps) {
        const auto iv = as_intervals(y);
        return ideal_score_matrix(iv, T, eps);
      },
      py::arg("intervals"), py::arg("num_frames"), py::arg("eps") = kDefaultIdealEps);
  m.def("numerical_rank", &numerical_rank, py::arg("matrix"), py::arg("rel_tol") = kRankTolerance);
  m.def(
      "rank_factorize",
      [](const Eigen::MatrixXd& s, int dim) {
        const auto f = rank_factorize(s, dim);
        return py::make_tuple(f.q, f.k);
      },
      py::arg("matrix"), py::arg("dim"), "(Q, K), each D x T, with Q^T K = matrix");
  m.def(
      "verify_expressiveness",
      [](std::uint64_t seed, int cases) {
        return json_to_py(nlohmann::json::parse(verify_expressiveness(seed, cases).to_json()));
      },
      py::arg("seed") = 0, py::arg("cases") = 200);

  m.def(
      "evaluate",
      [](const std::string& ref_json, const std::string& est_json) {
        const auto r = evaluate_recording(recording_from_json(ref_json), recording_from_json(est_json));
        py::dict d;
        d["activation"] = prf_dict(r.activation);
        d["note_onset"] = prf_dict(r.note_onset);
        d["note_offset"] = prf_dict(r.note_offset);
        d["note_offset_velocity"] = prf_dict(r.note_velocity);
        return d;
      },
      py::arg("reference"), py::arg("estimate"), "Metrics for two events files given as JSON text");
  m.def(
      "split_and_stitch",
      [](const std::string& events_json, int segment_frames) {
        return recording_to_json(split_and_stitch(recording_from_json(events_json), SegmentConfig{segment_frames}));
      },
      py::arg("events"), py::arg("segment_frames") = 128);
  m.def("learning_rate", &learning_rate, py::arg("iteration"), py::arg("total"), py::arg("max_lr"),
        py::arg("warmup_fraction"));
  m.def(
      "quantile_clip",
      [](const std::vector<double>& history, Eigen::VectorXd grad, double quantile, std::size_t min_fill) {
        GradNormWindow w;
        w.quantile = quantile;
        w.min_fill = min_fill;
        for (double h : history) w.push(h);
        const auto r = quantile_clip(w, grad);
        return py::make_tuple(grad, r.clipped);
      },
      py::arg("history"), py::arg("grad"), py::arg("quantile") = 0.8, py::arg("min_fill") = 100);
  m.def(
      "gradcheck_suite",
      [](std::uint64_t seed) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& e : nn::run_gradcheck_suite(seed)) out.emplace_back(e.name, e.max_relative_error);
        return out;
      },
      py::arg("seed") = 0);
}
