#include "semicrf/interval_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semicrf/error.hpp"

namespace semicrf {

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Eigen::MatrixXd gelu(Eigen::MatrixXd m) {
  return m.unaryExpr([](double x) { return gelu(x); });
}

}  // namespace

KqbProjection kqb_project(const TrackEmbeddingSequence& h, const ScoringHeadParams& params) {
  const int D = params.head_dim;
  if (D < 1) throw ValidationError("head_dim must be >= 1");
  if (params.weight.cols() != 2 * D + 1 || params.bias.size() != 2 * D + 1) {
    throw ValidationError("kqb projection width must be 2D+1 = " + std::to_string(2 * D + 1));
  }
  Eigen::MatrixXd input = h.values;
  if (params.variant == ScoringHeadParams::Variant::kMlp) {
    if (params.hidden_weight.rows() != h.dim() ||
        params.hidden_bias.size() != params.hidden_weight.cols()) {
      throw ValidationError("kqb hidden layer does not match embedding width");
    }
    input = gelu((h.values * params.hidden_weight).rowwise() + params.hidden_bias);
  }
  if (params.weight.rows() != input.cols()) {
    throw ValidationError("kqb projection expects input width " +
                          std::to_string(params.weight.rows()) + ", got " +
                          std::to_string(input.cols()));
  }
  const Eigen::MatrixXd out = (input * params.weight).rowwise() + params.bias;
  KqbProjection p;
  p.q = out.leftCols(D);
  p.k = out.middleCols(D, D);
  p.b = out.col(2 * D);
  return p;
}

IntervalScores scaled_inner_product_scores(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                                           const Eigen::VectorXd& b) {
  const auto T = q.rows();
  if (k.rows() != T || b.size() != T || k.cols() != q.cols() || q.cols() < 1) {
    throw ValidationError("scaled inner product: Q, K must be T x D and b length T");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const Eigen::MatrixXd gram = q * k.transpose();
  IntervalScores s(static_cast<int>(T));
  for (int i = 0; i < T; ++i) {
    s.score(i, i) = b(i);
    for (int j = i + 1; j < T; ++j) s.score(i, j) = (j - i) * inv_sqrt_d * gram(i, j);
  }
  return s;
}

IntervalMoments interval_moments(const Eigen::MatrixXd& h, int i, int j) {
  if (i < 0 || j < i || j >= h.rows()) throw ValidationError("interval outside sequence");
  const auto rows = h.middleRows(i, j - i + 1);
  IntervalMoments m;
  m.mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - m.mean;
  m.second = centered.array().square().colwise().mean();
  m.third = centered.array().cube().colwise().mean();
  return m;
}

IntervalScores legacy_concat_mlp_scores(const TrackEmbeddingSequence& h,
                                        const MomentMlpParams& params) {
  const int T = h.num_frames();
  const int d = h.dim();
  const auto H = params.hidden_weight.cols();
  if (params.hidden_weight.rows() != 6 * d || params.hidden_bias.size() != H ||
      params.out_weight.size() != H) {
    throw ValidationError("moment MLP expects input width 6d = " + std::to_string(6 * d));
  }
  IntervalScores s(T);
  Eigen::RowVectorXd features(6 * d);
  for (int i = 0; i < T; ++i) {
    // running raw sums of rows i..j
    Eigen::RowVectorXd s1 = Eigen::RowVectorXd::Zero(d);
    Eigen::RowVectorXd s2 = s1, s3 = s1;
    for (int j = i; j < T; ++j) {
      const auto x = h.values.row(j).array();
      s1.array() += x;
      s2.array() += x.square();
      s3.array() += x.cube();
      const double n = j - i + 1;
      const Eigen::ArrayXXd m1 = s1.array() / n;
      const Eigen::ArrayXXd m2 = (s2.array() / n - m1.square()).max(0.0);
      const Eigen::ArrayXXd m3 = s3.array() / n - 3.0 * m1 * s2.array() / n + 2.0 * m1.cube();
      features << h.values.row(i), h.values.row(j),
          h.values.row(i).cwiseProduct(h.values.row(j)), m1.matrix(), m2.matrix(), m3.matrix();
      const Eigen::RowVectorXd hidden =
          gelu(Eigen::MatrixXd((features * params.hidden_weight) + params.hidden_bias));
      s.score(i, j) = hidden.dot(params.out_weight) + params.out_bias;
    }
  }
  return s;
}

IntervalScores InnerProductScorer::score(const TrackEmbeddingSequence& h) const {
  const auto p = kqb_project(h, params_);
  return scaled_inner_product_scores(p.q, p.k, p.b);
}

IntervalScores MomentMlpScorer::score(const TrackEmbeddingSequence& h) const {
  return legacy_concat_mlp_scores(h, params_);
}

// --- expressiveness -------------------------------------------------------

Eigen::MatrixXd ideal_score_matrix(std::span<const Interval> intervals, int num_frames,
                                   double eps, double positive) {
  std::vector<double> positives(intervals.size(), positive);
  return ideal_score_matrix(intervals, num_frames, eps, positives);
}

Eigen::MatrixXd ideal_score_matrix(std::span<const Interval> intervals, int num_frames,
                                   double eps, std::span<const double> positives) {
  if (!(eps > 0.0)) throw ValidationError("ideal matrix needs eps > 0");
  if (num_frames < 1) throw ValidationError("ideal matrix needs at least one frame");
  if (positives.size() != intervals.size()) throw ValidationError("one positive value per interval");
  if (!validate_non_overlap(intervals)) throw ValidationError("intervals overlap");
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(num_frames, num_frames, -eps);
  for (std::size_t n = 0; n < intervals.size(); ++n) {
    const auto& iv = intervals[n];
    if (iv.onset < 0 || iv.offset >= num_frames || iv.onset >= iv.offset) {
      throw ValidationError("ideal matrix intervals need 0 <= onset < offset < T");
    }
    if (!(positives[n] > 0.0)) throw ValidationError("ideal matrix positive values must be > 0");
    s(iv.onset, iv.offset) = positives[n];
  }
  return s;
}

int numerical_rank(const Eigen::MatrixXd& s, double rel_tol) {
  if (s.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(s);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  return static_cast<int>((sv.array() > rel_tol * sv(0)).count());
}

RankFactors truncated_factorize(const Eigen::MatrixXd& s, int dim) {
  if (dim < 0) throw ValidationError("factor dimension must be >= 0");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(s, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const auto T = s.cols();
  RankFactors f;
  f.q = Eigen::MatrixXd::Zero(dim, s.rows());
  f.k = Eigen::MatrixXd::Zero(dim, T);
  const int used = std::min<int>(dim, static_cast<int>(sv.size()));
  for (int r = 0; r < used; ++r) {
    const double root = std::sqrt(sv(r));
    f.q.row(r) = root * svd.matrixU().col(r).transpose();
    f.k.row(r) = root * svd.matrixV().col(r).transpose();
  }
  return f;
}

RankFactors rank_factorize(const Eigen::MatrixXd& s, int dim) {
  const int rank = numerical_rank(s);
  if (dim < rank) {
    throw InfeasibleError("factor dimension " + std::to_string(dim) + " below rank " +
                          std::to_string(rank));
  }
  return truncated_factorize(s, dim);
}

IntervalScores upper_scores(const Eigen::MatrixXd& s, double diagonal) {
  if (s.rows() != s.cols() || s.rows() < 1) throw ValidationError("score matrix must be square");
  const int T = static_cast<int>(s.rows());
  IntervalScores out(T);
  for (int i = 0; i < T; ++i) {
    out.score(i, i) = diagonal;
    for (int j = i + 1; j < T; ++j) out.score(i, j) = s(i, j);
  }
  return out;
}

Eigen::MatrixXd upsample_columns(const Eigen::MatrixXd& low,
                                 std::span<const Eigen::MatrixXd> weights) {
  const int c = static_cast<int>(weights.size());
  if (c < 1) throw ValidationError("upsampling needs at least one kernel tap");
  if (low.cols() == 0) throw ValidationError("upsampling an empty sequence");
  const auto out_dim = weights[0].rows();
  for (const auto& w : weights) {
    if (w.rows() != out_dim || w.cols() != low.rows()) {
      throw ValidationError("upsampling weights do not match input dimension");
    }
  }
  Eigen::MatrixXd out(out_dim, low.cols() * c);
  for (Eigen::Index i = 0; i < low.cols(); ++i) {
    for (int r = 0; r < c; ++r) out.col(i * c + r) = weights[r] * low.col(i);
  }
  return out;
}

std::vector<Eigen::MatrixXd> block_selection_weights(int dim, int factor) {
  std::vector<Eigen::MatrixXd> w;
  for (int r = 0; r < factor; ++r) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, static_cast<Eigen::Index>(dim) * factor);
    m.middleCols(static_cast<Eigen::Index>(r) * dim, dim).setIdentity();
    w.push_back(std::move(m));
  }
  return w;
}

Eigen::MatrixXd stack_columns(const Eigen::MatrixXd& full, int factor) {
  if (factor < 1 || full.cols() % factor != 0) {
    throw ValidationError("sequence length must be a multiple of the upsampling factor");
  }
  const auto D = full.rows();
  const auto low_len = full.cols() / factor;
  Eigen::MatrixXd low(D * factor, low_len);
  for (Eigen::Index i = 0; i < low_len; ++i) {
    for (int r = 0; r < factor; ++r) low.block(r * D, i, D, 1) = full.col(i * factor + r);
  }
  return low;
}

// --- verifier ---------------------------------------------------------------

std::uint64_t case_seed(std::uint64_t master, int index) {
  // splitmix64 finalizer over (master, index)
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

VerifierCase make_verifier_case(std::uint64_t seed, int max_frames) {
  std::mt19937_64 rng(seed);
  VerifierCase vc;
  vc.seed = seed;
  vc.factor = (rng() % 2 == 0) ? 2 : 4;
  const int max_blocks = std::max(1, max_frames / 4);
  vc.num_frames = 4 * (1 + static_cast<int>(rng() % max_blocks));
  const int T = vc.num_frames;
  const int M = static_cast<int>(rng() % (T / 4 + 1));

  // 2M distinct boundaries, then optionally pull an onset back onto the
  // previous offset so touching intervals are exercised.
  std::vector<int> frames(T);
  for (int t = 0; t < T; ++t) frames[t] = t;
  std::shuffle(frames.begin(), frames.end(), rng);
  std::vector<int> bounds(frames.begin(), frames.begin() + 2 * M);
  std::sort(bounds.begin(), bounds.end());
  std::bernoulli_distribution touch(0.3);
  for (int n = 0; n < M; ++n) {
    Interval iv{bounds[2 * n], bounds[2 * n + 1]};
    if (n > 0 && touch(rng)) iv.onset = vc.intervals.back().offset;
    vc.intervals.push_back(iv);
  }
  return vc;
}

namespace {

bool decodes_to(const Eigen::MatrixXd& s, double eps, const std::vector<Interval>& y) {
  return map_decode(upper_scores(s, -eps)).intervals == y;
}

}  // namespace

VerifierReport verify_expressiveness(std::uint64_t seed, int cases, const VerifierOptions& options) {
  if (cases < 1) throw ValidationError("verifier needs at least one case");
  VerifierReport report;
  report.cases = cases;
  for (int n = 0; n < cases; ++n) {
    const auto vc = make_verifier_case(case_seed(seed, n), options.max_frames);
    const int T = vc.num_frames;
    const int M = static_cast<int>(vc.intervals.size());
    const int c = vc.factor;
    auto fail = [&](const char* stage) {
      report.failures.push_back({vc.seed, T, M, stage});
    };
    bool ok = true;

    const Eigen::MatrixXd ideal = ideal_score_matrix(vc.intervals, T, options.eps, options.positive);
    if (numerical_rank(ideal) == M + 1) {
      ++report.rank_ok;
    } else {
      ok = false;
      fail("rank");
    }

    RankFactors f;
    try {
      f = rank_factorize(ideal, M + 1);
    } catch (const InfeasibleError&) {
      ok = false;
      fail("factorize");
      continue;
    }
    const Eigen::MatrixXd rebuilt = f.q.transpose() * f.k;
    const double err = (rebuilt - ideal).cwiseAbs().maxCoeff();
    report.max_reconstruction_error = std::max(report.max_reconstruction_error, err);
    if (err <= options.reconstruction_tol) {
      ++report.factorize_ok;
    } else {
      ok = false;
      fail("factorize");
    }

    if (decodes_to(rebuilt, options.eps, vc.intervals)) {
      ++report.decode_ok;
    } else {
      ok = false;
      fail("decode");
    }

    // Length-dependent rescaling of the off-diagonal entries.
    Eigen::MatrixXd rescaled = ideal;
    for (int i = 0; i < T; ++i)
      for (int j = i + 1; j < T; ++j) rescaled(i, j) *= static_cast<double>(j - i);
    if (decodes_to(rescaled, options.eps, vc.intervals)) {
      ++report.rescale_ok;
    } else {
      ok = false;
      fail("rescale");
    }

    // Low resolution T' = T/c with per-step dimension c(M+1) > cM.
    const auto weights = block_selection_weights(M + 1, c);
    const Eigen::MatrixXd q_up = upsample_columns(stack_columns(f.q, c), weights);
    const Eigen::MatrixXd k_up = upsample_columns(stack_columns(f.k, c), weights);
    const Eigen::MatrixXd up = q_up.transpose() * k_up;
    if ((up - ideal).cwiseAbs().maxCoeff() <= options.reconstruction_tol &&
        decodes_to(up, options.eps, vc.intervals)) {
      ++report.upsample_ok;
    } else {
      ok = false;
      fail("upsample");
    }

    // Probe: per-step dimension c*M leaves M dimensions per full-resolution
    // frame, one short of the rank.
    const auto probe_f = truncated_factorize(ideal, M);
    const auto probe_w = block_selection_weights(M, c);
    Eigen::MatrixXd probe;
    if (M == 0) {
      probe = Eigen::MatrixXd::Zero(T, T);
    } else {
      probe = upsample_columns(stack_columns(probe_f.q, c), probe_w).transpose() *
              upsample_columns(stack_columns(probe_f.k, c), probe_w);
    }
    if ((probe - ideal).cwiseAbs().maxCoeff() > options.reconstruction_tol) ++report.probe_infeasible;
    if (decodes_to(probe, options.eps, vc.intervals)) ++report.probe_decoded;

    if (ok) ++report.passed;
  }
  return report;
}

std::string VerifierReport::summary_line() const {
  std::ostringstream out;
  out << (passed == cases ? "PASS " : "FAIL ") << passed << "/" << cases
      << " (rank " << rank_ok << ", factorize " << factorize_ok << ", decode " << decode_ok
      << ", rescale " << rescale_ok << ", upsample " << upsample_ok
      << "; probe D'=c*M infeasible " << probe_infeasible << "/" << cases << ", decoded "
      << probe_decoded << "/" << cases << ")";
  return out.str();
}

std::string VerifierReport::to_json() const {
  nlohmann::json j;
  j["cases"] = cases;
  j["passed"] = passed;
  j["failures"] = nlohmann::json::array();
  for (const auto& f : failures) {
    j["failures"].push_back({{"seed", f.seed}, {"T", f.num_frames}, {"M", f.num_intervals},
                             {"stage", f.stage}});
  }
  j["stages"] = {{"rank", rank_ok},         {"factorize", factorize_ok}, {"decode", decode_ok},
                 {"rescale", rescale_ok},   {"upsample", upsample_ok}};
  j["probe"] = {{"infeasible", probe_infeasible}, {"decoded", probe_decoded}};
  j["max_reconstruction_error"] = max_reconstruction_error;
  return j.dump(2) + "\n";
}

}  // namespace semicrf
