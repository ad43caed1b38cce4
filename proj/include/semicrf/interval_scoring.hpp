#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semicrf/engine.hpp"
#include "semicrf/event_model.hpp"

namespace semicrf {

// Per-frame embeddings h_i of one event track, one row per frame.
struct TrackEmbeddingSequence {
  std::string type;
  Eigen::MatrixXd values;  // T x d

  int num_frames() const { return static_cast<int>(values.rows()); }
  int dim() const { return static_cast<int>(values.cols()); }
};

// f: h -> [q (D), k (D), b (1)], either one affine map or a two-layer MLP
// with a GELU hidden layer.
struct ScoringHeadParams {
  enum class Variant { kLinear, kMlp };

  Variant variant = Variant::kLinear;
  int head_dim = 1;
  Eigen::MatrixXd weight;     // in x (2D+1); in = d (linear) or hidden width (mlp)
  Eigen::RowVectorXd bias;    // 2D+1
  Eigen::MatrixXd hidden_weight;  // d x H, mlp only
  Eigen::RowVectorXd hidden_bias; // H, mlp only
};

struct KqbProjection {
  Eigen::MatrixXd q;  // T x D
  Eigen::MatrixXd k;  // T x D
  Eigen::VectorXd b;  // T
};

KqbProjection kqb_project(const TrackEmbeddingSequence& h, const ScoringHeadParams& params);

// score(i,j) = (j-i)/sqrt(D) <q_i, k_j> + b_i [i == j]. The eps vector is left
// at zero; it comes from a separate head.
IntervalScores scaled_inner_product_scores(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                                           const Eigen::VectorXd& b);

// Elementwise mean and 2nd/3rd central moments of rows i..j.
struct IntervalMoments {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd second;
  Eigen::RowVectorXd third;
};
IntervalMoments interval_moments(const Eigen::MatrixXd& h, int i, int j);

// Scalar MLP over [h_i, h_j, h_i*h_j, m1, m2, m3] (input width 6d), GELU hidden.
struct MomentMlpParams {
  Eigen::MatrixXd hidden_weight;   // 6d x H
  Eigen::RowVectorXd hidden_bias;  // H
  Eigen::VectorXd out_weight;      // H
  double out_bias = 0.0;
};

IntervalScores legacy_concat_mlp_scores(const TrackEmbeddingSequence& h,
                                        const MomentMlpParams& params);

// Common front for the two scoring heads.
class IntervalScorer {
 public:
  virtual ~IntervalScorer() = default;
  virtual IntervalScores score(const TrackEmbeddingSequence& h) const = 0;
};

class InnerProductScorer final : public IntervalScorer {
 public:
  explicit InnerProductScorer(ScoringHeadParams params) : params_(std::move(params)) {}
  IntervalScores score(const TrackEmbeddingSequence& h) const override;

 private:
  ScoringHeadParams params_;
};

class MomentMlpScorer final : public IntervalScorer {
 public:
  explicit MomentMlpScorer(MomentMlpParams params) : params_(std::move(params)) {}
  IntervalScores score(const TrackEmbeddingSequence& h) const override;

 private:
  MomentMlpParams params_;
};

// --- expressiveness -------------------------------------------------------

inline constexpr double kDefaultIdealEps = 0.1;
inline constexpr double kRankTolerance = 1e-8;

// Full T x T matrix: positive value on every [i,j] in Y, -eps elsewhere.
// Y must hold non-overlapping intervals with onset < offset.
Eigen::MatrixXd ideal_score_matrix(std::span<const Interval> intervals, int num_frames,
                                   double eps = kDefaultIdealEps, double positive = 1.0);
Eigen::MatrixXd ideal_score_matrix(std::span<const Interval> intervals, int num_frames,
                                   double eps, std::span<const double> positives);

// Singular values above rel_tol * largest.
int numerical_rank(const Eigen::MatrixXd& s, double rel_tol = kRankTolerance);

struct RankFactors {
  Eigen::MatrixXd q;  // D x T
  Eigen::MatrixXd k;  // D x T
};

// S = Q^T K with D rows each. Throws InfeasibleError when D < rank(S).
RankFactors rank_factorize(const Eigen::MatrixXd& s, int dim);

// Best rank-`dim` factors (truncated SVD) without the feasibility check.
RankFactors truncated_factorize(const Eigen::MatrixXd& s, int dim);

// Upper triangle of a full matrix as IntervalScores, diagonal replaced by
// `diagonal`, eps zero.
IntervalScores upper_scores(const Eigen::MatrixXd& s, double diagonal);

// Linear upsampler u_c: column i of `low` (D' x T') expands to columns
// i*c .. i*c+c-1 of the result via out[:, i*c + r] = weights[r] * low[:, i].
Eigen::MatrixXd upsample_columns(const Eigen::MatrixXd& low,
                                 std::span<const Eigen::MatrixXd> weights);

// Block selection weights for u_c: weights[r] picks rows r*D..r*D+D-1 of a
// (c*D)-dimensional low-resolution vector.
std::vector<Eigen::MatrixXd> block_selection_weights(int dim, int factor);

// Stacks c consecutive columns of `full` (D x T) into one column of a
// (c*D) x (T/c) matrix; the inverse of upsample_columns with block weights.
Eigen::MatrixXd stack_columns(const Eigen::MatrixXd& full, int factor);

struct VerifierOptions {
  int max_frames = 64;
  double eps = kDefaultIdealEps;
  double positive = 1.0;
  double reconstruction_tol = 1e-8;
};

struct VerifierFailure {
  std::uint64_t seed;
  int num_frames;
  int num_intervals;
  std::string stage;
};

struct VerifierReport {
  int cases = 0;
  int passed = 0;           // all mandatory stages
  int rank_ok = 0;
  int factorize_ok = 0;
  int decode_ok = 0;
  int upsample_ok = 0;
  int rescale_ok = 0;
  // Expected-failure probe: low-resolution dimension c*M, one short.
  int probe_infeasible = 0;   // reconstruction error above tolerance
  int probe_decoded = 0;      // decode still recovered Y
  double max_reconstruction_error = 0.0;
  std::vector<VerifierFailure> failures;

  std::string summary_line() const;
  std::string to_json() const;
};

std::uint64_t case_seed(std::uint64_t master, int index);

struct VerifierCase {
  std::uint64_t seed;
  int num_frames;
  int factor;
  std::vector<Interval> intervals;
};

// Random case with T <= max_frames (a multiple of the upsampling factor) and
// M <= T/4 non-overlapping intervals.
VerifierCase make_verifier_case(std::uint64_t seed, int max_frames);

VerifierReport verify_expressiveness(std::uint64_t seed, int cases,
                                     const VerifierOptions& options = {});

}  // namespace semicrf
