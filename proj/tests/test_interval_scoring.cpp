#include <doctest.h>

#include <random>

#include <nlohmann/json.hpp>

#include "semicrf/error.hpp"
#include "semicrf/interval_scoring.hpp"

using namespace semicrf;

namespace {

ScoringHeadParams zero_head(int d, int D) {
  ScoringHeadParams p;
  p.head_dim = D;
  p.weight = Eigen::MatrixXd::Zero(d, 2 * D + 1);
  p.bias = Eigen::RowVectorXd::Zero(2 * D + 1);
  return p;
}

}  // namespace

TEST_CASE("kqb_project") {
  TrackEmbeddingSequence h{"x", Eigen::MatrixXd::Random(5, 3)};
  auto p = kqb_project(h, zero_head(3, 2));
  CHECK(p.q.isZero());
  CHECK(p.k.isZero());
  CHECK(p.b.isZero());

  TrackEmbeddingSequence one{"x", Eigen::MatrixXd::Constant(1, 1, 2.0)};
  auto id = zero_head(1, 1);
  id.weight << 1.0, 1.0, 1.0;
  p = kqb_project(one, id);
  CHECK(p.q(0, 0) == 2.0);
  CHECK(p.k(0, 0) == 2.0);
  CHECK(p.b(0) == 2.0);

  auto bad = zero_head(3, 2);
  bad.weight = Eigen::MatrixXd::Zero(3, 4);
  CHECK_THROWS_AS(kqb_project(h, bad), ValidationError);

  auto mlp = zero_head(4, 2);
  mlp.variant = ScoringHeadParams::Variant::kMlp;
  mlp.hidden_weight = Eigen::MatrixXd::Random(3, 4);
  mlp.hidden_bias = Eigen::RowVectorXd::Zero(4);
  mlp.bias(4) = 0.25;
  p = kqb_project(h, mlp);
  CHECK(p.b.isConstant(0.25));
}

TEST_CASE("scaled_inner_product_scores") {
  const auto zero = scaled_inner_product_scores(Eigen::MatrixXd::Zero(4, 2),
                                                Eigen::MatrixXd::Zero(4, 2), Eigen::VectorXd::Zero(4));
  for (double v : zero.upper()) CHECK(v == 0.0);

  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(3, 2), k = Eigen::MatrixXd::Zero(3, 2);
  q(0, 0) = 1.0;
  k(2, 0) = 2.0;
  Eigen::VectorXd b(3);
  b << 0.5, -1.0, 3.0;
  const auto s = scaled_inner_product_scores(q, k, b);
  CHECK(s.score(0, 2) == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-15));
  for (int i = 0; i < 3; ++i) CHECK(s.score(i, i) == b(i));

  CHECK_THROWS_AS(scaled_inner_product_scores(q, Eigen::MatrixXd::Zero(2, 2), b), ValidationError);
}

TEST_CASE("scaled inner product properties") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    const int T = 6 + trial, D = 1 + trial % 4;
    Eigen::MatrixXd q(T, D), k(T, D);
    Eigen::VectorXd b(T);
    for (int i = 0; i < q.size(); ++i) q.data()[i] = n01(rng), k.data()[i] = n01(rng);
    for (int i = 0; i < T; ++i) b(i) = n01(rng);
    const auto s = scaled_inner_product_scores(q, k, b);
    const double alpha = 0.3 + trial;
    const auto s2 = scaled_inner_product_scores(alpha * q, k / alpha, b);
    for (std::size_t n = 0; n < s.upper().size(); ++n) {
      CHECK(std::abs(s.upper()[n] - s2.upper()[n]) <= 1e-12 * std::max(1.0, std::abs(s.upper()[n])));
    }
    // undo the length scaling: the off-diagonal part is rank <= D
    Eigen::MatrixXd unscaled = Eigen::MatrixXd::Zero(T, T);
    for (int i = 0; i < T; ++i)
      for (int j = i + 1; j < T; ++j) unscaled(i, j) = s.score(i, j) * std::sqrt(double(D)) / (j - i);
    Eigen::MatrixXd full = q * k.transpose();
    for (int i = 0; i < T; ++i)
      for (int j = 0; j <= i; ++j) unscaled(i, j) = full(i, j);
    CHECK(numerical_rank(unscaled) <= D);
  }
}

TEST_CASE("moments and the legacy head") {
  Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(5, 2, 1.5);
  auto m = interval_moments(constant, 1, 4);
  CHECK(m.mean.isApprox(Eigen::RowVectorXd::Constant(2, 1.5)));
  CHECK(m.second.isZero());
  CHECK(m.third.isZero());

  Eigen::MatrixXd two(2, 1);
  two << 0.0, 2.0;
  m = interval_moments(two, 0, 1);
  CHECK(m.mean(0) == 1.0);
  CHECK(m.second(0) == 1.0);
  CHECK(m.third(0) == 0.0);

  MomentMlpParams p;
  p.hidden_weight = Eigen::MatrixXd::Zero(6, 3);
  p.hidden_bias = Eigen::RowVectorXd::Zero(3);
  p.out_weight = Eigen::VectorXd::Zero(3);
  p.out_bias = -0.75;
  const auto s = legacy_concat_mlp_scores({"x", Eigen::MatrixXd::Random(4, 1)}, p);
  for (double v : s.upper()) CHECK(v == -0.75);

  // running-sum moments inside the head agree with the direct definition
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd h(7, 2);
  for (int i = 0; i < h.size(); ++i) h.data()[i] = n01(rng);
  MomentMlpParams q;
  q.hidden_weight = Eigen::MatrixXd::Zero(12, 1);
  q.hidden_weight(10, 0) = 1.0;  // third moment of channel 0
  q.hidden_bias = Eigen::RowVectorXd::Constant(1, 10.0);
  q.out_weight = Eigen::VectorXd::Constant(1, 1.0);
  const auto sm = legacy_concat_mlp_scores({"x", h}, q);
  for (int i = 0; i < 7; ++i) {
    for (int j = i; j < 7; ++j) {
      const double x = interval_moments(h, i, j).third(0) + 10.0;
      const double expect = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
      CHECK(sm.score(i, j) == doctest::Approx(expect).epsilon(1e-10));
    }
  }

  MomentMlpParams wrong = p;
  wrong.hidden_weight = Eigen::MatrixXd::Zero(5, 3);
  CHECK_THROWS_AS(legacy_concat_mlp_scores({"x", Eigen::MatrixXd::Random(4, 1)}, wrong),
                  ValidationError);
}

TEST_CASE("both heads satisfy one scoring interface") {
  TrackEmbeddingSequence h{"x", Eigen::MatrixXd::Random(6, 2)};
  auto head = zero_head(2, 3);
  head.weight.setRandom();
  MomentMlpParams legacy;
  legacy.hidden_weight = Eigen::MatrixXd::Random(12, 4);
  legacy.hidden_bias = Eigen::RowVectorXd::Zero(4);
  legacy.out_weight = Eigen::VectorXd::Random(4);
  std::vector<std::unique_ptr<IntervalScorer>> scorers;
  scorers.push_back(std::make_unique<InnerProductScorer>(head));
  scorers.push_back(std::make_unique<MomentMlpScorer>(legacy));
  for (const auto& s : scorers) {
    const auto out = s->score(h);
    CHECK(out.num_frames() == 6);
    CHECK(out.upper().size() == IntervalScores::upper_size(6));
    CHECK(out.eps().size() == 5);
    const auto r = map_decode(out);
    CHECK(validate_non_overlap(r.intervals));
  }
}

TEST_CASE("ideal matrix, rank and factorization") {
  const std::vector<Interval> y{{0, 1}};
  const auto s = ideal_score_matrix(y, 3, 0.5, 1.0);
  CHECK(s(0, 1) == 1.0);
  CHECK(s(0, 0) == -0.5);
  CHECK(s(2, 1) == -0.5);
  CHECK(numerical_rank(s) == 2);

  const auto empty = ideal_score_matrix({}, 5);
  CHECK(empty.isApprox(Eigen::MatrixXd::Constant(5, 5, -0.1)));
  CHECK(numerical_rank(empty) == 1);

  CHECK_THROWS_AS(ideal_score_matrix(y, 3, 0.0), ValidationError);
  CHECK_THROWS_AS(ideal_score_matrix(y, 3, 0.1, -1.0), ValidationError);
  const std::vector<Interval> diag{{1, 1}};
  CHECK_THROWS_AS(ideal_score_matrix(diag, 3), ValidationError);

  CHECK(numerical_rank(Eigen::MatrixXd::Ones(4, 4)) == 1);
  const std::vector<Interval> two{{0, 2}, {3, 5}};
  for (int T = 6; T < 12; ++T) CHECK(numerical_rank(ideal_score_matrix(two, T)) == 3);

  // MAP of the ideal matrix with eps scores 0 recovers Y
  CHECK(map_decode(upper_scores(ideal_score_matrix(two, 6), -0.1)).intervals == two);

  const auto ideal = ideal_score_matrix(two, 8);
  const auto f = rank_factorize(ideal, 3);
  CHECK(f.q.rows() == 3);
  CHECK((f.q.transpose() * f.k - ideal).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK_THROWS_AS(rank_factorize(ideal, 2), InfeasibleError);
  const auto wide = rank_factorize(ideal, 5);
  CHECK((wide.q.transpose() * wide.k - ideal).cwiseAbs().maxCoeff() <= 1e-8);

  const auto z = rank_factorize(Eigen::MatrixXd::Zero(4, 4), 1);
  CHECK(z.q.isZero());
  CHECK(z.k.isZero());

  // per-interval positive values
  const std::vector<double> pos{2.0, 0.5};
  const auto varied = ideal_score_matrix(two, 7, 0.2, pos);
  CHECK(varied(0, 2) == 2.0);
  CHECK(varied(3, 5) == 0.5);
  CHECK(numerical_rank(varied) == 3);
}

TEST_CASE("rank is M+1 for random interval sets") {
  int ok = 0;
  for (int n = 0; n < 200; ++n) {
    const auto vc = make_verifier_case(case_seed(99, n), 64);
    CHECK(vc.num_frames % vc.factor == 0);
    CHECK(static_cast<int>(vc.intervals.size()) <= vc.num_frames / 4);
    CHECK(validate_non_overlap(vc.intervals));
    for (const auto& iv : vc.intervals) CHECK(iv.onset < iv.offset);
    if (numerical_rank(ideal_score_matrix(vc.intervals, vc.num_frames)) ==
        static_cast<int>(vc.intervals.size()) + 1)
      ++ok;
  }
  CHECK(ok == 200);
}

TEST_CASE("upsampler") {
  std::vector<Eigen::MatrixXd> w{Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1)};
  Eigen::MatrixXd in(1, 2);
  in << 1.0, 2.0;
  const auto out = upsample_columns(in, w);
  Eigen::MatrixXd expect(1, 4);
  expect << 1.0, 1.0, 2.0, 2.0;
  CHECK(out == expect);

  Eigen::MatrixXd full = Eigen::MatrixXd::Random(3, 8);
  CHECK(upsample_columns(stack_columns(full, 4), block_selection_weights(3, 4)) == full);
  CHECK_THROWS_AS(stack_columns(full, 3), ValidationError);
  CHECK_THROWS_AS(upsample_columns(Eigen::MatrixXd(1, 0), w), ValidationError);
}

TEST_CASE("verify_expressiveness") {
  const auto report = verify_expressiveness(1234, 50);
  CHECK(report.passed == 50);
  CHECK(report.failures.empty());
  CHECK(report.probe_infeasible == 50);
  CHECK(report.summary_line().rfind("PASS 50/50", 0) == 0);
  CHECK(verify_expressiveness(1234, 1).summary_line() == verify_expressiveness(1234, 1).summary_line());
  const auto j = nlohmann::json::parse(report.to_json());
  CHECK(j["cases"] == 50);
  CHECK(j["passed"] == 50);
  CHECK(j["failures"].empty());
}
