#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "semicrf/engine.hpp"

using namespace semicrf;

namespace {

IntervalScores random_scores(int T, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  IntervalScores s(T);
  for (auto& v : s.upper()) v = u(rng);
  for (auto& v : s.eps()) v = u(rng);
  return s;
}

}  // namespace

TEST_CASE("total_score examples") {
  IntervalScores s2(2);
  s2.score(0, 1) = 2.0;
  s2.eps(0) = 0.7;
  const std::vector<Interval> y01{{0, 1}};
  CHECK(total_score(s2, y01) == 2.0);

  IntervalScores s3(3);
  s3.eps(0) = 0.5;
  s3.eps(1) = 0.5;
  CHECK(total_score(s3, {}) == 1.0);

  IntervalScores d(2);
  d.score(0, 0) = 1.0;
  d.eps(0) = 0.3;
  const std::vector<Interval> y00{{0, 0}};
  CHECK(total_score(d, y00) == doctest::Approx(1.3).epsilon(1e-15));

  const std::vector<Interval> bad{{0, 1}, {0, 1}};
  CHECK_THROWS_AS(total_score(s2, bad), ValidationError);
  const std::vector<Interval> out{{0, 2}};
  CHECK_THROWS_AS(total_score(s2, out), ValidationError);
}

TEST_CASE("map_decode examples") {
  IntervalScores s(3);
  for (int t = 0; t < 3; ++t) s.score(t, t) = -1.0;
  s.score(0, 1) = 2.0;
  s.score(1, 2) = 3.0;
  s.score(0, 2) = 4.0;
  const auto r = map_decode(s);
  CHECK(r.intervals == std::vector<Interval>{{0, 1}, {1, 2}});
  CHECK(r.total == 5.0);
  const auto brute = oracle::brute_argmax(s);
  CHECK(brute.config == r.intervals);

  IntervalScores neg(5);
  for (auto& v : neg.upper()) v = -1.0;
  const auto empty = map_decode(neg);
  CHECK(empty.intervals.empty());
  CHECK(empty.total == 0.0);

  // all-zero scores: every configuration ties at 0, fewest intervals wins
  CHECK(map_decode(IntervalScores(4)).intervals.empty());

  CHECK_THROWS_AS(map_decode(s, 3), ValidationError);
  CHECK_THROWS_AS(map_decode(s, -1), ValidationError);
  CHECK_THROWS_AS(IntervalScores(0), ValidationError);
  IntervalScores nan(2);
  nan.score(0, 1) = std::nan("");
  CHECK_THROWS_AS(map_decode(nan), ValidationError);
}

TEST_CASE("log_partition examples") {
  CHECK(log_partition(IntervalScores(1)) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(log_partition(IntervalScores(2)) == doctest::Approx(std::log(8.0)).epsilon(1e-14));
  CHECK(log_partition(IntervalScores(3)) == doctest::Approx(std::log(36.0)).epsilon(1e-14));
}

TEST_CASE("counting semiring reproduces the enumeration") {
  for (int T = 1; T <= kEnumerationBound; ++T) {
    const auto tab = semiring::forward<semiring::Counting>(IntervalScores(T), 0);
    CHECK(tab.open.back() == static_cast<double>(enumerate_configurations(T).size()));
  }
}

TEST_CASE("log_likelihood examples") {
  IntervalScores s(2);
  for (const auto& c : enumerate_configurations(2)) {
    CHECK(log_likelihood(s, c) == doctest::Approx(-std::log(8.0)).epsilon(1e-14));
  }
  IntervalScores one(1);
  one.score(0, 0) = 40.0;
  const std::vector<Interval> y{{0, 0}};
  CHECK(std::abs(log_likelihood(one, y) - (-std::log1p(std::exp(-40.0)))) < 1e-15);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto r = random_scores(5, rng);
    const auto best = map_decode(r);
    const double ll_best = log_likelihood(r, best.intervals);
    CHECK(ll_best <= 0.0);
    for (const auto& c : enumerate_configurations(5)) {
      if (c != best.intervals) CHECK(log_likelihood(r, c) < ll_best);
    }
  }
}

TEST_CASE("decode and partition match brute force, including start_frame") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const int T = 1 + trial % 6;
    const auto s = random_scores(T, rng);
    const int start = static_cast<int>(rng() % T);
    const auto r = map_decode(s, start);
    const auto b = oracle::brute_argmax(s, start);
    CHECK(r.intervals == b.config);
    CHECK(r.total == total_score(s, r.intervals, start));
    CHECK(r.total == doctest::Approx(b.score).epsilon(1e-12));
    const double lz = log_partition(s, start);
    CHECK(oracle::relative_error(lz, oracle::brute_log_partition(s, start)) <= 1e-9);
    for (const auto& c : oracle::configurations_from(T, start)) CHECK(lz >= oracle::phi(s, c, start));
  }
}

TEST_CASE("marginals: enumeration, finite differences, eps identity") {
  const auto m0 = interval_marginals(IntervalScores(2));
  CHECK(m0.at(0, 1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(m0.at(0, 0) == doctest::Approx(0.5).epsilon(1e-14));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int T = 2 + trial % 9;
    auto s = random_scores(T, rng);
    const auto m = interval_marginals(s);
    for (double p : m.intervals) CHECK((p >= 0.0 && p <= 1.0 + 1e-12));
    double worst = 0.0;
    for (std::size_t k = 0; k < s.upper().size(); ++k) {
      const double x0 = s.upper()[k];
      const double fd = oracle::central_difference(
          [&](double x) {
            s.upper()[k] = x;
            return log_partition(s);
          },
          x0, 1e-5);
      s.upper()[k] = x0;
      worst = std::max(worst, oracle::relative_error(m.intervals[k], fd));
    }
    for (int i = 0; i + 1 < T; ++i) {
      const double x0 = s.eps(i);
      const double fd = oracle::central_difference(
          [&](double x) {
            s.eps(i) = x;
            return log_partition(s);
          },
          x0, 1e-5);
      s.eps(i) = x0;
      worst = std::max(worst, oracle::relative_error(m.uncovered[i], fd));
    }
    CHECK(worst <= 1e-4);
  }

  // exact check against enumeration for a small case
  auto s = random_scores(4, rng);
  const auto m = interval_marginals(s);
  const double lz = oracle::brute_log_partition(s);
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) {
      double p = 0.0;
      for (const auto& c : enumerate_configurations(4))
        if (std::find(c.begin(), c.end(), Interval{i, j}) != c.end()) p += std::exp(oracle::phi(s, c) - lz);
      CHECK(m.at(i, j) == doctest::Approx(p).epsilon(1e-10));
    }
  }
  for (int u = 0; u < 3; ++u) {
    double p = 0.0;
    for (const auto& c : enumerate_configurations(4)) {
      bool covered = false;
      for (const auto& iv : c) covered = covered || (iv.onset <= u && u + 1 <= iv.offset);
      if (!covered) p += std::exp(oracle::phi(s, c) - lz);
    }
    CHECK(m.uncovered[u] == doctest::Approx(p).epsilon(1e-10));
  }
}

TEST_CASE("decoding is monotone in a selected interval's score") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = random_scores(6, rng);
    const auto r = map_decode(s);
    if (r.intervals.empty()) continue;
    const auto pick = r.intervals[rng() % r.intervals.size()];
    s.score(pick.onset, pick.offset) += 0.5 + static_cast<double>(rng() % 100) / 50.0;
    const auto r2 = map_decode(s);
    CHECK(std::find(r2.intervals.begin(), r2.intervals.end(), pick) != r2.intervals.end());
  }
}

TEST_CASE("long sequences stay finite") {
  std::mt19937_64 rng(23);
  auto s = random_scores(300, rng, -5.0, 5.0);
  const double lz = log_partition(s);
  CHECK(std::isfinite(lz));
  const auto r = map_decode(s);
  CHECK(lz >= r.total);
  const auto m = interval_marginals(s);
  double expected_count = 0.0;
  for (double p : m.intervals) expected_count += p;
  CHECK(std::isfinite(expected_count));
}
