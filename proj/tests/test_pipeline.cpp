#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <unistd.h>

#include "semicrf/engine.hpp"
#include "semicrf/error.hpp"
#include "semicrf/pipeline.hpp"
#include "semicrf/random.hpp"

using namespace semicrf;

namespace {

Event ev(int on, int off, bool has_on = true, bool has_off = true) {
  Event e;
  e.interval = {on, off};
  e.has_onset = has_on;
  e.has_offset = has_off;
  return e;
}

std::vector<Interval> intervals(const std::vector<Event>& v) {
  std::vector<Interval> out;
  for (const auto& e : v) out.push_back(e.interval);
  return out;
}

FullConfig small_config() {
  FullConfig c = FullConfig::defaults();
  c.encoder.embed_dim = 16;
  c.encoder.heads = 2;
  c.encoder.layers = 1;
  c.encoder.ffn_width = 16;
  c.encoder.fourier_dim = 8;
  c.encoder.track_dim = 8;
  c.encoder.head_dim = 4;
  c.encoder.attribute_hidden = 8;
  c.segments.segment_frames = 32;
  c.synth.frames = 64;
  c.synth.train_size = 4;
  c.synth.val_size = 2;
  c.synth.test_size = 1;
  c.train.iterations = 3;
  c.train.batch_size = 2;
  return c;
}

}  // namespace

TEST_CASE("truncation sets flags exactly when a side is clipped") {
  auto t = truncate_to_segment({ev(100, 300)}, {0, 200});
  REQUIRE(t.size() == 1);
  CHECK(t[0].interval == Interval{100, 200});
  CHECK(t[0].has_onset);
  CHECK_FALSE(t[0].has_offset);
  t = truncate_to_segment({ev(10, 20)}, {0, 200});
  CHECK(t[0].has_onset);
  CHECK(t[0].has_offset);
  t = truncate_to_segment({ev(0, 500)}, {100, 200});
  CHECK(t[0].interval == Interval{100, 200});
  CHECK_FALSE(t[0].has_onset);
  CHECK_FALSE(t[0].has_offset);
  CHECK(truncate_to_segment({ev(300, 400)}, {0, 200}).empty());
}

TEST_CASE("segment bounds use a half-length stride") {
  SegmentConfig cfg{128};
  const auto b = segment_bounds(256, cfg);
  REQUIRE(b.size() == 3);
  CHECK(b[0].begin == 0);
  CHECK(b[1].begin == 64);
  CHECK(b[2].begin == 128);
  CHECK(b[2].end == 255);
  CHECK(segment_bounds(100, cfg).size() == 1);
  CHECK(segment_bounds(129, cfg).size() == 2);
  CHECK_THROWS_AS(segment_bounds(100, SegmentConfig{1}), ValidationError);
  CHECK_THROWS_AS(segment_bounds(100, SegmentConfig{7}), ValidationError);
}

TEST_CASE("decode start rule") {
  CHECK(decode_start({ev(90, 130)}, 100) == 130);
  CHECK(decode_start({}, 100) == 100);
  CHECK(decode_start({ev(90, 130, true, false)}, 100) == 100);
  CHECK(decode_start({ev(20, 50)}, 100) == 100);
}

TEST_CASE("stitch examples") {
  std::vector<Event> r = {ev(100, 160, true, false)};
  r[0].velocity = 70;
  stitch(r, {ev(120, 200, false, true)});
  REQUIRE(r.size() == 1);
  CHECK(r[0].interval == Interval{100, 200});
  CHECK(r[0].velocity == 70);
  CHECK(r[0].has_onset);
  CHECK(r[0].has_offset);

  r = {ev(100, 160)};
  stitch(r, {ev(120, 200)});
  REQUIRE(r.size() == 1);
  CHECK(r[0].interval == Interval{120, 200});

  r = {ev(100, 160)};
  stitch(r, {ev(200, 240)});
  CHECK(intervals(r) == std::vector<Interval>{{100, 160}, {200, 240}});

  // orphan without an onset is kept with its flags
  r = {};
  stitch(r, {ev(50, 60, false, true)});
  REQUIRE(r.size() == 1);
  CHECK_FALSE(r[0].has_onset);

  CHECK_THROWS_AS(stitch(r, {ev(10, 20), ev(5, 8)}), ValidationError);
  CHECK_THROWS_AS(stitch(r, {ev(10, 20), ev(15, 30)}), ValidationError);
}

TEST_CASE("stitch keeps every list valid") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pos(0, 200), len(0, 30);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Event> result;
    for (int round = 0; round < 5; ++round) {
      std::vector<Event> fresh;
      int cursor = pos(rng) / 2;
      for (int k = 0; k < 3; ++k) {
        const int on = cursor + len(rng);
        const int off = on + len(rng);
        fresh.push_back(ev(on, off, coin(rng), coin(rng)));
        cursor = off + 1;
      }
      stitch(result, fresh);
      CHECK(validate_non_overlap(intervals(result)));
      CHECK(canonical_sort(result) == result);
    }
  }
}

TEST_CASE("split then stitch reproduces ground truth") {
  std::mt19937_64 rng(7);
  SyntheticCorpusConfig sc;
  sc.frames = 512;
  sc.mean_duration = 20;
  int long_events = 0;
  for (int n = 0; n < 50; ++n) {
    const auto ex = synth_recording(sc, rng);
    for (const auto& t : ex.truth.tracks) {
      for (const auto& e : t.events) long_events += (e.interval.offset - e.interval.onset + 1) >= 32;
    }
    CHECK(split_and_stitch(ex.truth, SegmentConfig{64}) == ex.truth);
  }
  CHECK(long_events > 0);
  // one event across the whole recording and touching single-frame events
  Recording r;
  r.num_frames = 300;
  r.tracks = {{"a", {ev(0, 299)}}, {"b", {ev(10, 62), ev(63, 63), ev(64, 70), ev(70, 80), ev(127, 127), ev(128, 128)}}};
  CHECK(split_and_stitch(r, SegmentConfig{64}) == r);
}

TEST_CASE("an event spanning three segments decodes into one merged event") {
  // per-segment scores force full-segment activation
  const int L = 16, T = 48;
  SegmentConfig seg{L};
  std::vector<Event> result;
  for (const auto& b : segment_bounds(T, seg)) {
    IntervalScores s(L);
    for (int i = 0; i < L; ++i) {
      for (int j = i; j < L; ++j) s.score(i, j) = -5.0;
      if (i + 1 < L) s.eps(i) = -5.0;
    }
    s.score(0, L - 1) = 50.0;
    const int start = decode_start(result, b.begin) - b.begin;
    std::vector<Event> fresh;
    for (const auto& iv : map_decode(s, start).intervals) {
      Event e = ev(iv.onset + b.begin, iv.offset + b.begin, b.begin == 0, b.end >= T - 1);
      fresh.push_back(e);
    }
    stitch(result, fresh);
  }
  REQUIRE(result.size() == 1);
  CHECK(result[0].interval == Interval{0, T - 1});
  CHECK(result[0].has_onset);
  CHECK(result[0].has_offset);
}

TEST_CASE("synthetic corpus: determinism, empty config, duration statistics") {
  SyntheticCorpusConfig c;
  c.train_size = 3;
  c.val_size = 1;
  c.test_size = 1;
  const auto a = synth_generate(c), b = synth_generate(c);
  CHECK(a.train[2].truth == b.train[2].truth);
  CHECK(a.train[2].grid.values == b.train[2].grid.values);
  CHECK_FALSE(a.train[0].truth == a.train[1].truth);

  SyntheticCorpusConfig z = c;
  z.noise = 0;
  z.event_rate = 0;
  const auto zc = synth_generate(z);
  CHECK(zc.train[0].grid.values.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& t : zc.train[0].truth.tracks) CHECK(t.events.empty());

  SyntheticCorpusConfig big;
  big.frames = 400000;
  big.mean_duration = 9;
  std::mt19937_64 rng(3);
  const auto ex = synth_recording(big, rng);
  double total = 0;
  int count = 0;
  for (const auto& t : ex.truth.tracks) {
    validate_recording(ex.truth);
    for (const auto& e : t.events) {
      total += e.interval.offset - e.interval.onset + 1;
      ++count;
      CHECK(*e.refined_onset > -0.5);
      CHECK(*e.refined_onset < 0.5);
      CHECK(*e.velocity >= 1);
      CHECK(*e.velocity <= 127);
    }
  }
  CHECK(count >= 10000);
  CHECK(std::abs(total / count - 9.0) / 9.0 < 0.05);
  CHECK_THROWS_AS(synth_generate([] {
                    SyntheticCorpusConfig bad;
                    bad.frames = 257;
                    return bad;
                  }()),
                  ValidationError);
}

TEST_CASE("grid rendering of a known event") {
  Recording r;
  r.num_frames = 8;
  Event e = ev(1, 5);
  e.velocity = 127;
  e.refined_onset = 0.25;
  e.refined_offset = -0.25;
  r.tracks = {{"a", {e}}};
  std::mt19937_64 rng(0);
  const FeatureGrid g = render_grid(r, 4, 0.0, rng);
  CHECK(g.low_frames == 2);
  CHECK(g.values(0, 0) == 0.75);
  CHECK(g.values(1, 0) == 0.5);
  CHECK(g.values(0, 1) == doctest::Approx((1 + 0.5 + 0.25) / 4));
  CHECK(g.values(0, 2) == 1.0);
  CHECK(g.values(1, 3) == doctest::Approx((1 + 0.5 - 0.25) / 4));
  const auto w = g.window(1, 3);
  CHECK(w.rows() == 3);
  CHECK(w.row(0) == g.values.row(1));
  CHECK(w.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(FeatureGrid::from_json(g.to_json()).values == g.values);
}

TEST_CASE("quantile clipping") {
  GradNormWindow w;
  w.min_fill = 10;
  for (int i = 1; i <= 10; ++i) w.push(i);
  CHECK(w.threshold() == 8.0);
  Eigen::VectorXd g(3);
  g << 60, 0, 80;
  const Eigen::VectorXd dir = g.normalized();
  const auto r = quantile_clip(w, g);
  CHECK(r.clipped);
  CHECK(r.norm == 100.0);
  CHECK(g.norm() == doctest::Approx(8.0).epsilon(1e-14));
  CHECK((g.normalized() - dir).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(w.norms.back() == 100.0);

  GradNormWindow fresh;
  fresh.min_fill = 100;
  for (int i = 0; i < 99; ++i) fresh.push(1.0);
  Eigen::VectorXd h = Eigen::VectorXd::Constant(4, 50.0);
  CHECK_FALSE(quantile_clip(fresh, h).clipped);
  CHECK(h(0) == 50.0);

  std::mt19937_64 rng(2);
  GradNormWindow grow;
  grow.min_fill = 5;
  grow.capacity = 1000;
  double prev = 0.0;
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd v = Eigen::VectorXd::Constant(2, u(rng));
    const auto res = quantile_clip(grow, v);
    if (res.threshold > 0) CHECK(v.norm() <= res.threshold * (1 + 1e-12));
  }
  for (int i = 0; i < 50; ++i) {
    grow.push(1e6 + i);
    CHECK(grow.threshold() >= prev);
    prev = grow.threshold();
  }
}

TEST_CASE("learning rate schedule") {
  CHECK(learning_rate(0, 5000, 4e-4, 0.05) == 0.0);
  CHECK(learning_rate(250, 5000, 4e-4, 0.05) == doctest::Approx(4e-4));
  CHECK(std::abs(learning_rate(249, 5000, 4e-4, 0.05) - learning_rate(250, 5000, 4e-4, 0.05)) < 4e-4 / 200);
  CHECK(learning_rate(5000, 5000, 4e-4, 0.05) == doctest::Approx(0.0).epsilon(1e-15));
  for (int i = 251; i < 5000; i += 97) CHECK(learning_rate(i, 5000, 4e-4, 0.05) <= learning_rate(i - 1, 5000, 4e-4, 0.05));
  CHECK(learning_rate(0, 100, 1.0, 0.0) == 1.0);
}

TEST_CASE("optimizer decays only eligible parameters") {
  for (const char* name : {"adamw", "adabelief"}) {
    TrainConfig tc;
    tc.optimizer = name;
    tc.weight_decay = 0.5;
    nn::ParamStore ps;
    std::mt19937_64 rng(0);
    ps.add("w", 1, 2, nn::ParamStore::Init::kOnes, true, rng);
    ps.add("b", 1, 2, nn::ParamStore::Init::kOnes, false, rng);
    Optimizer opt(tc);
    opt.step(ps, 0.1);
    CHECK(ps.at("w").value(0, 0) == doctest::Approx(0.95));
    CHECK(ps.at("b").value(0, 0) == 1.0);
    ps.at("b").grad.setConstant(2.0);
    opt.step(ps, 0.1);
    CHECK(ps.at("b").value(0, 0) < 1.0);
  }
}

TEST_CASE("dequantization") { CHECK(dequantize(10, 0.25, 0.01) == doctest::Approx(0.1025).epsilon(1e-14)); }

TEST_CASE("config parsing and validation") {
  const FullConfig d = FullConfig::defaults();
  CHECK(FullConfig::from_json(d.to_json()).to_json() == d.to_json());
  CHECK(FullConfig::from_json(nlohmann::json::object()).to_json() == d.to_json());
  CHECK_THROWS_AS(FullConfig::from_json({{"extra", 1}}), ValidationError);
  CHECK_THROWS_AS(FullConfig::from_json({{"train", {{"warmup_fraction", 1.0}}}}), ValidationError);
  CHECK_THROWS_AS(FullConfig::from_json({{"train", {{"max_lr", "fast"}}}}), ValidationError);
  CHECK_THROWS_AS(FullConfig::from_json({{"synth", {{"num_event_types", 3}}}}), ValidationError);
  CHECK_THROWS_AS(FullConfig::from_json({{"segments", {{"segment_frames", 130}}}}), ValidationError);
  const auto p = FullConfig::from_json({{"train", {{"seed", 9}}}, {"encoder", {{"layers", 1}}}});
  CHECK(p.train.seed == 9);
  CHECK(p.encoder.layers == 1);
  CHECK(p.encoder.embed_dim == 64);
}

TEST_CASE("training segments use local frames and truncation flags") {
  SyntheticExample ex;
  ex.truth.num_frames = 64;
  ex.truth.tracks = {{"type0", {ev(2, 10), ev(30, 40)}}, {"type1", {}}};
  std::mt19937_64 rng(0);
  ex.grid = render_grid(ex.truth, 4, 0.0, rng);
  const auto s = make_training_segment(ex, 8, SegmentConfig{24}, {"type0", "type1"});
  CHECK(s.low_frames == 6);
  CHECK(s.grid.rows() == 12);
  REQUIRE(s.targets[0].size() == 2);
  CHECK(s.targets[0][0].interval == Interval{0, 2});
  CHECK_FALSE(s.targets[0][0].has_onset);
  CHECK(s.targets[0][1].interval == Interval{22, 23});
  CHECK_FALSE(s.targets[0][1].has_offset);
  CHECK(s.targets[1].empty());
  CHECK_THROWS_AS(make_training_segment(ex, 6, SegmentConfig{24}, {"type0", "type1"}), ValidationError);
}

TEST_CASE("training smoke run, divergence and transcription") {
  const FullConfig cfg = small_config();
  const auto corpus = synth_generate(cfg.synth);
  nn::ToyTranscriber m(cfg.encoder, 1);
  std::vector<TrainingLogEntry> seen;
  const auto res = train(m, corpus.train, cfg, [&](const TrainingLogEntry& e) { seen.push_back(e); });
  REQUIRE(res.log.size() == 3);
  CHECK(seen.size() == 3);
  CHECK(res.log[0].lr == 0.0);
  for (const auto& e : res.log) CHECK(std::isfinite(e.loss));
  const auto j = res.log[1].to_json();
  for (const char* k : {"iter", "loss", "lr", "grad_norm", "clipped"}) CHECK(j.contains(k));

  // deterministic given seeds
  nn::ToyTranscriber m2(cfg.encoder, 1);
  const auto res2 = train(m2, corpus.train, cfg);
  CHECK(res2.final_loss == res.final_loss);

  const Recording est = transcribe(m, corpus.val[0].grid, cfg.segments, {"type0", "type1"});
  CHECK(est.num_frames == 64);
  for (const auto& t : est.tracks) CHECK(validate_non_overlap(intervals(t.events)));
  const auto summary = evaluate_model(m, corpus.val, cfg.segments, NoteTolerances{});
  CHECK(summary.per_recording.size() == 2);

  FeatureGrid wrong = corpus.val[0].grid;
  wrong.columns = 3;
  CHECK_THROWS_AS(transcribe(m, wrong, cfg.segments, {"type0", "type1"}), ValidationError);

  m.params().at("kqb.w").value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto before = m.params().at("eps.w").value;
  CHECK_THROWS_AS(train(m, corpus.train, cfg), TrainingDiverged);
  CHECK(m.params().at("eps.w").value == before);
}

TEST_CASE("corpus files round trip") {
  const FullConfig cfg = small_config();
  const auto corpus = synth_generate(cfg.synth);
  const auto dir = std::filesystem::temp_directory_path() / ("semicrf_corpus_" + std::to_string(::getpid()));
  write_corpus(dir, corpus);
  const auto train = read_split(dir, "train");
  REQUIRE(train.size() == corpus.train.size());
  CHECK(train[1].truth == corpus.train[1].truth);
  CHECK((train[1].grid.values - corpus.train[1].grid.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(read_split(dir / "missing", "train"), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("seed substreams differ by name and master") {
  CHECK(substream_seed(0, "init") != substream_seed(0, "order"));
  CHECK(substream_seed(0, "init") != substream_seed(1, "init"));
  CHECK(substream_seed(5, "x") == substream_seed(5, "x"));
}
