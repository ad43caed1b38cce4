#include "semicrf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include "semicrf/error.hpp"
#include "semicrf/random.hpp"

namespace semicrf {

using json = nlohmann::json;
using nn::Tensor;

namespace {

// Reads `key` into `dst` when present; throws ValidationError on a type error.
template <typename T>
void read_key(const json& j, const char* section, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string(section) + "." + key + " has the wrong type");
  }
}

void reject_unknown(const json& j, const char* section, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ValidationError(std::string(section) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ValidationError(std::string(section) + ": unknown key '" + key + "'");
    }
  }
}

bool same_interval(const Event& a, const Event& b) { return a.interval == b.interval; }

// Touching events also conflict when the boundary they share is a segment cut
// (earlier one has no offset or later one has no onset): pieces of one event.
bool conflicts(const Event& a, const Event& b) {
  if (overlaps(a.interval, b.interval) || same_interval(a, b)) return true;
  const Event& p = a.interval < b.interval ? a : b;
  const Event& q = a.interval < b.interval ? b : a;
  return p.interval.offset == q.interval.onset && (!p.has_offset || !q.has_onset);
}

void insert_sorted(std::vector<Event>& v, Event e) {
  auto it = std::upper_bound(v.begin(), v.end(), e, [](const Event& x, const Event& y) {
    return x.interval < y.interval;
  });
  v.insert(it, std::move(e));
}

// onset side from `first` (earlier onset), offset side from `last`
Event merge_pair(const Event& first, const Event& last) {
  Event m = first;
  m.interval.offset = last.interval.offset;
  m.refined_offset = last.refined_offset;
  m.has_offset = last.has_offset;
  return m;
}

}  // namespace

// --- segments ---------------------------------------------------------------

void SegmentConfig::validate() const {
  if (segment_frames < 2 || segment_frames % 2 != 0) {
    throw ValidationError("segments.segment_frames must be even and >= 2");
  }
}

std::vector<SegmentBounds> segment_bounds(int num_frames, const SegmentConfig& cfg) {
  cfg.validate();
  std::vector<SegmentBounds> out;
  if (num_frames <= 0) return out;
  for (int b = 0;; b += cfg.stride()) {
    out.push_back({b, b + cfg.segment_frames - 1});
    if (b + cfg.segment_frames - 1 >= num_frames - 1) break;
  }
  return out;
}

std::vector<Event> truncate_to_segment(const std::vector<Event>& events, SegmentBounds bounds) {
  std::vector<Event> out;
  for (const auto& e : events) {
    if (e.interval.offset < bounds.begin || e.interval.onset > bounds.end) continue;
    Event t = e;
    if (t.interval.onset < bounds.begin) {
      t.interval.onset = bounds.begin;
      t.has_onset = false;
      t.refined_onset.reset();
    }
    if (t.interval.offset > bounds.end) {
      t.interval.offset = bounds.end;
      t.has_offset = false;
      t.refined_offset.reset();
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Segment> split_into_segments(const Recording& recording, const SegmentConfig& cfg) {
  validate_recording(recording);
  std::vector<Segment> out;
  for (const auto& b : segment_bounds(recording.num_frames, cfg)) {
    Segment s;
    s.bounds = b;
    for (const auto& track : recording.tracks) s.tracks.push_back({track.type, truncate_to_segment(track.events, b)});
    out.push_back(std::move(s));
  }
  return out;
}

int decode_start(const std::vector<Event>& result, int segment_start) {
  if (result.empty() || !result.back().has_offset) return segment_start;
  return std::max(segment_start, result.back().interval.offset);
}

void stitch(std::vector<Event>& result, const std::vector<Event>& new_events) {
  for (std::size_t i = 1; i < new_events.size(); ++i) {
    if (new_events[i].interval < new_events[i - 1].interval ||
        overlaps(new_events[i].interval, new_events[i - 1].interval) || same_interval(new_events[i], new_events[i - 1])) {
      throw ValidationError("stitch: new events must be sorted and non-overlapping");
    }
  }
  for (const auto& n : new_events) {
    std::vector<Event> hit;
    auto take_conflicts = [&](const Event& probe) {
      bool any = false;
      for (auto it = result.begin(); it != result.end();) {
        if (conflicts(*it, probe)) {
          hit.push_back(*it);
          it = result.erase(it);
          any = true;
        } else {
          ++it;
        }
      }
      return any;
    };
    if (!take_conflicts(n) || n.has_onset) {
      insert_sorted(result, n);
      continue;
    }
    Event cur = n;
    do {
      for (const auto& h : hit) {
        const Event& first = h.interval.onset <= cur.interval.onset ? h : cur;
        const Event& last = h.interval.offset > cur.interval.offset ? h : cur;
        cur = merge_pair(first, last);
      }
      hit.clear();
    } while (take_conflicts(cur));
    insert_sorted(result, cur);
  }
}

Recording split_and_stitch(const Recording& recording, const SegmentConfig& cfg) {
  Recording out;
  out.hop_seconds = recording.hop_seconds;
  out.num_frames = recording.num_frames;
  for (const auto& t : recording.tracks) out.tracks.push_back({t.type, {}});
  for (const auto& seg : split_into_segments(recording, cfg)) {
    for (std::size_t n = 0; n < seg.tracks.size(); ++n) {
      auto& result = out.tracks[n].events;
      const int start = decode_start(result, seg.bounds.begin);
      std::vector<Event> fresh;
      for (const auto& e : seg.tracks[n].events) {
        if (e.interval.onset >= start) fresh.push_back(e);
      }
      stitch(result, fresh);
    }
  }
  return out;
}

// --- synthetic corpus -------------------------------------------------------

void SyntheticCorpusConfig::validate() const {
  if (num_event_types < 1) throw ValidationError("synth.num_event_types must be >= 1");
  if (upsample_factor < 1) throw ValidationError("synth.upsample_factor must be >= 1");
  if (frames < 1 || frames % upsample_factor != 0) {
    throw ValidationError("synth.frames must be a positive multiple of synth.upsample_factor");
  }
  if (!(mean_gap >= 1.0) || !(mean_duration >= 1.0)) {
    throw ValidationError("synth.mean_gap and synth.mean_duration must be >= 1");
  }
  if (!(event_rate >= 0.0 && event_rate <= 1.0)) throw ValidationError("synth.event_rate must be in [0,1]");
  if (!(noise >= 0.0)) throw ValidationError("synth.noise must be >= 0");
  if (!(hop_seconds > 0.0)) throw ValidationError("synth.hop_seconds must be > 0");
  if (train_size < 0 || val_size < 0 || test_size < 0) throw ValidationError("synth split sizes must be >= 0");
}

json SyntheticCorpusConfig::to_json() const {
  return json{{"num_event_types", num_event_types}, {"frames", frames},
              {"upsample_factor", upsample_factor}, {"mean_gap", mean_gap},
              {"mean_duration", mean_duration},     {"event_rate", event_rate},
              {"noise", noise},                     {"hop_seconds", hop_seconds},
              {"train_size", train_size},           {"val_size", val_size},
              {"test_size", test_size},             {"seed", seed}};
}

SyntheticCorpusConfig SyntheticCorpusConfig::from_json(const json& j) {
  reject_unknown(j, "synth",
                 {"num_event_types", "frames", "upsample_factor", "mean_gap", "mean_duration", "event_rate",
                  "noise", "hop_seconds", "train_size", "val_size", "test_size", "seed"});
  SyntheticCorpusConfig c;
  read_key(j, "synth", "num_event_types", c.num_event_types);
  read_key(j, "synth", "frames", c.frames);
  read_key(j, "synth", "upsample_factor", c.upsample_factor);
  read_key(j, "synth", "mean_gap", c.mean_gap);
  read_key(j, "synth", "mean_duration", c.mean_duration);
  read_key(j, "synth", "event_rate", c.event_rate);
  read_key(j, "synth", "noise", c.noise);
  read_key(j, "synth", "hop_seconds", c.hop_seconds);
  read_key(j, "synth", "train_size", c.train_size);
  read_key(j, "synth", "val_size", c.val_size);
  read_key(j, "synth", "test_size", c.test_size);
  read_key(j, "synth", "seed", c.seed);
  c.validate();
  return c;
}

Tensor FeatureGrid::window(int first, int count) const {
  Tensor out = Tensor::Zero(static_cast<Eigen::Index>(count) * columns, values.cols());
  for (int p = 0; p < count; ++p) {
    const int src = first + p;
    if (src < 0 || src >= low_frames) continue;
    out.middleRows(static_cast<Eigen::Index>(p) * columns, columns) =
        values.middleRows(static_cast<Eigen::Index>(src) * columns, columns);
  }
  return out;
}

json FeatureGrid::to_json() const {
  return json{{"low_frames", low_frames},
              {"columns", columns},
              {"channels", values.cols()},
              {"upsample_factor", upsample_factor},
              {"hop_seconds", hop_seconds},
              {"values", std::vector<double>(values.data(), values.data() + values.size())}};
}

FeatureGrid FeatureGrid::from_json(const json& j) {
  reject_unknown(j, "grid", {"low_frames", "columns", "channels", "upsample_factor", "hop_seconds", "values"});
  FeatureGrid g;
  int channels = 0;
  std::vector<double> values;
  for (const char* k : {"low_frames", "columns", "channels", "upsample_factor", "values"}) {
    if (!j.contains(k)) throw ValidationError(std::string("grid: missing '") + k + "'");
  }
  read_key(j, "grid", "low_frames", g.low_frames);
  read_key(j, "grid", "columns", g.columns);
  read_key(j, "grid", "channels", channels);
  read_key(j, "grid", "upsample_factor", g.upsample_factor);
  read_key(j, "grid", "hop_seconds", g.hop_seconds);
  read_key(j, "grid", "values", values);
  if (g.low_frames < 1 || g.columns < 1 || channels < 1 || g.upsample_factor < 1 || !(g.hop_seconds > 0)) {
    throw ValidationError("grid: dimensions must be positive");
  }
  if (values.size() != static_cast<std::size_t>(g.low_frames) * g.columns * channels) {
    throw ValidationError("grid: values length does not match low_frames * columns * channels");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ValidationError("grid: non-finite value");
  }
  g.values = Eigen::Map<const Tensor>(values.data(), static_cast<Eigen::Index>(g.low_frames) * g.columns, channels);
  return g;
}

std::string event_type_name(int index) { return "type" + std::to_string(index); }

FeatureGrid render_grid(const Recording& truth, int c, double noise, std::mt19937_64& rng) {
  if (c < 1 || truth.num_frames % c != 0) throw ValidationError("grid: frames must be a multiple of c");
  FeatureGrid g;
  g.low_frames = truth.num_frames / c;
  g.columns = static_cast<int>(truth.tracks.size());
  g.upsample_factor = c;
  g.hop_seconds = truth.hop_seconds;
  g.values = Tensor::Zero(static_cast<Eigen::Index>(g.low_frames) * g.columns, kGridChannels);
  for (int j = 0; j < g.columns; ++j) {
    for (const auto& e : truth.tracks[static_cast<std::size_t>(j)].events) {
      for (int f = e.interval.onset; f <= e.interval.offset; ++f) g.values((f / c) * g.columns + j, 0) += 1.0 / c;
      const int on = e.interval.onset, off = e.interval.offset;
      g.values((on / c) * g.columns + j, 1) = (on % c + 0.5 + e.refined_onset.value_or(0.0)) / c;
      g.values((on / c) * g.columns + j, 2) = e.velocity.value_or(0) / 127.0;
      g.values((off / c) * g.columns + j, 3) = (off % c + 0.5 + e.refined_offset.value_or(0.0)) / c;
    }
  }
  if (noise > 0) {
    std::normal_distribution<double> n(0.0, noise);
    for (Eigen::Index i = 0; i < g.values.size(); ++i) g.values.data()[i] += n(rng);
  }
  return g;
}

SyntheticExample synth_recording(const SyntheticCorpusConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  SyntheticExample ex;
  ex.truth.hop_seconds = cfg.hop_seconds;
  ex.truth.num_frames = cfg.frames;
  std::geometric_distribution<int> gap(1.0 / cfg.mean_gap);
  std::geometric_distribution<int> dur(1.0 / cfg.mean_duration);
  std::bernoulli_distribution keep(cfg.event_rate);
  std::uniform_int_distribution<int> vel(1, 127);
  std::uniform_real_distribution<double> refine(-0.5, 0.5);
  auto open_refine = [&] {
    double r;
    do r = refine(rng);
    while (r <= -0.5);
    return r;
  };
  for (int j = 0; j < cfg.num_event_types; ++j) {
    EventSet track{event_type_name(j), {}};
    int prev_offset = -1;
    while (true) {
      const int onset = prev_offset + 1 + gap(rng);
      if (onset >= cfg.frames) break;
      const int offset = std::min(onset + dur(rng), cfg.frames - 1);
      if (keep(rng)) {
        Event e;
        e.interval = {onset, offset};
        e.velocity = vel(rng);
        e.refined_onset = open_refine();
        e.refined_offset = open_refine();
        track.events.push_back(e);
      }
      prev_offset = offset;
    }
    ex.truth.tracks.push_back(std::move(track));
  }
  ex.grid = render_grid(ex.truth, cfg.upsample_factor, cfg.noise, rng);
  return ex;
}

SyntheticCorpus synth_generate(const SyntheticCorpusConfig& cfg) {
  cfg.validate();
  SyntheticCorpus corpus;
  auto fill = [&](std::vector<SyntheticExample>& out, int n, const char* name) {
    std::mt19937_64 rng(substream_seed(cfg.seed, std::string("corpus.") + name));
    for (int i = 0; i < n; ++i) out.push_back(synth_recording(cfg, rng));
  };
  fill(corpus.train, cfg.train_size, "train");
  fill(corpus.val, cfg.val_size, "val");
  fill(corpus.test, cfg.test_size, "test");
  return corpus;
}

void write_grid(const std::filesystem::path& path, const FeatureGrid& grid) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << grid.to_json().dump() << '\n';
}

FeatureGrid read_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  try {
    return FeatureGrid::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  json manifest = json::object();
  for (const auto& [name, split] : {std::pair<const char*, const std::vector<SyntheticExample>*>{"train", &corpus.train},
                                    {"val", &corpus.val},
                                    {"test", &corpus.test}}) {
    std::filesystem::create_directories(dir / name);
    for (std::size_t i = 0; i < split->size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "%05zu", i);
      write_grid(dir / name / (std::string(stem) + ".grid.json"), (*split)[i].grid);
      write_events(dir / name / (std::string(stem) + ".events.json"), (*split)[i].truth);
    }
    manifest[name] = split->size();
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

std::vector<SyntheticExample> read_split(const std::filesystem::path& dir, const std::string& split) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ValidationError("corpus manifest missing in " + dir.string());
  std::size_t n = 0;
  try {
    n = json::parse(in).at(split).get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError("corpus manifest: " + std::string(e.what()));
  }
  std::vector<SyntheticExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05zu", i);
    SyntheticExample ex;
    ex.grid = read_grid(dir / split / (std::string(stem) + ".grid.json"));
    ex.truth = read_events(dir / split / (std::string(stem) + ".events.json"));
    out.push_back(std::move(ex));
  }
  return out;
}

// --- optimisation -----------------------------------------------------------

double GradNormWindow::threshold() const {
  std::vector<double> s(norms.begin(), norms.end());
  if (s.empty()) return 0.0;
  std::sort(s.begin(), s.end());
  const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(s.size()) - 1e-12));
  return s[std::clamp<std::size_t>(rank, 1, s.size()) - 1];
}

void GradNormWindow::push(double norm) {
  norms.push_back(norm);
  while (norms.size() > capacity) norms.pop_front();
}

ClipResult quantile_clip(GradNormWindow& window, Eigen::Ref<Eigen::VectorXd> grad) {
  ClipResult r;
  r.norm = grad.norm();
  if (window.active()) {
    r.threshold = window.threshold();
    if (r.norm > r.threshold) {
      grad *= r.threshold / r.norm;
      r.clipped = true;
    }
  }
  window.push(r.norm);
  return r;
}

ClipResult quantile_clip(GradNormWindow& window, nn::ParamStore& params) {
  ClipResult r;
  r.norm = params.grad_norm();
  if (window.active()) {
    r.threshold = window.threshold();
    if (r.norm > r.threshold) {
      params.scale_grad(r.threshold / r.norm);
      r.clipped = true;
    }
  }
  window.push(r.norm);
  return r;
}

double learning_rate(int iteration, int total, double max_lr, double warmup_fraction) {
  if (total <= 0) return 0.0;
  const double warm = warmup_fraction * total;
  const double it = iteration;
  if (it < warm) return max_lr * it / warm;
  const double progress = std::clamp((it - warm) / (total - warm), 0.0, 1.0);
  return max_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void TrainConfig::validate() const {
  if (optimizer != "adabelief" && optimizer != "adamw") {
    throw ValidationError("train.optimizer must be 'adabelief' or 'adamw'");
  }
  if (!(max_lr >= 0)) throw ValidationError("train.max_lr must be >= 0");
  if (!(warmup_fraction >= 0 && warmup_fraction < 1)) throw ValidationError("train.warmup_fraction must be in [0,1)");
  if (iterations < 0) throw ValidationError("train.iterations must be >= 0");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (!(weight_decay >= 0)) throw ValidationError("train.weight_decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ValidationError("train betas must be in [0,1)");
  if (!(adam_eps > 0)) throw ValidationError("train.adam_eps must be > 0");
  if (clip_window < 1 || !(clip_quantile > 0 && clip_quantile <= 1)) {
    throw ValidationError("train clipping window must be non-empty with quantile in (0,1]");
  }
}

json TrainConfig::to_json() const {
  return json{{"optimizer", optimizer},       {"max_lr", max_lr},
              {"warmup_fraction", warmup_fraction}, {"iterations", iterations},
              {"batch_size", batch_size},     {"weight_decay", weight_decay},
              {"beta1", beta1},               {"beta2", beta2},
              {"adam_eps", adam_eps},         {"clip_window", clip_window},
              {"clip_quantile", clip_quantile}, {"clip_min_fill", clip_min_fill},
              {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  reject_unknown(j, "train",
                 {"optimizer", "max_lr", "warmup_fraction", "iterations", "batch_size", "weight_decay", "beta1",
                  "beta2", "adam_eps", "clip_window", "clip_quantile", "clip_min_fill", "seed"});
  TrainConfig c;
  read_key(j, "train", "optimizer", c.optimizer);
  read_key(j, "train", "max_lr", c.max_lr);
  read_key(j, "train", "warmup_fraction", c.warmup_fraction);
  read_key(j, "train", "iterations", c.iterations);
  read_key(j, "train", "batch_size", c.batch_size);
  read_key(j, "train", "weight_decay", c.weight_decay);
  read_key(j, "train", "beta1", c.beta1);
  read_key(j, "train", "beta2", c.beta2);
  read_key(j, "train", "adam_eps", c.adam_eps);
  read_key(j, "train", "clip_window", c.clip_window);
  read_key(j, "train", "clip_quantile", c.clip_quantile);
  read_key(j, "train", "clip_min_fill", c.clip_min_fill);
  read_key(j, "train", "seed", c.seed);
  c.validate();
  return c;
}

void Optimizer::step(nn::ParamStore& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  const bool belief = cfg_.optimizer == "adabelief";
  for (auto& [name, p] : params.items()) {
    auto& [m, s] = moments_[name];
    if (m.size() == 0) {
      m = Tensor::Zero(p.value.rows(), p.value.cols());
      s = Tensor::Zero(p.value.rows(), p.value.cols());
    }
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * p.grad;
    if (belief) {
      s = cfg_.beta2 * s + (1.0 - cfg_.beta2) * (p.grad - m).cwiseAbs2();
      s.array() += cfg_.adam_eps;
    } else {
      s = cfg_.beta2 * s + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
    }
    if (p.decay && cfg_.weight_decay > 0) p.value *= 1.0 - lr * cfg_.weight_decay;
    p.value.array() -= lr * (m.array() / bc1) / ((s.array() / bc2).sqrt() + cfg_.adam_eps);
  }
}

json TrainingLogEntry::to_json() const {
  return json{{"iter", iter}, {"loss", loss}, {"lr", lr}, {"grad_norm", grad_norm}, {"clipped", clipped}};
}

// --- config -----------------------------------------------------------------

FullConfig FullConfig::defaults() {
  FullConfig c;
  c.encoder.grid_channels = kGridChannels;
  return c;
}

void FullConfig::validate() const {
  encoder.validate();
  train.validate();
  segments.validate();
  synth.validate();
  if (encoder.num_event_types != synth.num_event_types || encoder.grid_columns != synth.num_event_types) {
    throw ValidationError("encoder.num_event_types and encoder.grid_columns must equal synth.num_event_types");
  }
  if (encoder.grid_channels != kGridChannels) throw ValidationError("encoder.grid_channels must be 4");
  if (encoder.upsample_factor != synth.upsample_factor) {
    throw ValidationError("encoder.upsample_factor must equal synth.upsample_factor");
  }
  if (segments.stride() % encoder.upsample_factor != 0) {
    throw ValidationError("segments.segment_frames / 2 must be a multiple of the upsample factor");
  }
}

json FullConfig::to_json() const {
  return json{{"encoder", encoder.to_json()},
              {"train", train.to_json()},
              {"segments", json{{"segment_frames", segments.segment_frames}}},
              {"synth", synth.to_json()}};
}

FullConfig FullConfig::from_json(const json& j) {
  reject_unknown(j, "config", {"encoder", "train", "segments", "synth"});
  FullConfig c = defaults();
  if (j.contains("encoder")) {
    json e = c.encoder.to_json();
    e.update(j.at("encoder"));
    if (!j.at("encoder").is_object()) throw ValidationError("encoder must be an object");
    c.encoder = nn::EncoderConfig::from_json(e);
  }
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("segments")) {
    reject_unknown(j.at("segments"), "segments", {"segment_frames"});
    read_key(j.at("segments"), "segments", "segment_frames", c.segments.segment_frames);
  }
  if (j.contains("synth")) c.synth = SyntheticCorpusConfig::from_json(j.at("synth"));
  c.validate();
  return c;
}

FullConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  try {
    return FullConfig::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
}

// --- training ---------------------------------------------------------------

TrainingSegment make_training_segment(const SyntheticExample& ex, int begin, const SegmentConfig& seg,
                                      const std::vector<std::string>& types) {
  const int c = ex.grid.upsample_factor;
  if (begin % c != 0) throw ValidationError("segment start must be a multiple of the upsample factor");
  TrainingSegment out;
  out.low_frames = seg.segment_frames / c;
  out.grid = ex.grid.window(begin / c, out.low_frames);
  const SegmentBounds b{begin, begin + seg.segment_frames - 1};
  for (const auto& type : types) {
    const EventSet* track = ex.truth.find_track(type);
    std::vector<Event> local = track ? truncate_to_segment(track->events, b) : std::vector<Event>{};
    for (auto& e : local) {
      e.interval.onset -= begin;
      e.interval.offset -= begin;
    }
    out.targets.push_back(std::move(local));
  }
  return out;
}

namespace {

std::vector<std::string> model_types(const nn::ToyTranscriber& model) {
  std::vector<std::string> t;
  for (int j = 0; j < model.config().num_event_types; ++j) t.push_back(event_type_name(j));
  return t;
}

}  // namespace

namespace {

using BatchSampler = std::function<std::vector<TrainingSegment>(std::mt19937_64&)>;

TrainResult train_loop(nn::ToyTranscriber& model, const FullConfig& cfg, const BatchSampler& sample,
                       const std::function<void(const TrainingLogEntry&)>& on_step) {
  std::mt19937_64 rng(substream_seed(cfg.train.seed, "order"));
  Optimizer opt(cfg.train);
  GradNormWindow window{cfg.train.clip_window, cfg.train.clip_quantile, cfg.train.clip_min_fill, {}};
  TrainResult result;
  auto& params = model.params();
  for (int it = 0; it < cfg.train.iterations; ++it) {
    const double lr = learning_rate(it, cfg.train.iterations, cfg.train.max_lr, cfg.train.warmup_fraction);
    params.zero_grad();
    const auto batch = sample(rng);
    double loss = 0.0;
    for (const auto& seg : batch) {
      nn::Tape tape;
      // targets were validated when the batch was built, so a failure here is numeric
      try {
        nn::Var l = model.loss(tape, seg.grid, seg.low_frames, seg.targets);
        loss += tape.value(l)(0, 0);
        tape.backward(l);
      } catch (const ValidationError& e) {
        throw TrainingDiverged("iteration " + std::to_string(it) + ": " + e.what());
      }
    }
    const double n = static_cast<double>(batch.size());
    loss /= n;
    params.scale_grad(1.0 / n);
    if (!std::isfinite(loss) || !std::isfinite(params.grad_norm())) {
      throw TrainingDiverged("non-finite loss at iteration " + std::to_string(it));
    }
    const ClipResult clip = quantile_clip(window, params);
    opt.step(params, lr);
    TrainingLogEntry entry{it, loss, lr, clip.norm, clip.clipped};
    result.log.push_back(entry);
    result.final_loss = loss;
    if (on_step) on_step(entry);
  }
  return result;
}

}  // namespace

TrainResult train(nn::ToyTranscriber& model, const std::vector<SyntheticExample>& data, const FullConfig& cfg,
                  const std::function<void(const TrainingLogEntry&)>& on_step) {
  cfg.validate();
  if (data.empty()) throw ValidationError("training set is empty");
  const auto types = model_types(model);
  const int c = model.config().upsample_factor;
  return train_loop(
      model, cfg,
      [&](std::mt19937_64& rng) {
        std::vector<TrainingSegment> batch;
        for (int b = 0; b < cfg.train.batch_size; ++b) {
          const auto& ex = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
          const int slots = std::max(0, (ex.truth.num_frames - cfg.segments.segment_frames) / c);
          const int begin = c * std::uniform_int_distribution<int>(0, slots)(rng);
          batch.push_back(make_training_segment(ex, begin, cfg.segments, types));
        }
        return batch;
      },
      on_step);
}

TrainResult overfit(nn::ToyTranscriber& model, const SyntheticExample& example, const FullConfig& cfg,
                    const std::function<void(const TrainingLogEntry&)>& on_step) {
  cfg.validate();
  const auto types = model_types(model);
  std::vector<TrainingSegment> batch;
  for (const auto& b : segment_bounds(example.truth.num_frames, cfg.segments)) {
    batch.push_back(make_training_segment(example, b.begin, cfg.segments, types));
  }
  return train_loop(model, cfg, [&](std::mt19937_64&) { return batch; }, on_step);
}

double dequantize(int frame, std::optional<double> refined, double hop_seconds) {
  return (frame + refined.value_or(0.0)) * hop_seconds;
}

Recording transcribe(nn::ToyTranscriber& model, const FeatureGrid& grid, const SegmentConfig& seg,
                     const std::vector<std::string>& types) {
  const auto& ec = model.config();
  if (grid.columns != ec.grid_columns || grid.values.cols() != ec.grid_channels ||
      grid.upsample_factor != ec.upsample_factor || static_cast<int>(types.size()) != ec.num_event_types) {
    throw ValidationError("feature grid does not match the checkpoint's encoder config");
  }
  seg.validate();
  const int c = ec.upsample_factor;
  if (seg.stride() % c != 0) throw ValidationError("segment stride must be a multiple of the upsample factor");
  Recording out;
  out.hop_seconds = grid.hop_seconds;
  out.num_frames = grid.low_frames * c;
  std::vector<std::vector<Event>> result(types.size());
  for (const auto& b : segment_bounds(out.num_frames, seg)) {
    std::vector<int> starts;
    for (const auto& r : result) starts.push_back(decode_start(r, b.begin) - b.begin);
    const auto pred = model.predict(grid.window(b.begin / c, seg.segment_frames / c), seg.segment_frames / c, starts);
    for (std::size_t n = 0; n < types.size(); ++n) {
      std::vector<Event> fresh;
      for (Event e : pred[n]) {
        e.interval.onset += b.begin;
        e.interval.offset += b.begin;
        if (e.interval.onset > out.num_frames - 1) continue;
        e.interval.offset = std::min(e.interval.offset, out.num_frames - 1);
        fresh.push_back(e);
      }
      stitch(result[n], fresh);
    }
  }
  for (std::size_t n = 0; n < types.size(); ++n) out.tracks.push_back({types[n], std::move(result[n])});
  validate_recording(out);
  return out;
}

EvaluationSummary evaluate_model(nn::ToyTranscriber& model, const std::vector<SyntheticExample>& data,
                                 const SegmentConfig& seg, const NoteTolerances& tol) {
  EvaluationSummary s;
  const auto types = model_types(model);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Recording est = transcribe(model, data[i].grid, seg, types);
    s.per_recording.push_back(evaluate_recording(data[i].truth, est, std::to_string(i), tol));
  }
  if (!s.per_recording.empty()) s.average = average_over_recordings(s.per_recording);
  return s;
}

}  // namespace semicrf
