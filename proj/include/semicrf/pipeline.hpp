#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semicrf/event_model.hpp"
#include "semicrf/metrics.hpp"
#include "semicrf/nn/model.hpp"

namespace semicrf {

// --- segments ---------------------------------------------------------------

struct SegmentConfig {
  int segment_frames = 128;  // L; consecutive segments overlap by L/2

  int stride() const { return segment_frames / 2; }
  void validate() const;  // L >= 2 and even
};

// Closed frame range [begin, end] of one segment; frames past the recording
// end are padding.
struct SegmentBounds {
  int begin = 0;
  int end = 0;
};

struct Segment {
  SegmentBounds bounds;
  std::vector<EventSet> tracks;  // absolute frames, truncated, with flags
};

// Segment starts 0, L/2, L, ... until a segment reaches the last frame.
std::vector<SegmentBounds> segment_bounds(int num_frames, const SegmentConfig& cfg);

// Clips every event intersecting [bounds.begin, bounds.end]; has_onset is
// cleared iff the onset was clipped, has_offset iff the offset was clipped.
std::vector<Event> truncate_to_segment(const std::vector<Event>& events, SegmentBounds bounds);

std::vector<Segment> split_into_segments(const Recording& recording, const SegmentConfig& cfg);

// max(segment_start, offset of the last result event) when that event has
// has_offset, else segment_start.
int decode_start(const std::vector<Event>& result, int segment_start);

// Adds decoded events (absolute frames, onset order) to a canonically sorted
// result list. An event conflicting with existing ones (overlapping, equal
// interval, or touching across a missing offset/onset) replaces them when it has an onset, otherwise merges with them:
// onset, velocity, refined_onset, has_onset from the earlier event; offset,
// refined_offset, has_offset from the later-ending one. Others are inserted.
void stitch(std::vector<Event>& result, const std::vector<Event>& new_events);

// Splits, truncates and stitches back without a model, decoding each segment
// from decode_start.
Recording split_and_stitch(const Recording& recording, const SegmentConfig& cfg);

// --- synthetic corpus -------------------------------------------------------

struct SyntheticCorpusConfig {
  int num_event_types = 2;
  int frames = 256;
  int upsample_factor = 4;
  double mean_gap = 12.0;       // frames between an offset and the next onset
  double mean_duration = 12.0;  // frames
  double event_rate = 1.0;      // probability a renewal cycle carries an event
  double noise = 0.05;          // Gaussian noise std on grid features
  double hop_seconds = 0.01;
  int train_size = 512;
  int val_size = 32;
  int test_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticCorpusConfig from_json(const nlohmann::json& j);
};

inline constexpr int kGridChannels = 4;

// Low-resolution feature grid: row (t', j) holds for column j over patch t'
// [active fraction, onset position, onset velocity, offset position]. The
// position channels are (r + 0.5 + refinement) / c for a boundary at
// in-patch frame r, 0 when the patch has none.
struct FeatureGrid {
  int low_frames = 0;
  int columns = 0;
  int upsample_factor = 1;
  double hop_seconds = 0.01;
  nn::Tensor values;  // (low_frames * columns) x kGridChannels

  // Rows for patches [first, first + count), zero padded past the end.
  nn::Tensor window(int first, int count) const;
  nlohmann::json to_json() const;
  static FeatureGrid from_json(const nlohmann::json& j);
};

struct SyntheticExample {
  FeatureGrid grid;
  Recording truth;
};

struct SyntheticCorpus {
  std::vector<SyntheticExample> train, val, test;
};

std::string event_type_name(int index);

SyntheticExample synth_recording(const SyntheticCorpusConfig& cfg, std::mt19937_64& rng);
FeatureGrid render_grid(const Recording& truth, int upsample_factor, double noise, std::mt19937_64& rng);
SyntheticCorpus synth_generate(const SyntheticCorpusConfig& cfg);

void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);
std::vector<SyntheticExample> read_split(const std::filesystem::path& dir, const std::string& split);
FeatureGrid read_grid(const std::filesystem::path& path);
void write_grid(const std::filesystem::path& path, const FeatureGrid& grid);

// --- optimisation -----------------------------------------------------------

struct GradNormWindow {
  std::size_t capacity = 10000;
  double quantile = 0.8;
  std::size_t min_fill = 100;
  std::deque<double> norms;

  // nearest rank: sorted[ceil(q n) - 1]
  double threshold() const;
  bool active() const { return norms.size() >= min_fill && !norms.empty(); }
  void push(double norm);
};

struct ClipResult {
  double norm = 0.0;       // before clipping
  double threshold = 0.0;  // 0 while inactive
  bool clipped = false;
};

// Scales `grad` to norm <= threshold when the window is active, then records
// the pre-clip norm.
ClipResult quantile_clip(GradNormWindow& window, Eigen::Ref<Eigen::VectorXd> grad);
// Same over all parameter gradients of a store.
ClipResult quantile_clip(GradNormWindow& window, nn::ParamStore& params);

// Linear warmup from 0 over warmup_fraction * total iterations, then cosine
// annealing to 0 at `total`.
double learning_rate(int iteration, int total, double max_lr, double warmup_fraction);

struct TrainConfig {
  std::string optimizer = "adabelief";  // or "adamw"
  double max_lr = 1e-3;
  double warmup_fraction = 0.05;
  int iterations = 5000;
  int batch_size = 8;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t clip_window = 10000;
  double clip_quantile = 0.8;
  std::size_t clip_min_fill = 100;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Adam-family update with decoupled weight decay on decay-eligible parameters.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(nn::ParamStore& params, double lr);

 private:
  TrainConfig cfg_;
  int t_ = 0;
  std::map<std::string, std::pair<nn::Tensor, nn::Tensor>> moments_;
};

struct TrainingLogEntry {
  int iter = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;

  nlohmann::json to_json() const;
};

struct FullConfig {
  nn::EncoderConfig encoder;
  TrainConfig train;
  SegmentConfig segments;
  SyntheticCorpusConfig synth;

  // Cross-section checks (grid columns, channels, patch alignment).
  void validate() const;
  nlohmann::json to_json() const;
  static FullConfig from_json(const nlohmann::json& j);
  static FullConfig defaults();
};

FullConfig read_config(const std::filesystem::path& path);

// One training example: the window of a recording starting at `begin`
// (a multiple of c) with segment-local truncated targets.
struct TrainingSegment {
  nn::Tensor grid;
  int low_frames = 0;
  nn::SegmentTargets targets;
};

TrainingSegment make_training_segment(const SyntheticExample& ex, int begin, const SegmentConfig& seg,
                                      const std::vector<std::string>& types);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<TrainingLogEntry> log;
  double final_loss = 0.0;
};

// Minimizes the mean per-segment loss over random training segments. The
// callback (may be empty) sees every log entry. Throws TrainingDiverged on a
// non-finite loss or gradient; the model then still holds the last good step.
TrainResult train(nn::ToyTranscriber& model, const std::vector<SyntheticExample>& data, const FullConfig& cfg,
                  const std::function<void(const TrainingLogEntry&)>& on_step = {});

// Single-batch training: every iteration uses the example's inference
// segments (segment_bounds) as the batch.
TrainResult overfit(nn::ToyTranscriber& model, const SyntheticExample& example, const FullConfig& cfg,
                    const std::function<void(const TrainingLogEntry&)>& on_step = {});

// Full-recording inference: per segment encode, decode each type from its
// decode start, then stitch. Event frames are absolute.
Recording transcribe(nn::ToyTranscriber& model, const FeatureGrid& grid, const SegmentConfig& seg,
                     const std::vector<std::string>& types);

// time = (frame + refined) * hop
double dequantize(int frame, std::optional<double> refined, double hop_seconds);

struct EvaluationSummary {
  std::vector<RecordingMetrics> per_recording;
  RecordingMetrics average;
};

EvaluationSummary evaluate_model(nn::ToyTranscriber& model, const std::vector<SyntheticExample>& data,
                                 const SegmentConfig& seg, const NoteTolerances& tol);

}  // namespace semicrf
