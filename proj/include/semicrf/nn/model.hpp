#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semicrf/event_model.hpp"
#include "semicrf/nn/attributes.hpp"
#include "semicrf/nn/ops.hpp"
#include "semicrf/nn/tape.hpp"

namespace semicrf::nn {

struct EncoderConfig {
  int embed_dim = 64;
  int heads = 4;
  int layers = 2;  // each layer = time-axis block + column-axis block
  int ffn_width = 128;
  int fourier_dim = 64;
  double fourier_gamma = 1.0;
  double rezero_init = 0.01;
  int upsample_factor = 4;
  int num_event_types = 2;
  int grid_columns = 2;
  int grid_channels = 4;
  int track_dim = 32;
  int head_dim = 16;
  int attribute_hidden = 64;

  void validate() const;  // throws ValidationError
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);  // missing keys keep defaults
};

// --- layers ---------------------------------------------------------------

// sqrt(2/B) cos(x W + b) for coords N x C, W stored C x B, b 1 x B.
Tensor fourier_features(const Tensor& coords, const Tensor& w, const Tensor& b);

void add_fourier_embedding(ParamStore& ps, const std::string& prefix, int coord_dim, int fourier_dim,
                           int out_dim, double gamma, std::mt19937_64& rng);
Var fourier_position_embedding(Tape& t, ParamStore& ps, const std::string& prefix, const Tensor& coords);

void add_transformer_block(ParamStore& ps, const std::string& prefix, int embed_dim, int ffn_width,
                           double rezero_init, std::mt19937_64& rng);
Var transformer_block(Tape& t, ParamStore& ps, const std::string& prefix, Var x, int heads,
                      const AxialLayout& layout);

// Kernel = stride = c transposed convolution as a linear map E -> c*d per
// step followed by a row-major reshape: out[i*c + r] = W_r in[i] + bias_r.
Var upsample_tracks(Tape& t, Var tracks, Var weight, Var bias, int factor);

// --- model ----------------------------------------------------------------

struct TrackHeads {
  Var hidden;  // T x d upsampled track
  Var q, k, b, eps;
};

// Targets for one training segment, in segment-local frames.
using SegmentTargets = std::vector<std::vector<Event>>;  // one list per event type

class ToyTranscriber {
 public:
  ToyTranscriber(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // grid: (T' * F') x channels, rows in (time, column) order.
  // Returns track embeddings (T' * N) x E in (time, type) order.
  Var encode(Tape& t, const Tensor& grid, int low_frames);
  // Runs the axial blocks over explicit token matrices; grid (T'F') x E and
  // tracks (T'N) x E, both (time, column) order. Returns the track slice.
  Var encode_tokens(Tape& t, Var grid_tokens, Var track_tokens, int low_frames, int grid_columns,
                    int num_tracks);

  std::vector<TrackHeads> heads(Tape& t, Var track_embeddings, int low_frames);
  // One 132-wide row per interval from [h_onset, h_offset].
  Var attribute_rows(Tape& t, Var hidden, const std::vector<Interval>& intervals);

  // Sum over types of semi-CRF NLL plus attribute NLL.
  Var loss(Tape& t, const Tensor& grid, int low_frames, const SegmentTargets& targets);

  // MAP events per type in segment-local frames, decoding from start_frames[n].
  std::vector<std::vector<Event>> predict(const Tensor& grid, int low_frames,
                                          const std::vector<int>& start_frames);

  nlohmann::json to_checkpoint() const;
  static ToyTranscriber from_checkpoint(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ToyTranscriber load(const std::filesystem::path& path);

 private:
  EncoderConfig config_;
  ParamStore params_;
};

inline constexpr const char* kCheckpointFormat = "semicrfkit-ckpt-v1";

// --- gradient checking ----------------------------------------------------

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of `loss` with central differences (step h)
// on up to `per_parameter` entries of each parameter (all when <= 0); entries
// are sampled deterministically from `seed`. Throws ValidationError naming the
// parameter when a gradient is non-finite.
GradcheckResult gradcheck(ParamStore& ps, const std::function<Var(Tape&)>& loss, double h = 1e-5,
                          int per_parameter = 0, std::uint64_t seed = 0);

double gradcheck_relative_error(double analytic, double numeric);

}  // namespace semicrf::nn
