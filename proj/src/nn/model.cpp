#include "semicrf/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "semicrf/engine.hpp"
#include "semicrf/error.hpp"
#include "semicrf/nn/losses.hpp"

namespace semicrf::nn {

using Init = ParamStore::Init;
using json = nlohmann::json;

void EncoderConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ValidationError(std::string("encoder.") + name + " must be >= 1");
  };
  positive(embed_dim, "embed_dim");
  positive(heads, "heads");
  positive(ffn_width, "ffn_width");
  positive(fourier_dim, "fourier_dim");
  positive(upsample_factor, "upsample_factor");
  positive(num_event_types, "num_event_types");
  positive(grid_channels, "grid_channels");
  positive(track_dim, "track_dim");
  positive(head_dim, "head_dim");
  positive(attribute_hidden, "attribute_hidden");
  if (layers < 0) throw ValidationError("encoder.layers must be >= 0");
  if (grid_columns < 0) throw ValidationError("encoder.grid_columns must be >= 0");
  if (embed_dim % heads != 0) throw ValidationError("encoder.embed_dim must be divisible by heads");
  if (!(fourier_gamma > 0)) throw ValidationError("encoder.fourier_gamma must be > 0");
}

json EncoderConfig::to_json() const {
  return json{{"embed_dim", embed_dim},         {"heads", heads},
              {"layers", layers},               {"ffn_width", ffn_width},
              {"fourier_dim", fourier_dim},     {"fourier_gamma", fourier_gamma},
              {"rezero_init", rezero_init},     {"upsample_factor", upsample_factor},
              {"num_event_types", num_event_types}, {"grid_columns", grid_columns},
              {"grid_channels", grid_channels}, {"track_dim", track_dim},
              {"head_dim", head_dim},           {"attribute_hidden", attribute_hidden}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("encoder config must be an object");
  EncoderConfig c;
  static const char* known[] = {"embed_dim",   "heads",         "layers",          "ffn_width",
                                "fourier_dim", "fourier_gamma", "rezero_init",     "upsample_factor",
                                "num_event_types", "grid_columns", "grid_channels", "track_dim",
                                "head_dim",    "attribute_hidden"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw ValidationError("encoder: unknown key '" + key + "'");
    }
  }
  try {
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.heads = j.value("heads", c.heads);
    c.layers = j.value("layers", c.layers);
    c.ffn_width = j.value("ffn_width", c.ffn_width);
    c.fourier_dim = j.value("fourier_dim", c.fourier_dim);
    c.fourier_gamma = j.value("fourier_gamma", c.fourier_gamma);
    c.rezero_init = j.value("rezero_init", c.rezero_init);
    c.upsample_factor = j.value("upsample_factor", c.upsample_factor);
    c.num_event_types = j.value("num_event_types", c.num_event_types);
    c.grid_columns = j.value("grid_columns", c.grid_columns);
    c.grid_channels = j.value("grid_channels", c.grid_channels);
    c.track_dim = j.value("track_dim", c.track_dim);
    c.head_dim = j.value("head_dim", c.head_dim);
    c.attribute_hidden = j.value("attribute_hidden", c.attribute_hidden);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("encoder: ") + e.what());
  }
  c.validate();
  return c;
}

// --- layers ---------------------------------------------------------------

Tensor fourier_features(const Tensor& coords, const Tensor& w, const Tensor& b) {
  if (coords.cols() != w.rows() || b.cols() != w.cols() || b.rows() != 1) {
    throw ValidationError("fourier features: shape mismatch");
  }
  Tensor z = coords * w;
  z.rowwise() += b.row(0);
  return std::sqrt(2.0 / static_cast<double>(w.cols())) * z.array().cos().matrix();
}

void add_fourier_embedding(ParamStore& ps, const std::string& prefix, int coord_dim, int fourier_dim,
                           int out_dim, double gamma, std::mt19937_64& rng) {
  ps.add(prefix + ".wr", coord_dim, fourier_dim, Init::kNormal, false, rng, 1.0 / gamma);
  ps.add(prefix + ".br", 1, fourier_dim, Init::kUniform, false, rng, -std::numbers::pi, std::numbers::pi);
  ps.add(prefix + ".w1", fourier_dim, out_dim, Init::kXavier, false, rng);
  ps.add(prefix + ".b1", 1, out_dim, Init::kZeros, false, rng);
  ps.add(prefix + ".w2", out_dim, out_dim, Init::kXavier, false, rng);
  ps.add(prefix + ".b2", 1, out_dim, Init::kZeros, false, rng);
}

Var fourier_position_embedding(Tape& t, ParamStore& ps, const std::string& prefix, const Tensor& coords) {
  Var x = t.constant(coords);
  Var wr = t.param(ps.at(prefix + ".wr"));
  if (coords.cols() != t.value(wr).rows()) throw ValidationError("position embedding: coordinate width");
  const int B = static_cast<int>(t.value(wr).cols());
  Var z = scale(t, cos(t, linear(t, x, wr, t.param(ps.at(prefix + ".br")))), std::sqrt(2.0 / B));
  Var h = gelu(t, linear(t, z, t.param(ps.at(prefix + ".w1")), t.param(ps.at(prefix + ".b1"))));
  return linear(t, h, t.param(ps.at(prefix + ".w2")), t.param(ps.at(prefix + ".b2")));
}

void add_transformer_block(ParamStore& ps, const std::string& prefix, int E, int ffn_width,
                           double rezero_init, std::mt19937_64& rng) {
  ps.add(prefix + ".norm1.g", 1, E, Init::kOnes, false, rng);
  for (const char* n : {"wq", "wk", "wv", "wo"}) {
    ps.add(prefix + "." + n, E, E, Init::kXavier, true, rng);
    ps.add(prefix + ".b" + std::string(n).substr(1), 1, E, Init::kZeros, false, rng);
  }
  ps.add(prefix + ".lambda1", 1, 1, Init::kConstant, false, rng, rezero_init);
  ps.add(prefix + ".norm2.g", 1, E, Init::kOnes, false, rng);
  ps.add(prefix + ".ff1.w", E, ffn_width, Init::kXavier, true, rng);
  ps.add(prefix + ".ff1.b", 1, ffn_width, Init::kZeros, false, rng);
  ps.add(prefix + ".ff2.w", ffn_width, E, Init::kXavier, true, rng);
  ps.add(prefix + ".ff2.b", 1, E, Init::kZeros, false, rng);
  ps.add(prefix + ".lambda2", 1, 1, Init::kConstant, false, rng, rezero_init);
}

Var transformer_block(Tape& t, ParamStore& ps, const std::string& prefix, Var x, int heads,
                      const AxialLayout& layout) {
  auto p = [&](const std::string& n) { return t.param(ps.at(prefix + "." + n)); };
  if (t.value(x).cols() % heads != 0) throw ValidationError("transformer block: width not divisible by heads");
  Var h = rms_norm(t, x, p("norm1.g"));
  Var a = attention(t, linear(t, h, p("wq"), p("bq")), linear(t, h, p("wk"), p("bk")),
                    linear(t, h, p("wv"), p("bv")), heads, layout);
  x = add(t, x, scale_by(t, linear(t, a, p("wo"), p("bo")), p("lambda1")));
  Var h2 = rms_norm(t, x, p("norm2.g"));
  Var f = linear(t, gelu(t, linear(t, h2, p("ff1.w"), p("ff1.b"))), p("ff2.w"), p("ff2.b"));
  return add(t, x, scale_by(t, f, p("lambda2")));
}

Var upsample_tracks(Tape& t, Var tracks, Var weight, Var bias, int factor) {
  const auto rows = static_cast<int>(t.value(tracks).rows());
  if (rows == 0) throw ValidationError("upsample: empty track");
  if (factor < 1 || t.value(weight).cols() % factor != 0) throw ValidationError("upsample: weight width");
  const int d = static_cast<int>(t.value(weight).cols()) / factor;
  return reshape(t, linear(t, tracks, weight, bias), rows * factor, d);
}

// --- model ----------------------------------------------------------------

ToyTranscriber::ToyTranscriber(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int E = config_.embed_dim;
  const int c = config_.upsample_factor;
  const int d = config_.track_dim;
  const int D = config_.head_dim;
  params_.add("grid_in.w", config_.grid_channels, E, Init::kXavier, true, rng);
  params_.add("grid_in.b", 1, E, Init::kZeros, false, rng);
  add_fourier_embedding(params_, "pos_grid", 2, config_.fourier_dim, E, config_.fourier_gamma, rng);
  add_fourier_embedding(params_, "pos_track", 2, config_.fourier_dim, E, config_.fourier_gamma, rng);
  for (int l = 0; l < config_.layers; ++l) {
    add_transformer_block(params_, "layer" + std::to_string(l) + ".time", E, config_.ffn_width,
                          config_.rezero_init, rng);
    add_transformer_block(params_, "layer" + std::to_string(l) + ".column", E, config_.ffn_width,
                          config_.rezero_init, rng);
  }
  params_.add("out_norm.g", 1, E, Init::kOnes, false, rng);
  params_.add("upsample.w", E, c * d, Init::kXavier, true, rng);
  params_.add("upsample.b", 1, c * d, Init::kZeros, false, rng);
  params_.add("kqb.w", d, 2 * D + 1, Init::kXavier, true, rng);
  params_.add("kqb.b", 1, 2 * D + 1, Init::kZeros, false, rng);
  params_.add("eps.w", d, 1, Init::kXavier, true, rng);
  params_.add("eps.b", 1, 1, Init::kZeros, false, rng);
  params_.add("attr1.w", 2 * d, config_.attribute_hidden, Init::kXavier, true, rng);
  params_.add("attr1.b", 1, config_.attribute_hidden, Init::kZeros, false, rng);
  params_.add("attr2.w", config_.attribute_hidden, kAttributeWidth, Init::kXavier, true, rng);
  params_.add("attr2.b", 1, kAttributeWidth, Init::kZeros, false, rng);
}

Var ToyTranscriber::encode_tokens(Tape& t, Var grid_tokens, Var track_tokens, int low_frames,
                                  int grid_columns, int num_tracks) {
  if (t.value(grid_tokens).rows() != static_cast<Eigen::Index>(low_frames) * grid_columns ||
      t.value(track_tokens).rows() != static_cast<Eigen::Index>(low_frames) * num_tracks) {
    throw ValidationError("encoder: grid and track token counts disagree on T'");
  }
  const int cols = grid_columns + num_tracks;
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(low_frames) * cols);
  const int grid_rows = low_frames * grid_columns;
  for (int f = 0; f < low_frames; ++f) {
    for (int j = 0; j < grid_columns; ++j) order.push_back(f * grid_columns + j);
    for (int n = 0; n < num_tracks; ++n) order.push_back(grid_rows + f * num_tracks + n);
  }
  Var x = grid_columns > 0 ? gather_rows(t, vstack(t, grid_tokens, track_tokens), std::move(order))
                           : track_tokens;
  const AxialLayout time_axis{low_frames, cols, AxialLayout::Axis::kTime};
  const AxialLayout column_axis{low_frames, cols, AxialLayout::Axis::kColumn};
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    x = transformer_block(t, params_, p + ".time", x, config_.heads, time_axis);
    x = transformer_block(t, params_, p + ".column", x, config_.heads, column_axis);
  }
  if (grid_columns == 0) return x;
  std::vector<int> tracks;
  tracks.reserve(static_cast<std::size_t>(low_frames) * num_tracks);
  for (int f = 0; f < low_frames; ++f) {
    for (int n = 0; n < num_tracks; ++n) tracks.push_back(f * cols + grid_columns + n);
  }
  return gather_rows(t, x, std::move(tracks));
}

Var ToyTranscriber::encode(Tape& t, const Tensor& grid, int low_frames) {
  const int F = config_.grid_columns;
  const int N = config_.num_event_types;
  if (low_frames < 1 || grid.rows() != static_cast<Eigen::Index>(low_frames) * F ||
      grid.cols() != config_.grid_channels) {
    throw ValidationError("encoder: grid must be (T' * grid_columns) x grid_channels");
  }
  Tensor grid_coords(low_frames * F, 2);
  Tensor track_coords(low_frames * N, 2);
  for (int f = 0; f < low_frames; ++f) {
    for (int j = 0; j < F; ++j) grid_coords.row(f * F + j) << f, j;
    for (int n = 0; n < N; ++n) track_coords.row(f * N + n) << f, n;
  }
  Var tracks = fourier_position_embedding(t, params_, "pos_track", track_coords);
  Var grid_tokens;
  if (F > 0) {
    grid_tokens = add(t, linear(t, t.constant(grid), t.param(params_.at("grid_in.w")),
                                t.param(params_.at("grid_in.b"))),
                      fourier_position_embedding(t, params_, "pos_grid", grid_coords));
  } else {
    grid_tokens = t.constant(Tensor(0, config_.embed_dim));
  }
  return encode_tokens(t, grid_tokens, tracks, low_frames, F, N);
}

std::vector<TrackHeads> ToyTranscriber::heads(Tape& t, Var track_embeddings, int low_frames) {
  const int N = config_.num_event_types;
  const int D = config_.head_dim;
  Var normed = rms_norm(t, track_embeddings, t.param(params_.at("out_norm.g")));
  std::vector<TrackHeads> out;
  for (int n = 0; n < N; ++n) {
    std::vector<int> rows(static_cast<std::size_t>(low_frames));
    for (int f = 0; f < low_frames; ++f) rows[static_cast<std::size_t>(f)] = f * N + n;
    Var track = gather_rows(t, normed, std::move(rows));
    TrackHeads h;
    h.hidden = upsample_tracks(t, track, t.param(params_.at("upsample.w")), t.param(params_.at("upsample.b")),
                               config_.upsample_factor);
    Var kqb = linear(t, h.hidden, t.param(params_.at("kqb.w")), t.param(params_.at("kqb.b")));
    h.q = slice_cols(t, kqb, 0, D);
    h.k = slice_cols(t, kqb, D, D);
    h.b = slice_cols(t, kqb, 2 * D, 1);
    h.eps = linear(t, h.hidden, t.param(params_.at("eps.w")), t.param(params_.at("eps.b")));
    out.push_back(h);
  }
  return out;
}

Var ToyTranscriber::attribute_rows(Tape& t, Var hidden, const std::vector<Interval>& intervals) {
  std::vector<int> on, off;
  for (const auto& iv : intervals) {
    on.push_back(iv.onset);
    off.push_back(iv.offset);
  }
  Var pair = hconcat(t, gather_rows(t, hidden, std::move(on)), gather_rows(t, hidden, std::move(off)));
  Var a = gelu(t, linear(t, pair, t.param(params_.at("attr1.w")), t.param(params_.at("attr1.b"))));
  return linear(t, a, t.param(params_.at("attr2.w")), t.param(params_.at("attr2.b")));
}

Var ToyTranscriber::loss(Tape& t, const Tensor& grid, int low_frames, const SegmentTargets& targets) {
  if (static_cast<int>(targets.size()) != config_.num_event_types) {
    throw ValidationError("loss: one target list per event type required");
  }
  const auto hs = heads(t, encode(t, grid, low_frames), low_frames);
  std::vector<Var> terms;
  for (std::size_t n = 0; n < hs.size(); ++n) {
    std::vector<Interval> y;
    std::vector<ObservedAttributes> obs;
    for (const auto& e : targets[n]) {
      y.push_back(e.interval);
      obs.push_back({e.velocity, e.has_onset ? e.refined_onset : std::nullopt,
                     e.has_offset ? e.refined_offset : std::nullopt, e.has_onset, e.has_offset});
    }
    terms.push_back(semicrf_nll(t, hs[n].q, hs[n].k, hs[n].b, hs[n].eps, y));
    if (!y.empty()) terms.push_back(attribute_nll(t, attribute_rows(t, hs[n].hidden, y), std::move(obs)));
  }
  return add_scalars(t, terms);
}

std::vector<std::vector<Event>> ToyTranscriber::predict(const Tensor& grid, int low_frames,
                                                        const std::vector<int>& start_frames) {
  Tape t;
  const auto hs = heads(t, encode(t, grid, low_frames), low_frames);
  if (start_frames.size() != hs.size()) throw ValidationError("predict: one start frame per type");
  std::vector<std::vector<Event>> out(hs.size());
  for (std::size_t n = 0; n < hs.size(); ++n) {
    const IntervalScores s = scores_from_heads(t.value(hs[n].q), t.value(hs[n].k), t.value(hs[n].b),
                                               t.value(hs[n].eps));
    const int start = start_frames[n];
    if (start >= s.num_frames()) continue;
    const auto decoded = map_decode(s, std::max(start, 0)).intervals;
    if (decoded.empty()) continue;
    const Tensor rows = t.value(attribute_rows(t, hs[n].hidden, decoded));
    for (std::size_t e = 0; e < decoded.size(); ++e) {
      const AttributeEstimate a = decode_attributes(rows.row(static_cast<Eigen::Index>(e)));
      Event ev;
      ev.interval = decoded[e];
      ev.velocity = a.velocity;
      ev.refined_onset = a.refined_onset;
      ev.refined_offset = a.refined_offset;
      ev.has_onset = a.has_onset;
      ev.has_offset = a.has_offset;
      out[n].push_back(ev);
    }
  }
  return out;
}

json ToyTranscriber::to_checkpoint() const {
  json params = json::object();
  for (const auto& [name, p] : params_.items()) {
    params[name] = {{"shape", {p.value.rows(), p.value.cols()}},
                    {"values", std::vector<double>(p.value.data(), p.value.data() + p.value.size())}};
  }
  return json{{"format", kCheckpointFormat}, {"encoder", config_.to_json()}, {"params", params}};
}

ToyTranscriber ToyTranscriber::from_checkpoint(const json& j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) {
    throw ValidationError(std::string("checkpoint: missing format tag ") + kCheckpointFormat);
  }
  ToyTranscriber m(EncoderConfig::from_json(j.at("encoder")), 0);
  const auto& params = j.at("params");
  if (params.size() != m.params_.items().size()) {
    throw ValidationError("checkpoint: parameter set does not match the encoder config");
  }
  for (auto& [name, p] : m.params_.items()) {
    if (!params.contains(name)) throw ValidationError("checkpoint: missing parameter '" + name + "'");
    const auto& e = params.at(name);
    const auto shape = e.at("shape").get<std::vector<long>>();
    const auto values = e.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols() ||
        static_cast<Eigen::Index>(values.size()) != p.value.size()) {
      throw ValidationError("checkpoint: shape mismatch for '" + name + "'");
    }
    std::copy(values.begin(), values.end(), p.value.data());
  }
  return m;
}

void ToyTranscriber::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << to_checkpoint().dump() << '\n';
}

ToyTranscriber ToyTranscriber::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  try {
    return from_checkpoint(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint " + path.string() + ": " + e.what());
  }
}

// --- gradcheck --------------------------------------------------------------

double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-5});
}

GradcheckResult gradcheck(ParamStore& ps, const std::function<Var(Tape&)>& loss, double h, int per_parameter,
                          std::uint64_t seed) {
  ps.zero_grad();
  {
    Tape t;
    Var l = loss(t);
    t.backward(l);
  }
  auto eval = [&]() {
    Tape t;
    return t.value(loss(t))(0, 0);
  };
  std::mt19937_64 rng(seed);
  GradcheckResult r;
  for (auto& [name, p] : ps.items()) {
    if (!p.grad.allFinite()) throw ValidationError("non-finite gradient for parameter '" + name + "'");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    if (per_parameter > 0 && static_cast<int>(idx.size()) > per_parameter) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(per_parameter));
    }
    for (Eigen::Index i : idx) {
      double& v = p.value.data()[i];
      const double saved = v;
      v = saved + h;
      const double up = eval();
      v = saved - h;
      const double down = eval();
      v = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = gradcheck_relative_error(p.grad.data()[i], numeric);
      ++r.checked;
      if (err > r.max_relative_error || r.worst_parameter.empty()) {
        if (err >= r.max_relative_error) {
          r.max_relative_error = err;
          r.worst_parameter = name;
        }
      }
    }
  }
  return r;
}

}  // namespace semicrf::nn
