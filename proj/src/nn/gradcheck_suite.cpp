#include "semicrf/nn/gradcheck_suite.hpp"

#include <functional>
#include <random>

#include "semicrf/nn/losses.hpp"
#include "semicrf/nn/model.hpp"
#include "semicrf/random.hpp"

namespace semicrf::nn {

namespace {

using Init = ParamStore::Init;

Tensor random_tensor(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = d(rng);
  return t;
}

// l^T out r for fixed random l, r: every output entry gets a distinct weight
Var probe(Tape& t, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor& v = t.value(out);
  const Tensor r = random_tensor(static_cast<int>(v.cols()), 1, rng);
  const Tensor l = random_tensor(1, static_cast<int>(v.rows()), rng);
  return matmul(t, matmul(t, t.constant(l), out), t.constant(r));
}

GradcheckEntry run(const std::string& name, ParamStore& ps, const std::function<Var(Tape&)>& loss,
                   int per_parameter = 0, std::uint64_t seed = 0) {
  const auto r = gradcheck(ps, loss, 1e-5, per_parameter, seed);
  return {name, r.max_relative_error, r.checked};
}

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.embed_dim = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn_width = 12;
  c.fourier_dim = 6;
  c.upsample_factor = 2;
  c.num_event_types = 2;
  c.grid_columns = 2;
  c.grid_channels = 4;
  c.track_dim = 4;
  c.head_dim = 3;
  c.attribute_hidden = 5;
  c.rezero_init = 0.5;
  return c;
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradcheckEntry> out;
  std::mt19937_64 rng(substream_seed(seed, "gradcheck"));
  const std::uint64_t probe_seed = rng();

  ParamStore ps;
  ps.add("a", 4, 6, Init::kNormal, true, rng, 1.0);
  ps.add("b", 6, 6, Init::kNormal, true, rng, 0.5);
  ps.add("c", 4, 6, Init::kNormal, true, rng, 1.0);
  ps.add("g", 1, 6, Init::kNormal, false, rng, 1.0);
  ps.add("bias", 1, 6, Init::kNormal, false, rng, 1.0);
  ps.add("s", 1, 1, Init::kConstant, false, rng, 0.7);
  auto P = [&](Tape& t, const char* n) { return t.param(ps.at(n)); };
  const std::vector<std::pair<std::string, std::function<Var(Tape&)>>> primitives = {
      {"linear", [&](Tape& t) { return linear(t, P(t, "a"), P(t, "b"), P(t, "bias")); }},
      {"matmul", [&](Tape& t) { return matmul(t, P(t, "a"), P(t, "b")); }},
      {"add", [&](Tape& t) { return add(t, P(t, "a"), P(t, "c")); }},
      {"scale", [&](Tape& t) { return scale(t, P(t, "a"), -1.3); }},
      {"scale_by", [&](Tape& t) { return scale_by(t, P(t, "a"), P(t, "s")); }},
      {"gelu", [&](Tape& t) { return gelu(t, P(t, "a")); }},
      {"cos", [&](Tape& t) { return cos(t, P(t, "a")); }},
      {"rms_norm", [&](Tape& t) { return rms_norm(t, P(t, "a"), P(t, "g")); }},
      {"gather_rows", [&](Tape& t) { return gather_rows(t, P(t, "a"), {3, 0, 3, 1}); }},
      {"reshape", [&](Tape& t) { return reshape(t, P(t, "a"), 8, 3); }},
      {"slice_cols", [&](Tape& t) { return slice_cols(t, P(t, "a"), 2, 3); }},
      {"hconcat", [&](Tape& t) { return hconcat(t, P(t, "a"), P(t, "c")); }},
      {"vstack", [&](Tape& t) { return vstack(t, P(t, "a"), P(t, "c")); }},
      {"sum", [&](Tape& t) { return sum(t, gelu(t, P(t, "a"))); }},
      {"add_scalars",
       [&](Tape& t) { return add_scalars(t, {sum(t, cos(t, P(t, "a"))), sum(t, gelu(t, P(t, "c")))}); }},
      {"attention_time",
       [&](Tape& t) {
         return attention(t, P(t, "a"), P(t, "c"), matmul(t, P(t, "a"), P(t, "b")), 2,
                          AxialLayout{2, 2, AxialLayout::Axis::kTime});
       }},
      {"attention_column",
       [&](Tape& t) {
         return attention(t, P(t, "a"), P(t, "c"), matmul(t, P(t, "c"), P(t, "b")), 3,
                          AxialLayout{2, 2, AxialLayout::Axis::kColumn});
       }},
  };
  for (const auto& [name, op] : primitives) {
    out.push_back(run(name, ps, [&](Tape& t) { return probe(t, op(t), probe_seed); }));
  }

  {
    ParamStore fs;
    add_fourier_embedding(fs, "pos", 2, 8, 6, 1.0, rng);
    const Tensor coords = random_tensor(5, 2, rng);
    out.push_back(run("fourier_position_embedding", fs,
                      [&](Tape& t) { return probe(t, fourier_position_embedding(t, fs, "pos", coords), probe_seed); }));
  }
  for (const auto axis : {AxialLayout::Axis::kTime, AxialLayout::Axis::kColumn}) {
    ParamStore bs;
    add_transformer_block(bs, "blk", 6, 10, 0.5, rng);
    bs.add("x", 6, 6, Init::kNormal, true, rng, 1.0);
    const AxialLayout layout{3, 2, axis};
    out.push_back(run(axis == AxialLayout::Axis::kTime ? "transformer_block_time" : "transformer_block_column", bs,
                      [&](Tape& t) {
                        return probe(t, transformer_block(t, bs, "blk", t.param(bs.at("x")), 2, layout), probe_seed);
                      }));
  }
  {
    ParamStore us;
    us.add("x", 3, 4, Init::kNormal, true, rng, 1.0);
    us.add("w", 4, 6, Init::kNormal, true, rng, 1.0);
    us.add("b", 1, 6, Init::kNormal, false, rng, 1.0);
    out.push_back(run("upsample_tracks", us, [&](Tape& t) {
      return probe(t, upsample_tracks(t, t.param(us.at("x")), t.param(us.at("w")), t.param(us.at("b")), 3),
                   probe_seed);
    }));
  }
  {
    ParamStore ss;
    const int T = 7, D = 3;
    ss.add("q", T, D, Init::kNormal, true, rng, 1.0);
    ss.add("k", T, D, Init::kNormal, true, rng, 1.0);
    ss.add("b", T, 1, Init::kNormal, true, rng, 1.0);
    ss.add("e", T, 1, Init::kNormal, true, rng, 1.0);
    const std::vector<Interval> y = {{0, 2}, {2, 2}, {4, 6}};
    out.push_back(run("semicrf_nll", ss, [&](Tape& t) {
      return semicrf_nll(t, t.param(ss.at("q")), t.param(ss.at("k")), t.param(ss.at("b")), t.param(ss.at("e")), y);
    }));
  }
  {
    ParamStore as;
    as.add("rows", 3, kAttributeWidth, Init::kNormal, true, rng, 1.0);
    const std::vector<ObservedAttributes> targets = {
        {64, 0.2, -0.3, true, true}, {1, std::nullopt, 0.1, false, true}, {127, -0.45, std::nullopt, true, false}};
    out.push_back(run("attribute_nll", as, [&](Tape& t) { return attribute_nll(t, t.param(as.at("rows")), targets); }));
  }
  {
    const EncoderConfig cfg = tiny_encoder();
    ToyTranscriber m(cfg, substream_seed(seed, "gradcheck.init"));
    const int Tl = 3;
    const Tensor grid = random_tensor(Tl * cfg.grid_columns, cfg.grid_channels, rng);
    SegmentTargets y(2);
    y[0].push_back(Event{{0, 2}, 30, 0.2, -0.1, true, true});
    y[0].push_back(Event{{3, 5}, 90, std::nullopt, 0.3, false, true});
    y[1].push_back(Event{{1, 1}, 5, -0.4, 0.4, true, false});
    out.push_back(run("toy_model", m.params(), [&](Tape& t) { return m.loss(t, grid, Tl, y); }, 4, rng()));
  }
  return out;
}

}  // namespace semicrf::nn
