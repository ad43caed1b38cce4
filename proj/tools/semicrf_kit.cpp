// semicrf-kit: batch command line front end.
// Exit codes: 0 success, 1 invalid input, 2 internal or verification failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "semicrf/engine.hpp"
#include "semicrf/error.hpp"
#include "semicrf/event_model.hpp"
#include "semicrf/interval_scoring.hpp"
#include "semicrf/metrics.hpp"
#include "semicrf/nn/gradcheck_suite.hpp"
#include "semicrf/pipeline.hpp"
#include "semicrf/random.hpp"
#include "semicrf/scores_io.hpp"

namespace fs = std::filesystem;
using namespace semicrf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitInternal = 2;

// SEMICRF_KIT_LOG: quiet | info (default) | debug
enum class Level { kQuiet = 0, kInfo = 1, kDebug = 2 };

Level log_level() {
  const char* v = std::getenv("SEMICRF_KIT_LOG");
  if (!v) return Level::kInfo;
  const std::string s(v);
  if (s == "quiet" || s == "0") return Level::kQuiet;
  if (s == "debug" || s == "2") return Level::kDebug;
  return Level::kInfo;
}

void log(Level level, const std::string& msg) {
  static const Level current = log_level();
  if (static_cast<int>(level) <= static_cast<int>(current)) std::cout << "[semicrf-kit] " << msg << std::endl;
}

class VerificationFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  int start_frame = 0;
  int cases = 200;
  std::string data;
  std::vector<std::string> inputs;
};

FullConfig resolved_config(const Options& o) {
  FullConfig cfg = o.config.empty() ? FullConfig::defaults() : read_config(o.config);
  if (o.seed) {
    cfg.train.seed = *o.seed;
    cfg.synth.seed = *o.seed;
  }
  cfg.validate();
  return cfg;
}

std::uint64_t resolved_seed(const Options& o) { return o.seed.value_or(0); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

std::vector<std::string> type_names(int n) {
  std::vector<std::string> out;
  for (int j = 0; j < n; ++j) out.push_back(event_type_name(j));
  return out;
}

// --- subcommands ------------------------------------------------------------

int run_decode(const Options& o) {
  log(Level::kInfo, "seed " + std::to_string(resolved_seed(o)) + " (decode is deterministic)");
  const ScoresFile scores = read_scores(o.inputs.at(0));
  if (o.start_frame < 0 || o.start_frame >= scores.num_frames) {
    throw ValidationError("--start-frame " + std::to_string(o.start_frame) + " outside [0, " +
                          std::to_string(scores.num_frames - 1) + "]");
  }
  Recording rec;
  rec.num_frames = scores.num_frames;
  for (const auto& t : scores.tracks) {
    const DecodeResult d = map_decode(t.scores, o.start_frame);
    EventSet set{t.type, {}};
    for (const auto& iv : d.intervals) set.events.push_back(Event{iv});
    std::ostringstream msg;
    msg << "type " << t.type << ": " << d.intervals.size() << " events, total " << std::setprecision(17) << d.total;
    log(Level::kInfo, msg.str());
    rec.tracks.push_back(std::move(set));
  }
  write_events(o.out, rec);
  read_events(o.out);
  log(Level::kInfo, "wrote " + o.out);
  return kExitOk;
}

int run_eval(const Options& o) {
  log(Level::kInfo, "seed " + std::to_string(resolved_seed(o)) + " (eval is deterministic)");
  const Recording ref = read_events(o.inputs.at(0));
  const Recording est = read_events(o.inputs.at(1));
  const std::vector<RecordingMetrics> per = {evaluate_recording(ref, est, fs::path(o.inputs.at(0)).stem().string())};
  const auto report = metrics_report_json(per);
  const auto table = metrics_report_table(per);
  std::cout << table;
  if (!o.out.empty()) {
    const fs::path dir(o.out);
    write_text(dir / "metrics.json", report.dump(2) + "\n");
    write_text(dir / "metrics.txt", table);
    log(Level::kInfo, "wrote " + (dir / "metrics.json").string() + " and metrics.txt");
  } else {
    std::cout << report.dump(2) << "\n";
  }
  return kExitOk;
}

int run_synth(const Options& o) {
  const FullConfig cfg = resolved_config(o);
  log(Level::kInfo, "seed " + std::to_string(cfg.synth.seed));
  const SyntheticCorpus corpus = synth_generate(cfg.synth);
  write_corpus(o.out, corpus);
  for (const char* split : {"train", "val", "test"}) read_split(o.out, split);
  write_text(fs::path(o.out) / "config.json", cfg.to_json().dump(2) + "\n");
  log(Level::kInfo, "wrote " + std::to_string(corpus.train.size()) + "/" + std::to_string(corpus.val.size()) + "/" +
                        std::to_string(corpus.test.size()) + " recordings to " + o.out);
  return kExitOk;
}

int run_train(const Options& o) {
  const FullConfig cfg = resolved_config(o);
  log(Level::kInfo, "seed " + std::to_string(cfg.train.seed));
  SyntheticCorpus corpus;
  if (o.data.empty()) {
    corpus = synth_generate(cfg.synth);
  } else {
    corpus.train = read_split(o.data, "train");
    corpus.val = read_split(o.data, "val");
  }
  log(Level::kInfo, "training on " + std::to_string(corpus.train.size()) + " recordings, validating on " +
                        std::to_string(corpus.val.size()));
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
  nn::ToyTranscriber model(cfg.encoder, substream_seed(cfg.train.seed, "init"));
  std::ofstream log_file(dir / "train_log.jsonl");
  if (!log_file) throw ValidationError("cannot write " + (dir / "train_log.jsonl").string());
  const auto t0 = std::chrono::steady_clock::now();
  const int every = std::max(1, cfg.train.iterations / 50);
  const auto res = train(model, corpus.train, cfg, [&](const TrainingLogEntry& e) {
    log_file << e.to_json().dump() << "\n";
    if (e.iter % every == 0 || e.iter + 1 == cfg.train.iterations) {
      std::ostringstream msg;
      msg << "iter " << e.iter << " loss " << e.loss << " lr " << e.lr << " grad_norm " << e.grad_norm
          << (e.clipped ? " (clipped)" : "");
      log(Level::kInfo, msg.str());
    }
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  model.save(dir / "checkpoint.json");
  nn::ToyTranscriber::load(dir / "checkpoint.json");
  std::ostringstream done;
  done << "trained " << res.log.size() << " iterations in " << std::fixed << std::setprecision(1) << secs
       << " s, final loss " << std::setprecision(4) << res.final_loss;
  log(Level::kInfo, done.str());
  if (corpus.val.empty()) return kExitOk;
  NoteTolerances frame_tol;
  frame_tol.onset = cfg.synth.hop_seconds;
  const auto standard = evaluate_model(model, corpus.val, cfg.segments, NoteTolerances{});
  const auto strict = evaluate_model(model, corpus.val, cfg.segments, frame_tol);
  std::cout << std::fixed << std::setprecision(4) << "validation onset-F1 " << strict.average.note_onset.f1
            << " (+-1 frame), " << standard.average.note_onset.f1 << " (+-50 ms); activation-F1 "
            << standard.average.activation.f1 << "\n";
  write_text(dir / "val_metrics.json", metrics_report_json(standard.per_recording).dump(2) + "\n");
  return kExitOk;
}

int run_transcribe(const Options& o) {
  const FullConfig cfg = resolved_config(o);
  log(Level::kInfo, "seed " + std::to_string(resolved_seed(o)) + " (inference is deterministic)");
  nn::ToyTranscriber model = nn::ToyTranscriber::load(o.inputs.at(0));
  const FeatureGrid grid = read_grid(o.inputs.at(1));
  const Recording est = transcribe(model, grid, cfg.segments, type_names(model.config().num_event_types));
  write_events(o.out, est);
  read_events(o.out);
  std::size_t n = 0;
  for (const auto& t : est.tracks) n += t.events.size();
  log(Level::kInfo, "wrote " + std::to_string(n) + " events to " + o.out);
  return kExitOk;
}

int run_verify(const Options& o) {
  if (o.cases < 1) throw ValidationError("--cases must be >= 1");
  const std::uint64_t seed = resolved_seed(o);
  log(Level::kInfo, "seed " + std::to_string(seed));
  const VerifierReport r = verify_expressiveness(seed, o.cases);
  std::cout << r.summary_line() << "\n";
  if (!o.out.empty()) write_text(o.out, r.to_json());
  if (r.passed != r.cases) {
    std::ostringstream msg;
    msg << "failing cases:";
    for (const auto& f : r.failures) msg << " seed=" << f.seed << " (T=" << f.num_frames << ", M=" << f.num_intervals
                                          << ", " << f.stage << ")";
    throw VerificationFailed(msg.str());
  }
  return kExitOk;
}

int run_gradcheck(const Options& o) {
  const std::uint64_t seed = resolved_seed(o);
  log(Level::kInfo, "seed " + std::to_string(seed));
  double worst = 0.0;
  nlohmann::json report = nlohmann::json::array();
  for (const auto& e : nn::run_gradcheck_suite(seed)) {
    worst = std::max(worst, e.max_relative_error);
    std::cout << std::left << std::setw(28) << e.name << std::scientific << std::setprecision(3)
              << e.max_relative_error << "  (" << e.checked << " entries)\n";
    report.push_back({{"name", e.name}, {"max_relative_error", e.max_relative_error}, {"checked", e.checked}});
  }
  std::cout << "max relative error " << std::scientific << std::setprecision(3) << worst << "\n";
  if (!o.out.empty()) write_text(o.out, report.dump(2) + "\n");
  if (!(worst <= 1e-4)) throw VerificationFailed("gradient check above 1e-4");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semicrf-kit: semi-CRF event transcription toolkit"};
  app.require_subcommand(1);
  Options o;

  auto seed_opt = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { o.seed = s; },
                                            "Master seed (overrides config seeds)");
  };
  auto config_opt = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config with encoder/train/segments/synth sections")
        ->check(CLI::ExistingFile);
  };

  auto* decode = app.add_subcommand("decode", "MAP-decode a scores file into an events file");
  decode->add_option("scores", o.inputs, "scores JSON")->required()->expected(1);
  decode->add_option("--out", o.out, "events JSON to write")->required();
  decode->add_option("--start-frame", o.start_frame, "first frame to decode");
  seed_opt(decode);

  auto* eval = app.add_subcommand("eval", "Score an estimated events file against a reference");
  eval->add_option("files", o.inputs, "reference and estimate events JSON")->required()->expected(2);
  eval->add_option("--out", o.out, "directory for metrics.json and metrics.txt");
  seed_opt(eval);

  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic corpus");
  synth->add_option("--out", o.out, "output directory")->required();
  config_opt(synth);
  seed_opt(synth);

  auto* trn = app.add_subcommand("train", "Train the toy transcriber");
  trn->add_option("--out", o.out, "output directory (checkpoint, log, config)")->required();
  trn->add_option("--data", o.data, "corpus directory from synth-data (default: generate from config)");
  config_opt(trn);
  seed_opt(trn);

  auto* trans = app.add_subcommand("transcribe", "Transcribe a feature grid with a checkpoint");
  trans->add_option("files", o.inputs, "checkpoint and grid JSON")->required()->expected(2);
  trans->add_option("--out", o.out, "events JSON to write")->required();
  config_opt(trans);
  seed_opt(trans);

  auto* verify = app.add_subcommand("verify-theorem", "Constructive check of the low-rank expressiveness result");
  verify->add_option("--cases", o.cases, "number of random cases");
  verify->add_option("--out", o.out, "JSON report path");
  seed_opt(verify);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable component");
  grad->add_option("--out", o.out, "JSON report path");
  seed_opt(grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*decode) return run_decode(o);
    if (*eval) return run_eval(o);
    if (*synth) return run_synth(o);
    if (*trn) return run_train(o);
    if (*trans) return run_transcribe(o);
    if (*verify) return run_verify(o);
    if (*grad) return run_gradcheck(o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const VerificationFailed& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
