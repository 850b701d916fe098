#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dtts/complexity.hpp"
#include "dtts/gradcheck_suite.hpp"
#include "dtts/model.hpp"
#include "dtts/serialize.hpp"
#include "dtts/training.hpp"

namespace {

using nlohmann::json;

struct RunConfig {
  dtts::ModelConfig model;
  dtts::TrainConfig train;
  dtts::SymbolTable symbols;
};

dtts::ModelConfig preset(const std::string& name) {
  if (name == "world") return dtts::ModelConfig::world();
  if (name == "lpcnet") return dtts::ModelConfig::lpcnet();
  if (name == "tiny") return dtts::ModelConfig::tiny();
  throw std::runtime_error("unknown preset '" + name + "' (world|lpcnet|tiny)");
}

// Config file layout: {"preset": "world", "model": {...overrides...},
// "train": {...overrides...}, "symbols": {"ah": 0, ...}}. Overrides are
// deep-merged over the preset / defaults, so partial configs are fine.
RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config '" + path + "': " + e.what());
  }
  RunConfig rc;
  rc.model = preset(j.value("preset", std::string("world")));
  try {
    if (j.contains("model")) {
      json base = rc.model;
      base.merge_patch(j.at("model"));
      rc.model = base.get<dtts::ModelConfig>();
    }
    if (j.contains("train")) {
      json base = rc.train;
      base.merge_patch(j.at("train"));
      rc.train = base.get<dtts::TrainConfig>();
    }
    if (j.contains("symbols")) {
      for (const auto& [sym, id] : j.at("symbols").items()) {
        rc.symbols.to_id[sym] = id.get<std::int64_t>();
      }
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("config '" + path + "': " + e.what());
  }
  rc.model.validate();
  rc.train.validate();
  return rc;
}

// --seed wins; else the DEVICETTS_SEED environment variable; else `fallback`.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("DEVICETTS_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw std::runtime_error(std::string("DEVICETTS_SEED is not an integer: '") + env + "'");
    }
  }
  return fallback;
}

std::vector<dtts::TrainingExample> load_dataset(const std::string& spec, const RunConfig& rc,
                                                std::uint64_t seed) {
  if (spec.rfind("toy:", 0) == 0) {
    const std::int64_t n = std::stoll(spec.substr(4));
    if (n < 1) throw std::runtime_error("toy corpus size must be >= 1");
    return dtts::make_toy_corpus(seed, n, rc.model.vocab_size, rc.model.feature_dim);
  }
  // Manifest: one `phoneme_file feature_file` pair per line.
  std::ifstream in(spec);
  if (!in) throw std::runtime_error("cannot open dataset manifest '" + spec + "'");
  std::vector<dtts::TrainingExample> out;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string ph_path, ft_path;
    if (!(ls >> ph_path)) continue;
    if (!(ls >> ft_path)) {
      throw std::runtime_error("manifest '" + spec + "' line " + std::to_string(lineno) +
                               ": expected `phoneme_file feature_file`");
    }
    dtts::TrainingExample ex;
    ex.phonemes = dtts::read_phonemes(ph_path, rc.symbols);
    ex.target = dtts::read_features(ft_path).frames;
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw std::runtime_error("manifest '" + spec + "' lists no examples");
  return out;
}

dtts::PhonemeSequence load_utterance(const std::string& path, const dtts::SymbolTable& symbols,
                                     bool use_gold) {
  dtts::PhonemeSequence ph = dtts::read_phonemes(path, symbols);
  if (use_gold && !ph.has_durations()) {
    throw std::runtime_error("'" + path + "' has no durations but gold durations were requested");
  }
  if (!use_gold) ph.gold_durations.clear();  // let the predictor set the length
  return ph;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              std::optional<std::int64_t> steps, std::optional<std::uint64_t> seed_flag,
              const std::string& curve_path) {
  RunConfig rc = load_run_config(config_path);
  rc.train.seed = resolve_seed(seed_flag, rc.train.seed);
  if (steps) rc.train.max_steps = *steps;

  dtts::Model<float> model(rc.model, rc.train.seed);
  auto dataset = load_dataset(data, rc, rc.train.seed);

  std::ofstream curve;
  std::ostream* curve_out = nullptr;
  if (!curve_path.empty()) {
    curve.open(curve_path);
    if (!curve) throw std::runtime_error("cannot open curve file '" + curve_path + "'");
    curve_out = &curve;
  }
  std::cerr << "training: " << dataset.size() << " utterances, " << rc.train.max_steps
            << " steps, batch " << rc.train.batch_size << "\n";
  auto history = dtts::train(model, dataset, rc.train, curve_out);
  dtts::save_model(model, out);

  const auto& last = history.back();
  std::printf("train steps=%lld final_total=%.6f final_refined=%.6f final_duration=%.6f out=%s\n",
              static_cast<long long>(last.step), last.total, last.refined, last.duration,
              out.c_str());
  return 0;
}

int cmd_synth(const std::string& model_path, const std::string& in_path,
              const std::string& out_path, bool use_gold, const std::string& config_path) {
  dtts::SymbolTable symbols;
  if (!config_path.empty()) symbols = load_run_config(config_path).symbols;
  dtts::Model<float> model = dtts::load_model(model_path);
  dtts::PhonemeSequence ph = load_utterance(in_path, symbols, use_gold);

  dtts::FeatureMatrix fm;
  fm.frames = model.synthesize(ph);
  fm.profile = model.config().feature_profile();
  dtts::write_features(fm, out_path);
  std::printf("synth frames=%lld dim=%lld out=%s\n", static_cast<long long>(fm.frames.rows()),
              static_cast<long long>(fm.frames.cols()), out_path.c_str());
  return 0;
}

int cmd_count(const std::string& config_path, const std::string& profile) {
  dtts::ModelConfig cfg = dtts::ModelConfig::world();
  if (!config_path.empty()) cfg = load_run_config(config_path).model;
  if (!profile.empty()) {
    // Overlay the vocoder profile's frame geometry on the loaded architecture.
    const dtts::ModelConfig p = preset(profile);
    cfg.feature_dim = p.feature_dim;
    cfg.frames_per_step = p.frames_per_step;
    cfg.frame_rate_per_s = p.frame_rate_per_s;
  }
  cfg.validate();
  const auto prof = dtts::CountProfile::from_config(cfg);
  const dtts::FlopReport rep = dtts::analyze(cfg, prof);

  dtts::ModelConfig twin = cfg;
  twin.variant = cfg.variant == dtts::DecoderVariant::ar ? dtts::DecoderVariant::nonar
                                                         : dtts::DecoderVariant::ar;
  const dtts::FlopReport twin_rep = dtts::analyze(twin, prof);
  const dtts::FlopReport& ar = cfg.variant == dtts::DecoderVariant::ar ? rep : twin_rep;
  const dtts::FlopReport& na = cfg.variant == dtts::DecoderVariant::ar ? twin_rep : rep;

  std::cout << dtts::render_kv(rep);
  std::cerr << dtts::render_table(ar, &na);
  return 0;
}

int cmd_bench(const std::string& model_path, const std::string& in_path, std::int64_t chunk,
              const std::string& out_path, bool use_gold, const std::string& config_path) {
  dtts::SymbolTable symbols;
  if (!config_path.empty()) symbols = load_run_config(config_path).symbols;
  dtts::Model<float> model = dtts::load_model(model_path);
  dtts::PhonemeSequence ph = load_utterance(in_path, symbols, use_gold);

  std::vector<dtts::Tensor<float>> chunks;
  dtts::OpCounts first, rest;
  std::int64_t ar_steps_first = 0;
  std::optional<dtts::StreamingSynthesizer<float>> stream;
  {
    dtts::CountScope scope;  // front end + everything needed for the first chunk
    stream.emplace(model, ph, chunk);
    if (auto c = stream->next()) chunks.push_back(std::move(*c));
    first = scope.counts();
    ar_steps_first = stream->ar_steps_done();
  }
  {
    dtts::CountScope scope;
    while (auto c = stream->next()) chunks.push_back(std::move(*c));
    rest = scope.counts();
  }

  std::int64_t frames = 0;
  for (const auto& c : chunks) frames += c.rows();
  if (frames != stream->total_frames()) {
    throw std::runtime_error("streaming emitted " + std::to_string(frames) + " frames, expected " +
                             std::to_string(stream->total_frames()));
  }
  if (!out_path.empty()) {
    dtts::FeatureMatrix fm;
    fm.frames = dtts::Tensor<float>({frames, model.config().feature_dim});
    std::int64_t row = 0;
    for (const auto& c : chunks) {
      for (std::int64_t t = 0; t < c.rows(); ++t, ++row) {
        for (std::int64_t j = 0; j < c.cols(); ++j) fm.frames.at(row, j) = c.at(t, j);
      }
    }
    fm.profile = model.config().feature_profile();
    dtts::write_features(fm, out_path);
  }
  std::printf(
      "bench frames=%lld chunk=%lld chunks=%zu ar_steps_first_chunk=%lld "
      "macs_first_chunk=%llu gflops_first_chunk=%.6f macs_total=%llu flops_total=%llu\n",
      static_cast<long long>(frames), static_cast<long long>(chunk), chunks.size(),
      static_cast<long long>(ar_steps_first), static_cast<unsigned long long>(first.macs),
      static_cast<double>(first.flops) / 1e9,
      static_cast<unsigned long long>(first.macs + rest.macs),
      static_cast<unsigned long long>(first.flops + rest.flops));
  return 0;
}

int cmd_gradcheck(const std::string& config_arg, std::optional<std::uint64_t> seed_flag) {
  dtts::ModelConfig cfg =
      config_arg == "tiny" || config_arg == "world" || config_arg == "lpcnet"
          ? preset(config_arg)
          : load_run_config(config_arg).model;
  const std::uint64_t seed = resolve_seed(seed_flag, 7);
  const auto results = dtts::run_gradcheck_suite(cfg, seed);
  int failures = 0;
  for (const auto& r : results) {
    std::printf("gradcheck %-16s max_rel_err=%.3e tol=%.0e %s\n", r.name.c_str(), r.max_rel_err,
                r.tol, r.pass ? "PASS" : "FAIL");
    if (!r.pass) ++failures;
  }
  std::printf("gradcheck checked=%zu failed=%d\n", results.size(), failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeviceTTS acoustic model: train, synthesize, count, bench, gradcheck"};
  app.require_subcommand(1);

  std::string config_path, data, out_path, model_path, in_path, curve_path, profile;
  std::string gc_config = "tiny";
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> steps;
  std::int64_t chunk = 1;
  bool use_gold = false;

  auto* train = app.add_subcommand("train", "teacher-forced training on a corpus");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--data", data, "`toy:N` or a manifest of phoneme/feature file pairs")
      ->required();
  train->add_option("--out", out_path, "output model file")->required();
  train->add_option("--steps", steps, "override max_steps");
  train->add_option("--seed", seed, "RNG seed (else $DEVICETTS_SEED, else config)");
  train->add_option("--curve", curve_path, "write per-step loss CSV here");

  auto* synth = app.add_subcommand("synth", "synthesize features for one utterance");
  synth->add_option("--model", model_path, "trained model file")->required();
  synth->add_option("--in", in_path, "utterance file (symbols, optionally `sym:frames`)")
      ->required();
  synth->add_option("--out", out_path, "output feature file")->required();
  synth->add_flag("--use-gold-durations", use_gold, "use the utterance's durations");
  synth->add_option("--config", config_path, "run config JSON (for the symbol table)");

  auto* count = app.add_subcommand("count", "analytic parameter and FLOP accounting");
  count->add_option("--config", config_path, "run config JSON");
  count->add_option("--profile", profile, "overlay a vocoder profile: world|lpcnet")
      ->check(CLI::IsMember({"world", "lpcnet"}));

  auto* bench = app.add_subcommand("bench", "streaming synthesis with cost instrumentation");
  bench->add_option("--model", model_path, "trained model file")->required();
  bench->add_option("--in", in_path, "utterance file")->required();
  bench->add_option("--chunk", chunk, "refined frames per emitted chunk");
  bench->add_option("--out", out_path, "also write the streamed features here");
  bench->add_flag("--use-gold-durations", use_gold, "use the utterance's durations");
  bench->add_option("--config", config_path, "run config JSON (for the symbol table)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--config", gc_config, "tiny|world|lpcnet or a run config JSON");
  gradcheck->add_option("--seed", seed, "RNG seed (else $DEVICETTS_SEED)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, data, out_path, steps, seed, curve_path);
    if (synth->parsed()) return cmd_synth(model_path, in_path, out_path, use_gold, config_path);
    if (count->parsed()) return cmd_count(config_path, profile);
    if (bench->parsed())
      return cmd_bench(model_path, in_path, chunk, out_path, use_gold, config_path);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_config, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
