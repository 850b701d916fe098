#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dtts/dfsmn.hpp"
#include "dtts/layers.hpp"

namespace dtts {

enum class DecoderVariant { ar, nonar };

enum class FeatureProfile { world67, lpcnet23, custom };

inline std::string to_string(FeatureProfile p) {
  switch (p) {
    case FeatureProfile::world67: return "world67";
    case FeatureProfile::lpcnet23: return "lpcnet23";
    case FeatureProfile::custom: return "custom";
  }
  return "custom";
}

// Architecture + accounting knobs. Every parameter shape is a pure function
// of this struct.
struct ModelConfig {
  std::int64_t vocab_size = 100;
  std::int64_t embed_dim = 128;

  DfsmnStackConfig encoder{4, 256, 128, 20, 20};

  DfsmnStackConfig duration{3, 256, 128, 20, 20};
  std::int64_t duration_blstm_hidden = 128;  // per direction

  std::int64_t prenet_width = 128;
  std::int64_t decoder_lstm_hidden = 128;
  DfsmnStackConfig refine{2, 256, 128, 10, 10};
  DfsmnStackConfig nonar{2, 256, 128, 20, 60};

  std::int64_t feature_dim = 67;    // WORLD 67 / LPCNet 23
  std::int64_t frames_per_step = 8; // r: WORLD 8 / LPCNet 3
  DecoderVariant variant = DecoderVariant::ar;
  bool refine_residual = false;     // refine adds a correction to coarse instead of repredicting

  // accounting profile
  std::int64_t frame_rate_per_s = 200;
  std::int64_t phoneme_rate_per_s = 12;

  FeatureProfile feature_profile() const {
    if (feature_dim == 67) return FeatureProfile::world67;
    if (feature_dim == 23) return FeatureProfile::lpcnet23;
    return FeatureProfile::custom;
  }

  void validate() const {
    auto positive = [](std::int64_t v, const char* what) {
      if (v < 1) throw std::invalid_argument(std::string("config: ") + what + " must be >= 1");
    };
    positive(vocab_size, "vocab_size");
    positive(embed_dim, "embed_dim");
    positive(feature_dim, "feature_dim");
    positive(frames_per_step, "frames_per_step");
    positive(frame_rate_per_s, "frame_rate_per_s");
    positive(phoneme_rate_per_s, "phoneme_rate_per_s");
    positive(duration_blstm_hidden, "duration_blstm_hidden");
    positive(prenet_width, "prenet_width");
    positive(decoder_lstm_hidden, "decoder_lstm_hidden");
    for (const auto* s : {&encoder, &duration, &refine, &nonar}) {
      positive(s->blocks, "stack blocks");
      positive(s->p1, "stack p1");
      positive(s->p2, "stack p2");
      if (s->n1 < 0 || s->n2 < 0) throw std::invalid_argument("config: negative filter order");
    }
  }

  // WORLD-profile defaults mirroring the published hyperparameter table.
  static ModelConfig world() { return ModelConfig{}; }

  static ModelConfig lpcnet() {
    ModelConfig c;
    c.feature_dim = 23;
    c.frames_per_step = 3;
    c.frame_rate_per_s = 100;
    return c;
  }

  // Desk-scale config for gradient checks and exact count reconciliation.
  static ModelConfig tiny() {
    ModelConfig c;
    c.vocab_size = 12;
    c.embed_dim = 8;
    c.encoder = {2, 8, 8, 2, 2};
    c.duration = {2, 8, 8, 2, 2};
    c.duration_blstm_hidden = 8;
    c.prenet_width = 8;
    c.decoder_lstm_hidden = 8;
    c.refine = {2, 8, 8, 2, 2};
    c.nonar = {2, 8, 8, 2, 6};
    c.feature_dim = 4;
    c.frames_per_step = 2;
    c.frame_rate_per_s = 10;
    c.phoneme_rate_per_s = 3;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const DfsmnStackConfig& s) {
  j = {{"blocks", s.blocks}, {"p1", s.p1}, {"p2", s.p2}, {"n1", s.n1}, {"n2", s.n2}};
}
inline void from_json(const nlohmann::json& j, DfsmnStackConfig& s) {
  j.at("blocks").get_to(s.blocks);
  j.at("p1").get_to(s.p1);
  j.at("p2").get_to(s.p2);
  j.at("n1").get_to(s.n1);
  j.at("n2").get_to(s.n2);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size},
       {"embed_dim", c.embed_dim},
       {"encoder", c.encoder},
       {"duration", c.duration},
       {"duration_blstm_hidden", c.duration_blstm_hidden},
       {"prenet_width", c.prenet_width},
       {"decoder_lstm_hidden", c.decoder_lstm_hidden},
       {"refine", c.refine},
       {"nonar", c.nonar},
       {"feature_dim", c.feature_dim},
       {"frames_per_step", c.frames_per_step},
       {"variant", c.variant == DecoderVariant::ar ? "ar" : "nonar"},
       {"refine_residual", c.refine_residual},
       {"frame_rate_per_s", c.frame_rate_per_s},
       {"phoneme_rate_per_s", c.phoneme_rate_per_s}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("encoder").get_to(c.encoder);
  j.at("duration").get_to(c.duration);
  j.at("duration_blstm_hidden").get_to(c.duration_blstm_hidden);
  j.at("prenet_width").get_to(c.prenet_width);
  j.at("decoder_lstm_hidden").get_to(c.decoder_lstm_hidden);
  j.at("refine").get_to(c.refine);
  j.at("nonar").get_to(c.nonar);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("frames_per_step").get_to(c.frames_per_step);
  const std::string v = j.at("variant").get<std::string>();
  if (v == "ar") c.variant = DecoderVariant::ar;
  else if (v == "nonar") c.variant = DecoderVariant::nonar;
  else throw std::invalid_argument("config: unknown decoder variant '" + v + "'");
  j.at("refine_residual").get_to(c.refine_residual);
  j.at("frame_rate_per_s").get_to(c.frame_rate_per_s);
  j.at("phoneme_rate_per_s").get_to(c.phoneme_rate_per_s);
}

struct PhonemeSequence {
  std::vector<std::int64_t> ids;
  std::vector<std::int64_t> gold_durations;  // empty when absent; frames, all >= 1

  bool has_durations() const { return !gold_durations.empty(); }
};

struct FeatureMatrix {
  Tensor<float> frames;  // [T, Dout]
  FeatureProfile profile = FeatureProfile::custom;
};

// Round half up, then clamp to at least one frame per symbol.
inline std::vector<std::int64_t> regulate_durations(const std::vector<double>& pred) {
  std::vector<std::int64_t> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out[i] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(pred[i] + 0.5)));
  }
  return out;
}

template <typename T>
class Model {
 public:
  using Var = typename Tape<T>::Var;
  using i64 = std::int64_t;

  struct ForwardGraph {
    Var enc;       // [Tp, embed]
    Var pred_dur;  // [Tp, 1]
    Var coarse;    // AR: [r*ceil(T/r), Dout]; non-AR: [T, Dout]
    Var refined;   // same shape as coarse
    std::vector<i64> durations;
    i64 t_frames = 0;
  };

  Model(ModelConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        tape_(std::make_unique<Tape<T>>()),
        rng_(static_cast<std::uint32_t>(seed)) {
    cfg_.validate();
    ParamRegistry<T> reg(*tape_, rng_, param_names_);
    embedding_ = make_embedding(reg, "embedding", cfg_.vocab_size, cfg_.embed_dim);
    encoder_ = make_dfsmn_stack(reg, "encoder", cfg_.embed_dim, cfg_.encoder);
    dur_stack_ = make_dfsmn_stack(reg, "duration.stack", cfg_.encoder.p2, cfg_.duration);
    dur_blstm_ = make_bilstm(reg, "duration.blstm", cfg_.duration.p2, cfg_.duration_blstm_hidden);
    dur_head_ = make_affine(reg, "duration.head", 2 * cfg_.duration_blstm_hidden, 1);
    if (cfg_.variant == DecoderVariant::ar) {
      prenet_ = make_prenet(reg, "decoder.prenet", cfg_.feature_dim, cfg_.prenet_width);
      dec_lstm0_ = make_lstm(reg, "decoder.lstm0", cfg_.prenet_width + cfg_.encoder.p2,
                             cfg_.decoder_lstm_hidden);
      dec_lstm1_ = make_lstm(reg, "decoder.lstm1", cfg_.decoder_lstm_hidden, cfg_.decoder_lstm_hidden);
      dec_head_ = make_affine(reg, "decoder.head", cfg_.decoder_lstm_hidden,
                              cfg_.frames_per_step * cfg_.feature_dim);
    } else {
      nonar_stack_ = make_dfsmn_stack(reg, "nonar.stack", cfg_.encoder.p2, cfg_.nonar);
      nonar_head_ = make_affine(reg, "nonar.head", cfg_.nonar.p2, cfg_.feature_dim);
    }
    refine_stack_ = make_dfsmn_stack(reg, "refine.stack", cfg_.feature_dim, cfg_.refine);
    refine_head_ = make_affine(reg, "refine.head", cfg_.refine.p2, cfg_.feature_dim);
    n_param_nodes_ = tape_->size();
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  Tape<T>& tape() { return *tape_; }
  const std::vector<std::pair<std::string, Var>>& params() const { return param_names_; }
  std::size_t param_node_count() const { return n_param_nodes_; }

  // Drops every graph node built since construction; parameters survive.
  void reset_activations() { tape_->truncate(n_param_nodes_); }

  Var encode(const std::vector<i64>& ids) {
    if (ids.empty()) throw std::invalid_argument("encode: empty phoneme sequence");
    return dfsmn_stack(*tape_, embed(*tape_, embedding_, ids), encoder_);
  }

  // One nonnegative real per phoneme, shape [Tp, 1].
  Var predict_durations(Var enc) {
    auto h = dfsmn_stack(*tape_, enc, dur_stack_);
    auto b = bilstm(*tape_, h, dur_blstm_);
    return affine(*tape_, b, dur_head_, Act::relu);
  }

  std::vector<i64> regulate(Var pred_dur) const {
    const Tensor<T>& p = tape_->val(pred_dur);
    std::vector<double> v(p.data.begin(), p.data.end());
    return regulate_durations(v);
  }

  // Repeat encoder row i durations[i] times.
  Var length_regulate(Var enc, const std::vector<i64>& durations) {
    const i64 tp = tape_->val(enc).rows();
    if (static_cast<i64>(durations.size()) != tp) {
      throw std::invalid_argument("length_regulate: " + std::to_string(durations.size()) +
                                  " durations for " + std::to_string(tp) + " phonemes");
    }
    std::vector<i64> idx;
    for (i64 i = 0; i < tp; ++i) {
      if (durations[static_cast<std::size_t>(i)] < 1) {
        throw std::invalid_argument("length_regulate: duration < 1 at phoneme " + std::to_string(i));
      }
      idx.insert(idx.end(), static_cast<std::size_t>(durations[static_cast<std::size_t>(i)]), i);
    }
    return tape_->gather_rows(enc, idx);
  }

  // Multi-frame autoregressive coarse decoder. Emits ceil(T/r) groups of r
  // frames; the caller trims the padded tail. teacher_frames, when given,
  // replaces the model's own previous frame (teacher forcing) and must have
  // at least T rows.
  Var ar_decode(Var lr, i64 t_frames, const Tensor<T>* teacher_frames) {
    if (cfg_.variant != DecoderVariant::ar) throw std::logic_error("ar_decode: model is non-AR");
    const i64 r = cfg_.frames_per_step;
    const i64 dout = cfg_.feature_dim;
    const i64 steps = (t_frames + r - 1) / r;
    if (teacher_frames != nullptr && teacher_frames->rows() < t_frames) {
      throw std::invalid_argument("ar_decode: teacher has " + std::to_string(teacher_frames->rows()) +
                                  " rows, need " + std::to_string(t_frames));
    }
    LstmState<T> s0 = lstm_zero_state(*tape_, dec_lstm0_.hidden);
    LstmState<T> s1 = lstm_zero_state(*tape_, dec_lstm1_.hidden);
    std::vector<Var> groups;
    groups.reserve(static_cast<std::size_t>(steps));
    for (i64 s = 0; s < steps; ++s) {
      Var prev;
      if (s == 0) {
        prev = tape_->leaf(zeros<T>({1, dout}));  // go-frame
      } else if (teacher_frames != nullptr) {
        Tensor<T> row({1, dout});
        for (i64 j = 0; j < dout; ++j) row.at(0, j) = teacher_frames->at(s * r - 1, j);
        prev = tape_->leaf(std::move(row));
      } else {
        prev = tape_->slice_rows(groups.back(), r - 1, r);
      }
      auto lr_frame = tape_->slice_rows(lr, std::min(s * r, t_frames - 1), std::min(s * r, t_frames - 1) + 1);
      auto x = tape_->concat_cols(prenet(*tape_, prev, prenet_), lr_frame);
      s0 = lstm_step(*tape_, x, s0, dec_lstm0_);
      s1 = lstm_step(*tape_, s0.h, s1, dec_lstm1_);
      groups.push_back(tape_->reshape(affine(*tape_, s1.h, dec_head_), {r, dout}));
    }
    return tape_->concat_rows(groups);
  }

  // Single-frame feedforward replacement for the AR network.
  Var nonar_decode(Var lr) {
    if (cfg_.variant != DecoderVariant::nonar) throw std::logic_error("nonar_decode: model is AR");
    return affine(*tape_, dfsmn_stack(*tape_, lr, nonar_stack_), nonar_head_);
  }

  // Single-frame refinement over coarse frames.
  Var refine(Var coarse) {
    auto y = affine(*tape_, dfsmn_stack(*tape_, coarse, refine_stack_), refine_head_);
    return cfg_.refine_residual ? tape_->add(coarse, y) : y;
  }

  i64 refine_lookahead() const { return lookahead_frames(refine_stack_); }
  i64 encoder_lookahead() const { return lookahead_frames(encoder_); }

  ForwardGraph forward(const PhonemeSequence& ph, const Tensor<T>* teacher_frames, bool use_gold) {
    ForwardGraph g;
    g.enc = encode(ph.ids);
    g.pred_dur = predict_durations(g.enc);
    if (use_gold) {
      if (!ph.has_durations()) {
        throw std::invalid_argument("forward: gold durations requested but not supplied");
      }
      g.durations = ph.gold_durations;
    } else {
      g.durations = regulate(g.pred_dur);
    }
    g.t_frames = std::accumulate(g.durations.begin(), g.durations.end(), i64(0));
    auto lr = length_regulate(g.enc, g.durations);
    g.coarse = cfg_.variant == DecoderVariant::ar ? ar_decode(lr, g.t_frames, teacher_frames)
                                                  : nonar_decode(lr);
    g.refined = refine(g.coarse);
    return g;
  }

  // Full free-running pipeline; returns exactly sum(durations) frames.
  Tensor<T> synthesize(const PhonemeSequence& ph) {
    reset_activations();
    ForwardGraph g = forward(ph, nullptr, ph.has_durations());
    const Tensor<T>& ref = tape_->val(g.refined);
    Tensor<T> out({g.t_frames, cfg_.feature_dim});
    for (i64 t = 0; t < g.t_frames; ++t) {
      for (i64 j = 0; j < cfg_.feature_dim; ++j) out.at(t, j) = ref.at(t, j);
    }
    reset_activations();
    return out;
  }

  // accessors used by the trainer and streaming driver
  const PrenetLayer<T>& prenet_params() const { return prenet_; }
  const LstmLayer<T>& dec_lstm0() const { return dec_lstm0_; }
  const LstmLayer<T>& dec_lstm1() const { return dec_lstm1_; }
  const AffineLayer<T>& dec_head() const { return dec_head_; }

 private:
  ModelConfig cfg_;
  // Heap tape: op closures capture the tape's address, so it must stay put
  // when the model moves.
  std::unique_ptr<Tape<T>> tape_;
  std::mt19937 rng_;
  std::vector<std::pair<std::string, Var>> param_names_;
  std::size_t n_param_nodes_ = 0;

  EmbeddingLayer<T> embedding_;
  DfsmnStack<T> encoder_;
  DfsmnStack<T> dur_stack_;
  BilstmLayer<T> dur_blstm_;
  AffineLayer<T> dur_head_;
  PrenetLayer<T> prenet_;
  LstmLayer<T> dec_lstm0_;
  LstmLayer<T> dec_lstm1_;
  AffineLayer<T> dec_head_;
  DfsmnStack<T> nonar_stack_;
  AffineLayer<T> nonar_head_;
  DfsmnStack<T> refine_stack_;
  AffineLayer<T> refine_head_;
};

// Chunked inference for the AR variant. Coarse groups are produced on demand;
// a refined frame is emitted only once every coarse frame inside its
// look-ahead window exists, so concatenated chunks are bit-identical to the
// batch pipeline. The first frame therefore requires ceil((1+L)/r) AR steps,
// L being the refine stack's total look-ahead.
template <typename T>
class StreamingSynthesizer {
 public:
  using Var = typename Tape<T>::Var;
  using i64 = std::int64_t;

  StreamingSynthesizer(Model<T>& model, const PhonemeSequence& ph, i64 chunk_frames)
      : model_(model), chunk_(chunk_frames) {
    if (chunk_frames < 1) throw std::invalid_argument("streaming: chunk_frames must be >= 1");
    if (model.config().variant != DecoderVariant::ar) {
      throw std::invalid_argument("streaming: only the AR decoder variant streams");
    }
    model_.reset_activations();
    auto& tape = model_.tape();
    auto enc = model_.encode(ph.ids);
    auto pred = model_.predict_durations(enc);
    std::vector<i64> durs = ph.has_durations() ? ph.gold_durations : model_.regulate(pred);
    lr_ = model_.length_regulate(enc, durs);
    t_frames_ = std::accumulate(durs.begin(), durs.end(), i64(0));
    const i64 r = model_.config().frames_per_step;
    total_steps_ = (t_frames_ + r - 1) / r;
    t_padded_ = total_steps_ * r;
    lookahead_ = model_.refine_lookahead();
    s0_ = lstm_zero_state(tape, model_.dec_lstm0().hidden);
    s1_ = lstm_zero_state(tape, model_.dec_lstm1().hidden);
  }

  i64 total_frames() const { return t_frames_; }
  i64 frames_emitted() const { return emitted_; }
  i64 ar_steps_done() const { return steps_done_; }

  // Next refined chunk ([<=chunk_frames, Dout]); nullopt when exhausted.
  std::optional<Tensor<T>> next() {
    if (emitted_ >= t_frames_) return std::nullopt;
    auto& tape = model_.tape();
    const i64 r = model_.config().frames_per_step;
    const i64 dout = model_.config().feature_dim;
    const i64 e1 = std::min(emitted_ + chunk_, t_frames_);
    const i64 window = std::min(e1 + lookahead_, t_padded_);  // coarse frames refine must see
    while (steps_done_ * r < window) run_ar_step();
    auto coarse_prefix = tape.concat_rows(groups_);
    if (tape.val(coarse_prefix).rows() > window) {
      coarse_prefix = tape.slice_rows(coarse_prefix, 0, window);
    }
    auto refined = model_.refine(coarse_prefix);
    const Tensor<T>& rv = tape.val(refined);
    Tensor<T> out({e1 - emitted_, dout});
    for (i64 t = emitted_; t < e1; ++t) {
      for (i64 j = 0; j < dout; ++j) out.at(t - emitted_, j) = rv.at(t, j);
    }
    emitted_ = e1;
    return out;
  }

 private:
  void run_ar_step() {
    auto& tape = model_.tape();
    const i64 r = model_.config().frames_per_step;
    const i64 dout = model_.config().feature_dim;
    const i64 s = steps_done_;
    Var prev = s == 0 ? tape.leaf(zeros<T>({1, dout})) : tape.slice_rows(groups_.back(), r - 1, r);
    const i64 a = std::min(s * r, t_frames_ - 1);
    auto x = tape.concat_cols(prenet(tape, prev, model_.prenet_params()), tape.slice_rows(lr_, a, a + 1));
    s0_ = lstm_step(tape, x, s0_, model_.dec_lstm0());
    s1_ = lstm_step(tape, s0_.h, s1_, model_.dec_lstm1());
    groups_.push_back(tape.reshape(affine(tape, s1_.h, model_.dec_head()), {r, dout}));
    ++steps_done_;
  }

  Model<T>& model_;
  i64 chunk_;
  Var lr_{};
  i64 t_frames_ = 0;
  i64 t_padded_ = 0;
  i64 total_steps_ = 0;
  i64 lookahead_ = 0;
  i64 steps_done_ = 0;
  i64 emitted_ = 0;
  LstmState<T> s0_{}, s1_{};
  std::vector<Var> groups_;
};

}  // namespace dtts
