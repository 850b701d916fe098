#include "dtts/complexity.hpp"

#include <iomanip>
#include <sstream>

namespace dtts {

namespace {

using u64 = std::uint64_t;
using i64 = std::int64_t;

u64 affine_params(i64 in, i64 out) { return static_cast<u64>(in) * out + out; }
u64 lstm_params(i64 in, i64 h) { return static_cast<u64>(in) * 4 * h + static_cast<u64>(h) * 4 * h + 4 * h; }

u64 block_params(i64 in, const DfsmnStackConfig& s) {
  return affine_params(in, s.p1) + affine_params(s.p1, s.p2) +
         static_cast<u64>(s.n1 + 1 + s.n2) * s.p2;
}

u64 stack_params(i64 in, const DfsmnStackConfig& s) {
  u64 total = block_params(in, s);
  for (i64 i = 1; i < s.blocks; ++i) total += block_params(s.p2, s);
  return total;
}

// MACs for one row (one time step) through each structure.
u64 affine_macs(i64 in, i64 out) { return static_cast<u64>(in) * out; }
u64 lstm_macs(i64 in, i64 h) { return static_cast<u64>(4 * h) * (in + h); }

u64 block_macs(i64 in, const DfsmnStackConfig& s) {
  return affine_macs(in, s.p1) + affine_macs(s.p1, s.p2) +
         static_cast<u64>(s.n1 + 1 + s.n2) * s.p2;
}

u64 stack_macs(i64 in, const DfsmnStackConfig& s) {
  u64 total = block_macs(in, s);
  for (i64 i = 1; i < s.blocks; ++i) total += block_macs(s.p2, s);
  return total;
}

// Elementwise FLOPs for one row, mirroring the engine ops one for one:
// affine = bias add + optional activation; block = relu affine + projection
// bias + memory self-add + optional skip; LSTM = 17 per hidden unit.
u64 affine_ew(i64 out, bool act) { return static_cast<u64>(out) * (act ? 2 : 1); }

u64 block_ew(i64 in, const DfsmnStackConfig& s) {
  const bool skip = in == s.p2;
  return affine_ew(s.p1, true) + affine_ew(s.p2, false) + static_cast<u64>(s.p2) +
         (skip ? static_cast<u64>(s.p2) : 0);
}

u64 stack_ew(i64 in, const DfsmnStackConfig& s) {
  u64 total = block_ew(in, s);
  for (i64 i = 1; i < s.blocks; ++i) total += block_ew(s.p2, s);
  return total;
}

u64 lstm_ew(i64 h) { return static_cast<u64>(17) * h; }

i64 ceil_div(i64 a, i64 b) { return (a + b - 1) / b; }

struct UnitCosts {
  u64 front_macs, front_ew;
  u64 ar_macs, ar_ew;
  u64 nonar_macs, nonar_ew;
  u64 refine_macs, refine_ew;
};

UnitCosts unit_costs(const ModelConfig& c) {
  UnitCosts u{};
  // front end: embedding lookup (0 MACs) + encoder stack + duration stack +
  // BLSTM (two directions) + scalar duration head
  const i64 bh = c.duration_blstm_hidden;
  u.front_macs = stack_macs(c.embed_dim, c.encoder) + stack_macs(c.encoder.p2, c.duration) +
                 2 * lstm_macs(c.duration.p2, bh) + affine_macs(2 * bh, 1);
  u.front_ew = stack_ew(c.embed_dim, c.encoder) + stack_ew(c.encoder.p2, c.duration) +
               2 * lstm_ew(bh) + affine_ew(1, true);

  // one AR step: prenet on the previous frame, two LSTM layers, r*Dout head
  const i64 w = c.prenet_width;
  const i64 h = c.decoder_lstm_hidden;
  const i64 head_out = c.frames_per_step * c.feature_dim;
  u.ar_macs = affine_macs(c.feature_dim, w) + affine_macs(w, w) +
              lstm_macs(w + c.encoder.p2, h) + lstm_macs(h, h) + affine_macs(h, head_out);
  u.ar_ew = affine_ew(w, true) * 2 + lstm_ew(h) * 2 + affine_ew(head_out, false);

  u.nonar_macs = stack_macs(c.encoder.p2, c.nonar) + affine_macs(c.nonar.p2, c.feature_dim);
  u.nonar_ew = stack_ew(c.encoder.p2, c.nonar) + affine_ew(c.feature_dim, false);

  u.refine_macs = stack_macs(c.feature_dim, c.refine) + affine_macs(c.refine.p2, c.feature_dim);
  u.refine_ew = stack_ew(c.feature_dim, c.refine) + affine_ew(c.feature_dim, false) +
                (c.refine_residual ? static_cast<u64>(c.feature_dim) : 0);
  return u;
}

void fill_params(const ModelConfig& c, FlopReport& r) {
  r.params_embedding = static_cast<u64>(c.vocab_size) * c.embed_dim;
  r.params_encoder = stack_params(c.embed_dim, c.encoder);
  const i64 bh = c.duration_blstm_hidden;
  r.params_duration = stack_params(c.encoder.p2, c.duration) + 2 * lstm_params(c.duration.p2, bh) +
                      affine_params(2 * bh, 1);
  if (c.variant == DecoderVariant::ar) {
    const i64 w = c.prenet_width;
    const i64 h = c.decoder_lstm_hidden;
    r.params_decoder = affine_params(c.feature_dim, w) + affine_params(w, w) +
                       lstm_params(w + c.encoder.p2, h) + lstm_params(h, h) +
                       affine_params(h, c.frames_per_step * c.feature_dim);
  } else {
    r.params_decoder = stack_params(c.encoder.p2, c.nonar) + affine_params(c.nonar.p2, c.feature_dim);
  }
  r.params_refine = stack_params(c.feature_dim, c.refine) + affine_params(c.refine.p2, c.feature_dim);
  r.params_total = r.params_embedding + r.params_encoder + r.params_duration + r.params_decoder +
                   r.params_refine;
  r.variant = c.variant == DecoderVariant::ar ? "ar" : "nonar";
}

}  // namespace

FlopReport count_params(const ModelConfig& cfg) {
  cfg.validate();
  FlopReport r;
  fill_params(cfg, r);
  return r;
}

FlopReport count_flops_per_second(const ModelConfig& cfg, const CountProfile& profile) {
  FlopReport r = count_params(cfg);
  r.profile = profile;
  const UnitCosts u = unit_costs(cfg);
  r.macs_frontend_per_phoneme = u.front_macs;
  r.macs_ar_per_step = u.ar_macs;
  r.macs_nonar_per_frame = u.nonar_macs;
  r.macs_refine_per_frame = u.refine_macs;

  const i64 phonemes = profile.phoneme_rate * profile.audio_s;
  const i64 frames = profile.frame_rate * profile.audio_s;
  u64 macs = static_cast<u64>(phonemes) * u.front_macs;
  u64 ew = static_cast<u64>(phonemes) * u.front_ew;
  if (cfg.variant == DecoderVariant::ar) {
    // the engine always computes whole r-frame groups, refined included
    const i64 steps = frames > 0 ? ceil_div(frames, cfg.frames_per_step) : 0;
    const i64 padded = steps * cfg.frames_per_step;
    macs += static_cast<u64>(steps) * u.ar_macs + static_cast<u64>(padded) * u.refine_macs;
    ew += static_cast<u64>(steps) * u.ar_ew + static_cast<u64>(padded) * u.refine_ew;
  } else {
    macs += static_cast<u64>(frames) * (u.nonar_macs + u.refine_macs);
    ew += static_cast<u64>(frames) * (u.nonar_ew + u.refine_ew);
  }
  r.macs_per_s = macs;
  r.flops_per_s = 2 * macs + ew;
  r.gflops_per_s = static_cast<double>(r.flops_per_s) * 1e-9;
  return r;
}

FlopReport count_flops_first_frame(const ModelConfig& cfg, const CountProfile& profile) {
  FlopReport r = count_flops_per_second(cfg, profile);
  const UnitCosts u = unit_costs(cfg);
  const i64 refine_l = cfg.refine.blocks * cfg.refine.n2;
  const i64 refine_window = 1 + refine_l;  // frame 0 plus its look-ahead
  r.first_frame_refine_window = refine_window;

  // non-streaming front end over the reference utterance
  const i64 phonemes = profile.phoneme_rate * profile.audio_s;
  u64 macs = static_cast<u64>(phonemes) * u.front_macs;
  u64 ew = static_cast<u64>(phonemes) * u.front_ew;
  if (cfg.variant == DecoderVariant::ar) {
    const i64 steps = ceil_div(refine_window, cfg.frames_per_step);
    r.first_frame_ar_steps = steps;
    macs += static_cast<u64>(steps) * u.ar_macs + static_cast<u64>(refine_window) * u.refine_macs;
    ew += static_cast<u64>(steps) * u.ar_ew + static_cast<u64>(refine_window) * u.refine_ew;
  } else {
    // coarse frames 0..refine_l, each needing the stack's own look-ahead
    const i64 coarse_window = refine_window + cfg.nonar.blocks * cfg.nonar.n2;
    r.first_frame_coarse_frames = coarse_window;
    macs += static_cast<u64>(coarse_window) * u.nonar_macs +
            static_cast<u64>(refine_window) * u.refine_macs;
    ew += static_cast<u64>(coarse_window) * u.nonar_ew +
          static_cast<u64>(refine_window) * u.refine_ew;
  }
  r.macs_first_frame = macs;
  r.flops_first_frame = 2 * macs + ew;
  r.gflops_first_frame = static_cast<double>(r.flops_first_frame) * 1e-9;
  return r;
}

FlopReport analyze(const ModelConfig& cfg, const CountProfile& profile) {
  return count_flops_first_frame(cfg, profile);
}

std::string render_kv(const FlopReport& r) {
  std::ostringstream os;
  os << "params_total=" << r.params_total << "\n"
     << "params_embedding=" << r.params_embedding << "\n"
     << "params_encoder=" << r.params_encoder << "\n"
     << "params_duration=" << r.params_duration << "\n"
     << "params_decoder=" << r.params_decoder << "\n"
     << "params_refine=" << r.params_refine << "\n"
     << "macs_per_s=" << r.macs_per_s << "\n"
     << "macs_first_frame=" << r.macs_first_frame << "\n"
     << std::setprecision(9) << std::fixed << "gflops_per_s=" << r.gflops_per_s << "\n"
     << "gflops_first_frame=" << r.gflops_first_frame << "\n"
     << std::defaultfloat << "variant=" << r.variant << "\n"
     << "profile_audio_s=" << r.profile.audio_s << "\n"
     << "profile_frame_rate=" << r.profile.frame_rate << "\n"
     << "profile_phoneme_rate=" << r.profile.phoneme_rate << "\n";
  return os.str();
}

std::string render_table(const FlopReport& ar, const FlopReport* nonar) {
  std::ostringstream os;
  auto m = [](u64 v) {
    std::ostringstream s;
    s << std::setprecision(3) << std::fixed << static_cast<double>(v) * 1e-6;
    return s.str();
  };
  os << "component            params\n"
     << "  embedding          " << ar.params_embedding << "\n"
     << "  encoder            " << ar.params_encoder << "\n"
     << "  duration           " << ar.params_duration << "\n"
     << "  decoder(" << ar.variant << ")        " << ar.params_decoder << "\n"
     << "  refine             " << ar.params_refine << "\n"
     << "total params         " << ar.params_total << " (" << m(ar.params_total) << " M)\n"
     << std::setprecision(4) << std::fixed
     << "GFLOPS per second    " << ar.gflops_per_s << "\n"
     << "GFLOPS first frame   " << ar.gflops_first_frame << " (" << ar.variant << ")";
  if (nonar != nullptr) {
    os << " vs " << nonar->gflops_first_frame << " (" << nonar->variant
       << "), ratio " << std::setprecision(3)
       << ar.gflops_first_frame / nonar->gflops_first_frame << "\n";
  } else {
    os << "\n";
  }
  return os.str();
}

}  // namespace dtts
