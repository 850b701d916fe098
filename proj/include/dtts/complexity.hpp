#pragma once

#include <cstdint>
#include <string>

#include "dtts/model.hpp"

namespace dtts {

// Reference workload for per-second accounting.
struct CountProfile {
  std::int64_t audio_s = 1;
  std::int64_t frame_rate = 200;   // acoustic frames per second
  std::int64_t phoneme_rate = 12;  // input symbols per second

  static CountProfile from_config(const ModelConfig& c) {
    return {1, c.frame_rate_per_s, c.phoneme_rate_per_s};
  }
};

// Closed-form parameter and MAC/FLOP accounting, derived from ModelConfig
// alone. Conventions: 1 MAC = 2 FLOPs; every other elementwise op (bias add,
// activation, gate arithmetic) is 1 FLOP per element; memory-filter taps are
// charged flat at every frame (edge taps multiply zero). These mirror the
// instrumented engine exactly, so analytic MACs equal measured MACs.
struct FlopReport {
  // parameters per component
  std::uint64_t params_embedding = 0;
  std::uint64_t params_encoder = 0;
  std::uint64_t params_duration = 0;
  std::uint64_t params_decoder = 0;  // AR: prenet+LSTMs+head; non-AR: stack+head
  std::uint64_t params_refine = 0;
  std::uint64_t params_total = 0;

  // per-unit MAC constants
  std::uint64_t macs_frontend_per_phoneme = 0;  // encoder + duration predictor
  std::uint64_t macs_ar_per_step = 0;
  std::uint64_t macs_nonar_per_frame = 0;
  std::uint64_t macs_refine_per_frame = 0;

  // one second of audio
  std::uint64_t macs_per_s = 0;
  std::uint64_t flops_per_s = 0;
  double gflops_per_s = 0.0;

  // work required before the first refined frame
  std::int64_t first_frame_ar_steps = 0;       // AR variant
  std::int64_t first_frame_coarse_frames = 0;  // non-AR variant: decoded coarse window
  std::int64_t first_frame_refine_window = 0;
  std::uint64_t macs_first_frame = 0;
  std::uint64_t flops_first_frame = 0;
  double gflops_first_frame = 0.0;

  std::string variant;
  CountProfile profile;
};

// Parameters only (the count functions below all fill the parameter section).
FlopReport count_params(const ModelConfig& cfg);

// Parameters plus per-second cost under the given workload.
FlopReport count_flops_per_second(const ModelConfig& cfg, const CountProfile& profile);

// Parameters, per-second cost, and cost-to-first-frame for cfg.variant.
FlopReport count_flops_first_frame(const ModelConfig& cfg, const CountProfile& profile);

// Everything at once (same as count_flops_first_frame; clearer call sites).
FlopReport analyze(const ModelConfig& cfg, const CountProfile& profile);

// Flat `key=value` lines: params_total, params_<component>, gflops_per_s,
// gflops_first_frame, variant, profile_*.
std::string render_kv(const FlopReport& r);

// Human-readable table; when both reports are given, AR and non-AR first-frame
// numbers appear side by side.
std::string render_table(const FlopReport& ar, const FlopReport* nonar);

}  // namespace dtts
