#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>

#include "dtts/complexity.hpp"

using namespace dtts;

namespace {

// ground truth for the parameter section: add up the live tensors by name
struct NamewiseParams {
  std::uint64_t embedding = 0, encoder = 0, duration = 0, decoder = 0, refine = 0, total = 0;
};

NamewiseParams measure_params(const ModelConfig& cfg) {
  Model<float> m(cfg, 1);
  NamewiseParams n;
  for (const auto& [name, var] : m.params()) {
    const auto size = static_cast<std::uint64_t>(m.tape().val(var).numel());
    n.total += size;
    if (name.rfind("embedding.", 0) == 0) n.embedding += size;
    else if (name.rfind("encoder.", 0) == 0) n.encoder += size;
    else if (name.rfind("duration.", 0) == 0) n.duration += size;
    else if (name.rfind("decoder.", 0) == 0 || name.rfind("nonar.", 0) == 0) n.decoder += size;
    else if (name.rfind("refine.", 0) == 0) n.refine += size;
    else throw std::runtime_error("unclassified parameter: " + name);
  }
  return n;
}

void check_params_against_model(const ModelConfig& cfg) {
  auto want = measure_params(cfg);
  auto got = count_params(cfg);
  CHECK(got.params_embedding == want.embedding);
  CHECK(got.params_encoder == want.encoder);
  CHECK(got.params_duration == want.duration);
  CHECK(got.params_decoder == want.decoder);
  CHECK(got.params_refine == want.refine);
  CHECK(got.params_total == want.total);
  CHECK(got.params_total == want.embedding + want.encoder + want.duration + want.decoder +
                                want.refine);
}

}  // namespace

TEST_CASE("analytic parameter counts equal the live tensors, all presets") {
  for (auto cfg : {ModelConfig::world(), ModelConfig::lpcnet(), ModelConfig::tiny()}) {
    check_params_against_model(cfg);
    cfg.variant = DecoderVariant::nonar;
    check_params_against_model(cfg);
  }
}

TEST_CASE("full-width profile: frozen reference numbers") {
  auto cfg = ModelConfig::world();
  auto r = analyze(cfg, CountProfile::from_config(cfg));

  CHECK(r.params_embedding == 12800);
  CHECK(r.params_encoder == 284672);
  CHECK(r.params_duration == 476929);
  CHECK(r.params_decoder == 423064);
  CHECK(r.params_refine == 130243);
  CHECK(r.params_total == 1327708);

  CHECK(r.macs_frontend_per_phoneme == 757888);
  CHECK(r.macs_ar_per_step == 421248);
  CHECK(r.macs_refine_per_frame == 129408);

  // 1s of audio: 12 phonemes, ceil(200/8)=25 AR steps, 200 refined frames
  CHECK(r.macs_per_s == 12 * 757888ull + 25 * 421248ull + 200 * 129408ull);
  CHECK(r.macs_per_s == 45507456);
  CHECK(r.gflops_per_s == doctest::Approx(0.091623624).epsilon(1e-9));

  // first frame: window 1 + 2*10 = 21, ceil(21/8) = 3 AR steps
  CHECK(r.first_frame_refine_window == 21);
  CHECK(r.first_frame_ar_steps == 3);
  CHECK(r.macs_first_frame == 13075968);
  CHECK(r.gflops_first_frame == doctest::Approx(0.026331999).epsilon(1e-8));
  CHECK(r.variant == "ar");

  auto nonar_cfg = cfg;
  nonar_cfg.variant = DecoderVariant::nonar;
  auto nr = analyze(nonar_cfg, CountProfile::from_config(nonar_cfg));
  CHECK(nr.macs_nonar_per_frame == 160384);
  // non-AR first frame decodes through the deeper coarse window
  CHECK(nr.first_frame_coarse_frames > nr.first_frame_refine_window);
  CHECK(r.gflops_first_frame / nr.gflops_first_frame == doctest::Approx(0.38).epsilon(0.01));
}

TEST_CASE("narrow-feature profile: totals track the smaller head") {
  auto cfg = ModelConfig::lpcnet();
  auto r = analyze(cfg, CountProfile::from_config(cfg));
  CHECK(r.params_total == 1244893);
  CHECK(r.params_total < count_params(ModelConfig::world()).params_total);
  CHECK(r.profile.frame_rate == 100);
  CHECK(r.gflops_per_s == doctest::Approx(0.0658).epsilon(0.001));
  CHECK(r.gflops_first_frame == doctest::Approx(0.0281).epsilon(0.002));
}

TEST_CASE("instrumented batch synthesis reproduces the analytic MACs exactly") {
  // tiny config, one second of audio: 3 phonemes, 10 frames at frame_rate 10
  auto cfg = ModelConfig::tiny();
  Model<float> m(cfg, 3);
  PhonemeSequence ph{{1, 4, 2}, {3, 3, 4}};  // 10 frames == 1s at rate 10

  CountScope scope;
  m.synthesize(ph);
  auto measured = scope.counts();

  auto r = count_flops_per_second(cfg, CountProfile::from_config(cfg));
  CHECK(measured.macs == r.macs_per_s);
  CHECK(measured.flops == r.flops_per_s);
}

TEST_CASE("instrumented non-AR synthesis reproduces the analytic MACs exactly") {
  auto cfg = ModelConfig::tiny();
  cfg.variant = DecoderVariant::nonar;
  Model<float> m(cfg, 3);
  PhonemeSequence ph{{1, 4, 2}, {3, 3, 4}};

  CountScope scope;
  m.synthesize(ph);
  auto measured = scope.counts();

  auto r = count_flops_per_second(cfg, CountProfile::from_config(cfg));
  CHECK(measured.macs == r.macs_per_s);
  CHECK(measured.flops == r.flops_per_s);
}

TEST_CASE("instrumented streaming start-up reproduces the first-frame MACs exactly") {
  auto cfg = ModelConfig::tiny();
  Model<float> m(cfg, 3);
  PhonemeSequence ph{{1, 4, 2}, {3, 3, 4}};

  std::uint64_t macs = 0, flops = 0;
  {
    CountScope scope;
    StreamingSynthesizer<float> s(m, ph, 1);
    auto first = s.next();
    REQUIRE(first.has_value());
    macs = scope.counts().macs;
    flops = scope.counts().flops;
    CHECK(s.ar_steps_done() == 3);
  }

  auto r = count_flops_first_frame(cfg, CountProfile::from_config(cfg));
  CHECK(r.first_frame_ar_steps == 3);
  CHECK(r.first_frame_refine_window == 5);  // 1 + 2*2
  CHECK(macs == r.macs_first_frame);
  CHECK(flops == r.flops_first_frame);
}

TEST_CASE("counts are value-independent and scale with the workload") {
  auto cfg = ModelConfig::tiny();
  auto one = count_flops_per_second(cfg, {1, 10, 3});
  auto three = count_flops_per_second(cfg, {3, 10, 3});
  CHECK(three.macs_per_s == 3 * one.macs_per_s);
  CHECK(three.flops_per_s == 3 * one.flops_per_s);

  // different seeds, same graph shape, identical instrumentation
  PhonemeSequence ph{{1, 4, 2}, {3, 3, 4}};
  std::uint64_t macs[2];
  for (int k = 0; k < 2; ++k) {
    Model<float> m(cfg, 100 + static_cast<std::uint64_t>(k));
    CountScope scope;
    m.synthesize(ph);
    macs[k] = scope.counts().macs;
  }
  CHECK(macs[0] == macs[1]);
}

TEST_CASE("wider taps and deeper stacks can only cost more") {
  auto base = ModelConfig::tiny();
  auto r0 = analyze(base, CountProfile::from_config(base));
  auto wider = base;
  wider.encoder.n2 += 2;
  auto r1 = analyze(wider, CountProfile::from_config(wider));
  CHECK(r1.macs_per_s > r0.macs_per_s);
  CHECK(r1.params_total > r0.params_total);

  auto deeper = base;
  deeper.refine.blocks += 1;
  auto r2 = analyze(deeper, CountProfile::from_config(deeper));
  CHECK(r2.macs_per_s > r0.macs_per_s);
  // a deeper refine stack widens the first-frame window, so start-up costs more
  CHECK(r2.macs_first_frame > r0.macs_first_frame);
  CHECK(r2.first_frame_refine_window == 1 + 3 * 2);
}

TEST_CASE("reports render as parseable key=value lines and a table") {
  auto cfg = ModelConfig::world();
  auto r = analyze(cfg, CountProfile::from_config(cfg));
  auto kv = render_kv(r);
  CHECK(kv.find("params_total=1327708\n") != std::string::npos);
  CHECK(kv.find("macs_per_s=45507456\n") != std::string::npos);
  CHECK(kv.find("gflops_per_s=0.091623624\n") != std::string::npos);
  CHECK(kv.find("variant=ar\n") != std::string::npos);

  auto nonar_cfg = cfg;
  nonar_cfg.variant = DecoderVariant::nonar;
  auto nr = analyze(nonar_cfg, CountProfile::from_config(nonar_cfg));
  auto table = render_table(r, &nr);
  CHECK(table.find("params") != std::string::npos);
  CHECK(table.find("first frame") != std::string::npos);
}
