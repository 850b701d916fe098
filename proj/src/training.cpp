#include "dtts/training.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace dtts {

void apply_adam(Tensor<float>& param, const Tensor<float>& grad, Tensor<float>& m,
                Tensor<float>& v, std::int64_t step, double lr, const TrainConfig& cfg,
                const std::string& name) {
  if (param.shape != grad.shape || param.shape != m.shape || param.shape != v.shape) {
    throw std::invalid_argument("adam: shape mismatch for '" + name + "'");
  }
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    const double g = static_cast<double>(grad.data[i]);
    if (!std::isfinite(g)) {
      throw std::runtime_error("adam: non-finite gradient in '" + name + "' at element " +
                               std::to_string(i) + ", step rejected");
    }
    const double mi = b1 * m.data[i] + (1.0 - b1) * g;
    const double vi = b2 * v.data[i] + (1.0 - b2) * g * g;
    m.data[i] = static_cast<float>(mi);
    v.data[i] = static_cast<float>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    param.data[i] = static_cast<float>(param.data[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

AdamState AdamState::init(Model<float>& model) {
  AdamState s;
  for (const auto& [name, var] : model.params()) {
    (void)name;
    const auto& shape = model.tape().val(var).shape;
    s.m.push_back(zeros<float>(shape));
    s.v.push_back(zeros<float>(shape));
  }
  return s;
}

namespace {

void verify_example(const TrainingExample& ex, const ModelConfig& cfg, std::size_t index) {
  if (!ex.phonemes.has_durations()) {
    throw std::invalid_argument("train: example " + std::to_string(index) + " lacks gold durations");
  }
  const auto total = std::accumulate(ex.phonemes.gold_durations.begin(),
                                     ex.phonemes.gold_durations.end(), std::int64_t(0));
  if (total != ex.target.rows()) {
    throw std::invalid_argument("train: example " + std::to_string(index) + " durations sum to " +
                                std::to_string(total) + " but target has " +
                                std::to_string(ex.target.rows()) + " rows");
  }
  if (ex.target.cols() != cfg.feature_dim) {
    throw std::invalid_argument("train: example " + std::to_string(index) + " feature dim " +
                                std::to_string(ex.target.cols()) + " != model " +
                                std::to_string(cfg.feature_dim));
  }
}

}  // namespace

std::vector<LossPoint> train(Model<float>& model, const std::vector<TrainingExample>& dataset,
                             const TrainConfig& cfg, std::ostream* curve_out) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (std::size_t i = 0; i < dataset.size(); ++i) verify_example(dataset[i], model.config(), i);

  auto& tape = model.tape();
  AdamState opt = AdamState::init(model);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // force a shuffle on first use

  std::vector<LossPoint> curve;
  curve.reserve(static_cast<std::size_t>(cfg.max_steps));
  if (curve_out != nullptr) *curve_out << "step,lr,total,aco_coarse,aco_refined,dur\n";

  for (std::int64_t step = 1; step <= cfg.max_steps; ++step) {
    model.reset_activations();

    using Var = Model<float>::Var;
    Var batch_total{};
    LossPoint pt;
    pt.step = step;
    pt.lr = lr_schedule(step, cfg);
    const std::int64_t bsz = std::min<std::int64_t>(cfg.batch_size,
                                                    static_cast<std::int64_t>(dataset.size()));
    for (std::int64_t b = 0; b < bsz; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      const TrainingExample& ex = dataset[order[cursor++]];
      auto g = model.forward(ex.phonemes, &ex.target, /*use_gold=*/true);
      auto l = build_loss(model, g, ex.target, cfg.coarse_loss_weight, cfg.refined_loss_weight);
      pt.coarse += tape.val(l.coarse).scalar();
      pt.refined += tape.val(l.refined).scalar();
      pt.duration += tape.val(l.duration).scalar();
      batch_total = b == 0 ? l.total : tape.add(batch_total, l.total);
    }
    auto loss = tape.scale(batch_total, 1.0f / static_cast<float>(bsz));
    pt.total = tape.val(loss).scalar();
    pt.coarse /= static_cast<double>(bsz);
    pt.refined /= static_cast<double>(bsz);
    pt.duration /= static_cast<double>(bsz);
    if (!std::isfinite(pt.total)) {
      throw std::runtime_error("train: loss diverged (non-finite) at step " + std::to_string(step));
    }

    tape.backward(loss);
    const auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      apply_adam(tape.mutable_val(params[i].second), tape.grad(params[i].second), opt.m[i],
                 opt.v[i], step, pt.lr, cfg, params[i].first);
    }
    opt.step = step;

    curve.push_back(pt);
    if (curve_out != nullptr && (step % cfg.log_every == 0 || step == cfg.max_steps)) {
      *curve_out << csv_line(pt) << "\n";
    }
  }
  model.reset_activations();
  return curve;
}

std::vector<TrainingExample> make_toy_corpus(std::uint64_t seed, std::int64_t n_utts,
                                             std::int64_t vocab, std::int64_t feature_dim) {
  if (n_utts < 1 || vocab < 2 || feature_dim < 1) {
    throw std::invalid_argument("toy corpus: need n_utts >= 1, vocab >= 2, feature_dim >= 1");
  }
  std::mt19937_64 rng(seed);

  // per-symbol duration and smooth feature template
  std::vector<std::int64_t> sym_dur(static_cast<std::size_t>(vocab));
  std::vector<std::vector<float>> sym_template(static_cast<std::size_t>(vocab));
  std::uniform_int_distribution<std::int64_t> dur_dist(2, 6);
  std::uniform_real_distribution<double> phase_dist(0.0, 6.28318530717958647692);
  std::uniform_real_distribution<double> freq_dist(0.5, 3.0);
  for (std::int64_t s = 0; s < vocab; ++s) {
    sym_dur[static_cast<std::size_t>(s)] = dur_dist(rng);
    const double phase = phase_dist(rng);
    const double freq = freq_dist(rng);
    std::vector<float> tpl(static_cast<std::size_t>(feature_dim));
    for (std::int64_t j = 0; j < feature_dim; ++j) {
      const double x = static_cast<double>(j) / static_cast<double>(feature_dim);
      tpl[static_cast<std::size_t>(j)] = static_cast<float>(0.4 * std::sin(6.28318530717958647692 * freq * x + phase));
    }
    sym_template[static_cast<std::size_t>(s)] = std::move(tpl);
  }

  std::uniform_int_distribution<std::int64_t> len_dist(4, 10);
  std::uniform_int_distribution<std::int64_t> sym_dist(0, vocab - 1);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<TrainingExample> out;
  out.reserve(static_cast<std::size_t>(n_utts));
  for (std::int64_t u = 0; u < n_utts; ++u) {
    TrainingExample ex;
    const std::int64_t tp = len_dist(rng);
    std::int64_t total = 0;
    for (std::int64_t i = 0; i < tp; ++i) {
      const std::int64_t id = sym_dist(rng);
      ex.phonemes.ids.push_back(id);
      ex.phonemes.gold_durations.push_back(sym_dur[static_cast<std::size_t>(id)]);
      total += sym_dur[static_cast<std::size_t>(id)];
    }
    ex.target = Tensor<float>({total, feature_dim});
    std::int64_t row = 0;
    for (std::int64_t i = 0; i < tp; ++i) {
      const auto& tpl = sym_template[static_cast<std::size_t>(ex.phonemes.ids[static_cast<std::size_t>(i)])];
      for (std::int64_t d = 0; d < ex.phonemes.gold_durations[static_cast<std::size_t>(i)]; ++d, ++row) {
        for (std::int64_t j = 0; j < feature_dim; ++j) {
          ex.target.at(row, j) = tpl[static_cast<std::size_t>(j)] + static_cast<float>(noise(rng));
        }
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace dtts
