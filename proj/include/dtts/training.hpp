#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dtts/model.hpp"

namespace dtts {

struct TrainConfig {
  std::int64_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-9;
  double peak_lr = 0.002;
  std::int64_t warmup_steps = 4000;
  std::int64_t max_steps = 2000;
  std::uint64_t seed = 1;
  double coarse_loss_weight = 1.0;
  double refined_loss_weight = 1.0;
  std::int64_t log_every = 10;

  void validate() const {
    if (warmup_steps < 1) throw std::invalid_argument("train config: warmup_steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (max_steps < 1) throw std::invalid_argument("train config: max_steps must be >= 1");
    if (coarse_loss_weight < 0 || refined_loss_weight < 0) {
      throw std::invalid_argument("train config: loss weights must be >= 0");
    }
    if (coarse_loss_weight == 0 && refined_loss_weight == 0) {
      throw std::invalid_argument("train config: at least one acoustic loss weight must be > 0");
    }
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size}, {"beta1", c.beta1},
       {"beta2", c.beta2},           {"eps", c.eps},
       {"peak_lr", c.peak_lr},       {"warmup_steps", c.warmup_steps},
       {"max_steps", c.max_steps},   {"seed", c.seed},
       {"coarse_loss_weight", c.coarse_loss_weight},
       {"refined_loss_weight", c.refined_loss_weight},
       {"log_every", c.log_every}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("batch_size").get_to(c.batch_size);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("eps").get_to(c.eps);
  j.at("peak_lr").get_to(c.peak_lr);
  j.at("warmup_steps").get_to(c.warmup_steps);
  j.at("max_steps").get_to(c.max_steps);
  j.at("seed").get_to(c.seed);
  j.at("coarse_loss_weight").get_to(c.coarse_loss_weight);
  j.at("refined_loss_weight").get_to(c.refined_loss_weight);
  j.at("log_every").get_to(c.log_every);
}

struct TrainingExample {
  PhonemeSequence phonemes;      // gold_durations required
  Tensor<float> target;          // [sum(gold_durations), Dout]
};

// Warmup then inverse-sqrt decay, scaled so the peak is peak_lr at
// step == warmup_steps: lr = peak * min(step/warmup, sqrt(warmup/step)).
inline double lr_schedule(std::int64_t step, const TrainConfig& cfg) {
  if (step < 1) throw std::invalid_argument("lr_schedule: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.peak_lr * std::min(s / w, std::sqrt(w / s));
}

// mean(|a - b|) as a graph node.
template <typename T>
typename Tape<T>::Var mae(Tape<T>& tape, typename Tape<T>::Var a, typename Tape<T>::Var b) {
  return tape.mean_all(tape.abs_(tape.sub(a, b)));
}

// Edge-replicates the last target row out to `rows` (the decoder's padded
// group length) so coarse/refined losses are defined on the full output.
template <typename T>
Tensor<T> pad_target(const Tensor<T>& target, std::int64_t rows) {
  if (target.rows() > rows) throw std::invalid_argument("pad_target: target longer than padded length");
  Tensor<T> out({rows, target.cols()});
  for (std::int64_t t = 0; t < rows; ++t) {
    const std::int64_t src = std::min(t, target.rows() - 1);
    for (std::int64_t j = 0; j < target.cols(); ++j) out.at(t, j) = target.at(src, j);
  }
  return out;
}

template <typename T>
struct LossGraph {
  typename Tape<T>::Var total;
  typename Tape<T>::Var coarse;
  typename Tape<T>::Var refined;
  typename Tape<T>::Var duration;
};

// L = w_c * mae(coarse, target) + w_r * mae(refined, target) + mae(pred_dur, gold).
template <typename T>
LossGraph<T> build_loss(Model<T>& m, const typename Model<T>::ForwardGraph& g,
                        const Tensor<T>& target, double w_coarse, double w_refined) {
  auto& tape = m.tape();
  if (target.rows() != g.t_frames) {
    throw std::invalid_argument("loss: target has " + std::to_string(target.rows()) +
                                " rows, durations sum to " + std::to_string(g.t_frames));
  }
  const auto padded_rows = tape.val(g.coarse).rows();
  auto tgt = tape.leaf(pad_target(target, padded_rows));
  Tensor<T> gold({static_cast<std::int64_t>(g.durations.size()), 1});
  for (std::size_t i = 0; i < g.durations.size(); ++i) {
    gold.data[i] = static_cast<T>(g.durations[i]);
  }
  LossGraph<T> l;
  l.coarse = mae(tape, g.coarse, tgt);
  l.refined = mae(tape, g.refined, tgt);
  l.duration = mae(tape, g.pred_dur, tape.leaf(std::move(gold)));
  l.total = tape.add(tape.add(tape.scale(l.coarse, static_cast<T>(w_coarse)),
                              tape.scale(l.refined, static_cast<T>(w_refined))),
                     l.duration);
  return l;
}

// Bias-corrected Adam on one tensor; pure and unit-testable. Throws on
// non-finite gradients (name gives the parameter identity).
void apply_adam(Tensor<float>& param, const Tensor<float>& grad, Tensor<float>& m,
                Tensor<float>& v, std::int64_t step, double lr, const TrainConfig& cfg,
                const std::string& name);

struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::int64_t step = 0;

  static AdamState init(Model<float>& model);
};

struct LossPoint {
  std::int64_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double coarse = 0.0;
  double refined = 0.0;
  double duration = 0.0;
};

inline std::string csv_line(const LossPoint& p) {
  std::ostringstream os;
  os << p.step << ',' << p.lr << ',' << p.total << ',' << p.coarse << ',' << p.refined << ','
     << p.duration;
  return os.str();
}

// Teacher-forced training over the dataset: seeded shuffling, per-step batch
// mean of example losses, Adam updates. Returns one LossPoint per step.
// Writes `step,lr,total,aco_coarse,aco_refined,dur` lines to curve_out (when
// given) every cfg.log_every steps and at the final step.
std::vector<LossPoint> train(Model<float>& model, const std::vector<TrainingExample>& dataset,
                             const TrainConfig& cfg, std::ostream* curve_out);

// Deterministic synthetic corpus: each symbol owns a duration in [2,6] and a
// smooth sinusoid feature template; utterances are random symbol strings whose
// targets are the repeated templates plus small noise.
std::vector<TrainingExample> make_toy_corpus(std::uint64_t seed, std::int64_t n_utts,
                                             std::int64_t vocab, std::int64_t feature_dim);

}  // namespace dtts
