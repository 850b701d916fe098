#pragma once

#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dtts/gradcheck.hpp"
#include "dtts/training.hpp"

namespace dtts {

struct SuiteResult {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

inline SuiteResult full_model_gradcheck(const ModelConfig& cfg, std::uint64_t seed);

namespace detail_gc {

using D = double;
using DTape = Tape<double>;
using DVar = DTape::Var;

inline Tensor<D> rnd(std::vector<std::int64_t> shape, std::mt19937& rng, double scale = 1.0) {
  return uniform<D>(std::move(shape), -scale, scale, rng);
}

// smooth scalar readout: mean(y (.) y)
inline DVar sq_mean(DTape& t, DVar y) { return t.mean_all(t.mul(y, y)); }

inline SuiteResult check(const std::string& name, double tol, std::vector<Tensor<D>> inputs,
                         const std::function<DVar(DTape&, const std::vector<DVar>&)>& build,
                         double eps = 1e-5) {
  const GradCheckReport rep = gradcheck<D>(std::move(inputs), build, eps);
  return {name, rep.max_rel_err, tol, rep.max_rel_err <= tol};
}

}  // namespace detail_gc

// Finite-difference verification of every layer family plus the whole model
// (at `cfg`) through the joint loss. 64-bit throughout.
inline std::vector<SuiteResult> run_gradcheck_suite(const ModelConfig& cfg,
                                                    std::uint64_t seed = 7) {
  using namespace detail_gc;
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::vector<SuiteResult> out;

  out.push_back(check("affine", 1e-4,
                      {rnd({5, 6}, rng), rnd({6, 4}, rng), rnd({4}, rng)},
                      [](DTape& t, const std::vector<DVar>& v) {
                        AffineLayer<D> p{v[1], v[2]};
                        return sq_mean(t, affine(t, v[0], p, Act::tanh));
                      }));

  out.push_back(check("lstm_cell", 1e-4,
                      {rnd({1, 6}, rng), rnd({1, 4}, rng, 0.5), rnd({1, 4}, rng, 0.5),
                       rnd({6, 16}, rng), rnd({4, 16}, rng), rnd({16}, rng)},
                      [](DTape& t, const std::vector<DVar>& v) {
                        LstmLayer<D> p{v[3], v[4], v[5], 4};
                        LstmState<D> s{v[1], v[2]};
                        auto n = lstm_step(t, v[0], s, p);
                        return t.add(sq_mean(t, n.h), sq_mean(t, n.c));
                      }));

  out.push_back(check("bilstm", 1e-4,
                      {rnd({5, 3}, rng), rnd({3, 16}, rng), rnd({4, 16}, rng), rnd({16}, rng),
                       rnd({3, 16}, rng), rnd({4, 16}, rng), rnd({16}, rng)},
                      [](DTape& t, const std::vector<DVar>& v) {
                        BilstmLayer<D> p{{v[1], v[2], v[3], 4}, {v[4], v[5], v[6], 4}};
                        return sq_mean(t, bilstm(t, v[0], p));
                      }));

  out.push_back(check("prenet", 1e-4,
                      {rnd({4, 5}, rng), rnd({5, 6}, rng), rnd({6}, rng), rnd({6, 6}, rng),
                       rnd({6}, rng)},
                      [](DTape& t, const std::vector<DVar>& v) {
                        PrenetLayer<D> p{{v[1], v[2]}, {v[3], v[4]}};
                        return sq_mean(t, prenet(t, v[0], p));
                      }));

  out.push_back(check("dfsmn_block", 1e-4,
                      {rnd({7, 4}, rng), rnd({4, 6}, rng), rnd({6}, rng), rnd({6, 4}, rng),
                       rnd({4}, rng), rnd({3, 4}, rng), rnd({2, 4}, rng)},
                      [](DTape& t, const std::vector<DVar>& v) {
                        DfsmnBlock<D> b;
                        b.hidden = {v[1], v[2]};
                        b.proj = {v[3], v[4]};
                        b.back = v[5];  // n1 = 2
                        b.fwd = v[6];   // n2 = 2
                        b.n1 = 2;
                        b.n2 = 2;
                        b.skip = true;  // input dim 4 == p2 4
                        return sq_mean(t, dfsmn_block(t, v[0], b));
                      }));

  out.push_back(full_model_gradcheck(cfg, seed));
  return out;
}

inline std::vector<SuiteResult> run_gradcheck_suite(std::uint64_t seed = 7) {
  return run_gradcheck_suite(ModelConfig::tiny(), seed);
}

// Central differences over every parameter tensor of the full model, loss
// being the teacher-forced joint objective. Subsampled per tensor.
inline SuiteResult full_model_gradcheck(const ModelConfig& cfg, std::uint64_t seed) {
  using namespace detail_gc;
  const double tol = 1e-3;
  const double eps = 1e-6;
  Model<D> model(cfg, seed);
  auto& tape = model.tape();

  std::mt19937 rng(static_cast<std::uint32_t>(seed) + 1);
  PhonemeSequence ph;
  ph.ids = {std::min<std::int64_t>(1, cfg.vocab_size - 1),
            std::min<std::int64_t>(4, cfg.vocab_size - 1),
            std::min<std::int64_t>(2, cfg.vocab_size - 1)};
  ph.gold_durations = {3, 3, 4};
  Tensor<D> target = rnd({10, model.config().feature_dim}, rng, 0.5);

  // Check at a generic point: fresh init has zero biases, and together with
  // the zero go-frame that parks relu inputs exactly on the kink, where
  // central differences and the subgradient disagree by construction.
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (const auto& [name, var] : model.params()) {
    (void)name;
    for (auto& x : tape.mutable_val(var).data) x += jitter(rng);
  }

  auto eval = [&]() -> DVar {
    model.reset_activations();
    auto g = model.forward(ph, &target, /*use_gold=*/true);
    return build_loss(model, g, target, 1.0, 1.0).total;
  };

  auto loss = eval();
  tape.backward(loss);
  std::vector<Tensor<D>> analytic;
  for (const auto& [name, var] : model.params()) {
    (void)name;
    analytic.push_back(tape.grad(var));
  }

  std::mt19937_64 pick(seed + 2);
  SuiteResult res{"full_model", 0.0, tol, false};
  const auto& params = model.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<D>& value = tape.mutable_val(params[k].second);
    std::vector<std::int64_t> idx(value.data.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t keep = std::min<std::size_t>(idx.size(), 6);
    std::shuffle(idx.begin(), idx.end(), pick);
    idx.resize(keep);
    for (const auto e : idx) {
      const double orig = value.data[static_cast<std::size_t>(e)];
      value.data[static_cast<std::size_t>(e)] = orig + eps;
      const double fp = tape.val(eval()).scalar();
      value.data[static_cast<std::size_t>(e)] = orig - eps;
      const double fm = tape.val(eval()).scalar();
      value.data[static_cast<std::size_t>(e)] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw std::runtime_error("gradcheck: non-finite loss perturbing '" + params[k].first + "'");
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[k].data[static_cast<std::size_t>(e)];
      // The 3e-6 floor absorbs FD roundoff on gradients near zero, which
      // central differences at this eps cannot resolve.
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 3e-6});
      res.max_rel_err = std::max(res.max_rel_err, rel);
    }
  }
  model.reset_activations();
  res.pass = res.max_rel_err <= tol;
  return res;
}

}  // namespace dtts
