#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "dtts/autodiff.hpp"
#include "dtts/tensor.hpp"

namespace dtts {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
  std::int64_t worst_input = -1;
  std::int64_t worst_elem = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference gradient check. `build` must construct the scalar loss on
// a fresh tape from leaves matching `inputs` (one Var per input tensor), and be
// deterministic. Tensors larger than max_per_tensor are subsampled. 64-bit
// only: float loses too many digits for the (f(x+e)-f(x-e))/2e quotient.
template <typename T, typename BuildFn>
GradCheckReport gradcheck(std::vector<Tensor<T>> inputs, BuildFn build, double eps = 1e-5,
                          std::int64_t max_per_tensor = 64, std::uint64_t seed = 12345) {
  static_assert(std::is_same_v<T, double>, "gradcheck requires double precision");

  auto eval = [&](const std::vector<Tensor<T>>& xs, Tape<T>* keep,
                  std::vector<typename Tape<T>::Var>* keep_vars) -> double {
    Tape<T> local;
    Tape<T>& tape = keep ? *keep : local;
    std::vector<typename Tape<T>::Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(tape.leaf(x, true));
    const auto loss = build(tape, vars);
    if (keep_vars) *keep_vars = vars;
    if (keep) {
      tape.backward(loss);
      return tape.val(loss).scalar();
    }
    return tape.val(loss).scalar();
  };

  Tape<T> tape;
  std::vector<typename Tape<T>::Var> vars;
  eval(inputs, &tape, &vars);

  std::mt19937_64 rng(seed);
  GradCheckReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::int64_t n = inputs[k].numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (n > max_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(max_per_tensor));
    }
    for (std::int64_t e : idx) {
      const double orig = inputs[k].data[static_cast<std::size_t>(e)];
      inputs[k].data[static_cast<std::size_t>(e)] = orig + eps;
      const double fp = eval(inputs, nullptr, nullptr);
      inputs[k].data[static_cast<std::size_t>(e)] = orig - eps;
      const double fm = eval(inputs, nullptr, nullptr);
      inputs[k].data[static_cast<std::size_t>(e)] = orig;

      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw std::runtime_error("gradcheck: non-finite loss while perturbing input " +
                                 std::to_string(k) + " element " + std::to_string(e));
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = tape.grad(vars[k]).data[static_cast<std::size_t>(e)];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = static_cast<std::int64_t>(k);
        rep.worst_elem = e;
        rep.worst_analytic = analytic;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace dtts
