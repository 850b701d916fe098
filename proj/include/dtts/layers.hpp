#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dtts/autodiff.hpp"
#include "dtts/tensor.hpp"

namespace dtts {

enum class Act { none, relu, sigmoid, tanh };

// Construction-time helper: creates parameter leaves on a tape and records
// their names in creation order into a caller-owned list. The name list
// doubles as the serialization schema.
template <typename T>
class ParamRegistry {
 public:
  using Var = typename Tape<T>::Var;

  ParamRegistry(Tape<T>& tape, std::mt19937& rng,
                std::vector<std::pair<std::string, Var>>& names)
      : tape_(tape), rng_(rng), names_(names) {}

  Var add(const std::string& name, Tensor<T> init) {
    Var v = tape_.leaf(std::move(init), true);
    names_.emplace_back(name, v);
    return v;
  }

  // weight ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in))
  Var add_weight(const std::string& name, std::int64_t fan_in, std::vector<std::int64_t> shape) {
    const T bound = static_cast<T>(std::sqrt(1.0 / static_cast<double>(fan_in)));
    return add(name, uniform<T>(std::move(shape), -bound, bound, rng_));
  }

  Var add_zeros(const std::string& name, std::vector<std::int64_t> shape) {
    return add(name, zeros<T>(std::move(shape)));
  }

  Tape<T>& tape() { return tape_; }
  std::mt19937& rng() { return rng_; }

 private:
  Tape<T>& tape_;
  std::mt19937& rng_;
  std::vector<std::pair<std::string, Var>>& names_;
};

// ---- layer parameter bundles (Vars into the owning tape) ----

template <typename T>
struct AffineLayer {
  typename Tape<T>::Var w;  // [in, out]
  typename Tape<T>::Var b;  // [out]
};

template <typename T>
AffineLayer<T> make_affine(ParamRegistry<T>& reg, const std::string& prefix, std::int64_t in,
                           std::int64_t out) {
  AffineLayer<T> l;
  l.w = reg.add_weight(prefix + ".w", in, {in, out});
  l.b = reg.add_zeros(prefix + ".b", {out});
  return l;
}

template <typename T>
typename Tape<T>::Var affine(Tape<T>& tape, typename Tape<T>::Var x, const AffineLayer<T>& p,
                             Act act = Act::none) {
  auto y = tape.add(tape.matmul(x, p.w), p.b);
  switch (act) {
    case Act::none: return y;
    case Act::relu: return tape.relu(y);
    case Act::sigmoid: return tape.sigmoid(y);
    case Act::tanh: return tape.tanh_(y);
  }
  throw std::logic_error("affine: bad activation");
}

template <typename T>
struct EmbeddingLayer {
  typename Tape<T>::Var table;  // [vocab, dim]
};

template <typename T>
EmbeddingLayer<T> make_embedding(ParamRegistry<T>& reg, const std::string& prefix,
                                 std::int64_t vocab, std::int64_t dim) {
  return EmbeddingLayer<T>{reg.add_weight(prefix + ".table", dim, {vocab, dim})};
}

template <typename T>
typename Tape<T>::Var embed(Tape<T>& tape, const EmbeddingLayer<T>& p,
                            const std::vector<std::int64_t>& ids) {
  const auto rows = tape.val(p.table).rows();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= rows) {
      throw std::out_of_range("embed: symbol id " + std::to_string(ids[i]) + " at position " +
                              std::to_string(i) + " outside vocab of " + std::to_string(rows));
    }
  }
  return tape.gather_rows(p.table, ids);
}

// Gate layout in the 4H axis: input | forget | cell | output.
template <typename T>
struct LstmLayer {
  typename Tape<T>::Var wx;  // [in, 4H]
  typename Tape<T>::Var wh;  // [H, 4H]
  typename Tape<T>::Var b;   // [4H]
  std::int64_t hidden = 0;
};

template <typename T>
LstmLayer<T> make_lstm(ParamRegistry<T>& reg, const std::string& prefix, std::int64_t in,
                       std::int64_t hidden) {
  LstmLayer<T> l;
  l.wx = reg.add_weight(prefix + ".wx", in, {in, 4 * hidden});
  l.wh = reg.add_weight(prefix + ".wh", hidden, {hidden, 4 * hidden});
  Tensor<T> bias({4 * hidden}, T(0));
  for (std::int64_t k = hidden; k < 2 * hidden; ++k) bias.data[static_cast<std::size_t>(k)] = T(1);
  l.b = reg.add(prefix + ".b", std::move(bias));
  l.hidden = hidden;
  return l;
}

template <typename T>
struct LstmState {
  typename Tape<T>::Var h;  // [1, H]
  typename Tape<T>::Var c;  // [1, H]
};

template <typename T>
LstmState<T> lstm_zero_state(Tape<T>& tape, std::int64_t hidden) {
  return {tape.leaf(zeros<T>({1, hidden})), tape.leaf(zeros<T>({1, hidden}))};
}

template <typename T>
LstmState<T> lstm_step(Tape<T>& tape, typename Tape<T>::Var x_t, const LstmState<T>& s,
                       const LstmLayer<T>& p) {
  const auto H = p.hidden;
  auto gates = tape.add(tape.add(tape.matmul(x_t, p.wx), tape.matmul(s.h, p.wh)), p.b);
  auto i = tape.sigmoid(tape.slice_cols(gates, 0, H));
  auto f = tape.sigmoid(tape.slice_cols(gates, H, 2 * H));
  auto g = tape.tanh_(tape.slice_cols(gates, 2 * H, 3 * H));
  auto o = tape.sigmoid(tape.slice_cols(gates, 3 * H, 4 * H));
  auto c = tape.add(tape.mul(f, s.c), tape.mul(i, g));
  auto h = tape.mul(o, tape.tanh_(c));
  return {h, c};
}

// Left-to-right pass over [T,in]; returns stacked hidden states [T,H].
template <typename T>
typename Tape<T>::Var lstm_seq(Tape<T>& tape, typename Tape<T>::Var x, const LstmLayer<T>& p) {
  const auto t_len = tape.val(x).rows();
  LstmState<T> s = lstm_zero_state(tape, p.hidden);
  std::vector<typename Tape<T>::Var> rows;
  rows.reserve(static_cast<std::size_t>(t_len));
  for (std::int64_t t = 0; t < t_len; ++t) {
    s = lstm_step(tape, tape.slice_rows(x, t, t + 1), s, p);
    rows.push_back(s.h);
  }
  return tape.concat_rows(rows);
}

template <typename T>
struct BilstmLayer {
  LstmLayer<T> fwd;
  LstmLayer<T> bwd;
};

template <typename T>
BilstmLayer<T> make_bilstm(ParamRegistry<T>& reg, const std::string& prefix, std::int64_t in,
                           std::int64_t hidden) {
  return {make_lstm(reg, prefix + ".fwd", in, hidden), make_lstm(reg, prefix + ".bwd", in, hidden)};
}

// Row t of the output is [forward state at t | backward state at t].
template <typename T>
typename Tape<T>::Var bilstm(Tape<T>& tape, typename Tape<T>::Var x, const BilstmLayer<T>& p) {
  const auto t_len = tape.val(x).rows();
  std::vector<std::int64_t> rev(static_cast<std::size_t>(t_len));
  for (std::int64_t t = 0; t < t_len; ++t) rev[static_cast<std::size_t>(t)] = t_len - 1 - t;
  auto fwd_out = lstm_seq(tape, x, p.fwd);
  auto bwd_out = tape.gather_rows(lstm_seq(tape, tape.gather_rows(x, rev), p.bwd), rev);
  return tape.concat_cols(fwd_out, bwd_out);
}

template <typename T>
struct PrenetLayer {
  AffineLayer<T> l1;
  AffineLayer<T> l2;
};

template <typename T>
PrenetLayer<T> make_prenet(ParamRegistry<T>& reg, const std::string& prefix, std::int64_t in,
                           std::int64_t width) {
  return {make_affine(reg, prefix + ".l1", in, width), make_affine(reg, prefix + ".l2", width, width)};
}

template <typename T>
typename Tape<T>::Var prenet(Tape<T>& tape, typename Tape<T>::Var x, const PrenetLayer<T>& p) {
  return affine(tape, affine(tape, x, p.l1, Act::relu), p.l2, Act::relu);
}

}  // namespace dtts
