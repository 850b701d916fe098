#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dtts/layers.hpp"

namespace dtts {

// One memory block: affine to P1, projection to P2, then finite-impulse
// memory filters over the projected sequence (look-back order N1 with a
// learned lag-0 tap, look-ahead order N2), with an identity skip from the
// block input when dimensions allow.
template <typename T>
struct DfsmnBlock {
  AffineLayer<T> hidden;         // [D_in, P1] + bias
  AffineLayer<T> proj;           // [P1, P2] + bias
  typename Tape<T>::Var back;    // [(N1+1), P2], lags 0..N1
  typename Tape<T>::Var fwd;     // [N2, P2], leads 1..N2
  std::int64_t n1 = 0;
  std::int64_t n2 = 0;
  bool skip = false;             // input added to output iff D_in == P2
};

struct DfsmnStackConfig {
  std::int64_t blocks = 1;
  std::int64_t p1 = 256;
  std::int64_t p2 = 128;
  std::int64_t n1 = 0;
  std::int64_t n2 = 0;
};

template <typename T>
DfsmnBlock<T> make_dfsmn_block(ParamRegistry<T>& reg, const std::string& prefix, std::int64_t in,
                               std::int64_t p1, std::int64_t p2, std::int64_t n1, std::int64_t n2) {
  if (n1 < 0 || n2 < 0) throw std::invalid_argument("dfsmn: negative filter order");
  DfsmnBlock<T> b;
  b.hidden = make_affine(reg, prefix + ".hidden", in, p1);
  b.proj = make_affine(reg, prefix + ".proj", p1, p2);
  b.back = reg.add_weight(prefix + ".back", n1 + 1 + n2, {n1 + 1, p2});
  b.fwd = reg.add_weight(prefix + ".fwd", n1 + 1 + n2, {n2, p2});
  b.n1 = n1;
  b.n2 = n2;
  b.skip = (in == p2);
  return b;
}

template <typename T>
typename Tape<T>::Var dfsmn_block(Tape<T>& tape, typename Tape<T>::Var x, const DfsmnBlock<T>& b) {
  auto p = affine(tape, x, b.hidden, Act::relu);
  auto h = affine(tape, p, b.proj, Act::none);
  auto m = tape.fsmn_memory(h, b.back, b.fwd);
  return b.skip ? tape.add(x, m) : m;
}

template <typename T>
struct DfsmnStack {
  std::vector<DfsmnBlock<T>> blocks;
};

template <typename T>
DfsmnStack<T> make_dfsmn_stack(ParamRegistry<T>& reg, const std::string& prefix, std::int64_t in,
                               const DfsmnStackConfig& cfg) {
  if (cfg.blocks < 1) throw std::invalid_argument("dfsmn: stack needs at least one block");
  DfsmnStack<T> s;
  std::int64_t d = in;
  for (std::int64_t i = 0; i < cfg.blocks; ++i) {
    s.blocks.push_back(make_dfsmn_block(reg, prefix + ".block" + std::to_string(i), d, cfg.p1,
                                        cfg.p2, cfg.n1, cfg.n2));
    d = cfg.p2;
  }
  return s;
}

template <typename T>
typename Tape<T>::Var dfsmn_stack(Tape<T>& tape, typename Tape<T>::Var x, const DfsmnStack<T>& s) {
  auto h = x;
  for (const auto& b : s.blocks) h = dfsmn_block(tape, h, b);
  return h;
}

// Future frames that can influence an output frame: additive across blocks.
template <typename T>
std::int64_t lookahead_frames(const DfsmnStack<T>& s) {
  std::int64_t n = 0;
  for (const auto& b : s.blocks) n += b.n2;
  return n;
}

template <typename T>
std::int64_t lookback_frames(const DfsmnStack<T>& s) {
  std::int64_t n = 0;
  for (const auto& b : s.blocks) n += b.n1;
  return n;
}

}  // namespace dtts
