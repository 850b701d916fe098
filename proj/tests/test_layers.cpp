#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "dtts/gradcheck.hpp"
#include "dtts/layers.hpp"

using namespace dtts;
using Var = Tape<float>::Var;

namespace {

template <typename T>
Tensor<T> tensor2(std::int64_t r, std::int64_t c, std::vector<T> v) {
  return Tensor<T>({r, c}, std::move(v));
}

// reference y = act(x W + b) with explicit loops
template <typename T>
Tensor<T> affine_oracle(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, bool relu_act) {
  Tensor<T> y({x.rows(), w.cols()});
  for (std::int64_t i = 0; i < x.rows(); ++i) {
    for (std::int64_t j = 0; j < w.cols(); ++j) {
      T acc = 0;
      for (std::int64_t p = 0; p < x.cols(); ++p) acc += x.at(i, p) * w.at(p, j);
      acc += b.data[static_cast<std::size_t>(j)];
      y.at(i, j) = relu_act && acc < 0 ? T(0) : acc;
    }
  }
  return y;
}

struct ScalarLstmRef {
  double i, f, g, o, c, h;
};

// one step of a hidden-size-1 cell, straight from the gate equations
ScalarLstmRef scalar_lstm_step(double x, double h0, double c0, const std::vector<double>& wx,
                               const std::vector<double>& wh, const std::vector<double>& b) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  ScalarLstmRef r{};
  r.i = sig(x * wx[0] + h0 * wh[0] + b[0]);
  r.f = sig(x * wx[1] + h0 * wh[1] + b[1]);
  r.g = std::tanh(x * wx[2] + h0 * wh[2] + b[2]);
  r.o = sig(x * wx[3] + h0 * wh[3] + b[3]);
  r.c = r.f * c0 + r.i * r.g;
  r.h = r.o * std::tanh(r.c);
  return r;
}

}  // namespace

TEST_CASE("affine with identity weights shifts by the bias") {
  Tape<float> t;
  AffineLayer<float> p{t.leaf(tensor2<float>(2, 2, {1, 0, 0, 1})),
                       t.leaf(Tensor<float>({2}, std::vector<float>{5, -7}))};
  auto y = affine(t, t.leaf(tensor2<float>(1, 2, {1, 2})), p);
  CHECK(t.val(y).data == std::vector<float>{6, -5});
  auto yr = affine(t, t.leaf(tensor2<float>(1, 2, {1, 2})), p, Act::relu);
  CHECK(t.val(yr).data == std::vector<float>{6, 0});
}

TEST_CASE("affine matches loop oracle on random instances") {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    auto x = uniform<float>({5, 7}, -2, 2, rng);
    auto w = uniform<float>({7, 4}, -1, 1, rng);
    auto b = uniform<float>({4}, -1, 1, rng);
    Tape<float> t;
    AffineLayer<float> p{t.leaf(w), t.leaf(b)};
    auto y = t.val(affine(t, t.leaf(x), p, Act::relu));
    auto ref = affine_oracle(x, w, b, true);
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
      CHECK(y.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("embedding looks up rows and scatter-adds gradients") {
  Tape<float> t;
  EmbeddingLayer<float> p{t.leaf(tensor2<float>(3, 2, {.5f, .6f, .7f, .8f, .9f, 1.f}), true)};
  auto y = embed(t, p, {2, 0, 2});
  CHECK(t.val(y).data == std::vector<float>{.9f, 1.f, .5f, .6f, .9f, 1.f});
  t.backward(t.sum_all(y));
  CHECK(t.grad(p.table).data == std::vector<float>{1, 1, 0, 0, 2, 2});
  CHECK_THROWS_WITH_AS(embed(t, p, {0, 3}), doctest::Contains("position 1"), std::out_of_range);
  CHECK_THROWS_AS(embed(t, p, {-1}), std::out_of_range);
}

TEST_CASE("fresh lstm: zero input and state stays exactly zero") {
  Tape<float> t;
  std::mt19937 rng(2);
  std::vector<std::pair<std::string, Var>> names;
  ParamRegistry<float> reg(t, rng, names);
  auto p = make_lstm(reg, "l", 3, 4);
  auto s = lstm_step(t, t.leaf(zeros<float>({1, 3})), lstm_zero_state(t, 4), p);
  // c' = sigmoid(1)*0 + sigmoid(0)*tanh(0) = 0, h' = sigmoid(0)*tanh(0) = 0
  CHECK(t.val(s.h).data == std::vector<float>(4, 0.0f));
  CHECK(t.val(s.c).data == std::vector<float>(4, 0.0f));
}

TEST_CASE("lstm init: forget bias one, others zero, weights inside fan-in bound") {
  Tape<float> t;
  std::mt19937 rng(2);
  std::vector<std::pair<std::string, Var>> names;
  ParamRegistry<float> reg(t, rng, names);
  auto p = make_lstm(reg, "l", 6, 4);
  const auto& b = t.val(p.b);
  for (std::int64_t k = 0; k < 16; ++k) {
    CHECK(b.data[static_cast<std::size_t>(k)] == (k >= 4 && k < 8 ? 1.0f : 0.0f));
  }
  const float bound_wx = std::sqrt(1.0f / 6);
  for (float v : t.val(p.wx).data) CHECK(std::abs(v) <= bound_wx);
  const float bound_wh = std::sqrt(1.0f / 4);
  for (float v : t.val(p.wh).data) CHECK(std::abs(v) <= bound_wh);
  CHECK(names.size() == 3);
  CHECK(names[0].first == "l.wx");
}

TEST_CASE("hidden-size-1 lstm matches the scalar gate equations") {
  const std::vector<double> wx{0.1, 0.2, 0.3, 0.4}, wh{0.5, 0.6, 0.7, 0.8},
      b{0.01, 1.0, 0.02, 0.03};
  Tape<double> t;
  LstmLayer<double> p{t.leaf(tensor2<double>(1, 4, std::vector<double>(wx))),
                      t.leaf(tensor2<double>(1, 4, std::vector<double>(wh))),
                      t.leaf(Tensor<double>({4}, std::vector<double>(b))), 1};
  auto s0 = lstm_zero_state(t, 1);
  auto s1 = lstm_step(t, t.leaf(tensor2<double>(1, 1, {0.5})), s0, p);
  auto ref1 = scalar_lstm_step(0.5, 0, 0, wx, wh, b);
  CHECK(t.val(s1.c).scalar() == doctest::Approx(ref1.c).epsilon(1e-12));
  CHECK(t.val(s1.h).scalar() == doctest::Approx(ref1.h).epsilon(1e-12));

  auto s2 = lstm_step(t, t.leaf(tensor2<double>(1, 1, {-0.3})), s1, p);
  auto ref2 = scalar_lstm_step(-0.3, ref1.h, ref1.c, wx, wh, b);
  CHECK(t.val(s2.c).scalar() == doctest::Approx(ref2.c).epsilon(1e-12));
  CHECK(t.val(s2.h).scalar() == doctest::Approx(ref2.h).epsilon(1e-12));
}

TEST_CASE("saturated forget gate carries the cell through") {
  Tape<double> t;
  std::mt19937 rng(4);
  // forget bias 20: f = sigmoid(20) ~ 1 - 2e-9
  Tensor<double> b({8}, 0.0);
  for (int k = 2; k < 4; ++k) b.data[k] = 20.0;
  LstmLayer<double> p{t.leaf(uniform<double>({3, 8}, -0.2, 0.2, rng)),
                      t.leaf(uniform<double>({2, 8}, -0.2, 0.2, rng)), t.leaf(b), 2};
  auto c0 = uniform<double>({1, 2}, -1, 1, rng);
  LstmState<double> s{t.leaf(uniform<double>({1, 2}, -1, 1, rng)), t.leaf(c0)};
  auto x = t.leaf(uniform<double>({1, 3}, -1, 1, rng));
  auto s1 = lstm_step(t, x, s, p);

  // recover i (.) g from the same gate inputs and verify c' ~ c + i (.) g
  auto gates = t.add(t.add(t.matmul(x, p.wx), t.matmul(s.h, p.wh)), p.b);
  auto ig = t.mul(t.sigmoid(t.slice_cols(gates, 0, 2)), t.tanh_(t.slice_cols(gates, 4, 6)));
  for (int k = 0; k < 2; ++k) {
    const double expect = c0.data[k] + t.val(ig).data[k];
    CHECK(t.val(s1.c).data[k] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("lstm_seq stacks the per-step hidden states") {
  Tape<float> t;
  std::mt19937 rng(6);
  std::vector<std::pair<std::string, Var>> names;
  ParamRegistry<float> reg(t, rng, names);
  auto p = make_lstm(reg, "l", 3, 2);
  auto x = t.leaf(uniform<float>({4, 3}, -1, 1, rng));
  auto seq = t.val(lstm_seq(t, x, p));
  CHECK(seq.shape == std::vector<std::int64_t>{4, 2});

  LstmState<float> s = lstm_zero_state(t, 2);
  for (std::int64_t step = 0; step < 4; ++step) {
    s = lstm_step(t, t.slice_rows(x, step, step + 1), s, p);
    for (std::int64_t j = 0; j < 2; ++j) CHECK(t.val(s.h).at(0, j) == seq.at(step, j));
  }
}

TEST_CASE("bilstm output is [forward | backward] per row") {
  Tape<float> t;
  std::mt19937 rng(7);
  std::vector<std::pair<std::string, Var>> names;
  ParamRegistry<float> reg(t, rng, names);
  auto p = make_bilstm(reg, "b", 3, 2);
  auto x = t.leaf(uniform<float>({5, 3}, -1, 1, rng));
  auto y = t.val(bilstm(t, x, p));
  CHECK(y.shape == std::vector<std::int64_t>{5, 4});

  // forward half equals a plain left-to-right pass
  auto f = t.val(lstm_seq(t, x, p.fwd));
  for (std::int64_t i = 0; i < 5; ++i) {
    for (std::int64_t j = 0; j < 2; ++j) CHECK(y.at(i, j) == f.at(i, j));
  }
  // backward half equals a reversed pass, re-reversed
  std::vector<std::int64_t> rev{4, 3, 2, 1, 0};
  auto bwd = t.val(t.gather_rows(lstm_seq(t, t.gather_rows(x, rev), p.bwd), rev));
  for (std::int64_t i = 0; i < 5; ++i) {
    for (std::int64_t j = 0; j < 2; ++j) CHECK(y.at(i, 2 + j) == bwd.at(i, j));
  }
}

TEST_CASE("bilstm with tied directions is mirror-symmetric on palindromes") {
  Tape<float> t;
  std::mt19937 rng(8);
  std::vector<std::pair<std::string, Var>> names;
  ParamRegistry<float> reg(t, rng, names);
  auto one = make_lstm(reg, "l", 3, 2);
  BilstmLayer<float> tied{one, one};

  Tensor<float> x({5, 3});
  std::mt19937 rng2(9);
  auto half = uniform<float>({3, 3}, -1, 1, rng2);
  for (std::int64_t i = 0; i < 5; ++i) {
    const std::int64_t src = i < 3 ? i : 4 - i + 0;  // rows 3,4 mirror 1,0
    for (std::int64_t j = 0; j < 3; ++j) x.at(i, j) = half.at(std::min(src, 4 - i), j);
  }
  auto y = t.val(bilstm(t, t.leaf(x), tied));
  // backward state at row i == forward state at mirrored row
  for (std::int64_t i = 0; i < 5; ++i) {
    for (std::int64_t j = 0; j < 2; ++j) CHECK(y.at(i, 2 + j) == y.at(4 - i, j));
  }
}

TEST_CASE("bilstm is non-causal: the last input reaches row zero") {
  std::mt19937 rng(10);
  auto x = uniform<float>({4, 3}, -1, 1, rng);
  auto run = [&](const Tensor<float>& input) {
    Tape<float> t;
    std::mt19937 r(12);
    std::vector<std::pair<std::string, Var>> names;
    ParamRegistry<float> reg(t, r, names);
    auto p = make_bilstm(reg, "b", 3, 2);
    return t.val(bilstm(t, t.leaf(input), p));
  };
  auto y0 = run(x);
  auto x2 = x;
  x2.at(3, 1) += 1.0f;
  auto y1 = run(x2);
  bool bwd_row0_changed = false;
  for (std::int64_t j = 2; j < 4; ++j) bwd_row0_changed |= y0.at(0, j) != y1.at(0, j);
  CHECK(bwd_row0_changed);
  // the forward half of row 0 cannot see it
  for (std::int64_t j = 0; j < 2; ++j) CHECK(y0.at(0, j) == y1.at(0, j));
}

TEST_CASE("prenet composes two relu affines and kills zero input") {
  Tape<float> t;
  std::mt19937 rng(13);
  std::vector<std::pair<std::string, Var>> names;
  ParamRegistry<float> reg(t, rng, names);
  auto p = make_prenet(reg, "p", 3, 4);
  auto z = prenet(t, t.leaf(zeros<float>({2, 3})), p);
  CHECK(t.val(z).data == std::vector<float>(8, 0.0f));  // relu(0 W + 0) twice

  auto x = t.leaf(uniform<float>({2, 3}, -1, 1, rng));
  auto y = t.val(prenet(t, x, p));
  auto ref = t.val(affine(t, affine(t, x, p.l1, Act::relu), p.l2, Act::relu));
  CHECK(std::memcmp(y.data.data(), ref.data.data(), y.data.size() * sizeof(float)) == 0);
}

TEST_CASE("gradcheck: affine with sigmoid head") {
  std::mt19937 rng(14);
  std::vector<Tensor<double>> inputs = {uniform<double>({4, 3}, -1, 1, rng),
                                        uniform<double>({3, 5}, -1, 1, rng),
                                        uniform<double>({5}, -1, 1, rng)};
  auto rep = gradcheck<double>(inputs, [](Tape<double>& t, const std::vector<Tape<double>::Var>& v) {
    AffineLayer<double> p{v[1], v[2]};
    auto y = affine(t, v[0], p, Act::sigmoid);
    return t.mean_all(t.mul(y, y));
  });
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck: four-step lstm sequence") {
  std::mt19937 rng(15);
  std::vector<Tensor<double>> inputs = {uniform<double>({4, 3}, -1, 1, rng),
                                        uniform<double>({3, 8}, -0.5, 0.5, rng),
                                        uniform<double>({2, 8}, -0.5, 0.5, rng),
                                        uniform<double>({8}, -0.5, 0.5, rng)};
  auto rep = gradcheck<double>(inputs, [](Tape<double>& t, const std::vector<Tape<double>::Var>& v) {
    LstmLayer<double> p{v[1], v[2], v[3], 2};
    auto y = lstm_seq(t, v[0], p);
    return t.mean_all(t.mul(y, y));
  });
  CHECK(rep.max_rel_err < 1e-4);
}
