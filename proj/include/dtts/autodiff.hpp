#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dtts/tensor.hpp"

namespace dtts {

// Reverse-mode autodiff over a tape of tensor nodes. Vars are indices into the
// tape; ops append a node holding the forward value plus a closure that
// scatters gradients back to its inputs. backward() replays closures in
// reverse creation order, which is a valid topological order by construction.
//
// The engine is single-threaded and iteration order is fixed, so forward
// values are bitwise reproducible for identical inputs.
//
// MAC counting convention: one multiply-accumulate = 1 MAC = 2 FLOPs; other
// elementwise ops cost 1 FLOP per output element. Memory taps in fsmn_memory
// are charged flat (out-of-range taps multiply an explicit zero), so the
// instrumented count of a forward pass is shape-dependent only.
template <typename T>
class Tape {
 public:
  using Var = std::int32_t;
  using i64 = std::int64_t;

  Var leaf(Tensor<T> v, bool trainable = false) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, trainable});
    return last();
  }

  std::size_t size() const { return nodes_.size(); }

  // Drops all nodes at index >= n. Used to discard activations between steps
  // while keeping parameter leaves (always the first nodes) alive.
  void truncate(std::size_t n) {
    if (n > nodes_.size()) throw std::logic_error("tape: truncate beyond size");
    nodes_.resize(n);
  }

  const Tensor<T>& val(Var v) const { return node(v).value; }

  // In-place value mutation for optimizer updates on parameter leaves.
  Tensor<T>& mutable_val(Var v) {
    Node& n = node(v);
    if (n.bwd) throw std::logic_error("tape: mutable_val only valid on leaves");
    return n.value;
  }

  const Tensor<T>& grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.data.empty()) throw std::logic_error("tape: grad read before backward");
    return n.grad;
  }

  bool trainable(Var v) const { return node(v).trainable; }

  // Accumulates d(root)/d(node) into every node's grad. Root must be scalar.
  void backward(Var root) {
    Node& r = node(root);
    if (!r.value.is_scalar()) {
      throw std::logic_error("tape: backward root must be scalar, got " + r.value.shape_str());
    }
    for (auto& n : nodes_) n.grad = Tensor<T>(n.value.shape, T(0));
    r.grad.data[0] = T(1);
    for (auto i = static_cast<std::ptrdiff_t>(root); i >= 0; --i) {
      if (nodes_[static_cast<std::size_t>(i)].bwd) nodes_[static_cast<std::size_t>(i)].bwd();
    }
  }

  // ---- ops ----

  // [M,K] x [K,N] -> [M,N]
  Var matmul(Var av, Var bv) {
    const Tensor<T>& a = val(av);
    const Tensor<T>& b = val(bv);
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
      throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() + " x " +
                                  b.shape_str());
    }
    const i64 m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<T> out({m, n}, T(0));
    for (i64 i = 0; i < m; ++i) {
      for (i64 p = 0; p < k; ++p) {
        const T aip = a.at(i, p);
        for (i64 j = 0; j < n; ++j) out.at(i, j) += aip * b.at(p, j);
      }
    }
    bump_macs(static_cast<std::uint64_t>(m) * k * n);
    return push(std::move(out), [this, av, bv, m, k, n](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      const Tensor<T>& a = val(av);
      const Tensor<T>& b = val(bv);
      Tensor<T>& ga = node(av).grad;
      Tensor<T>& gb = node(bv).grad;
      for (i64 i = 0; i < m; ++i) {
        for (i64 j = 0; j < n; ++j) {
          const T gij = g.at(i, j);
          for (i64 p = 0; p < k; ++p) {
            ga.at(i, p) += gij * b.at(p, j);
            gb.at(p, j) += a.at(i, p) * gij;
          }
        }
      }
    });
  }

  // Same-shape elementwise add, or row broadcast [M,N] + [N].
  Var add(Var av, Var bv) { return add_sub(av, bv, T(1)); }
  Var sub(Var av, Var bv) { return add_sub(av, bv, T(-1)); }

  Var mul(Var av, Var bv) {
    const Tensor<T>& a = val(av);
    const Tensor<T>& b = val(bv);
    if (a.shape != b.shape) {
      throw std::invalid_argument("mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    bump_flops(static_cast<std::uint64_t>(out.numel()));
    return push(std::move(out), [this, av, bv](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      const Tensor<T>& a = val(av);
      const Tensor<T>& b = val(bv);
      Tensor<T>& ga = node(av).grad;
      Tensor<T>& gb = node(bv).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        ga.data[i] += g.data[i] * b.data[i];
        gb.data[i] += g.data[i] * a.data[i];
      }
    });
  }

  Var scale(Var av, T s) {
    const Tensor<T>& a = val(av);
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * s;
    bump_flops(static_cast<std::uint64_t>(out.numel()));
    return push(std::move(out), [this, av, s](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      Tensor<T>& ga = node(av).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * s;
    });
  }

  Var sigmoid(Var av) {
    const Tensor<T>& a = val(av);
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = T(1) / (T(1) + std::exp(-a.data[i]));
    bump_flops(static_cast<std::uint64_t>(out.numel()));
    return push(std::move(out), [this, av](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      const Tensor<T>& y = node(ov).value;
      Tensor<T>& ga = node(av).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        ga.data[i] += g.data[i] * y.data[i] * (T(1) - y.data[i]);
      }
    });
  }

  Var tanh_(Var av) {
    const Tensor<T>& a = val(av);
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::tanh(a.data[i]);
    bump_flops(static_cast<std::uint64_t>(out.numel()));
    return push(std::move(out), [this, av](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      const Tensor<T>& y = node(ov).value;
      Tensor<T>& ga = node(av).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        ga.data[i] += g.data[i] * (T(1) - y.data[i] * y.data[i]);
      }
    });
  }

  Var relu(Var av) {
    const Tensor<T>& a = val(av);
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] > T(0) ? a.data[i] : T(0);
    bump_flops(static_cast<std::uint64_t>(out.numel()));
    return push(std::move(out), [this, av](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      const Tensor<T>& x = val(av);
      Tensor<T>& ga = node(av).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        if (x.data[i] > T(0)) ga.data[i] += g.data[i];
      }
    });
  }

  // |x| with subgradient 0 at x == 0.
  Var abs_(Var av) {
    const Tensor<T>& a = val(av);
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::abs(a.data[i]);
    bump_flops(static_cast<std::uint64_t>(out.numel()));
    return push(std::move(out), [this, av](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      const Tensor<T>& x = val(av);
      Tensor<T>& ga = node(av).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        if (x.data[i] > T(0)) ga.data[i] += g.data[i];
        else if (x.data[i] < T(0)) ga.data[i] -= g.data[i];
      }
    });
  }

  Var sum_all(Var av) {
    const Tensor<T>& a = val(av);
    T s = T(0);
    for (const T& v : a.data) s += v;
    bump_flops(static_cast<std::uint64_t>(a.numel()));
    Tensor<T> out({1}, std::vector<T>{s});
    return push(std::move(out), [this, av](Var ov) {
      const T g = node(ov).grad.data[0];
      Tensor<T>& ga = node(av).grad;
      for (auto& v : ga.data) v += g;
    });
  }

  Var mean_all(Var av) {
    const i64 n = val(av).numel();
    if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
    return scale(sum_all(av), T(1) / static_cast<T>(n));
  }

  // [M,A] | [M,B] -> [M,A+B]
  Var concat_cols(Var av, Var bv) {
    const Tensor<T>& a = val(av);
    const Tensor<T>& b = val(bv);
    if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
      throw std::invalid_argument("concat_cols: incompatible shapes " + a.shape_str() + " | " +
                                  b.shape_str());
    }
    const i64 m = a.rows(), ca = a.cols(), cb = b.cols();
    Tensor<T> out({m, ca + cb});
    for (i64 i = 0; i < m; ++i) {
      for (i64 j = 0; j < ca; ++j) out.at(i, j) = a.at(i, j);
      for (i64 j = 0; j < cb; ++j) out.at(i, ca + j) = b.at(i, j);
    }
    return push(std::move(out), [this, av, bv, m, ca, cb](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      Tensor<T>& ga = node(av).grad;
      Tensor<T>& gb = node(bv).grad;
      for (i64 i = 0; i < m; ++i) {
        for (i64 j = 0; j < ca; ++j) ga.at(i, j) += g.at(i, j);
        for (i64 j = 0; j < cb; ++j) gb.at(i, j) += g.at(i, ca + j);
      }
    });
  }

  // Vertical stack of rank-2 parts with equal column counts.
  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const i64 c = val(parts[0]).cols();
    i64 m = 0;
    for (Var p : parts) {
      const Tensor<T>& t = val(p);
      if (t.rank() != 2 || t.cols() != c) {
        throw std::invalid_argument("concat_rows: part shape " + t.shape_str() + " expects " +
                                    std::to_string(c) + " cols");
      }
      m += t.rows();
    }
    Tensor<T> out({m, c});
    i64 r = 0;
    for (Var p : parts) {
      const Tensor<T>& t = val(p);
      for (i64 i = 0; i < t.rows(); ++i, ++r) {
        for (i64 j = 0; j < c; ++j) out.at(r, j) = t.at(i, j);
      }
    }
    std::vector<Var> ps = parts;
    return push(std::move(out), [this, ps, c](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      i64 r = 0;
      for (Var p : ps) {
        Tensor<T>& gp = node(p).grad;
        for (i64 i = 0; i < gp.rows(); ++i, ++r) {
          for (i64 j = 0; j < c; ++j) gp.at(i, j) += g.at(r, j);
        }
      }
    });
  }

  Var slice_rows(Var av, i64 r0, i64 r1) {
    const Tensor<T>& a = val(av);
    if (a.rank() != 2 || r0 < 0 || r1 > a.rows() || r0 >= r1) {
      throw std::invalid_argument("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                                  ") out of " + a.shape_str());
    }
    const i64 c = a.cols();
    Tensor<T> out({r1 - r0, c});
    for (i64 i = r0; i < r1; ++i) {
      for (i64 j = 0; j < c; ++j) out.at(i - r0, j) = a.at(i, j);
    }
    return push(std::move(out), [this, av, r0, r1, c](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      Tensor<T>& ga = node(av).grad;
      for (i64 i = r0; i < r1; ++i) {
        for (i64 j = 0; j < c; ++j) ga.at(i, j) += g.at(i - r0, j);
      }
    });
  }

  Var slice_cols(Var av, i64 c0, i64 c1) {
    const Tensor<T>& a = val(av);
    if (a.rank() != 2 || c0 < 0 || c1 > a.cols() || c0 >= c1) {
      throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                                  ") out of " + a.shape_str());
    }
    const i64 m = a.rows();
    Tensor<T> out({m, c1 - c0});
    for (i64 i = 0; i < m; ++i) {
      for (i64 j = c0; j < c1; ++j) out.at(i, j - c0) = a.at(i, j);
    }
    return push(std::move(out), [this, av, c0, c1, m](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      Tensor<T>& ga = node(av).grad;
      for (i64 i = 0; i < m; ++i) {
        for (i64 j = c0; j < c1; ++j) ga.at(i, j) += g.at(i, j - c0);
      }
    });
  }

  Var reshape(Var av, std::vector<i64> shape) {
    const Tensor<T>& a = val(av);
    Tensor<T> out(std::move(shape));
    if (out.numel() != a.numel()) {
      throw std::invalid_argument("reshape: " + a.shape_str() + " to " + out.shape_str());
    }
    out.data = a.data;
    return push(std::move(out), [this, av](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      Tensor<T>& ga = node(av).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    });
  }

  // Select rows by index (repeats allowed); gradient scatter-adds.
  Var gather_rows(Var av, std::vector<i64> idx) {
    const Tensor<T>& a = val(av);
    if (a.rank() != 2) throw std::invalid_argument("gather_rows: expects rank 2");
    const i64 c = a.cols();
    Tensor<T> out({static_cast<i64>(idx.size()), c});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= a.rows()) {
        throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) + " out of " +
                                a.shape_str());
      }
      for (i64 j = 0; j < c; ++j) out.at(static_cast<i64>(i), j) = a.at(idx[i], j);
    }
    return push(std::move(out), [this, av, idx, c](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      Tensor<T>& ga = node(av).grad;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (i64 j = 0; j < c; ++j) ga.at(idx[i], j) += g.at(static_cast<i64>(i), j);
      }
    });
  }

  // Sequence memory: out[t] = h[t] + sum_i back[i] (.) h[t-i] + sum_j fwd[j] (.) h[t+j+1],
  // with h [T,D], back [Nb,D] (tap lags 0..Nb-1), fwd [Nf,D] (tap leads 1..Nf).
  // Out-of-range taps read an explicit zero, so every (t,d) performs the same
  // number of MACs regardless of position.
  Var fsmn_memory(Var hv, Var backv, Var fwdv) {
    const Tensor<T>& h = val(hv);
    const Tensor<T>& back = val(backv);
    const Tensor<T>& fwd = val(fwdv);
    if (h.rank() != 2 || back.rank() != 2 || fwd.rank() != 2 || back.cols() != h.cols() ||
        fwd.cols() != h.cols()) {
      throw std::invalid_argument("fsmn_memory: shapes h=" + h.shape_str() +
                                  " back=" + back.shape_str() + " fwd=" + fwd.shape_str());
    }
    const i64 t_len = h.rows(), d = h.cols(), nb = back.rows(), nf = fwd.rows();
    Tensor<T> out({t_len, d});
    for (i64 t = 0; t < t_len; ++t) {
      for (i64 k = 0; k < d; ++k) {
        T acc = h.at(t, k);
        for (i64 i = 0; i < nb; ++i) {
          const T tap = (t - i >= 0) ? h.at(t - i, k) : T(0);
          acc += back.at(i, k) * tap;
        }
        for (i64 j = 1; j <= nf; ++j) {
          const T tap = (t + j < t_len) ? h.at(t + j, k) : T(0);
          acc += fwd.at(j - 1, k) * tap;
        }
        out.at(t, k) = acc;
      }
    }
    bump_macs(static_cast<std::uint64_t>(t_len) * d * static_cast<std::uint64_t>(nb + nf));
    bump_flops(static_cast<std::uint64_t>(t_len) * d);  // the identity add
    return push(std::move(out), [this, hv, backv, fwdv, t_len, d, nb, nf](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      const Tensor<T>& h = val(hv);
      const Tensor<T>& back = val(backv);
      const Tensor<T>& fwd = val(fwdv);
      Tensor<T>& gh = node(hv).grad;
      Tensor<T>& gb = node(backv).grad;
      Tensor<T>& gf = node(fwdv).grad;
      for (i64 t = 0; t < t_len; ++t) {
        for (i64 k = 0; k < d; ++k) {
          const T gt = g.at(t, k);
          gh.at(t, k) += gt;
          for (i64 i = 0; i < nb; ++i) {
            if (t - i >= 0) {
              gh.at(t - i, k) += gt * back.at(i, k);
              gb.at(i, k) += gt * h.at(t - i, k);
            }
          }
          for (i64 j = 1; j <= nf; ++j) {
            if (t + j < t_len) {
              gh.at(t + j, k) += gt * fwd.at(j - 1, k);
              gf.at(j - 1, k) += gt * h.at(t + j, k);
            }
          }
        }
      }
    });
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void()> bwd;
    bool trainable = false;
  };

  Var add_sub(Var av, Var bv, T sign) {
    const Tensor<T>& a = val(av);
    const Tensor<T>& b = val(bv);
    const bool broadcast = a.rank() == 2 && b.rank() == 1 && a.cols() == b.shape[0];
    if (!broadcast && a.shape != b.shape) {
      throw std::invalid_argument("add/sub: shape mismatch " + a.shape_str() + " vs " +
                                  b.shape_str());
    }
    Tensor<T> out(a.shape);
    if (broadcast) {
      const i64 m = a.rows(), c = a.cols();
      for (i64 i = 0; i < m; ++i) {
        for (i64 j = 0; j < c; ++j) out.at(i, j) = a.at(i, j) + sign * b.data[static_cast<std::size_t>(j)];
      }
    } else {
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] + sign * b.data[i];
    }
    bump_flops(static_cast<std::uint64_t>(out.numel()));
    return push(std::move(out), [this, av, bv, sign, broadcast](Var ov) {
      const Tensor<T>& g = node(ov).grad;
      Tensor<T>& ga = node(av).grad;
      Tensor<T>& gb = node(bv).grad;
      if (broadcast) {
        const i64 m = g.rows(), c = g.cols();
        for (i64 i = 0; i < m; ++i) {
          for (i64 j = 0; j < c; ++j) {
            ga.at(i, j) += g.at(i, j);
            gb.data[static_cast<std::size_t>(j)] += sign * g.at(i, j);
          }
        }
      } else {
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          ga.data[i] += g.data[i];
          gb.data[i] += sign * g.data[i];
        }
      }
    });
  }

  Node& node(Var v) {
    if (v < 0 || static_cast<std::size_t>(v) >= nodes_.size()) {
      throw std::out_of_range("tape: bad var " + std::to_string(v));
    }
    return nodes_[static_cast<std::size_t>(v)];
  }
  const Node& node(Var v) const { return const_cast<Tape*>(this)->node(v); }

  Var last() const { return static_cast<Var>(nodes_.size() - 1); }

  template <typename F>
  Var push(Tensor<T> value, F&& backward_fn) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, false});
    const Var ov = last();
    nodes_.back().bwd = [fn = std::forward<F>(backward_fn), ov]() { fn(ov); };
    return ov;
  }

  std::vector<Node> nodes_;
};

}  // namespace dtts
