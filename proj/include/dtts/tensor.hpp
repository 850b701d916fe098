#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtts {

// MAC/FLOP counters for the calling thread. Ops bump the innermost active
// scope; instrumentation is forward-only (backward passes are not counted).
struct OpCounts {
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;  // includes 2*macs
};

namespace detail {
inline thread_local OpCounts* g_counts = nullptr;
}

inline void bump_macs(std::uint64_t n) {
  if (detail::g_counts != nullptr) {
    detail::g_counts->macs += n;
    detail::g_counts->flops += 2 * n;
  }
}

inline void bump_flops(std::uint64_t n) {
  if (detail::g_counts != nullptr) detail::g_counts->flops += n;
}

class CountScope {
 public:
  CountScope() : prev_(detail::g_counts) { detail::g_counts = &counts_; }
  ~CountScope() { detail::g_counts = prev_; }
  CountScope(const CountScope&) = delete;
  CountScope& operator=(const CountScope&) = delete;

  const OpCounts& counts() const { return counts_; }

 private:
  OpCounts counts_;
  OpCounts* prev_;
};

// Dense row-major tensor, rank 1..3. The value type of the whole engine;
// float for training/inference, double for gradient checks.
template <typename T>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<T> data;

  Tensor() = default;

  Tensor(std::vector<std::int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    check_shape();
    if (static_cast<std::int64_t>(data.size()) != numel()) {
      throw std::invalid_argument("tensor: data size " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str());
    }
  }

  explicit Tensor(std::vector<std::int64_t> s, T fill = T(0)) : shape(std::move(s)) {
    check_shape();
    data.assign(static_cast<std::size_t>(numel()), fill);
  }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  bool is_scalar() const { return numel() == 1; }

  // rank-2 accessors
  std::int64_t rows() const { return shape.at(0); }
  std::int64_t cols() const { return shape.size() > 1 ? shape.at(1) : 1; }
  T& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  const T& at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * cols() + c)];
  }

  T scalar() const {
    if (!is_scalar()) throw std::logic_error("tensor: scalar() on shape " + shape_str());
    return data[0];
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }

 private:
  void check_shape() const {
    if (shape.empty() || shape.size() > 3) {
      throw std::invalid_argument("tensor: rank must be 1..3, got " + std::to_string(shape.size()));
    }
    for (auto d : shape) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension in " + shape_str());
    }
  }
};

template <typename T>
Tensor<T> zeros(std::vector<std::int64_t> shape) {
  return Tensor<T>(std::move(shape), T(0));
}

template <typename T>
Tensor<T> full(std::vector<std::int64_t> shape, T v) {
  return Tensor<T>(std::move(shape), v);
}

template <typename T>
Tensor<T> uniform(std::vector<std::int64_t> shape, T lo, T hi, std::mt19937& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename Dst, typename Src>
Tensor<Dst> cast(const Tensor<Src>& t) {
  Tensor<Dst> out(t.shape);
  for (std::size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<Dst>(t.data[i]);
  return out;
}

}  // namespace dtts
