#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "csn/common.hpp"

namespace csn {

// Dense 5-D extents in (batch, channel, time, height, width) order.
struct Shape5 {
  std::int64_t n = 1, c = 1, t = 1, h = 1, w = 1;

  bool operator==(const Shape5& o) const {
    return n == o.n && c == o.c && t == o.t && h == o.h && w == o.w;
  }
  bool operator!=(const Shape5& o) const { return !(*this == o); }

  std::int64_t elems() const { return n * c * t * h * w; }
  std::int64_t voxels() const { return t * h * w; }  // per-sample, per-channel

  std::string str() const;
  // Throws std::invalid_argument on a non-positive extent and
  // std::overflow_error if the element count does not fit addressable memory.
  void validate() const;
};

// Deterministic 64-bit generator (splitmix64). The integer stream is
// platform-exact; split() derives independent child streams by mixing the
// stream id into the seed. Test vectors live in tests/test_tensor.cpp.
struct Rng {
  std::uint64_t state = 0;

  explicit Rng(std::uint64_t seed = 0) : state(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    state += 0x9E3779B97F4A7C15ull;
    return mix(state);
  }

  Rng split(std::uint64_t stream_id) const {
    return Rng(mix(state ^ mix(stream_id + 0x9E3779B97F4A7C15ull)));
  }

  // Uniform in [0, 1) with 24 bits of precision (exact in float).
  float next_float() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
  }

  double next_double() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  // Uniform integer in [0, bound). Modulo bias is irrelevant at our scales.
  std::int64_t next_index(std::int64_t bound) {
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(bound));
  }

  // Box-Muller. Consumes two draws per pair; we return one value per call and
  // discard the sibling to keep the stream position a pure function of call count.
  double next_normal() {
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }
};

// Contiguous row-major (n, c, t, h, w) tensor. Values are immutable by
// convention once built; the *_inplace helpers below are the only sanctioned
// mutators and are used by the optimizer alone.
template <class T>
struct TensorT {
  Shape5 shape;
  std::vector<T> data;

  TensorT() : shape{1, 1, 1, 1, 1}, data(1, T(0)) {}
  TensorT(Shape5 s, T fill) : shape(s) {
    shape.validate();
    data.assign(static_cast<std::size_t>(s.elems()), fill);
  }

  static TensorT zeros(Shape5 s) { return TensorT(s, T(0)); }
  static TensorT full(Shape5 s, T v) { return TensorT(s, v); }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

  // Flat offset of (n, c, t, h, w); the inverse is index_of().
  std::int64_t offset(std::int64_t n, std::int64_t c, std::int64_t t,
                      std::int64_t h, std::int64_t w) const {
    return (((n * shape.c + c) * shape.t + t) * shape.h + h) * shape.w + w;
  }

  void index_of(std::int64_t flat, std::int64_t idx[5]) const {
    idx[4] = flat % shape.w;
    flat /= shape.w;
    idx[3] = flat % shape.h;
    flat /= shape.h;
    idx[2] = flat % shape.t;
    flat /= shape.t;
    idx[1] = flat % shape.c;
    idx[0] = flat / shape.c;
  }

  T& at(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w) {
    return data[static_cast<std::size_t>(offset(n, c, t, h, w))];
  }
  T at(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w) const {
    return data[static_cast<std::size_t>(offset(n, c, t, h, w))];
  }

  T* chan(std::int64_t n, std::int64_t c) { return data.data() + offset(n, c, 0, 0, 0); }
  const T* chan(std::int64_t n, std::int64_t c) const {
    return data.data() + offset(n, c, 0, 0, 0);
  }
};

using Tensor5 = TensorT<float>;
using Tensor5d = TensorT<double>;

template <class To, class From>
TensorT<To> convert(const TensorT<From>& x) {
  TensorT<To> out(x.shape, To(0));
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = static_cast<To>(x.data[i]);
  return out;
}

// --- factories -------------------------------------------------------------

Tensor5 tensor_new(Shape5 shape, float fill);

// I.i.d. normal(0, std) draws from the rng's current position.
Tensor5 seeded_normal(Shape5 shape, Rng& rng, float stddev);

// --- elementwise -----------------------------------------------------------

template <class T, class F>
TensorT<T> map(const TensorT<T>& a, F&& f) {
  TensorT<T> out(a.shape, T(0));
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
  return out;
}

template <class T, class F>
TensorT<T> zip(const TensorT<T>& a, const TensorT<T>& b, F&& f) {
  detail::require(a.shape == b.shape,
                  "zip: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
  TensorT<T> out(a.shape, T(0));
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
  return out;
}

template <class T, class F>
void map_inplace(TensorT<T>& a, F&& f) {
  for (auto& v : a.data) v = f(v);
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return zip(a, b, [](T x, T y) { return x + y; });
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
  return map(a, [](T x) { return x > T(0) ? x : T(0); });
}

// dL/dx for y = relu(x): passes grad where the forward input was positive.
template <class T>
TensorT<T> relu_backward(const TensorT<T>& grad_out, const TensorT<T>& input) {
  return zip(grad_out, input, [](T g, T x) { return x > T(0) ? g : T(0); });
}

}  // namespace csn
