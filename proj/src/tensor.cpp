#include "csn/tensor.hpp"

#include <limits>

namespace csn {

std::string Shape5::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(t) +
         "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

void Shape5::validate() const {
  const std::int64_t dims[5] = {n, c, t, h, w};
  for (std::int64_t d : dims)
    detail::require(d >= 1, "shape extent must be >= 1, got " + str());
  std::int64_t total = 1;
  for (std::int64_t d : dims) {
    if (total > std::numeric_limits<std::int64_t>::max() / d)
      throw std::overflow_error("shape element count overflows: " + str());
    total *= d;
  }
}

Tensor5 tensor_new(Shape5 shape, float fill) { return Tensor5(shape, fill); }

Tensor5 seeded_normal(Shape5 shape, Rng& rng, float stddev) {
  detail::require(stddev > 0.0f, "seeded_normal: stddev must be > 0");
  Tensor5 out(shape, 0.0f);
  for (auto& v : out.data) v = static_cast<float>(rng.next_normal()) * stddev;
  return out;
}

}  // namespace csn
