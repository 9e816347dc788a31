#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace csn {

// Library-wide knobs. Kernels accumulate in float by default; switching to
// double accumulation keeps tensor storage in float but removes most of the
// summation rounding, which finite-difference checks rely on.
void set_accum_f64(bool on);
bool accum_f64();

// Number of worker threads used by the compute kernels. 0 = platform default.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, n), statically chunked. Every index is processed by
// exactly one thread and kernels own disjoint output slices per index, so
// results are bit-identical for any thread count.
template <class F>
void parallel_for(std::int64_t n, F&& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) fn(i);
#else
  for (std::int64_t i = 0; i < n; ++i) fn(i);
#endif
}

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

}  // namespace csn
