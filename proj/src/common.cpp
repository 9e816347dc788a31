#include "csn/common.hpp"

#include <atomic>

namespace csn {

namespace {
std::atomic<bool> g_accum_f64{false};
std::atomic<int> g_threads{0};
}  // namespace

void set_accum_f64(bool on) { g_accum_f64.store(on); }
bool accum_f64() { return g_accum_f64.load(); }

void set_num_threads(int n) {
  g_threads.store(n);
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

int num_threads() {
#ifdef _OPENMP
  int n = g_threads.load();
  return n > 0 ? n : omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace csn
