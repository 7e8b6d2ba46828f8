#include "kemvol/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#ifdef KEMVOL_HAVE_OPENMP
#include <omp.h>
#endif

namespace kemvol {
namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }

int num_threads() { return g_threads.load(); }

int hardware_threads() {
#ifdef KEMVOL_HAVE_OPENMP
  return std::max(1, omp_get_num_procs());
#else
  return 1;
#endif
}

}  // namespace kemvol
