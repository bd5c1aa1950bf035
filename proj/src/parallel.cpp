#include "prcl/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace prcl {

namespace {
int g_workers = 0;
}

void set_workers(int n) {
  g_workers = n < 0 ? 0 : n;
#ifdef _OPENMP
  if (g_workers > 0) omp_set_num_threads(g_workers);
#endif
}

int workers() { return g_workers > 0 ? g_workers : max_workers(); }

int max_workers() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

}  // namespace prcl
