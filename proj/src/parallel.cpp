#include "mrd/parallel.hpp"

#include <cstdlib>
#include <thread>

#ifdef MRD_HAVE_OPENMP
#include <omp.h>
#endif

namespace mrd {

namespace {
int g_threads = -1;  // -1 = not set
}

void set_threads(int n) { g_threads = n; }

int threads() { return g_threads; }

int resolved_threads() {
  if (g_threads > 0) return g_threads;
  if (const char* env = std::getenv("MRD_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

void serial_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  for (std::size_t i = 0; i < n; ++i) body(i);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const int nt = resolved_threads();
#ifdef MRD_HAVE_OPENMP
  if (nt > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(nt)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      body(static_cast<std::size_t>(i));
    }
    return;
  }
#else
  (void)nt;
#endif
  serial_for(n, body);
}

}  // namespace mrd
