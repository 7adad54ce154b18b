#pragma once

#include <cstddef>
#include <functional>

namespace mrd {

// Global worker count for the data-parallel kernels. 0 = use all hardware
// threads. Resolution order: explicit set_threads(), MRD_THREADS env var,
// hardware concurrency.
void set_threads(int n);
int threads();
int resolved_threads();

// Runs body(i) for i in [0, n). The serial driver is the reference
// implementation; the OpenMP driver must produce identical results for any
// body that only writes to index-i slots (all kernels in this project do).
void serial_for(std::size_t n, const std::function<void(std::size_t)>& body);
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mrd
