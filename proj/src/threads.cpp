// SPDX-License-Identifier: Apache-2.0
#include "naturalize/threads.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace naturalize {

namespace {
int g_threads = 0;
}

void set_threads(int n) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (n <= 0) n = hw;
  n = std::min(n, hw);
  g_threads = n;
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
  Eigen::setNbThreads(n);
}

int thread_count() {
  if (g_threads == 0) set_threads(0);
  return g_threads;
}

void set_threads_from_env() {
  const char* env = std::getenv("NATURALIZE_THREADS");
  if (env && *env) {
    set_threads(std::atoi(env));
  } else {
    set_threads(0);
  }
}

}  // namespace naturalize
