// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace naturalize {

// Caps worker threads for GEMM and per-image parallel sections.
// n <= 0 resets to the hardware default. Honors NATURALIZE_THREADS when
// set_threads_from_env() is called.
void set_threads(int n);
int thread_count();
void set_threads_from_env();

}  // namespace naturalize
