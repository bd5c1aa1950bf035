#pragma once

namespace prcl {

// Worker-thread control for the OpenMP kernels. Thread count never changes
// numeric results: every parallel loop writes disjoint output slots and all
// reductions run in a fixed serial order.
void set_workers(int n);  // 0 = OpenMP default
int workers();
int max_workers();
bool openmp_enabled();

}  // namespace prcl
