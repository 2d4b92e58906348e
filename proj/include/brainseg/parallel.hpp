#pragma once

#include <cstddef>
#include <functional>

namespace brainseg {

// Process-wide worker count used by the voxel and convolution kernels.
// Results never depend on it: every parallel loop partitions disjoint outputs.
void set_num_threads(int n);
int num_threads();

// Runs body(begin, end) over a static partition of [0, n).
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)> &body);

} // namespace brainseg
