#pragma once

#include <cstddef>
#include <cstdint>

namespace kemvol {

// Thread budget for every data-parallel pass in the library. Work is always
// split statically by output voxel (or slice), so results do not depend on it.
void set_num_threads(int n);
int num_threads();

// Threads the runtime can actually schedule (1 when built without OpenMP).
int hardware_threads();

}  // namespace kemvol
