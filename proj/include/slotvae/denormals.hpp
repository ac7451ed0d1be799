// Flush subnormal floats to zero process-wide. Optimizer moments decay into
// the subnormal range once per-element gradients die off, and subnormal
// operands take microcode assists on x86 that slow converged training runs
// several-fold. Values below ~1e-38 are numerically zero for this model, so
// FTZ/DAZ changes nothing observable except speed. Threads created after
// load inherit the mode from their creator.
#pragma once

#if defined(__SSE2__) || defined(_M_X64)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace slotvae::detail {

struct DenormalGuard {
  DenormalGuard() noexcept {
#if defined(__SSE2__) || defined(_M_X64)
    _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
    _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
  }
};

// Inline variable: one shared instance constructed at load in every program
// that includes any slotvae header, with no unreferenced-object-file pitfall
// from static-library linking.
inline DenormalGuard denormal_guard{};

}  // namespace slotvae::detail
