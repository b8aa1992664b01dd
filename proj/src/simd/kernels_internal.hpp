#pragma once

#include "advml/simd/kernels.hpp"

namespace advml::simd::detail {

extern const KernelTable kScalarTable;
#if defined(ADVML_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif

}  // namespace advml::simd::detail
