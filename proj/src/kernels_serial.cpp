#include "aerialvg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace aerialvg::kernels::serial {

#define AERIALVG_PARALLEL_FOR(work)
#include "kernels_impl.inc"
#undef AERIALVG_PARALLEL_FOR

}  // namespace aerialvg::kernels::serial
