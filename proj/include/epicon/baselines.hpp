#pragma once

#include <vector>

#include "epicon/epi_models.hpp"

namespace epicon {

/// Arithmetic mean per grid point per column (columns present in every
/// trajectory). All trajectories must share the same grid.
SampledTrajectory pointwise_mean(const std::vector<SampledTrajectory>& trajs);

/// Per-point median; the lower median is taken for even J so output values
/// are always drawn from the input curves.
SampledTrajectory pointwise_median(const std::vector<SampledTrajectory>& trajs);

}  // namespace epicon
