#pragma once

#include <vector>

#include "fuseg/volume.hpp"

namespace fuseg {

// Collapses 1-3 annotator masks into a single ground truth:
//   1 mask  -> used as is
//   2 masks -> voxelwise logical AND
//   3 masks -> voxelwise majority vote (>= 2 of 3)
BinaryMask consensus_mask(const std::vector<BinaryMask>& masks);

}  // namespace fuseg
