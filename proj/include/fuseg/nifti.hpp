#pragma once

#include <string>

#include "fuseg/volume.hpp"

namespace fuseg {

// Reads a single-channel 3D NIfTI-1 or NIfTI-2 image (optionally
// gzip-compressed). Spacing comes from pixdim[1..3]; scl_slope/scl_inter
// rescaling is applied when present. Byte-swapped files are handled.
Volume read_volume(const std::string& path);

// As read_volume, but additionally requires every voxel to be exactly 0 or 1.
BinaryMask read_mask(const std::string& path);

// Writes NIfTI-1, float32 voxels; gzip when the path ends in .gz.
void write_volume(const Volume& v, const std::string& path);

// Writes NIfTI-1, uint8 voxels.
void write_mask(const BinaryMask& m, const std::string& path);

}  // namespace fuseg
