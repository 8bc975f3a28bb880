#pragma once

#include <cstdint>
#include <string>

#include "fuseg/nn/builders.hpp"

namespace fuseg {

using SegModel = nn::SegModelT<float>;

// Self-describing archive: JSON header (architecture, fusion, normalization
// stats, tensor directory) followed by raw little-endian float32 tensors.
// Loading rebuilds an identical model (forward outputs bit-equal).
void save_checkpoint(SegModel& model, const std::string& path);
SegModel load_checkpoint(const std::string& path);

// FNV-1a over the file bytes; used to compare run artifacts.
std::uint64_t file_digest(const std::string& path);

}  // namespace fuseg
