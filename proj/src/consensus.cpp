#include "fuseg/consensus.hpp"

namespace fuseg {

BinaryMask consensus_mask(const std::vector<BinaryMask>& masks) {
  require(!masks.empty() && masks.size() <= 3, ErrorCode::kInvalidArgument,
          "consensus_mask: expected 1-3 masks, got " + std::to_string(masks.size()));
  for (const auto& m : masks) {
    m.check_binary("consensus_mask");
    require(m.same_grid(masks.front()), ErrorCode::kDataIntegrity,
            "consensus_mask: annotator masks disagree on shape/spacing");
  }

  if (masks.size() == 1) return masks.front();

  BinaryMask out(masks.front().shape, masks.front().spacing);
  const Eigen::Index n = out.voxels();
  if (masks.size() == 2) {
    for (Eigen::Index i = 0; i < n; ++i) out.data[i] = masks[0].data[i] & masks[1].data[i];
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const int votes = masks[0].data[i] + masks[1].data[i] + masks[2].data[i];
      out.data[i] = votes >= 2 ? 1 : 0;
    }
  }
  return out;
}

}  // namespace fuseg
