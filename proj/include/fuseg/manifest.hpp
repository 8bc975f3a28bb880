#pragma once

#include <string>
#include <vector>

#include "fuseg/volume.hpp"

namespace fuseg {

struct ManifestEntry {
  std::string study_id;
  std::string patient_id;
  std::string bmode_path;
  std::string doppler_path;
  std::vector<std::string> mask_paths;  // 1-3 annotator masks
};

// Plain-text dataset index. One study per row:
//   study_id patient_id bmode doppler mask1 [mask2 mask3]
// Relative paths are resolved against the manifest's directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string base_dir;

  const ManifestEntry* find(const std::string& study_id) const;
};

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& manifest, const std::string& path);

std::string resolve_path(const DatasetManifest& manifest, const std::string& p);

struct LoadOptions {
  Index3 grid{64, 64, 64};
  bool normalize = true;  // per-volume rescale onto [0,1]
};

// Reads one study: volumes and annotator masks from disk, consensus mask,
// everything resampled to options.grid (trilinear for intensities, nearest
// for the mask), intensities rescaled onto [0,1]. Degenerate constant
// volumes are zeroed and reported through `warnings` instead of aborting.
Study load_study(const DatasetManifest& manifest, const ManifestEntry& entry,
                 const LoadOptions& options, std::vector<std::string>* warnings = nullptr);

}  // namespace fuseg
