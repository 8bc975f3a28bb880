#pragma once

#include <cstdint>
#include <string>

#include "fuseg/manifest.hpp"
#include "fuseg/rng.hpp"
#include "fuseg/volume.hpp"

namespace fuseg {

// Synthetic dual-modality study with known geometry. The mask is an
// ellipsoidal shell. B-mode shows the shell bright over a darker background
// with multiplicative speckle-like noise, plus (optionally) a confounder
// shell outside the mask with the same echo texture, so B-mode alone cannot
// tell the two structures apart. Doppler shows sparse vessel blobs placed
// inside the mask only, so it localizes the true shell but does not cover
// it. Each modality alone is ambiguous; together they determine the mask.
struct PhantomSpec {
  Index3 grid{64, 64, 64};
  Spacing3 spacing{1.0, 1.0, 1.0};
  Eigen::Vector3d center{31.5, 31.5, 31.5};
  Eigen::Vector3d radii{16.0, 14.0, 15.0};  // outer radii, voxels
  double thickness = 5.0;                   // shell thickness, voxels
  double noise_level = 0.15;                // multiplicative speckle sigma
  int vessel_count = 5;
  double vessel_radius = 2.0;  // voxels
  bool confounder = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Randomized spec with geometry proportional to the grid.
PhantomSpec sample_phantom_spec(const Index3& grid, const Spacing3& spacing, Rng& rng,
                                double noise_level = 0.15, bool confounder = true);

Study generate_phantom(const PhantomSpec& spec, const std::string& study_id = "phantom",
                       const std::string& patient_id = "");

struct PhantomDatasetOptions {
  int count = 10;
  std::uint64_t seed = 0;
  Index3 grid{64, 64, 64};
  Spacing3 spacing{1.0, 1.0, 1.0};
  double noise_level = 0.15;
  bool confounder = true;
  int studies_per_patient = 1;
};

// Writes <out_dir>/sNNNN/{bmode,doppler,mask}.nii.gz plus manifest.txt and
// returns the manifest.
DatasetManifest generate_phantom_dataset(const std::string& out_dir,
                                         const PhantomDatasetOptions& options);

}  // namespace fuseg
