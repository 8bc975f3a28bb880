#pragma once

#include <Eigen/Core>

#include "fuseg/rng.hpp"
#include "fuseg/volume.hpp"

namespace fuseg {

// One sampled spatial transform, applied identically to every channel of a
// study. Shear components are edge displacements in voxels: shear.x()
// displaces x by up to that many voxels at the y-extent of the grid, and
// cyclically (y along z, z along x).
struct AffineParams {
  Eigen::Vector3d translation_vox = Eigen::Vector3d::Zero();
  Eigen::Vector3d rotation_deg = Eigen::Vector3d::Zero();
  Eigen::Vector3d scale = Eigen::Vector3d::Ones();
  Eigen::Vector3d shear_vox = Eigen::Vector3d::Zero();

  static AffineParams identity() { return {}; }
  bool is_identity() const;
};

struct AffineConfig {
  double max_translation_vox = 10.0;
  double max_rotation_deg = 10.0;
  double scale_lo = 0.9, scale_hi = 1.1;
  double max_shear_vox = 15.0;
};

AffineParams sample_affine(const AffineConfig& config, Rng& rng);

// Voxel-space forward map (about the grid center) for a given grid shape.
Eigen::Matrix4d affine_matrix(const AffineParams& params, const Index3& shape);

// Resamples through the inverse map; trilinear for intensities, nearest for
// masks; out-of-field voxels are 0.
Volume apply_affine(const Volume& v, const AffineParams& params);
BinaryMask apply_affine(const BinaryMask& m, const AffineParams& params);
Study apply_affine(const Study& s, const AffineParams& params);

}  // namespace fuseg
