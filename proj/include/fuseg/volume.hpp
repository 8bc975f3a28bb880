#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "fuseg/error.hpp"

namespace fuseg {

using Index3 = Eigen::Vector3i;
using Spacing3 = Eigen::Vector3d;

namespace detail {
inline std::string shape_str(const Index3& s) {
  return std::to_string(s.x()) + "x" + std::to_string(s.y()) + "x" + std::to_string(s.z());
}
}  // namespace detail

// A 3D scalar grid with physical voxel spacing in mm. Data is stored flat,
// x fastest (NIfTI order): lin(x,y,z) = x + nx*(y + ny*z).
template <typename Scalar>
struct VolumeT {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Index3 shape = Index3::Zero();
  Spacing3 spacing = Spacing3::Ones();
  Vector data;

  VolumeT() = default;
  VolumeT(const Index3& shape_, const Spacing3& spacing_, Scalar fill = Scalar(0))
      : shape(shape_), spacing(spacing_) {
    require(shape.minCoeff() >= 1, ErrorCode::kInvalidArgument,
            "volume shape must be positive, got " + detail::shape_str(shape));
    require(spacing.minCoeff() > 0 && spacing.allFinite(), ErrorCode::kInvalidArgument,
            "voxel spacing must be positive and finite");
    data = Vector::Constant(voxels(), fill);
  }

  Eigen::Index voxels() const {
    return static_cast<Eigen::Index>(shape.x()) * shape.y() * shape.z();
  }
  Eigen::Index lin(int x, int y, int z) const {
    return x + static_cast<Eigen::Index>(shape.x()) * (y + static_cast<Eigen::Index>(shape.y()) * z);
  }
  Scalar& at(int x, int y, int z) { return data[lin(x, y, z)]; }
  Scalar at(int x, int y, int z) const { return data[lin(x, y, z)]; }

  // Physical extent per axis in mm.
  Eigen::Vector3d extent() const { return shape.cast<double>().cwiseProduct(spacing); }

  bool same_grid(const VolumeT& o) const {
    return shape == o.shape && (spacing - o.spacing).cwiseAbs().maxCoeff() < 1e-12;
  }

  void check_finite(const std::string& context) const {
    require(data.allFinite(), ErrorCode::kDataIntegrity, context + ": volume contains NaN/Inf");
  }
};

using Volume = VolumeT<float>;

// Voxelwise {0,1} mask on the same grid conventions as VolumeT.
struct BinaryMask {
  Index3 shape = Index3::Zero();
  Spacing3 spacing = Spacing3::Ones();
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1> data;

  BinaryMask() = default;
  BinaryMask(const Index3& shape_, const Spacing3& spacing_, std::uint8_t fill = 0)
      : shape(shape_), spacing(spacing_) {
    require(shape.minCoeff() >= 1, ErrorCode::kInvalidArgument, "mask shape must be positive");
    require(spacing.minCoeff() > 0 && spacing.allFinite(), ErrorCode::kInvalidArgument,
            "voxel spacing must be positive and finite");
    data.setConstant(voxels(), fill);
  }

  Eigen::Index voxels() const {
    return static_cast<Eigen::Index>(shape.x()) * shape.y() * shape.z();
  }
  Eigen::Index lin(int x, int y, int z) const {
    return x + static_cast<Eigen::Index>(shape.x()) * (y + static_cast<Eigen::Index>(shape.y()) * z);
  }
  std::uint8_t& at(int x, int y, int z) { return data[lin(x, y, z)]; }
  std::uint8_t at(int x, int y, int z) const { return data[lin(x, y, z)]; }

  Eigen::Index count() const { return data.template cast<Eigen::Index>().sum(); }
  bool empty_mask() const { return count() == 0; }

  bool same_grid(const BinaryMask& o) const {
    return shape == o.shape && (spacing - o.spacing).cwiseAbs().maxCoeff() < 1e-12;
  }

  void check_binary(const std::string& context) const {
    for (Eigen::Index i = 0; i < data.size(); ++i)
      require(data[i] <= 1, ErrorCode::kDataIntegrity, context + ": mask voxel not in {0,1}");
  }

  template <typename Scalar = float>
  VolumeT<Scalar> as_volume() const {
    VolumeT<Scalar> v(shape, spacing);
    v.data = data.cast<Scalar>();
    return v;
  }
};

// One co-registered multi-modal scan bundle.
struct Study {
  std::string study_id;
  std::string patient_id;
  Volume bmode;
  Volume doppler;
  BinaryMask mask;

  void check_coregistered() const {
    require(bmode.shape == doppler.shape && bmode.shape == mask.shape, ErrorCode::kDataIntegrity,
            "study " + study_id + ": modality/mask shapes differ");
    require((bmode.spacing - doppler.spacing).cwiseAbs().maxCoeff() < 1e-9 &&
                (bmode.spacing - mask.spacing).cwiseAbs().maxCoeff() < 1e-9,
            ErrorCode::kDataIntegrity, "study " + study_id + ": modality/mask spacings differ");
  }
};

enum class Interp { kTrilinear, kNearest };

// Resamples onto target_shape, preserving the physical extent per axis
// (output spacing = input extent / target cells). Voxel centers sit at
// (i + 0.5) * spacing; sampling outside the grid clamps to the edge.
template <typename Scalar>
VolumeT<Scalar> resample(const VolumeT<Scalar>& v, const Index3& target_shape, Interp mode) {
  v.check_finite("resample");
  require(target_shape.minCoeff() >= 1, ErrorCode::kInvalidArgument,
          "resample: target shape must be positive");

  if (target_shape == v.shape) return v;

  Spacing3 out_spacing = v.extent().cwiseQuotient(target_shape.cast<double>());
  VolumeT<Scalar> out(target_shape, out_spacing);

  const Eigen::Vector3d ratio =
      v.shape.template cast<double>().cwiseQuotient(target_shape.cast<double>());
  const int nx = v.shape.x(), ny = v.shape.y(), nz = v.shape.z();

  auto src_coord = [&](int i, int axis) { return (i + 0.5) * ratio[axis] - 0.5; };

  Eigen::Index o = 0;
  for (int z = 0; z < target_shape.z(); ++z) {
    const double fz = src_coord(z, 2);
    for (int y = 0; y < target_shape.y(); ++y) {
      const double fy = src_coord(y, 1);
      for (int x = 0; x < target_shape.x(); ++x, ++o) {
        const double fx = src_coord(x, 0);
        if (mode == Interp::kNearest) {
          const int ix = std::clamp(static_cast<int>(std::lround(fx)), 0, nx - 1);
          const int iy = std::clamp(static_cast<int>(std::lround(fy)), 0, ny - 1);
          const int iz = std::clamp(static_cast<int>(std::lround(fz)), 0, nz - 1);
          out.data[o] = v.at(ix, iy, iz);
        } else {
          const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, nx - 1);
          const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, ny - 1);
          const int z0 = std::clamp(static_cast<int>(std::floor(fz)), 0, nz - 1);
          const int x1 = std::min(x0 + 1, nx - 1);
          const int y1 = std::min(y0 + 1, ny - 1);
          const int z1 = std::min(z0 + 1, nz - 1);
          const double tx = std::clamp(fx - x0, 0.0, 1.0);
          const double ty = std::clamp(fy - y0, 0.0, 1.0);
          const double tz = std::clamp(fz - z0, 0.0, 1.0);
          const double c00 = v.at(x0, y0, z0) * (1 - tx) + v.at(x1, y0, z0) * tx;
          const double c10 = v.at(x0, y1, z0) * (1 - tx) + v.at(x1, y1, z0) * tx;
          const double c01 = v.at(x0, y0, z1) * (1 - tx) + v.at(x1, y0, z1) * tx;
          const double c11 = v.at(x0, y1, z1) * (1 - tx) + v.at(x1, y1, z1) * tx;
          const double c0 = c00 * (1 - ty) + c10 * ty;
          const double c1 = c01 * (1 - ty) + c11 * ty;
          out.data[o] = static_cast<Scalar>(c0 * (1 - tz) + c1 * tz);
        }
      }
    }
  }
  return out;
}

inline BinaryMask resample_mask(const BinaryMask& m, const Index3& target_shape) {
  VolumeT<float> v = m.as_volume<float>();
  VolumeT<float> r = resample(v, target_shape, Interp::kNearest);
  BinaryMask out(target_shape, r.spacing);
  for (Eigen::Index i = 0; i < r.data.size(); ++i) out.data[i] = r.data[i] >= 0.5f ? 1 : 0;
  return out;
}

// Affine rescale onto [0,1]. A constant volume maps to all zeros; the
// degenerate flag (when provided) is set so callers can surface a warning
// instead of aborting the run.
template <typename Scalar>
VolumeT<Scalar> normalize_unit(const VolumeT<Scalar>& v, bool* degenerate = nullptr) {
  v.check_finite("normalize_unit");
  const Scalar lo = v.data.minCoeff();
  const Scalar hi = v.data.maxCoeff();
  VolumeT<Scalar> out = v;
  if (degenerate) *degenerate = false;
  if (hi == lo) {
    out.data.setZero();
    if (degenerate) *degenerate = true;
    return out;
  }
  out.data = (v.data.array() - lo) / (hi - lo);
  return out;
}

template <typename Scalar>
VolumeT<Scalar> standardize(const VolumeT<Scalar>& v, double mean, double std) {
  require(std > 0 && std::isfinite(std) && std::isfinite(mean), ErrorCode::kInvalidArgument,
          "standardize: std must be > 0");
  v.check_finite("standardize");
  VolumeT<Scalar> out = v;
  out.data = ((v.data.template cast<double>().array() - mean) / std).template cast<Scalar>();
  return out;
}

// Mean and population standard deviation of all voxel values.
template <typename Scalar>
std::pair<double, double> mean_std(const VolumeT<Scalar>& v) {
  const auto d = v.data.template cast<double>();
  const double mean = d.mean();
  const double var = (d.array() - mean).square().sum() / static_cast<double>(d.size());
  return {mean, std::sqrt(var)};
}

// Voxel is foreground iff p >= threshold.
template <typename Scalar>
BinaryMask binarize(const VolumeT<Scalar>& p, double threshold) {
  require(threshold > 0.0 && threshold < 1.0, ErrorCode::kInvalidArgument,
          "binarize: threshold must lie strictly in (0,1)");
  p.check_finite("binarize");
  BinaryMask out(p.shape, p.spacing);
  for (Eigen::Index i = 0; i < p.data.size(); ++i)
    out.data[i] = static_cast<double>(p.data[i]) >= threshold ? 1 : 0;
  return out;
}

}  // namespace fuseg
