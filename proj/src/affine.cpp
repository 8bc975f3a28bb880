#include "fuseg/affine.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace fuseg {
namespace {

constexpr double kDegToRad = 0.017453292519943295;

template <typename Sampler>
void warp(const Index3& shape, const Eigen::Matrix4d& inverse, Sampler&& sample) {
  Eigen::Index o = 0;
  for (int z = 0; z < shape.z(); ++z)
    for (int y = 0; y < shape.y(); ++y)
      for (int x = 0; x < shape.x(); ++x, ++o) {
        const Eigen::Vector4d src = inverse * Eigen::Vector4d(x, y, z, 1.0);
        sample(o, src.x(), src.y(), src.z());
      }
}

}  // namespace

bool AffineParams::is_identity() const {
  return translation_vox.isZero(0) && rotation_deg.isZero(0) && shear_vox.isZero(0) &&
         (scale - Eigen::Vector3d::Ones()).isZero(0);
}

AffineParams sample_affine(const AffineConfig& config, Rng& rng) {
  require(config.scale_lo > 0 && config.scale_hi >= config.scale_lo, ErrorCode::kInvalidArgument,
          "sample_affine: invalid scale range");
  require(config.max_translation_vox >= 0 && config.max_rotation_deg >= 0 &&
              config.max_shear_vox >= 0,
          ErrorCode::kInvalidArgument, "sample_affine: ranges must be non-negative");
  AffineParams p;
  for (int i = 0; i < 3; ++i)
    p.translation_vox[i] = rng.uniform(-config.max_translation_vox, config.max_translation_vox);
  for (int i = 0; i < 3; ++i)
    p.rotation_deg[i] = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  for (int i = 0; i < 3; ++i) p.scale[i] = rng.uniform(config.scale_lo, config.scale_hi);
  for (int i = 0; i < 3; ++i)
    p.shear_vox[i] = rng.uniform(-config.max_shear_vox, config.max_shear_vox);
  return p;
}

Eigen::Matrix4d affine_matrix(const AffineParams& params, const Index3& shape) {
  const Eigen::Vector3d c = (shape.cast<double>() - Eigen::Vector3d::Ones()) * 0.5;

  auto rot = [](int axis, double deg) {
    const double a = deg * kDegToRad;
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    r(u, u) = std::cos(a);
    r(u, v) = -std::sin(a);
    r(v, u) = std::sin(a);
    r(v, v) = std::cos(a);
    return r;
  };

  Eigen::Matrix3d shear = Eigen::Matrix3d::Identity();
  // edge-normalized: displacement reaches shear_vox at half the grid extent
  shear(0, 1) = params.shear_vox.x() / (0.5 * shape.y());
  shear(1, 2) = params.shear_vox.y() / (0.5 * shape.z());
  shear(2, 0) = params.shear_vox.z() / (0.5 * shape.x());

  const Eigen::Matrix3d linear = rot(0, params.rotation_deg.x()) * rot(1, params.rotation_deg.y()) *
                                 rot(2, params.rotation_deg.z()) * shear *
                                 params.scale.asDiagonal().toDenseMatrix();

  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = linear;
  m.topRightCorner<3, 1>() = params.translation_vox + c - linear * c;
  return m;
}

Volume apply_affine(const Volume& v, const AffineParams& params) {
  if (params.is_identity()) return v;
  Volume out(v.shape, v.spacing);
  const Eigen::Matrix4d inverse = affine_matrix(params, v.shape).inverse();
  const int nx = v.shape.x(), ny = v.shape.y(), nz = v.shape.z();
  warp(v.shape, inverse, [&](Eigen::Index o, double fx, double fy, double fz) {
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const int z0 = static_cast<int>(std::floor(fz));
    if (x0 < -1 || y0 < -1 || z0 < -1 || x0 >= nx || y0 >= ny || z0 >= nz) {
      out.data[o] = 0.f;
      return;
    }
    const double tx = fx - x0, ty = fy - y0, tz = fz - z0;
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
          if (xi < 0 || yi < 0 || zi < 0 || xi >= nx || yi >= ny || zi >= nz) continue;
          const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
          acc += w * v.at(xi, yi, zi);
        }
    out.data[o] = static_cast<float>(acc);
  });
  return out;
}

BinaryMask apply_affine(const BinaryMask& m, const AffineParams& params) {
  if (params.is_identity()) return m;
  BinaryMask out(m.shape, m.spacing);
  const Eigen::Matrix4d inverse = affine_matrix(params, m.shape).inverse();
  const int nx = m.shape.x(), ny = m.shape.y(), nz = m.shape.z();
  warp(m.shape, inverse, [&](Eigen::Index o, double fx, double fy, double fz) {
    const int xi = static_cast<int>(std::lround(fx));
    const int yi = static_cast<int>(std::lround(fy));
    const int zi = static_cast<int>(std::lround(fz));
    out.data[o] = (xi < 0 || yi < 0 || zi < 0 || xi >= nx || yi >= ny || zi >= nz)
                      ? 0
                      : m.at(xi, yi, zi);
  });
  return out;
}

Study apply_affine(const Study& s, const AffineParams& params) {
  s.check_coregistered();
  Study out;
  out.study_id = s.study_id;
  out.patient_id = s.patient_id;
  out.bmode = apply_affine(s.bmode, params);
  out.doppler = apply_affine(s.doppler, params);
  out.mask = apply_affine(s.mask, params);
  return out;
}

}  // namespace fuseg
