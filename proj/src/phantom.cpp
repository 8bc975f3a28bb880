#include "fuseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "fuseg/nifti.hpp"

namespace fuseg {
namespace {

constexpr float kBmodeBackground = 0.25f;
constexpr float kBmodeShell = 0.75f;
constexpr float kDopplerBackground = 0.08f;
constexpr float kDopplerVessel = 0.90f;

struct Shell {
  Eigen::Vector3d center, radii;
  double thickness;

  bool contains(int x, int y, int z) const {
    auto rho2 = [&](const Eigen::Vector3d& r) {
      const Eigen::Vector3d d{(x - center.x()) / r.x(), (y - center.y()) / r.y(),
                              (z - center.z()) / r.z()};
      return d.squaredNorm();
    };
    if (rho2(radii) > 1.0) return false;
    const Eigen::Vector3d inner = (radii.array() - thickness).max(1e-9);
    if ((radii.array() - thickness <= 0.0).any()) return true;  // solid ellipsoid
    return rho2(inner) > 1.0;
  }
};

// mask dilated by one voxel (3^3 neighborhood) -- keeps the confounder from
// touching the true shell
std::vector<std::uint8_t> dilate1(const BinaryMask& m) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(m.voxels()), 0);
  const int nx = m.shape.x(), ny = m.shape.y(), nz = m.shape.z();
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!m.at(x, y, z)) continue;
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int xi = x + dx, yi = y + dy, zi = z + dz;
              if (xi < 0 || yi < 0 || zi < 0 || xi >= nx || yi >= ny || zi >= nz) continue;
              out[static_cast<std::size_t>(m.lin(xi, yi, zi))] = 1;
            }
      }
  return out;
}

}  // namespace

void PhantomSpec::validate() const {
  require(grid.minCoeff() >= 4, ErrorCode::kInvalidArgument, "phantom: grid too small");
  require(radii.minCoeff() > 0 && thickness > 0, ErrorCode::kInvalidArgument,
          "phantom: radii and thickness must be positive");
  require(noise_level >= 0, ErrorCode::kInvalidArgument, "phantom: noise level must be >= 0");
  require(vessel_count >= 0 && vessel_radius >= 0, ErrorCode::kInvalidArgument,
          "phantom: vessel parameters must be >= 0");
  for (int i = 0; i < 3; ++i)
    require(center[i] - radii[i] >= 0.0 && center[i] + radii[i] <= grid[i] - 1.0,
            ErrorCode::kInvalidArgument, "phantom: shell exceeds the grid");
}

PhantomSpec sample_phantom_spec(const Index3& grid, const Spacing3& spacing, Rng& rng,
                                double noise_level, bool confounder) {
  PhantomSpec spec;
  spec.grid = grid;
  spec.spacing = spacing;
  spec.noise_level = noise_level;
  spec.confounder = confounder;

  const double dim = grid.cast<double>().minCoeff();
  for (int i = 0; i < 3; ++i) spec.radii[i] = rng.uniform(0.16, 0.21) * grid[i];
  spec.thickness = rng.uniform(0.45, 0.60) * spec.radii.minCoeff();
  for (int i = 0; i < 3; ++i) {
    const double lo = spec.radii[i] + 0.5;
    const double hi = grid[i] - 1.0 - spec.radii[i] - 0.5;
    spec.center[i] = hi > lo ? rng.uniform(lo, hi) : 0.5 * (grid[i] - 1.0);
  }
  spec.vessel_count = 4 + static_cast<int>(rng.below(4));  // 4..7
  spec.vessel_radius = rng.uniform(0.095, 0.125) * dim;
  spec.seed = rng.next_u64();
  return spec;
}

Study generate_phantom(const PhantomSpec& spec, const std::string& study_id,
                       const std::string& patient_id) {
  spec.validate();
  Rng rng(spec.seed);

  const int nx = spec.grid.x(), ny = spec.grid.y(), nz = spec.grid.z();
  Study s;
  s.study_id = study_id;
  s.patient_id = patient_id.empty() ? study_id : patient_id;
  s.mask = BinaryMask(spec.grid, spec.spacing);
  s.bmode = Volume(spec.grid, spec.spacing);
  s.doppler = Volume(spec.grid, spec.spacing);

  const Shell shell{spec.center, spec.radii, spec.thickness};
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        if (shell.contains(x, y, z)) s.mask.at(x, y, z) = 1;
  require(!s.mask.empty_mask(), ErrorCode::kInvalidArgument, "phantom: shell rasterized to nothing");

  // Confounder shell: drawn from the same geometry distribution as the true
  // shell and placed fully inside the grid, so B-mode alone cannot tell the
  // two structures apart. Rejection sampling keeps it off the true shell;
  // the dilated-mask carve below protects the mask on near misses.
  std::vector<std::uint8_t> protect;
  Shell conf{};
  bool have_conf = false;
  if (spec.confounder) {
    protect = dilate1(s.mask);
    conf.radii = spec.radii;
    conf.thickness = spec.thickness;
    const double min_sep = spec.radii.maxCoeff() + conf.radii.maxCoeff() + 1.0;
    double best = -1.0;
    for (int attempt = 0; attempt < 64; ++attempt) {
      Eigen::Vector3d c;
      for (int i = 0; i < 3; ++i) {
        const double lo = conf.radii[i] + 0.5;
        const double hi = spec.grid[i] - 1.0 - conf.radii[i] - 0.5;
        c[i] = hi > lo ? rng.uniform(lo, hi) : 0.5 * (spec.grid[i] - 1.0);
      }
      const double d = (c - spec.center).norm();
      if (d > best) {
        best = d;
        conf.center = c;
      }
      if (d >= min_sep) break;
    }
    have_conf = best >= 0.75 * min_sep;
  }

  const std::size_t n = static_cast<std::size_t>(s.mask.voxels());

  // vessel blobs, centered on random mask voxels
  std::vector<Eigen::Index> shell_voxels;
  shell_voxels.reserve(n / 8);
  for (Eigen::Index i = 0; i < s.mask.data.size(); ++i)
    if (s.mask.data[i]) shell_voxels.push_back(i);
  std::vector<Eigen::Vector3d> vessel_centers;
  for (int k = 0; k < spec.vessel_count && !shell_voxels.empty(); ++k) {
    const Eigen::Index lin = shell_voxels[rng.below(shell_voxels.size())];
    const int x = static_cast<int>(lin % nx);
    const int y = static_cast<int>((lin / nx) % ny);
    const int z = static_cast<int>(lin / (static_cast<Eigen::Index>(nx) * ny));
    vessel_centers.emplace_back(x, y, z);
  }

  const double vr2 = spec.vessel_radius * spec.vessel_radius;
  Eigen::Index o = 0;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x, ++o) {
        const bool in_mask = s.mask.data[o] != 0;
        bool in_conf = false;
        if (have_conf && !in_mask && !protect[static_cast<std::size_t>(o)])
          in_conf = conf.contains(x, y, z);

        float bm = (in_mask || in_conf) ? kBmodeShell : kBmodeBackground;

        bool in_vessel = false;
        for (const auto& c : vessel_centers) {
          const Eigen::Vector3d d(x - c.x(), y - c.y(), z - c.z());
          if (d.squaredNorm() <= vr2) {
            in_vessel = true;
            break;
          }
        }
        float dp = in_vessel ? kDopplerVessel : kDopplerBackground;

        if (spec.noise_level > 0) {
          bm *= static_cast<float>(1.0 + spec.noise_level * rng.normal());
          dp *= static_cast<float>(1.0 + spec.noise_level * rng.normal());
        }
        s.bmode.data[o] = std::max(0.f, bm);
        s.doppler.data[o] = std::max(0.f, dp);
      }

  return s;
}

DatasetManifest generate_phantom_dataset(const std::string& out_dir,
                                         const PhantomDatasetOptions& options) {
  require(options.count >= 0, ErrorCode::kInvalidArgument, "phantom dataset: count must be >= 0");
  require(options.studies_per_patient >= 1, ErrorCode::kInvalidArgument,
          "phantom dataset: studies_per_patient must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::kIo, out_dir + ": cannot create output directory");

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  Rng rng(options.seed);

  char buf[32];
  for (int i = 0; i < options.count; ++i) {
    std::snprintf(buf, sizeof(buf), "s%04d", i + 1);
    const std::string sid = buf;
    std::snprintf(buf, sizeof(buf), "p%04d", i / options.studies_per_patient + 1);
    const std::string pid = buf;

    PhantomSpec spec =
        sample_phantom_spec(options.grid, options.spacing, rng, options.noise_level, options.confounder);
    Study study = generate_phantom(spec, sid, pid);

    const std::filesystem::path dir = std::filesystem::path(out_dir) / sid;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorCode::kIo, dir.string() + ": cannot create study directory");
    write_volume(study.bmode, (dir / "bmode.nii.gz").string());
    write_volume(study.doppler, (dir / "doppler.nii.gz").string());
    write_mask(study.mask, (dir / "mask.nii.gz").string());

    ManifestEntry e;
    e.study_id = sid;
    e.patient_id = pid;
    e.bmode_path = sid + "/bmode.nii.gz";
    e.doppler_path = sid + "/doppler.nii.gz";
    e.mask_paths = {sid + "/mask.nii.gz"};
    manifest.entries.push_back(std::move(e));
  }

  write_manifest(manifest, (std::filesystem::path(out_dir) / "manifest.txt").string());
  return manifest;
}

}  // namespace fuseg
