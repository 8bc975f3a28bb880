#include "fuseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fuseg {
namespace {

constexpr double kBig = 1e30;

struct Overlap {
  Eigen::Index a = 0, b = 0, both = 0;
};

Overlap count_overlap(const BinaryMask& a, const BinaryMask& b) {
  require(a.shape == b.shape, ErrorCode::kInvalidArgument, "overlap metrics: shape mismatch");
  Overlap o;
  for (Eigen::Index i = 0; i < a.data.size(); ++i) {
    o.a += a.data[i];
    o.b += b.data[i];
    o.both += a.data[i] & b.data[i];
  }
  return o;
}

// One pass of the separable squared Euclidean distance transform
// (Felzenszwalb & Huttenlocher lower envelope), with physical step s.
// Envelope sentinels must be true infinities: intersections against kBig
// background values can exceed any finite sentinel.
void dt1d(const double* f, double* d, int n, double s, int* v, double* z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  const double s2 = s * s;
  for (int q = 1; q < n; ++q) {
    double inter;
    for (;;) {
      const int p = v[k];
      inter = ((f[q] + s2 * q * q) - (f[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
      if (inter > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = inter;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = s * (q - v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// Exact squared distance (mm^2) from every voxel center to the nearest
// surface voxel center of `m`.
std::vector<double> surface_distance_field(const BinaryMask& m) {
  const int nx = m.shape.x(), ny = m.shape.y(), nz = m.shape.z();
  const Eigen::Index n = m.voxels();
  std::vector<double> field(static_cast<std::size_t>(n), kBig);
  for (const auto& v : surface_voxels(m)) field[static_cast<std::size_t>(m.lin(v.x(), v.y(), v.z()))] = 0.0;

  const int nmax = std::max({nx, ny, nz});
  std::vector<double> line(nmax), out(nmax), z(nmax + 1);
  std::vector<int> v(nmax);

  // x axis
  for (int zz = 0; zz < nz; ++zz)
    for (int yy = 0; yy < ny; ++yy) {
      double* row = field.data() + m.lin(0, yy, zz);
      dt1d(row, out.data(), nx, m.spacing.x(), v.data(), z.data());
      std::copy(out.begin(), out.begin() + nx, row);
    }
  // y axis
  for (int zz = 0; zz < nz; ++zz)
    for (int xx = 0; xx < nx; ++xx) {
      for (int yy = 0; yy < ny; ++yy) line[yy] = field[static_cast<std::size_t>(m.lin(xx, yy, zz))];
      dt1d(line.data(), out.data(), ny, m.spacing.y(), v.data(), z.data());
      for (int yy = 0; yy < ny; ++yy) field[static_cast<std::size_t>(m.lin(xx, yy, zz))] = out[yy];
    }
  // z axis
  for (int yy = 0; yy < ny; ++yy)
    for (int xx = 0; xx < nx; ++xx) {
      for (int zz = 0; zz < nz; ++zz) line[zz] = field[static_cast<std::size_t>(m.lin(xx, yy, zz))];
      dt1d(line.data(), out.data(), nz, m.spacing.z(), v.data(), z.data());
      for (int zz = 0; zz < nz; ++zz) field[static_cast<std::size_t>(m.lin(xx, yy, zz))] = out[zz];
    }
  return field;
}

// Directed surface distances d(x, surf(to)) for every x in surf(from), mm.
std::vector<double> directed_distances(const BinaryMask& from, const BinaryMask& to) {
  require(from.shape == to.shape, ErrorCode::kInvalidArgument, "surface metrics: shape mismatch");
  require((from.spacing - to.spacing).cwiseAbs().maxCoeff() < 1e-12, ErrorCode::kInvalidArgument,
          "surface metrics: spacing mismatch");
  const auto field = surface_distance_field(to);
  std::vector<double> d;
  const auto surf = surface_voxels(from);
  d.reserve(surf.size());
  for (const auto& p : surf)
    d.push_back(std::sqrt(field[static_cast<std::size_t>(from.lin(p.x(), p.y(), p.z()))]));
  return d;
}

void require_nonempty_pair(const BinaryMask& a, const BinaryMask& b) {
  require(!a.empty_mask() && !b.empty_mask(), ErrorCode::kInvalidArgument,
          "surface metrics: empty structure");
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

MeanStd mean_std_of(const std::vector<double>& v) {
  if (v.empty()) return {};
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return {m, std::sqrt(acc / static_cast<double>(v.size()))};
}

}  // namespace

double dice(const BinaryMask& a, const BinaryMask& b) {
  const Overlap o = count_overlap(a, b);
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double jaccard_index(const BinaryMask& a, const BinaryMask& b) {
  const Overlap o = count_overlap(a, b);
  const Eigen::Index uni = o.a + o.b - o.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

std::vector<Index3> surface_voxels(const BinaryMask& m) {
  require(!m.empty_mask(), ErrorCode::kInvalidArgument, "surface_voxels: empty structure");
  std::vector<Index3> out;
  const int nx = m.shape.x(), ny = m.shape.y(), nz = m.shape.z();
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!m.at(x, y, z)) continue;
        const bool border = x == 0 || y == 0 || z == 0 || x == nx - 1 || y == ny - 1 || z == nz - 1;
        bool surface = border;
        if (!surface)
          surface = !m.at(x - 1, y, z) || !m.at(x + 1, y, z) || !m.at(x, y - 1, z) ||
                    !m.at(x, y + 1, z) || !m.at(x, y, z - 1) || !m.at(x, y, z + 1);
        if (surface) out.emplace_back(x, y, z);
      }
  return out;
}

double percentile_linear(std::vector<double> values, double p) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "percentile of empty list");
  require(p >= 0.0 && p <= 100.0, ErrorCode::kInvalidArgument, "percentile must be in [0,100]");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

double hd95_mm(const BinaryMask& a, const BinaryMask& b) {
  require_nonempty_pair(a, b);
  const double ab = percentile_linear(directed_distances(a, b), 95.0);
  const double ba = percentile_linear(directed_distances(b, a), 95.0);
  return std::max(ab, ba);
}

double hausdorff_mm(const BinaryMask& a, const BinaryMask& b) {
  require_nonempty_pair(a, b);
  const auto dab = directed_distances(a, b);
  const auto dba = directed_distances(b, a);
  return std::max(*std::max_element(dab.begin(), dab.end()),
                  *std::max_element(dba.begin(), dba.end()));
}

double msd_mm(const BinaryMask& a, const BinaryMask& b) {
  require_nonempty_pair(a, b);
  return 0.5 * (mean_of(directed_distances(a, b)) + mean_of(directed_distances(b, a)));
}

MetricRecord evaluate_study(const Volume& pred, const BinaryMask& gt, double threshold,
                            const std::string& study_id) {
  require(pred.shape == gt.shape, ErrorCode::kInvalidArgument, "evaluate_study: shape mismatch");
  const BinaryMask pm = binarize(pred, threshold);

  MetricRecord r;
  r.study_id = study_id;
  r.gt_empty = gt.empty_mask();
  r.pred_empty = pm.empty_mask();
  r.dsc = dice(pm, gt);
  r.jaccard = jaccard_index(pm, gt);
  if (r.gt_empty && r.pred_empty) {
    // perfect agreement convention
    r.hd95_mm = 0.0;
    r.msd_mm = 0.0;
    r.distances_defined = true;
  } else if (r.gt_empty || r.pred_empty) {
    r.distances_defined = false;
  } else {
    r.hd95_mm = hd95_mm(pm, gt);
    r.msd_mm = msd_mm(pm, gt);
    r.distances_defined = true;
  }
  return r;
}

AggregateResult aggregate(const std::vector<MetricRecord>& records) {
  require(!records.empty(), ErrorCode::kInvalidArgument, "aggregate: no records");
  std::vector<double> dscs, jacs, hds, msds;
  for (const auto& r : records) {
    dscs.push_back(r.dsc);
    jacs.push_back(r.jaccard);
    if (r.distances_defined) {
      hds.push_back(r.hd95_mm);
      msds.push_back(r.msd_mm);
    }
  }
  AggregateResult a;
  a.n = static_cast<int>(records.size());
  a.n_distance = static_cast<int>(hds.size());
  a.dsc = mean_std_of(dscs);
  a.jaccard = mean_std_of(jacs);
  a.hd95 = mean_std_of(hds);
  a.msd = mean_std_of(msds);
  return a;
}

}  // namespace fuseg
