#pragma once

#include <string>
#include <vector>

#include "fuseg/volume.hpp"

namespace fuseg {

struct MetricRecord {
  std::string study_id;
  double dsc = 0.0;
  double jaccard = 0.0;
  double hd95_mm = 0.0;
  double msd_mm = 0.0;
  bool distances_defined = false;  // false when exactly one structure is empty
  bool gt_empty = false;
  bool pred_empty = false;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct AggregateResult {
  int n = 0;           // records aggregated for overlap metrics
  int n_distance = 0;  // records with defined surface distances
  MeanStd dsc, jaccard, hd95, msd;
};

// Overlap. Both-empty pairs count as perfect agreement (1).
double dice(const BinaryMask& a, const BinaryMask& b);
double jaccard_index(const BinaryMask& a, const BinaryMask& b);

// Foreground voxels with at least one background 6-neighbor; the outside of
// the grid counts as background. Rejects empty masks.
std::vector<Index3> surface_voxels(const BinaryMask& m);

// Surface distances between surface-voxel centers, in mm, anisotropic
// spacing applied per axis. Both masks must be nonempty and share the grid.
double hd95_mm(const BinaryMask& a, const BinaryMask& b);
double hausdorff_mm(const BinaryMask& a, const BinaryMask& b);  // plain max variant
double msd_mm(const BinaryMask& a, const BinaryMask& b);

// Percentile by linear interpolation on the sorted list (0 <= p <= 100).
double percentile_linear(std::vector<double> values, double p);

// Binarizes pred at the threshold and fills a full record. If exactly one of
// the structures is empty the surface distances are flagged undefined.
MetricRecord evaluate_study(const Volume& pred, const BinaryMask& gt, double threshold,
                            const std::string& study_id = "");

// Mean and population standard deviation per metric. Distance stats cover
// only records with defined distances.
AggregateResult aggregate(const std::vector<MetricRecord>& records);

}  // namespace fuseg
