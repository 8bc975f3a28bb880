#pragma once

#include <Eigen/Core>
#include <vector>

#include "fuseg/error.hpp"
#include "fuseg/volume.hpp"

namespace fuseg::nn {

// Feature-map tensor: channels x (batch * voxels), column-major, voxels in
// x-fastest order, batch items occupying contiguous column ranges.
template <typename Scalar>
struct TensorT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  int channels = 0;
  Index3 dims = Index3::Zero();
  int batch = 1;
  Matrix m;

  TensorT() = default;
  TensorT(int ch, const Index3& d, int b) { resize(ch, d, b); }

  Eigen::Index vox() const {
    return static_cast<Eigen::Index>(dims.x()) * dims.y() * dims.z();
  }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(batch) * vox(); }
  bool allocated() const { return m.size() > 0; }

  void resize(int ch, const Index3& d, int b) {
    channels = ch;
    dims = d;
    batch = b;
    m.resize(ch, static_cast<Eigen::Index>(b) * d.x() * d.y() * d.z());
  }

  void resize_like(const TensorT& o) { resize(o.channels, o.dims, o.batch); }

  bool same_layout(const TensorT& o) const {
    return channels == o.channels && dims == o.dims && batch == o.batch;
  }

  void release() {
    m.resize(0, 0);
    channels = 0;
  }

  // Wraps a single-item, single-channel map as a Volume on the given grid.
  Volume to_volume(const Spacing3& spacing) const {
    require(channels == 1 && batch == 1, ErrorCode::kInternal,
            "to_volume: tensor is not a single-channel single-item map");
    Volume v(dims, spacing);
    v.data = m.row(0).transpose().template cast<float>();
    return v;
  }

  template <typename VS>
  static TensorT from_volumes(const std::vector<const VolumeT<VS>*>& vols) {
    require(!vols.empty(), ErrorCode::kInvalidArgument, "from_volumes: no channels");
    TensorT t(static_cast<int>(vols.size()), vols.front()->shape, 1);
    for (std::size_t c = 0; c < vols.size(); ++c) {
      require(vols[c]->shape == t.dims, ErrorCode::kInvalidArgument,
              "from_volumes: channel shapes differ");
      t.m.row(static_cast<Eigen::Index>(c)) =
          vols[c]->data.template cast<Scalar>().transpose();
    }
    return t;
  }
};

}  // namespace fuseg::nn
