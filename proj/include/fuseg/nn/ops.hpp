#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "fuseg/nn/graph.hpp"
#include "fuseg/rng.hpp"

namespace fuseg::nn {

namespace detail {

// Patch extraction for 3x3x3 "same" convolution. Builds the column block
// [t0, t0+tw) of the im2col matrix for one batch item: row block od*cin
// holds the input shifted by kernel offset od, zero-padded at the faces.
template <typename MIn, typename MOut>
void im2col3(const MIn& x, Eigen::Index item_base, const Index3& dims, int cin, Eigen::Index t0,
             Eigen::Index tw, MOut& patches) {
  const int nx = dims.x(), ny = dims.y(), nz = dims.z();
  int od = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx, ++od) {
        const auto row0 = static_cast<Eigen::Index>(od) * cin;
        const auto r0 = t0 / nx, r1 = (t0 + tw - 1) / nx;
        for (Eigen::Index r = r0; r <= r1; ++r) {
          const int y = static_cast<int>(r % ny), z = static_cast<int>(r / ny);
          const Eigen::Index run_begin = r * nx;
          const Eigen::Index ca = std::max(t0, run_begin);
          const Eigen::Index cb = std::min(t0 + tw, run_begin + nx);
          const int xa = static_cast<int>(ca - run_begin), xb = static_cast<int>(cb - run_begin);
          auto dst_col = ca - t0;
          const int sy = y + dy, sz = z + dz;
          if (sy < 0 || sz < 0 || sy >= ny || sz >= nz) {
            patches.block(row0, dst_col, cin, cb - ca).setZero();
            continue;
          }
          const int vx0 = std::max(xa, dx < 0 ? -dx : 0);
          const int vx1 = std::min(xb, dx > 0 ? nx - dx : nx);
          if (vx0 >= vx1) {
            patches.block(row0, dst_col, cin, cb - ca).setZero();
            continue;
          }
          if (vx0 > xa) patches.block(row0, dst_col, cin, vx0 - xa).setZero();
          if (vx1 < xb) patches.block(row0, dst_col + (vx1 - xa), cin, xb - vx1).setZero();
          const Eigen::Index src =
              item_base + (vx0 + dx) + static_cast<Eigen::Index>(nx) * (sy + static_cast<Eigen::Index>(ny) * sz);
          patches.block(row0, dst_col + (vx0 - xa), cin, vx1 - vx0) = x.block(0, src, cin, vx1 - vx0);
        }
      }
}

// Adjoint of im2col3: scatter-adds patch gradients back onto the input grid.
template <typename MIn, typename MOut>
void col2im3_add(MOut& xg, Eigen::Index item_base, const Index3& dims, int cin, Eigen::Index t0,
                 Eigen::Index tw, const MIn& patches) {
  const int nx = dims.x(), ny = dims.y(), nz = dims.z();
  int od = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx, ++od) {
        const auto row0 = static_cast<Eigen::Index>(od) * cin;
        const auto r0 = t0 / nx, r1 = (t0 + tw - 1) / nx;
        for (Eigen::Index r = r0; r <= r1; ++r) {
          const int y = static_cast<int>(r % ny), z = static_cast<int>(r / ny);
          const Eigen::Index run_begin = r * nx;
          const Eigen::Index ca = std::max(t0, run_begin);
          const Eigen::Index cb = std::min(t0 + tw, run_begin + nx);
          const int xa = static_cast<int>(ca - run_begin), xb = static_cast<int>(cb - run_begin);
          const int sy = y + dy, sz = z + dz;
          if (sy < 0 || sz < 0 || sy >= ny || sz >= nz) continue;
          const int vx0 = std::max(xa, dx < 0 ? -dx : 0);
          const int vx1 = std::min(xb, dx > 0 ? nx - dx : nx);
          if (vx0 >= vx1) continue;
          const Eigen::Index src =
              item_base + (vx0 + dx) + static_cast<Eigen::Index>(nx) * (sy + static_cast<Eigen::Index>(ny) * sz);
          xg.block(0, src, cin, vx1 - vx0) +=
              patches.block(row0, (ca - t0) + (vx0 - xa), cin, vx1 - vx0);
        }
      }
}

inline Eigen::Index conv_tile(int cin, Eigen::Index vox, std::size_t scalar_size) {
  const std::size_t budget = std::size_t{48} << 20;  // per patch buffer
  const auto by_mem = static_cast<Eigen::Index>(budget / (27u * static_cast<unsigned>(cin) * scalar_size));
  return std::clamp<Eigen::Index>(std::min(by_mem, vox), 512, 8192);
}

// Reusable per-thread workspaces for patch/scatter buffers. Convolutions at
// volume scale would otherwise malloc and fault in ~100 MB per call.
template <typename S>
Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> scratch(int slot, Eigen::Index rows,
                                                                     Eigen::Index cols) {
  thread_local std::vector<S> pool[3];
  auto& buf = pool[slot];
  const auto need = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  if (buf.size() < need) buf.resize(need);
  return {buf.data(), rows, cols};
}

}  // namespace detail

// 3D convolution, kernel 1 or 3, stride 1, "same" zero padding.
template <typename S>
class Conv3dOp final : public Op<S> {
 public:
  using Matrix = typename TensorT<S>::Matrix;

  Conv3dOp(int cin, int cout, int ksize, Rng& rng, const std::string& name)
      : cin_(cin), cout_(cout), k_(ksize) {
    require(ksize == 1 || ksize == 3, ErrorCode::kInternal, "conv kernel must be 1 or 3");
    const int k3 = k_ * k_ * k_;
    w_.name = name + ".w";
    w_.value.resize(cout_, static_cast<Eigen::Index>(k3) * cin_);
    const double he = std::sqrt(2.0 / (static_cast<double>(cin_) * k3));
    for (Eigen::Index i = 0; i < w_.value.size(); ++i)
      w_.value.data()[i] = static_cast<S>(he * rng.normal());
    b_.name = name + ".b";
    b_.value = Matrix::Zero(cout_, 1);
  }

  const char* kind() const override { return k_ == 1 ? "conv1" : "conv3"; }
  std::vector<ParamT<S>*> params() override { return {&w_, &b_}; }

  void forward(const std::vector<const TensorT<S>*>& in, TensorT<S>& out, NetMode) override {
    const auto& x = *in.at(0);
    require(x.channels == cin_, ErrorCode::kInternal, "conv: channel mismatch");
    out.resize(cout_, x.dims, x.batch);
    if (k_ == 1) {
      out.m.noalias() = w_.value * x.m;
    } else {
      const Eigen::Index vox = x.vox();
      const Eigen::Index tile = detail::conv_tile(cin_, vox, sizeof(S));
      auto patches = detail::scratch<S>(0, static_cast<Eigen::Index>(27) * cin_, tile);
      for (int item = 0; item < x.batch; ++item) {
        const Eigen::Index base = static_cast<Eigen::Index>(item) * vox;
        for (Eigen::Index t0 = 0; t0 < vox; t0 += tile) {
          const Eigen::Index tw = std::min(tile, vox - t0);
          detail::im2col3(x.m, base, x.dims, cin_, t0, tw, patches);
          out.m.block(0, base + t0, cout_, tw).noalias() = w_.value * patches.leftCols(tw);
        }
      }
    }
    out.m.colwise() += b_.value.col(0);
  }

  void backward(const std::vector<const TensorT<S>*>& in, const TensorT<S>&,
                const TensorT<S>& gout, const std::vector<TensorT<S>*>& gin) override {
    const auto& x = *in.at(0);
    b_.grad.col(0) += gout.m.rowwise().sum();
    if (k_ == 1) {
      w_.grad.noalias() += gout.m * x.m.transpose();
      gin.at(0)->m.noalias() += w_.value.transpose() * gout.m;
      return;
    }
    // dL/dx is itself a 3x3x3 convolution of dL/dy with the transposed,
    // offset-flipped kernel; doing it that way keeps the GEMM shapes fat.
    Matrix wt(cin_, static_cast<Eigen::Index>(27) * cout_);
    for (int od = 0; od < 27; ++od)
      wt.middleCols(static_cast<Eigen::Index>(26 - od) * cout_, cout_) =
          w_.value.middleCols(static_cast<Eigen::Index>(od) * cin_, cin_).transpose();

    const Eigen::Index vox = x.vox();
    const Eigen::Index tile = detail::conv_tile(std::max(cin_, cout_), vox, sizeof(S));
    auto patches = detail::scratch<S>(0, static_cast<Eigen::Index>(27) * cin_, tile);
    auto gpatches = detail::scratch<S>(1, static_cast<Eigen::Index>(27) * cout_, tile);
    for (int item = 0; item < x.batch; ++item) {
      const Eigen::Index base = static_cast<Eigen::Index>(item) * vox;
      for (Eigen::Index t0 = 0; t0 < vox; t0 += tile) {
        const Eigen::Index tw = std::min(tile, vox - t0);
        detail::im2col3(x.m, base, x.dims, cin_, t0, tw, patches);
        w_.grad.noalias() += gout.m.block(0, base + t0, cout_, tw) * patches.leftCols(tw).transpose();
        detail::im2col3(gout.m, base, x.dims, cout_, t0, tw, gpatches);
        gin.at(0)->m.block(0, base + t0, cin_, tw).noalias() += wt * gpatches.leftCols(tw);
      }
    }
  }

 private:
  int cin_, cout_, k_;
  ParamT<S> w_, b_;
};

// Transposed 3D convolution, kernel 2, stride 2 (doubles each spatial axis).
// Weight rows are grouped by output offset (dx,dy,dz) in {0,1}^3.
template <typename S>
class ConvTranspose3dOp final : public Op<S> {
 public:
  using Matrix = typename TensorT<S>::Matrix;

  ConvTranspose3dOp(int cin, int cout, Rng& rng, const std::string& name)
      : cin_(cin), cout_(cout) {
    w_.name = name + ".w";
    w_.value.resize(static_cast<Eigen::Index>(8) * cout_, cin_);
    const double he = std::sqrt(2.0 / static_cast<double>(cin_));
    for (Eigen::Index i = 0; i < w_.value.size(); ++i)
      w_.value.data()[i] = static_cast<S>(he * rng.normal());
    b_.name = name + ".b";
    b_.value = Matrix::Zero(cout_, 1);
  }

  const char* kind() const override { return "upconv2"; }
  std::vector<ParamT<S>*> params() override { return {&w_, &b_}; }

  void forward(const std::vector<const TensorT<S>*>& in, TensorT<S>& out, NetMode) override {
    const auto& x = *in.at(0);
    require(x.channels == cin_, ErrorCode::kInternal, "upconv: channel mismatch");
    const Index3 od = x.dims * 2;
    out.resize(cout_, od, x.batch);
    const int nx = x.dims.x(), ny = x.dims.y(), nz = x.dims.z();
    const Eigen::Index vin = x.vox(), vout = out.vox();
    auto y8 = detail::scratch<S>(2, static_cast<Eigen::Index>(8) * cout_, vin);
    for (int item = 0; item < x.batch; ++item) {
      y8.noalias() = w_.value * x.m.middleCols(static_cast<Eigen::Index>(item) * vin, vin);
      for (int o = 0, dz = 0; dz <= 1; ++dz)
        for (int dy = 0; dy <= 1; ++dy)
          for (int dx = 0; dx <= 1; ++dx, ++o)
            for (int z = 0; z < nz; ++z)
              for (int y = 0; y < ny; ++y) {
                const Eigen::Index src = static_cast<Eigen::Index>(nx) * (y + static_cast<Eigen::Index>(ny) * z);
                const Eigen::Index dst = static_cast<Eigen::Index>(item) * vout + dx +
                                         static_cast<Eigen::Index>(od.x()) *
                                             ((2 * y + dy) + static_cast<Eigen::Index>(od.y()) * (2 * z + dz));
                strided_cols(out.m, dst, nx) = y8.block(static_cast<Eigen::Index>(o) * cout_, src, cout_, nx);
              }
    }
    out.m.colwise() += b_.value.col(0);
  }

  void backward(const std::vector<const TensorT<S>*>& in, const TensorT<S>& out,
                const TensorT<S>& gout, const std::vector<TensorT<S>*>& gin) override {
    const auto& x = *in.at(0);
    b_.grad.col(0) += gout.m.rowwise().sum();
    const Index3 odim = out.dims;
    const int nx = x.dims.x(), ny = x.dims.y(), nz = x.dims.z();
    const Eigen::Index vin = x.vox(), vout = out.vox();
    auto g8 = detail::scratch<S>(2, static_cast<Eigen::Index>(8) * cout_, vin);
    for (int item = 0; item < x.batch; ++item) {
      for (int o = 0, dz = 0; dz <= 1; ++dz)
        for (int dy = 0; dy <= 1; ++dy)
          for (int dx = 0; dx <= 1; ++dx, ++o)
            for (int z = 0; z < nz; ++z)
              for (int y = 0; y < ny; ++y) {
                const Eigen::Index dst = static_cast<Eigen::Index>(nx) * (y + static_cast<Eigen::Index>(ny) * z);
                const Eigen::Index src = static_cast<Eigen::Index>(item) * vout + dx +
                                         static_cast<Eigen::Index>(odim.x()) *
                                             ((2 * y + dy) + static_cast<Eigen::Index>(odim.y()) * (2 * z + dz));
                g8.block(static_cast<Eigen::Index>(o) * cout_, dst, cout_, nx) =
                    strided_cols_const(gout.m, src, nx);
              }
      w_.grad.noalias() += g8 * x.m.middleCols(static_cast<Eigen::Index>(item) * vin, vin).transpose();
      gin.at(0)->m.middleCols(static_cast<Eigen::Index>(item) * vin, vin).noalias() +=
          w_.value.transpose() * g8;
    }
  }

 private:
  static Eigen::Map<Matrix, 0, Eigen::OuterStride<>> strided_cols(Matrix& m, Eigen::Index col0,
                                                                  Eigen::Index n) {
    return {m.data() + col0 * m.rows(), m.rows(), n, Eigen::OuterStride<>(2 * m.rows())};
  }
  static Eigen::Map<const Matrix, 0, Eigen::OuterStride<>> strided_cols_const(const Matrix& m,
                                                                              Eigen::Index col0,
                                                                              Eigen::Index n) {
    return {m.data() + col0 * m.rows(), m.rows(), n, Eigen::OuterStride<>(2 * m.rows())};
  }

  int cin_, cout_;
  ParamT<S> w_, b_;
};

// 2x2x2 max pooling, stride 2. Requires even spatial dims.
template <typename S>
class MaxPool3dOp final : public Op<S> {
 public:
  const char* kind() const override { return "maxpool2"; }

  void forward(const std::vector<const TensorT<S>*>& in, TensorT<S>& out, NetMode mode) override {
    const auto& x = *in.at(0);
    require(x.dims.x() % 2 == 0 && x.dims.y() % 2 == 0 && x.dims.z() % 2 == 0,
            ErrorCode::kInvalidArgument, "maxpool: spatial dims must be even");
    const Index3 od = x.dims / 2;
    out.resize(x.channels, od, x.batch);
    const bool track = is_training(mode);
    if (track) argmax_.resize(x.channels, out.cols());

    const int nx = x.dims.x(), ny = x.dims.y();
    const Eigen::Index vin = x.vox(), vo = out.vox();
    for (int item = 0; item < x.batch; ++item) {
      const Eigen::Index ib = static_cast<Eigen::Index>(item) * vin;
      const Eigen::Index ob = static_cast<Eigen::Index>(item) * vo;
      Eigen::Index oc = ob;
      for (int z = 0; z < od.z(); ++z)
        for (int y = 0; y < od.y(); ++y)
          for (int x0 = 0; x0 < od.x(); ++x0, ++oc) {
            Eigen::Index src[8];
            int si = 0;
            for (int dz = 0; dz <= 1; ++dz)
              for (int dy = 0; dy <= 1; ++dy)
                for (int dx = 0; dx <= 1; ++dx)
                  src[si++] = ib + (2 * x0 + dx) +
                              static_cast<Eigen::Index>(nx) *
                                  ((2 * y + dy) + static_cast<Eigen::Index>(ny) * (2 * z + dz));
            for (int c = 0; c < x.channels; ++c) {
              S best = x.m(c, src[0]);
              Eigen::Index arg = src[0];
              for (int k = 1; k < 8; ++k) {
                const S v = x.m(c, src[k]);
                if (v > best) {
                  best = v;
                  arg = src[k];
                }
              }
              out.m(c, oc) = best;
              if (track) argmax_(c, oc) = arg;
            }
          }
    }
  }

  void backward(const std::vector<const TensorT<S>*>&, const TensorT<S>& out,
                const TensorT<S>& gout, const std::vector<TensorT<S>*>& gin) override {
    require(argmax_.size() == gout.m.size(), ErrorCode::kInternal, "maxpool: missing argmax cache");
    auto& g = gin.at(0)->m;
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (int c = 0; c < out.channels; ++c) g(c, argmax_(c, j)) += gout.m(c, j);
  }

  void drop_cache() override { argmax_.resize(0, 0); }

 private:
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax_;
};

template <typename S>
class ReluOp final : public Op<S> {
 public:
  const char* kind() const override { return "relu"; }

  void forward(const std::vector<const TensorT<S>*>& in, TensorT<S>& out, NetMode) override {
    const auto& x = *in.at(0);
    out.resize_like(x);
    out.m = x.m.cwiseMax(S(0));
  }

  void backward(const std::vector<const TensorT<S>*>&, const TensorT<S>& out,
                const TensorT<S>& gout, const std::vector<TensorT<S>*>& gin) override {
    gin.at(0)->m.array() += gout.m.array() * (out.m.array() > S(0)).template cast<S>();
  }
};

// Per-channel batch normalization over (batch, space). Training mode uses
// batch statistics (biased variance) and maintains running estimates for
// inference.
template <typename S>
class BatchNormOp final : public Op<S> {
 public:
  using Matrix = typename TensorT<S>::Matrix;
  using Col = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  BatchNormOp(int channels, const std::string& name, double momentum = 0.1, double eps = 1e-5)
      : ch_(channels), momentum_(momentum), eps_(eps) {
    gamma_.name = name + ".gamma";
    gamma_.value = Matrix::Ones(ch_, 1);
    beta_.name = name + ".beta";
    beta_.value = Matrix::Zero(ch_, 1);
    running_mean_.name = name + ".running_mean";
    running_mean_.value = Matrix::Zero(ch_, 1);
    running_mean_.trainable = false;
    running_var_.name = name + ".running_var";
    running_var_.value = Matrix::Ones(ch_, 1);
    running_var_.trainable = false;
  }

  const char* kind() const override { return "batchnorm"; }
  std::vector<ParamT<S>*> params() override {
    return {&gamma_, &beta_, &running_mean_, &running_var_};
  }

  void forward(const std::vector<const TensorT<S>*>& in, TensorT<S>& out, NetMode mode) override {
    const auto& x = *in.at(0);
    require(x.channels == ch_, ErrorCode::kInternal, "batchnorm: channel mismatch");
    require(!is_training(mode) || x.cols() > 1, ErrorCode::kInvalidArgument,
            "batchnorm: training needs >1 value per channel; this configuration collapses the "
            "normalization axis to one voxel (deeper than the grid supports at batch 1)");
    out.resize_like(x);
    const auto n = static_cast<double>(x.cols());

    Col mu, var;
    if (is_training(mode)) {
      mu = x.m.rowwise().mean();
      var = ((x.m.colwise() - mu).array().square()).rowwise().mean();
      if (mode == NetMode::kTrain) {
        const S unbias = static_cast<S>(n > 1 ? n / (n - 1) : 1.0);
        const S mom = static_cast<S>(momentum_);
        running_mean_.value.col(0) = (S(1) - mom) * running_mean_.value.col(0) + mom * mu;
        running_var_.value.col(0) =
            (S(1) - mom) * running_var_.value.col(0) + mom * unbias * var;
      }
      mean_ = mu;
      inv_std_ = (var.array() + static_cast<S>(eps_)).rsqrt();
    } else {
      mu = running_mean_.value.col(0);
      var = running_var_.value.col(0);
    }
    const Col scale = is_training(mode)
                          ? Col(gamma_.value.col(0).array() * inv_std_.array())
                          : Col(gamma_.value.col(0).array() *
                                (var.array() + static_cast<S>(eps_)).rsqrt());
    out.m = x.m.colwise() - mu;
    out.m.array().colwise() *= scale.array();
    out.m.colwise() += beta_.value.col(0);
  }

  void backward(const std::vector<const TensorT<S>*>& in, const TensorT<S>&,
                const TensorT<S>& gout, const std::vector<TensorT<S>*>& gin) override {
    require(mean_.size() == ch_, ErrorCode::kInternal, "batchnorm: missing train-mode cache");
    const auto& x = *in.at(0);
    Matrix xhat = x.m.colwise() - mean_;
    xhat.array().colwise() *= inv_std_.array();

    const Col gsum = gout.m.rowwise().sum();
    const Col gxsum = (gout.m.array() * xhat.array()).rowwise().sum();
    gamma_.grad.col(0) += gxsum;
    beta_.grad.col(0) += gsum;

    const auto n = static_cast<S>(x.cols());
    const Col scale = gamma_.value.col(0).array() * inv_std_.array();
    // dL/dx = scale * (g - mean(g) - xhat * mean(g*xhat))
    xhat.array().colwise() *= (gxsum / n).array();
    Matrix gx = gout.m.colwise() - Col(gsum / n);
    gx -= xhat;
    gx.array().colwise() *= scale.array();
    gin.at(0)->m += gx;
  }

  void drop_cache() override {
    mean_.resize(0);
    inv_std_.resize(0);
  }

 private:
  int ch_;
  double momentum_, eps_;
  ParamT<S> gamma_, beta_, running_mean_, running_var_;
  Col mean_, inv_std_;
};

template <typename S>
class SigmoidOp final : public Op<S> {
 public:
  const char* kind() const override { return "sigmoid"; }

  void forward(const std::vector<const TensorT<S>*>& in, TensorT<S>& out, NetMode) override {
    const auto& x = *in.at(0);
    out.resize_like(x);
    out.m = (S(1) / (S(1) + (-x.m.array()).exp())).matrix();
  }

  void backward(const std::vector<const TensorT<S>*>&, const TensorT<S>& out,
                const TensorT<S>& gout, const std::vector<TensorT<S>*>& gin) override {
    gin.at(0)->m.array() += gout.m.array() * out.m.array() * (S(1) - out.m.array());
  }
};

// Channel-wise concatenation.
template <typename S>
class ConcatOp final : public Op<S> {
 public:
  const char* kind() const override { return "concat"; }

  void forward(const std::vector<const TensorT<S>*>& in, TensorT<S>& out, NetMode) override {
    require(!in.empty(), ErrorCode::kInternal, "concat: no inputs");
    int ch = 0;
    for (const auto* t : in) {
      require(t->dims == in[0]->dims && t->batch == in[0]->batch, ErrorCode::kInternal,
              "concat: layout mismatch");
      ch += t->channels;
    }
    out.resize(ch, in[0]->dims, in[0]->batch);
    int row = 0;
    for (const auto* t : in) {
      out.m.middleRows(row, t->channels) = t->m;
      row += t->channels;
    }
  }

  void backward(const std::vector<const TensorT<S>*>& in, const TensorT<S>&,
                const TensorT<S>& gout, const std::vector<TensorT<S>*>& gin) override {
    int row = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      gin[i]->m += gout.m.middleRows(row, in[i]->channels);
      row += in[i]->channels;
    }
  }
};

// Extracts a contiguous channel range (used to route modalities).
template <typename S>
class SliceChannelsOp final : public Op<S> {
 public:
  SliceChannelsOp(int begin, int count) : begin_(begin), count_(count) {}
  const char* kind() const override { return "slice"; }

  void forward(const std::vector<const TensorT<S>*>& in, TensorT<S>& out, NetMode) override {
    const auto& x = *in.at(0);
    require(begin_ + count_ <= x.channels, ErrorCode::kInternal, "slice: channel range");
    out.resize(count_, x.dims, x.batch);
    out.m = x.m.middleRows(begin_, count_);
  }

  void backward(const std::vector<const TensorT<S>*>&, const TensorT<S>&,
                const TensorT<S>& gout, const std::vector<TensorT<S>*>& gin) override {
    gin.at(0)->m.middleRows(begin_, count_) += gout.m;
  }

 private:
  int begin_, count_;
};

// Voxelwise arithmetic mean of n same-layout inputs (deep-supervision head
// averaging, late-fusion decision averaging).
template <typename S>
class MeanOp final : public Op<S> {
 public:
  const char* kind() const override { return "mean"; }

  void forward(const std::vector<const TensorT<S>*>& in, TensorT<S>& out, NetMode) override {
    require(!in.empty(), ErrorCode::kInternal, "mean: no inputs");
    out.resize_like(*in[0]);
    out.m.setZero();
    for (const auto* t : in) {
      require(t->same_layout(*in[0]), ErrorCode::kInternal, "mean: layout mismatch");
      out.m += t->m;
    }
    out.m *= S(1) / static_cast<S>(in.size());
  }

  void backward(const std::vector<const TensorT<S>*>& in, const TensorT<S>&,
                const TensorT<S>& gout, const std::vector<TensorT<S>*>& gin) override {
    const S w = S(1) / static_cast<S>(in.size());
    for (auto* g : gin) g->m += w * gout.m;
  }
};

}  // namespace fuseg::nn
