#pragma once

#include <cmath>
#include <string>

#include "fuseg/nn/tensor.hpp"

namespace fuseg::nn {

enum class LossKind { kDice, kBce, kDiceBce };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::kDice: return "dice";
    case LossKind::kBce: return "bce";
    case LossKind::kDiceBce: return "dice+bce";
  }
  return "?";
}

inline LossKind loss_from_string(const std::string& s) {
  if (s == "dice") return LossKind::kDice;
  if (s == "bce") return LossKind::kBce;
  if (s == "dice+bce" || s == "dicebce") return LossKind::kDiceBce;
  fail(ErrorCode::kInvalidArgument, "unknown loss kind '" + s + "'");
}

template <typename S>
struct LossValueGrad {
  double value = 0.0;
  TensorT<S> grad;  // dL/dpred
};

// Soft Dice (smoothing 1 in numerator and denominator) and/or mean binary
// cross-entropy over all voxels in the tensor. Probabilities are clamped to
// [eps, 1-eps] inside the BCE terms.
template <typename S>
LossValueGrad<S> segmentation_loss(const TensorT<S>& pred, const TensorT<S>& target,
                                   LossKind kind) {
  require(pred.same_layout(target), ErrorCode::kInvalidArgument, "loss: pred/target layout mismatch");
  LossValueGrad<S> out;
  out.grad.resize_like(pred);
  out.grad.m.setZero();

  const auto p = pred.m.template cast<double>().array();
  const auto g = target.m.template cast<double>().array();
  const auto n = static_cast<double>(pred.m.size());

  if (kind == LossKind::kDice || kind == LossKind::kDiceBce) {
    const double inter = (p * g).sum();
    const double sp = p.sum(), sg = g.sum();
    const double denom = sp + sg + 1.0;
    const double num = 2.0 * inter + 1.0;
    out.value += 1.0 - num / denom;
    // d/dp_i = -(2 g_i denom - num) / denom^2
    out.grad.m.array() += (-(2.0 * g * denom - num) / (denom * denom)).template cast<S>();
  }
  if (kind == LossKind::kBce || kind == LossKind::kDiceBce) {
    constexpr double eps = 1e-7;
    const auto pc = p.min(1.0 - eps).max(eps);
    out.value += (-(g * pc.log() + (1.0 - g) * (1.0 - pc).log())).sum() / n;
    out.grad.m.array() += ((-g / pc + (1.0 - g) / (1.0 - pc)) / n).template cast<S>();
  }
  require(std::isfinite(out.value), ErrorCode::kInternal, "loss: non-finite value");
  return out;
}

}  // namespace fuseg::nn
