#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "fuseg/nn/graph.hpp"

namespace fuseg::nn {

template <typename S>
class AdamT {
 public:
  explicit AdamT(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<ParamT<S>*>& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto* p : params) {
      if (!p->trainable) continue;
      auto& st = state_[p];
      if (st.m.size() == 0) {
        st.m.setZero(p->value.rows(), p->value.cols());
        st.v.setZero(p->value.rows(), p->value.cols());
      }
      const auto g = p->grad.array();
      st.m = (static_cast<S>(beta1_) * st.m.array() + static_cast<S>(1.0 - beta1_) * g).matrix();
      st.v = (static_cast<S>(beta2_) * st.v.array() + static_cast<S>(1.0 - beta2_) * g.square()).matrix();
      p->value.array() -= static_cast<S>(lr / c1) * st.m.array() /
                          ((st.v.array() / static_cast<S>(c2)).sqrt() + static_cast<S>(eps_));
    }
  }

  void reset() {
    state_.clear();
    t_ = 0;
  }

 private:
  struct State {
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> m, v;
  };
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::unordered_map<ParamT<S>*, State> state_;
};

}  // namespace fuseg::nn
