#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fuseg/nn/tensor.hpp"

namespace fuseg::nn {

// kTrainFrozenStats behaves like kTrain but leaves batchnorm running
// statistics untouched (used by finite-difference gradient checks, which
// must evaluate the loss repeatedly without side effects).
enum class NetMode { kTrain, kTrainFrozenStats, kEval };

inline bool is_training(NetMode mode) { return mode != NetMode::kEval; }

template <typename Scalar>
struct ParamT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;  // false for batchnorm running statistics

  void zero_grad() {
    grad.resize(value.rows(), value.cols());
    grad.setZero();
  }
};

template <typename Scalar>
class Op {
 public:
  virtual ~Op() = default;
  virtual const char* kind() const = 0;

  virtual void forward(const std::vector<const TensorT<Scalar>*>& in, TensorT<Scalar>& out,
                       NetMode mode) = 0;

  // Accumulates into grad_in (already allocated and zeroed by the engine)
  // and into this op's parameter grads.
  virtual void backward(const std::vector<const TensorT<Scalar>*>& in, const TensorT<Scalar>& out,
                        const TensorT<Scalar>& grad_out,
                        const std::vector<TensorT<Scalar>*>& grad_in) = 0;

  virtual std::vector<ParamT<Scalar>*> params() { return {}; }
  virtual void drop_cache() {}
};

// Static DAG of ops. Nodes are created in topological order by the
// builders; forward evaluates in order, backward walks in reverse. Memory
// is released as soon as a tensor can no longer be needed.
template <typename Scalar>
class GraphT {
 public:
  using Tensor = TensorT<Scalar>;

  int add_input(int channels) {
    require(nodes_.empty(), ErrorCode::kInternal, "graph: input must be node 0");
    nodes_.push_back(Node{});
    input_channels_ = channels;
    return 0;
  }

  int add(std::shared_ptr<Op<Scalar>> op, std::vector<int> inputs) {
    require(!nodes_.empty(), ErrorCode::kInternal, "graph: add_input first");
    const int id = static_cast<int>(nodes_.size());
    for (int i : inputs) {
      require(i >= 0 && i < id, ErrorCode::kInternal, "graph: bad edge");
      ++nodes_[static_cast<std::size_t>(i)].consumers;
    }
    Node n;
    n.op = std::move(op);
    n.in = std::move(inputs);
    nodes_.push_back(std::move(n));
    return id;
  }

  void mark_output(int id) { outputs_.push_back(id); }

  int size() const { return static_cast<int>(nodes_.size()); }
  int input_channels() const { return input_channels_; }

  Tensor& tensor(int id) { return nodes_[static_cast<std::size_t>(id)].out; }
  const Tensor& tensor(int id) const { return nodes_[static_cast<std::size_t>(id)].out; }

  void forward(const Tensor& x, NetMode mode) {
    require(x.channels == input_channels_, ErrorCode::kInvalidArgument,
            "forward: expected " + std::to_string(input_channels_) + " input channels, got " +
                std::to_string(x.channels));
    require(x.m.allFinite(), ErrorCode::kDataIntegrity, "forward: non-finite input");

    std::vector<int> remaining(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) remaining[i] = nodes_[i].consumers;

    nodes_[0].out = x;
    std::vector<const Tensor*> ins;
    for (std::size_t k = 1; k < nodes_.size(); ++k) {
      Node& node = nodes_[k];
      ins.clear();
      for (int i : node.in) ins.push_back(&nodes_[static_cast<std::size_t>(i)].out);
      node.op->forward(ins, node.out, mode);
      if (mode == NetMode::kEval) {
        for (int i : node.in) {
          if (--remaining[static_cast<std::size_t>(i)] == 0 && !is_output(i))
            nodes_[static_cast<std::size_t>(i)].out.release();
        }
      }
    }
  }

  // Backpropagates seed (dL/d out_id) to parameter grads, accumulating.
  // Releases activations and caches as it goes.
  void backward(int out_id, const Tensor& seed) {
    auto& grads = grad_;
    grads.assign(nodes_.size(), Tensor{});
    require(seed.same_layout(nodes_[static_cast<std::size_t>(out_id)].out), ErrorCode::kInternal,
            "backward: seed layout mismatch");
    grads[static_cast<std::size_t>(out_id)] = seed;

    std::vector<const Tensor*> ins;
    std::vector<Tensor*> gins;
    for (std::size_t k = nodes_.size(); k-- > 1;) {
      Node& node = nodes_[k];
      Tensor& gout = grads[k];
      if (!gout.allocated()) {  // not on the path from the seed
        node.op->drop_cache();
        node.out.release();
        continue;
      }
      ins.clear();
      gins.clear();
      for (int i : node.in) {
        const auto idx = static_cast<std::size_t>(i);
        ins.push_back(&nodes_[idx].out);
        if (!grads[idx].allocated()) {
          grads[idx].resize_like(nodes_[idx].out);
          grads[idx].m.setZero();
        }
        gins.push_back(&grads[idx]);
      }
      node.op->backward(ins, node.out, gout, gins);
      node.op->drop_cache();
      node.out.release();
      gout.release();
    }
    nodes_[0].out.release();
    grads.clear();
  }

  std::vector<ParamT<Scalar>*> params() const {
    std::vector<ParamT<Scalar>*> out;
    for (const auto& n : nodes_)
      if (n.op)
        for (auto* p : n.op->params()) out.push_back(p);
    return out;
  }

  std::vector<ParamT<Scalar>*> trainable_params() const {
    std::vector<ParamT<Scalar>*> out;
    for (auto* p : params())
      if (p->trainable) out.push_back(p);
    return out;
  }

  void zero_grads() const {
    for (auto* p : params())
      if (p->trainable) p->zero_grad();
  }

  void release_activations() {
    for (auto& n : nodes_) {
      n.out.release();
      if (n.op) n.op->drop_cache();
    }
  }

 private:
  struct Node {
    std::shared_ptr<Op<Scalar>> op;  // null for the input node
    std::vector<int> in;
    Tensor out;
    int consumers = 0;
  };

  bool is_output(int id) const {
    for (int o : outputs_)
      if (o == id) return true;
    return false;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grad_;
  std::vector<int> outputs_;
  int input_channels_ = 0;
};

}  // namespace fuseg::nn
