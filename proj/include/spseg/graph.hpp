#pragma once

#include "spseg/tensor.hpp"

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spseg {

/// A named trainable tensor. `grad` is empty until a backward pass (or
/// zero_grad) populates it; `velocity` is the momentum buffer used by sgd_step.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  std::optional<Tensor<Scalar>> grad;
  Tensor<Scalar> velocity;
  bool requires_grad = true;
};

/// Insertion-ordered, name-addressable parameter collection. Element
/// addresses are stable across add().
template <typename Scalar>
class ParamSet {
 public:
  using value_type = Parameter<Scalar>;

  Parameter<Scalar>& add(std::string name, Tensor<Scalar> value);
  Parameter<Scalar>& at(const std::string& name);
  const Parameter<Scalar>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Index numel() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  void clear_grad();
  void set_requires_grad(bool on);

  /// Converts values (and any populated grads/velocities) to another scalar type.
  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& p : params_) {
      auto& q = out.add(p.name, p.value.template cast<Other>());
      if (p.grad) q.grad = p.grad->template cast<Other>();
      if (!p.velocity.empty()) q.velocity = p.velocity.template cast<Other>();
      q.requires_grad = p.requires_grad;
    }
    return out;
  }

 private:
  std::deque<Parameter<Scalar>> params_;
  std::map<std::string, std::size_t> index_;
};

enum class OpKind {
  kConstant,
  kParameter,
  kConv2d,
  kRelu,
  kSigmoid,
  kSoftmax,
  kPool2d,
  kUpsample,
  kMatMul,
  kGroupNorm,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kLog,
  kSum,
  kSumRows,
  kReshape,
  kTranspose,
  kConcat,
  kIndexRows,
  kLinear,
  kNormalizeRows,
  kBceWithLogits,
};

const char* op_name(OpKind kind);

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<Scalar>& value() const;
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so list order
/// is a topological order and backward() is a single reverse sweep.
template <typename Scalar>
class Graph {
 public:
  using TensorT = Tensor<Scalar>;
  using VarT = Var<Scalar>;
  /// Receives the gradient of the node output and one slot per input; a
  /// slot is null when that input does not need a gradient.
  using BackwardFn = std::function<void(const TensorT& grad_out, std::span<TensorT* const> grad_in)>;

  struct Node {
    OpKind kind = OpKind::kConstant;
    std::vector<std::size_t> inputs;
    TensorT value;
    BackwardFn backward;
    Parameter<Scalar>* param = nullptr;
    bool needs_grad = false;
  };

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  VarT constant(TensorT value);
  VarT parameter(Parameter<Scalar>& p);
  VarT parameter(ParamSet<Scalar>& params, const std::string& name) { return parameter(params.at(name)); }

  VarT record(OpKind kind, std::span<const VarT> inputs, TensorT value, BackwardFn backward);
  VarT record(OpKind kind, std::initializer_list<VarT> inputs, TensorT value, BackwardFn backward) {
    return record(kind, std::span<const VarT>(inputs.begin(), inputs.size()), std::move(value), std::move(backward));
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }
  bool needs_grad(VarT v) const { return nodes_[v.id].needs_grad; }

  /// Accumulates d(loss)/d(param) into every parameter registered in this
  /// graph. Parameters that do not reach the loss receive zeros.
  void backward(VarT loss);

 private:
  bool grad_enabled_;
  std::deque<Node> nodes_;  // stable addresses: values may be referenced while recording
};

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const {
  return graph->node(id).value;
}

extern template class ParamSet<float>;
extern template class ParamSet<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace spseg
