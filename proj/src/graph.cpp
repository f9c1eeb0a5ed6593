#include "spseg/graph.hpp"

namespace spseg {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kPool2d: return "pool2d";
    case OpKind::kUpsample: return "upsample_bilinear";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kGroupNorm: return "group_norm";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kLog: return "log";
    case OpKind::kSum: return "sum";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kConcat: return "concat";
    case OpKind::kIndexRows: return "index_rows";
    case OpKind::kLinear: return "linear";
    case OpKind::kNormalizeRows: return "normalize_rows";
    case OpKind::kBceWithLogits: return "bce_with_logits";
  }
  return "unknown";
}

template <typename Scalar>
Parameter<Scalar>& ParamSet<Scalar>::add(std::string name, Tensor<Scalar> value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back(Parameter<Scalar>{std::move(name), std::move(value), std::nullopt, {}, true});
  return params_.back();
}

template <typename Scalar>
Parameter<Scalar>& ParamSet<Scalar>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

template <typename Scalar>
const Parameter<Scalar>& ParamSet<Scalar>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

template <typename Scalar>
Index ParamSet<Scalar>::numel() const {
  Index n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename Scalar>
void ParamSet<Scalar>::zero_grad() {
  for (auto& p : params_) p.grad = Tensor<Scalar>::zeros_like(p.value);
}

template <typename Scalar>
void ParamSet<Scalar>::clear_grad() {
  for (auto& p : params_) p.grad.reset();
}

template <typename Scalar>
void ParamSet<Scalar>::set_requires_grad(bool on) {
  for (auto& p : params_) p.requires_grad = on;
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::constant(TensorT value) {
  Node n;
  n.kind = OpKind::kConstant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return VarT{this, nodes_.size() - 1};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::parameter(Parameter<Scalar>& p) {
  Node n;
  n.kind = OpKind::kParameter;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = grad_enabled_ && p.requires_grad;
  nodes_.push_back(std::move(n));
  return VarT{this, nodes_.size() - 1};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(OpKind kind, std::span<const VarT> inputs, TensorT value, BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.inputs.reserve(inputs.size());
  for (const VarT& v : inputs) {
    if (v.graph != this) throw ConfigError(std::string("operand of ") + op_name(kind) + " belongs to another graph");
    n.inputs.push_back(v.id);
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  n.needs_grad = n.needs_grad && grad_enabled_;
  n.value = std::move(value);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return VarT{this, nodes_.size() - 1};
}

template <typename Scalar>
void Graph<Scalar>::backward(VarT loss) {
  if (loss.graph != this) throw ConfigError("loss node belongs to another graph");
  const Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(root.value.shape()));

  for (Node& n : nodes_)
    if (n.param && n.param->requires_grad && !n.param->grad) n.param->grad = TensorT::zeros_like(n.param->value);
  if (!root.needs_grad) return;

  std::vector<std::optional<TensorT>> grads(loss.id + 1);
  grads[loss.id] = TensorT(root.value.shape(), Scalar(1));
  std::vector<TensorT*> slots;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !grads[i]) continue;
    if (n.param) {
      n.param->grad->array() += grads[i]->array();
    } else if (n.backward) {
      slots.assign(n.inputs.size(), nullptr);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t in = n.inputs[k];
        if (!nodes_[in].needs_grad) continue;
        if (!grads[in]) grads[in] = TensorT::zeros_like(nodes_[in].value);
        slots[k] = &*grads[in];
      }
      n.backward(*grads[i], std::span<TensorT* const>(slots));
    }
    grads[i].reset();
  }
}

template class ParamSet<float>;
template class ParamSet<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace spseg
