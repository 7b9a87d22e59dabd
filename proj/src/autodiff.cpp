#include "gradconceal/autodiff.hpp"

#include <atomic>

#include "gradconceal/errors.hpp"

namespace gc::ad {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{id_, nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  return push(Node{NodeKind::input, "input", std::move(value), {}, {}, true});
}

Var Tape::parameter(std::string id, Tensor value) {
  return push(Node{NodeKind::parameter, std::move(id), std::move(value), {}, {}, true});
}

Var Tape::constant(Tensor value) {
  return push(Node{NodeKind::constant, "constant", std::move(value), {}, {}, false});
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node{NodeKind::op, std::move(op), std::move(value), {}, {}, false};
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (!owns(v)) throw ContractError("operation '" + node.name + "' uses a value from another tape");
    node.inputs.push_back(v.index);
    node.requires_grad = node.requires_grad || nodes_[v.index].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  ++op_count_;
  return push(std::move(node));
}

const Tensor& Tape::value(Var v) const {
  if (!owns(v)) throw ContractError("value requested for a variable not on this tape");
  return nodes_[v.index].value;
}

bool Tape::requires_grad(Var v) const {
  if (!owns(v)) throw ContractError("variable not on this tape");
  return nodes_[v.index].requires_grad;
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  for (const auto& n : nodes_)
    if (n.kind == NodeKind::op) names.push_back(n.name);
  return names;
}

Gradients Tape::backward(Var loss) const {
  if (!owns(loss)) throw ContractError("loss is not recorded on this tape");
  const Node& root = nodes_[loss.index];
  if (root.value.size() != 1) throw ContractError("loss must be a scalar, got shape " + shape_string(root.value.shape()));

  Gradients out;
  out.tape_ = this;
  out.tape_id_ = id_;
  out.grads_.resize(nodes_.size());
  out.grads_[loss.index] = Tensor(root.value.shape(), std::vector<float>{1.0f});

  std::vector<Tensor*> slots;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!out.grads_[i] || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t j = node.inputs[k];
      if (!nodes_[j].requires_grad) continue;
      auto& g = out.grads_[j];
      if (!g) g = Tensor(nodes_[j].value.shape(), std::vector<float>(nodes_[j].value.size(), 0.0f));
      slots[k] = &*g;
    }
    node.backward(*out.grads_[i], slots);
  }
  return out;
}

Tensor Gradients::operator[](Var v) const {
  if (v.tape_id != tape_id_ || v.index >= grads_.size())
    throw ContractError("gradient requested for a variable not on this tape");
  if (grads_[v.index]) return *grads_[v.index];
  const Tensor& value = tape_->nodes_[v.index].value;
  return Tensor(value.shape(), 0.0f);
}

std::vector<std::pair<std::string, Tensor>> Gradients::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < tape_->nodes_.size(); ++i) {
    const auto& node = tape_->nodes_[i];
    if (node.kind != NodeKind::parameter) continue;
    out.emplace_back(node.name, (*this)[Var{tape_id_, i}]);
  }
  return out;
}

std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> x, double h) {
  if (!(h > 0)) throw ContractError("finite-difference step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  if (!(h > 0)) throw ContractError("finite-difference step must be positive");
  Tensor probe = x;
  std::vector<float> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Divide by the step actually taken after float rounding.
    const float up_x = static_cast<float>(static_cast<double>(x[i]) + h);
    const float down_x = static_cast<float>(static_cast<double>(x[i]) - h);
    probe[i] = up_x;
    const double up = f(probe);
    probe[i] = down_x;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = static_cast<float>((up - down) / (static_cast<double>(up_x) - static_cast<double>(down_x)));
  }
  return Tensor(x.shape(), std::move(grad), Finite::unchecked);
}

}  // namespace gc::ad
