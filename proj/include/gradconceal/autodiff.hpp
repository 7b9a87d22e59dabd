#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records primitive operations in execution order. Each recorded node
// keeps its output value and a local backward rule that adds the incoming
// cotangent into the cotangents of its inputs. Because nodes can only refer to
// earlier nodes, the record order is already topological and a single reverse
// sweep visits every node once.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradconceal/tensor.hpp"

namespace gc::ad {

/// Handle to a node on a specific tape.
struct Var {
  std::uint64_t tape_id = 0;
  std::size_t index = 0;
};

/// Backward rule: `grad_out` is dL/d(output); `grad_in[k]` is the accumulator
/// for input k, or nullptr when that input does not need a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

enum class NodeKind { input, parameter, constant, op };

class Gradients;

class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  Var input(Tensor value);
  Var parameter(std::string id, Tensor value);
  Var constant(Tensor value);
  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  bool owns(Var v) const noexcept { return v.tape_id == id_ && v.index < nodes_.size(); }

  /// Number of recorded primitive operations (leaves excluded).
  std::size_t op_count() const noexcept { return op_count_; }
  std::vector<std::string> op_names() const;

  /// Reverse sweep from a scalar node. Throws ContractError if `loss` is not
  /// on this tape or is not a scalar.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    NodeKind kind;
    std::string name;  // op name or parameter id
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::size_t op_count_ = 0;

  friend class Gradients;
};

/// Cotangents for every node reached by a backward sweep.
class Gradients {
 public:
  /// Gradient with respect to `v`; a zero tensor if `v` did not influence the loss.
  Tensor operator[](Var v) const;
  /// Gradients for every parameter leaf, keyed by parameter id, in tape order.
  std::vector<std::pair<std::string, Tensor>> parameters() const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::uint64_t tape_id_ = 0;
  std::vector<std::optional<Tensor>> grads_;
};

/// Central-difference estimate (f(x+h e_i) - f(x-h e_i)) / 2h, evaluated in
/// double precision on the coordinates of `x`.
std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> x, double h);

/// Tensor convenience overload: perturbs coordinates in float32 and evaluates f.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h);

}  // namespace gc::ad
