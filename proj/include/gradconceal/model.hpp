#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gradconceal/autodiff.hpp"
#include "gradconceal/ops.hpp"
#include "gradconceal/tensor.hpp"

namespace gc::nn {

/// Architecture descriptor. `name` is "mlp" or "smallcnn".
///   mlp:      widths = {in, hidden..., classes}; optional input_shape whose
///             product equals widths[0] (a flatten is inserted).
///   smallcnn: input_shape = {H, W, C}; one conv3x3+relu+maxpool block per
///             entry of `channels`, then a flatten+dense block.
struct ArchSpec {
  std::string name;
  Shape input_shape;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> channels;
  std::size_t num_classes = 0;

  static ArchSpec mlp(std::vector<std::size_t> widths, Shape input_shape = {});
  static ArchSpec smallcnn(Shape input_shape = {28, 28, 1}, std::vector<std::size_t> channels = {8, 16},
                           std::size_t num_classes = 10);

  /// Canonical compact JSON text (sorted keys); used in checkpoints.
  std::string to_text() const;
  static ArchSpec from_text(std::string_view text);

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

enum class LayerKind { dense, conv2d, relu, max_pool2x2, flatten };

struct Layer {
  LayerKind kind;
  std::size_t weight = 0;  // parameter indices, dense/conv2d only
  std::size_t bias = 0;
  ad::Conv2dSpec conv{};
};

std::string_view layer_name(LayerKind kind);

struct Block {
  std::string name;
  std::vector<Layer> layers;
};

struct Parameter {
  std::string id;
  Tensor value;
};

/// Whether forward passes record parameters as differentiable leaves.
enum class ParamMode { track, constant };

/// Anything that maps a batch of inputs to logits on a tape.
class Classifier {
 public:
  virtual ~Classifier() = default;
  /// Per-sample input shape (without the batch axis).
  virtual const Shape& input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual ad::Var forward(ad::Tape& tape, ad::Var x, ParamMode mode = ParamMode::constant) const = 0;
};

class Model final : public Classifier {
 public:
  Model(ArchSpec arch, std::vector<Block> blocks, std::vector<Parameter> params);

  const Shape& input_shape() const override { return arch_.input_shape; }
  std::size_t num_classes() const override { return arch_.num_classes; }
  ad::Var forward(ad::Tape& tape, ad::Var x, ParamMode mode = ParamMode::constant) const override;

  /// Runs a single block. Throws NumericError naming the layer on NaN/Inf output.
  ad::Var forward_block(ad::Tape& tape, ad::Var x, std::size_t block, ParamMode mode) const;

  const ArchSpec& arch() const noexcept { return arch_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  std::size_t block_index(std::string_view name) const;

  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::vector<Parameter>& parameters() noexcept { return params_; }
  const Tensor& parameter(std::string_view id) const;
  void set_parameter(std::string_view id, Tensor value);
  std::size_t parameter_count() const;

 private:
  ArchSpec arch_;
  std::vector<Block> blocks_;
  std::vector<Parameter> params_;
};

/// Deterministic construction: every weight and bias is drawn uniformly from
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)] using a seeded mt19937_64.
Model build_model(const ArchSpec& arch, std::uint64_t seed);

struct ForwardPass {
  ad::Tape tape;
  ad::Var input;
  ad::Var logits;
  const Tensor& logits_value() const { return tape.value(logits); }
};

/// Checks that `input` is (batch, input_shape...) and records the forward pass.
ForwardPass forward_eval(const Classifier& model, const Tensor& input, ParamMode mode = ParamMode::track);

struct GradientBundle {
  std::vector<std::pair<std::string, Tensor>> parameters;
  Tensor input_gradient;
  const Tensor& parameter(std::string_view id) const;
};

GradientBundle backward(const ForwardPass& pass, ad::Var loss);

enum class LossKind {
  cross_entropy,         // softmax cross-entropy against the labels
  negative_label_logit,  // -logits[y]; ascending it lowers the label's score
};

ad::Var classification_loss(ad::Tape& tape, ad::Var logits, std::span<const int> labels, LossKind kind,
                            ad::Reduction reduction);

/// dL/dx for a batch, with L summed over samples so each row holds its own
/// sample's gradient. Parameters are treated as constants.
Tensor grad_wrt_input(const Classifier& model, const Tensor& x, std::span<const int> labels,
                      LossKind kind = LossKind::cross_entropy);

/// Row-wise argmax of logits; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);
std::vector<int> predict(const Classifier& model, const Tensor& x);

/// Reshapes a (batch, ...) tensor to (batch, model input shape...) when the
/// per-sample element counts agree.
Tensor as_model_input(const Classifier& model, const Tensor& x);

}  // namespace gc::nn
