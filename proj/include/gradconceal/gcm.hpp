#pragma once

// Gradient Concealment Module.
//
// g(x) = x + eps * sin(w * x), with local derivative 1 + eps * w * cos(w * x).
// When eps * w >> 1 the derivative is dominated by the cosine term, whose sign
// is effectively unrelated to the underlying model's gradient, while the
// forward output moves by at most eps.

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "gradconceal/autodiff.hpp"
#include "gradconceal/model.hpp"

namespace gc::gcm {

struct GcmConfig {
  double w = 1e20;
  double eps = 1e-8;

  /// True iff eps * w > 1, i.e. the cosine term dominates the derivative.
  bool concealing() const noexcept { return eps * w > 1.0; }
  /// Throws ConfigError unless w > 0 and eps > 0.
  void validate() const;
};

/// Phase w*x reduced modulo 2*pi, computed in double precision. At very large
/// w the low-order bits of the product are rounding residue, so the phase is a
/// deterministic but pseudo-random function of x.
double phase(float x, const GcmConfig& cfg) noexcept;

/// One element of g. The float result never moves further than eps from x.
float apply_scalar(float x, const GcmConfig& cfg) noexcept;
float multiplier_scalar(float x, const GcmConfig& cfg) noexcept;

Tensor gcm_apply(const Tensor& x, const GcmConfig& cfg);
/// 1 + eps * w * cos(w * x) elementwise: the exact local derivative of gcm_apply.
Tensor gcm_grad_multiplier(const Tensor& x, const GcmConfig& cfg);

/// Records gcm_apply on a tape; its backward multiplies by gcm_grad_multiplier.
ad::Var gcm(ad::Tape& tape, ad::Var x, const GcmConfig& cfg);

/// Where GCM layers are inserted into a block-structured model.
struct Placement {
  enum class Kind { front, after_block, all_layers };
  Kind kind = Kind::front;
  std::string block;  // after_block only

  static Placement front() { return {Kind::front, {}}; }
  static Placement after(std::string block) { return {Kind::after_block, std::move(block)}; }
  static Placement all_layers() { return {Kind::all_layers, {}}; }

  /// "front" | "block:<name>" | "all"
  static Placement parse(std::string_view text);
  std::string to_string() const;

  friend bool operator==(const Placement&, const Placement&) = default;
};

/// The inference-time wrapper: inner model parameters are shared, not copied.
/// Insertion point k means "before block k" (k = 0 is the raw input and
/// k = number of blocks is the logits).
class Cascade final : public nn::Classifier {
 public:
  Cascade(std::shared_ptr<const nn::Model> inner, GcmConfig cfg, Placement placement);

  const Shape& input_shape() const override { return inner_->input_shape(); }
  std::size_t num_classes() const override { return inner_->num_classes(); }
  ad::Var forward(ad::Tape& tape, ad::Var x, nn::ParamMode mode = nn::ParamMode::constant) const override;

  const std::vector<std::size_t>& insertion_points() const noexcept { return points_; }
  const nn::Model& inner() const noexcept { return *inner_; }
  std::shared_ptr<const nn::Model> inner_ptr() const noexcept { return inner_; }
  const GcmConfig& config() const noexcept { return cfg_; }
  const Placement& placement() const noexcept { return placement_; }

 private:
  std::shared_ptr<const nn::Model> inner_;
  GcmConfig cfg_;
  Placement placement_;
  std::vector<std::size_t> points_;
};

/// Throws ConfigError for an unknown block name.
Cascade cascade(std::shared_ptr<const nn::Model> model, const GcmConfig& cfg, const Placement& placement);

}  // namespace gc::gcm
