#include "gradconceal/gcm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gradconceal/errors.hpp"

namespace gc::gcm {

void GcmConfig::validate() const {
  if (!(w > 0) || !std::isfinite(w)) throw ConfigError("GCM frequency w must be positive and finite");
  if (!(eps > 0) || !std::isfinite(eps)) throw ConfigError("GCM magnitude eps must be positive and finite");
}

double phase(float x, const GcmConfig& cfg) noexcept {
  return std::fmod(cfg.w * static_cast<double>(x), 2.0 * std::numbers::pi);
}

float apply_scalar(float x, const GcmConfig& cfg) noexcept {
  const double shift = cfg.eps * std::sin(phase(x, cfg));
  float y = static_cast<float>(static_cast<double>(x) + shift);
  // Round-to-nearest can land one ulp past x + shift; step back toward x.
  while (std::abs(static_cast<double>(y) - static_cast<double>(x)) > cfg.eps) y = std::nextafter(y, x);
  return y;
}

float multiplier_scalar(float x, const GcmConfig& cfg) noexcept {
  return static_cast<float>(1.0 + cfg.eps * cfg.w * std::cos(phase(x, cfg)));
}

Tensor gcm_apply(const Tensor& x, const GcmConfig& cfg) {
  std::vector<float> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = apply_scalar(x[i], cfg);
  return Tensor(x.shape(), std::move(y), Finite::unchecked);
}

Tensor gcm_grad_multiplier(const Tensor& x, const GcmConfig& cfg) {
  std::vector<float> m(x.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = multiplier_scalar(x[i], cfg);
  return Tensor(x.shape(), std::move(m), Finite::unchecked);
}

ad::Var gcm(ad::Tape& tape, ad::Var x, const GcmConfig& cfg) {
  const Tensor& xv = tape.value(x);
  Tensor y = gcm_apply(xv, cfg);
  Tensor mult = gcm_grad_multiplier(xv, cfg);
  return tape.record("gcm", std::move(y), {x}, [mult = std::move(mult)](const Tensor& g, std::span<Tensor* const> in) {
    if (!in[0]) return;
    auto& gx = *in[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mult[i];
  });
}

Placement Placement::parse(std::string_view text) {
  if (text == "front") return front();
  if (text == "all") return all_layers();
  constexpr std::string_view prefix = "block:";
  if (text.substr(0, prefix.size()) == prefix && text.size() > prefix.size())
    return after(std::string(text.substr(prefix.size())));
  throw ConfigError("bad GCM placement '" + std::string(text) + "' (expected front, block:<name> or all)");
}

std::string Placement::to_string() const {
  switch (kind) {
    case Kind::front: return "front";
    case Kind::after_block: return "block:" + block;
    case Kind::all_layers: return "all";
  }
  return "?";
}

Cascade::Cascade(std::shared_ptr<const nn::Model> inner, GcmConfig cfg, Placement placement)
    : inner_(std::move(inner)), cfg_(cfg), placement_(std::move(placement)) {
  if (!inner_) throw ContractError("cascade needs a model");
  switch (placement_.kind) {
    case Placement::Kind::front: points_ = {0}; break;
    case Placement::Kind::after_block: points_ = {inner_->block_index(placement_.block) + 1}; break;
    case Placement::Kind::all_layers:
      for (std::size_t k = 0; k <= inner_->blocks().size(); ++k) points_.push_back(k);
      break;
  }
}

ad::Var Cascade::forward(ad::Tape& tape, ad::Var x, nn::ParamMode mode) const {
  const Tensor& xv = tape.value(x);
  const Shape& s = input_shape();
  if (xv.rank() != s.size() + 1 || !std::equal(s.begin(), s.end(), xv.shape().begin() + 1))
    throw ShapeError("cascade expects (batch, " + shape_string(s) + ") input, got " + shape_string(xv.shape()));
  auto inserted = [&](std::size_t k) { return std::find(points_.begin(), points_.end(), k) != points_.end(); };
  const std::size_t blocks = inner_->blocks().size();
  for (std::size_t b = 0; b < blocks; ++b) {
    if (inserted(b)) x = gcm(tape, x, cfg_);
    x = inner_->forward_block(tape, x, b, mode);
  }
  if (inserted(blocks)) x = gcm(tape, x, cfg_);
  return x;
}

Cascade cascade(std::shared_ptr<const nn::Model> model, const GcmConfig& cfg, const Placement& placement) {
  return Cascade(std::move(model), cfg, placement);
}

}  // namespace gc::gcm
