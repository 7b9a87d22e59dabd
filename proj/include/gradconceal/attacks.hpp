#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradconceal/model.hpp"
#include "gradconceal/tensor.hpp"

namespace gc::attack {

enum class Family { fgsm, pgd, cw };
enum class Norm { l1, l2, linf };

std::string_view to_string(Family f);
std::string_view to_string(Norm p);
Family parse_family(std::string_view s);
/// Accepts "l1", "l2", "linf" (also "inf").
Norm parse_norm(std::string_view s);

struct NormConstraint {
  Norm p = Norm::linf;
  double eps = 8.0 / 255.0;  // pixel units in [0, 1]
};

struct CwParams {
  std::size_t binary_search_steps = 10;
  double learning_rate = 1e-2;
  std::size_t iterations = 10;
  double confidence = 0.0;  // k
  double c_init = 1e-2;
  double c_max = 1e4;
};

struct AttackConfig {
  Family family = Family::fgsm;
  NormConstraint norm;
  std::optional<int> target;  // targeted mode when set
  std::size_t steps = 10;
  std::optional<double> step_size;  // PGD; defaults to 2.5 * eps / steps
  CwParams cw;

  double pgd_step_size() const;
  /// Short stable identifier, e.g. "pgd-linf-0.0313725-s10".
  std::string describe() const;
  /// Throws ConfigError for an invalid combination (FGSM needs Linf, C&W needs L2).
  void validate(std::size_t num_classes) const;
};

/// One entry per row of the attacked batch.
struct AdvExample {
  Tensor x_adv;
  std::vector<double> perturbation_norm;
  std::vector<bool> success;
};

/// +1, -1, or 0. NaN maps to 0 (no usable direction).
float sign(float g) noexcept;
double norm_value(std::span<const float> v, Norm p);

/// Euclidean projection onto {z : ||z||_p <= eps}. Idempotent bit-for-bit.
void project_in_place(std::span<float> r, const NormConstraint& c);
Tensor project(const Tensor& r, const NormConstraint& c);
/// Projects every leading-axis row independently.
Tensor project_rows(const Tensor& r, const NormConstraint& c);

/// Per-row steepest-ascent direction: sign for Linf, unit vector for L2, and the
/// signed basis vector of the largest |g| (lowest index on ties) for L1.
/// Non-finite gradient entries are handled: NaN contributes nothing, Inf
/// dominates every finite entry.
Tensor ascent_direction(const Tensor& grad, Norm p);

Tensor clip_unit_box(Tensor x);

/// Gradient of the objective being maximised, one row per sample.
using GradientFn = std::function<Tensor(const Tensor& x)>;

/// clip(x + eps * sign(g)) untargeted, clip(x - eps * sign(g)) targeted.
Tensor fgsm_from_gradient(const Tensor& x, const Tensor& grad, double eps, bool targeted);

struct PgdSettings {
  NormConstraint norm;
  std::size_t steps = 10;
  double step_size = 0.0;
  /// Observes the perturbation after each projected step.
  std::function<void(std::size_t, const Tensor&)> on_step;
};

/// Projected gradient ascent from r = 0: r <- project(r + step * d(grad(clip(x + r)))).
/// Returns clip(x + r). Throws ContractError if an iterate leaves the ball.
Tensor pgd_ascend(const GradientFn& grad, const Tensor& x, const PgdSettings& settings);

AdvExample fgsm(const nn::Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg);
AdvExample pgd(const nn::Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg);
/// Carlini-Wagner L2 with x_adv = (tanh(u) + 1) / 2 and objective
/// ||r||_2 + c * max(Z_y - max_{j!=y} Z_j, -k), optimised by plain gradient
/// descent with a per-sample binary search over c. Only candidates within the
/// L2 budget are accepted; a failed row returns x unchanged.
AdvExample cw(const nn::Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg);

AdvExample run_attack(const nn::Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg);

}  // namespace gc::attack
