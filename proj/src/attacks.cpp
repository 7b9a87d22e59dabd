#include "gradconceal/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gradconceal/errors.hpp"
#include "gradconceal/ops.hpp"

namespace gc::attack {

std::string_view to_string(Family f) {
  switch (f) {
    case Family::fgsm: return "fgsm";
    case Family::pgd: return "pgd";
    case Family::cw: return "cw";
  }
  return "?";
}

std::string_view to_string(Norm p) {
  switch (p) {
    case Norm::l1: return "l1";
    case Norm::l2: return "l2";
    case Norm::linf: return "linf";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  if (s == "fgsm") return Family::fgsm;
  if (s == "pgd") return Family::pgd;
  if (s == "cw") return Family::cw;
  throw ConfigError("unknown attack family '" + std::string(s) + "'");
}

Norm parse_norm(std::string_view s) {
  if (s == "l1") return Norm::l1;
  if (s == "l2") return Norm::l2;
  if (s == "linf" || s == "inf") return Norm::linf;
  throw ConfigError("unknown norm '" + std::string(s) + "'");
}

double AttackConfig::pgd_step_size() const {
  return step_size ? *step_size : 2.5 * norm.eps / static_cast<double>(std::max<std::size_t>(steps, 1));
}

std::string AttackConfig::describe() const {
  std::ostringstream os;
  os << to_string(family) << '-' << to_string(norm.p) << '-' << norm.eps;
  if (family == Family::pgd) os << "-s" << steps;
  if (family == Family::cw) os << "-k" << cw.confidence;
  if (target) os << "-t" << *target;
  return os.str();
}

void AttackConfig::validate(std::size_t num_classes) const {
  if (!(norm.eps >= 0) || !std::isfinite(norm.eps)) throw ConfigError("attack budget must be a finite value >= 0");
  if (target && (*target < 0 || static_cast<std::size_t>(*target) >= num_classes))
    throw ConfigError("target label " + std::to_string(*target) + " out of range");
  switch (family) {
    case Family::fgsm:
      if (norm.p != Norm::linf) throw ConfigError("FGSM is defined only under the Linf norm");
      break;
    case Family::pgd:
      if (steps == 0) throw ConfigError("PGD needs at least one step");
      if (!(pgd_step_size() >= 0)) throw ConfigError("PGD step size must be positive");
      break;
    case Family::cw:
      if (norm.p != Norm::l2) throw ConfigError("C&W is run under the L2 norm");
      if (cw.iterations == 0 || cw.binary_search_steps == 0) throw ConfigError("C&W needs iterations and search steps");
      if (!(cw.learning_rate > 0) || !(cw.c_init > 0) || !(cw.c_max >= cw.c_init) || cw.confidence < 0)
        throw ConfigError("bad C&W hyperparameters");
      break;
  }
}

float sign(float g) noexcept {
  if (g > 0.0f) return 1.0f;
  if (g < 0.0f) return -1.0f;
  return 0.0f;
}

double norm_value(std::span<const float> v, Norm p) {
  double acc = 0.0;
  switch (p) {
    case Norm::l1:
      for (float x : v) acc += std::abs(static_cast<double>(x));
      return acc;
    case Norm::l2:
      for (float x : v) acc += static_cast<double>(x) * x;
      return std::sqrt(acc);
    case Norm::linf:
      for (float x : v) acc = std::max(acc, std::abs(static_cast<double>(x)));
      return acc;
  }
  return acc;
}

namespace {

// Shrinks r until its norm is within eps. Rounding after an exact projection
// can leave the float result a hair outside the ball.
void shrink_into_ball(std::span<float> r, Norm p, double eps) {
  while (norm_value(r, p) > eps)
    for (auto& v : r) v *= 1.0f - 1e-7f;
}

}  // namespace

void project_in_place(std::span<float> r, const NormConstraint& c) {
  const double eps = c.eps;
  switch (c.p) {
    case Norm::linf: {
      const float e = static_cast<float>(eps);
      for (auto& v : r) v = std::clamp(v, -e, e);
      return;
    }
    case Norm::l2: {
      const double n = norm_value(r, Norm::l2);
      if (n <= eps) return;
      const double f = eps / n;
      for (auto& v : r) v = static_cast<float>(static_cast<double>(v) * f);
      shrink_into_ball(r, Norm::l2, eps);
      return;
    }
    case Norm::l1: {
      if (norm_value(r, Norm::l1) <= eps) return;
      if (eps == 0.0) {
        std::fill(r.begin(), r.end(), 0.0f);
        return;
      }
      // Sorted-threshold projection onto the simplex of |r|.
      std::vector<double> mag(r.size());
      for (std::size_t i = 0; i < r.size(); ++i) mag[i] = std::abs(static_cast<double>(r[i]));
      std::vector<double> sorted = mag;
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
      double cumsum = 0.0, theta = 0.0;
      for (std::size_t j = 0; j < sorted.size(); ++j) {
        cumsum += sorted[j];
        const double t = (cumsum - eps) / static_cast<double>(j + 1);
        if (sorted[j] - t > 0) theta = t;
      }
      for (std::size_t i = 0; i < r.size(); ++i) {
        const double m = std::max(mag[i] - theta, 0.0);
        r[i] = static_cast<float>(std::copysign(m, static_cast<double>(r[i])));
        if (m == 0.0) r[i] = 0.0f;
      }
      shrink_into_ball(r, Norm::l1, eps);
      return;
    }
  }
}

Tensor project(const Tensor& r, const NormConstraint& c) {
  Tensor out = r;
  project_in_place(out.data(), c);
  return out;
}

Tensor project_rows(const Tensor& r, const NormConstraint& c) {
  Tensor out = r;
  for (std::size_t i = 0; i < out.dim(0); ++i) project_in_place(out.row(i), c);
  return out;
}

Tensor ascent_direction(const Tensor& grad, Norm p) {
  std::vector<float> d(grad.size(), 0.0f);
  const std::size_t rows = grad.rank() == 0 ? 1 : grad.dim(0);
  const std::size_t stride = grad.size() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* g = grad.data().data() + r * stride;
    float* out = d.data() + r * stride;
    switch (p) {
      case Norm::linf:
        for (std::size_t i = 0; i < stride; ++i) out[i] = sign(g[i]);
        break;
      case Norm::l2: {
        std::size_t infinite = 0;
        for (std::size_t i = 0; i < stride; ++i) infinite += std::isinf(g[i]) ? 1 : 0;
        if (infinite > 0) {
          const float unit = static_cast<float>(1.0 / std::sqrt(static_cast<double>(infinite)));
          for (std::size_t i = 0; i < stride; ++i) out[i] = std::isinf(g[i]) ? sign(g[i]) * unit : 0.0f;
          break;
        }
        double n = 0.0;
        for (std::size_t i = 0; i < stride; ++i)
          if (!std::isnan(g[i])) n += static_cast<double>(g[i]) * g[i];
        n = std::sqrt(n);
        if (n == 0.0) break;
        for (std::size_t i = 0; i < stride; ++i)
          out[i] = std::isnan(g[i]) ? 0.0f : static_cast<float>(static_cast<double>(g[i]) / n);
        break;
      }
      case Norm::l1: {
        std::size_t best = stride;
        float best_mag = 0.0f;
        for (std::size_t i = 0; i < stride; ++i) {
          const float m = std::abs(g[i]);
          if (m > best_mag) {  // NaN never compares greater
            best_mag = m;
            best = i;
          }
        }
        if (best < stride) out[best] = sign(g[best]);
        break;
      }
    }
  }
  return Tensor(grad.shape(), std::move(d));
}

Tensor clip_unit_box(Tensor x) {
  for (auto& v : x.data()) v = std::clamp(v, 0.0f, 1.0f);
  return x;
}

Tensor fgsm_from_gradient(const Tensor& x, const Tensor& grad, double eps, bool targeted) {
  if (x.shape() != grad.shape()) throw ShapeError("fgsm: gradient shape differs from input");
  const float e = static_cast<float>(eps);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float s = sign(grad[i]);
    out[i] = targeted ? x[i] - e * s : x[i] + e * s;
  }
  return clip_unit_box(std::move(out));
}

Tensor pgd_ascend(const GradientFn& grad, const Tensor& x, const PgdSettings& settings) {
  const float step = static_cast<float>(settings.step_size);
  Tensor r(x.shape(), 0.0f);
  Tensor probe = x;
  for (std::size_t s = 0; s < settings.steps; ++s) {
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = std::clamp(x[i] + r[i], 0.0f, 1.0f);
    const Tensor g = grad(probe);
    if (g.shape() != x.shape()) throw ShapeError("pgd: gradient shape differs from input");
    const Tensor d = ascent_direction(g, settings.norm.p);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += step * d[i];
    r = project_rows(r, settings.norm);
    for (std::size_t row = 0; row < r.dim(0); ++row)
      if (norm_value(r.row(row), settings.norm.p) > settings.norm.eps + 1e-6)
        throw ContractError("pgd iterate left the feasible ball at step " + std::to_string(s));
    if (settings.on_step) settings.on_step(s, r);
  }
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i] + r[i], 0.0f, 1.0f);
  return out;
}

namespace {

std::vector<int> loss_labels(std::span<const int> y, const AttackConfig& cfg) {
  if (cfg.target) return std::vector<int>(y.size(), *cfg.target);
  return std::vector<int>(y.begin(), y.end());
}

AdvExample finish(const nn::Classifier& model, const Tensor& x, Tensor x_adv, std::span<const int> y,
                  const AttackConfig& cfg, Norm p) {
  const auto pred = nn::predict(model, x_adv);
  AdvExample out;
  out.perturbation_norm.resize(pred.size());
  out.success.resize(pred.size());
  std::vector<float> diff(x.row_size());
  for (std::size_t r = 0; r < pred.size(); ++r) {
    auto a = x_adv.row(r);
    auto b = x.row(r);
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = a[i] - b[i];
    out.perturbation_norm[r] = norm_value(diff, p);
    out.success[r] = cfg.target ? pred[r] == *cfg.target : pred[r] != y[r];
  }
  out.x_adv = std::move(x_adv);
  return out;
}

void check_batch(const nn::Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg,
                 Family expected) {
  if (cfg.family != expected) throw ConfigError("attack config family mismatch");
  cfg.validate(model.num_classes());
  if (x.rank() < 1 || x.dim(0) != y.size()) throw ShapeError("attack: one label per input row required");
  for (int label : y)
    if (label < 0 || static_cast<std::size_t>(label) >= model.num_classes())
      throw ContractError("attack: label " + std::to_string(label) + " out of range");
}

}  // namespace

AdvExample fgsm(const nn::Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg) {
  check_batch(model, x, y, cfg, Family::fgsm);
  const Tensor xin = nn::as_model_input(model, x);
  const auto labels = loss_labels(y, cfg);
  const Tensor g = nn::grad_wrt_input(model, xin, labels);
  Tensor adv = fgsm_from_gradient(xin, g, cfg.norm.eps, cfg.target.has_value());
  return finish(model, xin, std::move(adv), y, cfg, Norm::linf);
}

AdvExample pgd(const nn::Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg) {
  check_batch(model, x, y, cfg, Family::pgd);
  const Tensor xin = nn::as_model_input(model, x);
  const auto labels = loss_labels(y, cfg);
  const bool targeted = cfg.target.has_value();
  auto grad = [&](const Tensor& probe) {
    Tensor g = nn::grad_wrt_input(model, probe, labels);
    if (targeted)
      for (auto& v : g.data()) v = -v;
    return g;
  };
  PgdSettings settings{cfg.norm, cfg.steps, cfg.pgd_step_size(), {}};
  Tensor adv = pgd_ascend(grad, xin, settings);
  return finish(model, xin, std::move(adv), y, cfg, cfg.norm.p);
}

AdvExample cw(const nn::Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg) {
  check_batch(model, x, y, cfg, Family::cw);
  const Tensor xin = nn::as_model_input(model, x);
  const std::size_t n = xin.dim(0), stride = xin.row_size();
  const bool targeted = cfg.target.has_value();
  const auto margin_labels = loss_labels(y, cfg);
  const float k = static_cast<float>(cfg.cw.confidence);
  const double budget = cfg.norm.eps;

  // Adversarial with confidence k: untargeted needs Z_y - max_{j!=y} Z_j <= -k,
  // targeted needs Z_t - max_{j!=t} Z_j >= k.
  auto is_adversarial = [&](int pred, float margin, std::size_t row) {
    if (targeted) return pred == *cfg.target && margin >= k;
    return pred != y[row] && margin <= -k;
  };

  std::vector<float> best(xin.data().begin(), xin.data().end());
  std::vector<double> best_norm(n, std::numeric_limits<double>::infinity());
  std::vector<bool> done(n, false);

  {
    ad::Tape tape;
    const ad::Var logits = model.forward(tape, tape.constant(xin));
    const ad::Var m = ad::logit_margin(tape, logits, margin_labels);
    const auto pred = nn::argmax_rows(tape.value(logits));
    for (std::size_t r = 0; r < n; ++r)
      if (is_adversarial(pred[r], tape.value(m)[r], r)) {
        done[r] = true;
        best_norm[r] = 0.0;
      }
  }

  std::vector<double> c(n, cfg.cw.c_init), lo(n, 0.0), hi(n, std::numeric_limits<double>::infinity());
  const float lr = static_cast<float>(cfg.cw.learning_rate);

  for (std::size_t round = 0; round < cfg.cw.binary_search_steps; ++round) {
    if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
    std::vector<float> u(xin.size());
    for (std::size_t i = 0; i < u.size(); ++i)
      u[i] = static_cast<float>(std::atanh((2.0 * xin[i] - 1.0) * (1.0 - 1e-6)));
    std::vector<float> cv(c.begin(), c.end());
    std::vector<bool> round_success(n, false);

    for (std::size_t it = 0; it <= cfg.cw.iterations; ++it) {
      ad::Tape tape;
      const ad::Var uv = tape.input(Tensor(xin.shape(), u, Finite::unchecked));
      const ad::Var xh = ad::scale(tape, ad::add_scalar(tape, ad::tanh(tape, uv), 1.0f), 0.5f);
      const ad::Var r = ad::sub(tape, xh, tape.constant(xin));
      const ad::Var norms = ad::row_l2_norm(tape, r);
      const ad::Var logits = model.forward(tape, xh);
      ad::Var m = ad::logit_margin(tape, logits, margin_labels);
      const Tensor margins = tape.value(m);
      if (targeted) m = ad::scale(tape, m, -1.0f);
      const ad::Var term = ad::clamp_min(tape, m, -k);
      const ad::Var weighted = ad::sum(tape, ad::mul(tape, term, tape.constant(Tensor({n}, cv))));
      const ad::Var objective = ad::add(tape, ad::sum(tape, norms), weighted);

      const auto pred = nn::argmax_rows(tape.value(logits));
      const Tensor& xhv = tape.value(xh);
      for (std::size_t row = 0; row < n; ++row) {
        if (done[row] || !is_adversarial(pred[row], margins[row], row)) continue;
        round_success[row] = true;
        double sq = 0.0;
        for (std::size_t i = 0; i < stride; ++i) {
          const double d = static_cast<double>(xhv[row * stride + i]) - xin[row * stride + i];
          sq += d * d;
        }
        const double nrm = std::sqrt(sq);
        if (nrm <= budget && nrm < best_norm[row]) {
          best_norm[row] = nrm;
          std::copy_n(xhv.data().begin() + static_cast<std::ptrdiff_t>(row * stride), stride,
                      best.begin() + static_cast<std::ptrdiff_t>(row * stride));
        }
      }
      if (it == cfg.cw.iterations) break;

      const Tensor g = tape.backward(objective)[uv];
      for (std::size_t i = 0; i < u.size(); ++i) {
        float gi = g[i];
        if (std::isnan(gi)) gi = 0.0f;
        if (std::isinf(gi)) gi = std::copysign(1e30f, gi);
        u[i] -= lr * gi;
      }
    }

    for (std::size_t row = 0; row < n; ++row) {
      if (done[row]) continue;
      if (round_success[row]) {
        hi[row] = std::min(hi[row], c[row]);
        c[row] = 0.5 * (lo[row] + hi[row]);
      } else {
        lo[row] = std::max(lo[row], c[row]);
        c[row] = std::isinf(hi[row]) ? std::min(2.0 * c[row], cfg.cw.c_max) : 0.5 * (lo[row] + hi[row]);
      }
    }
  }

  Tensor adv(xin.shape(), std::move(best));
  AdvExample out = finish(model, xin, std::move(adv), y, cfg, Norm::l2);
  for (std::size_t row = 0; row < n; ++row) out.success[row] = std::isfinite(best_norm[row]);
  return out;
}

AdvExample run_attack(const nn::Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg) {
  switch (cfg.family) {
    case Family::fgsm: return fgsm(model, x, y, cfg);
    case Family::pgd: return pgd(model, x, y, cfg);
    case Family::cw: return cw(model, x, y, cfg);
  }
  throw ConfigError("unknown attack family");
}

}  // namespace gc::attack
