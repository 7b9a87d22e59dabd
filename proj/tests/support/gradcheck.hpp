#pragma once
// Central finite differences on the double-precision reference against the
// tape's backward pass. Each case scalarises its output as sum(c * out) with a
// random weight vector c, so every output element contributes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gradconceal/autodiff.hpp"
#include "gradconceal/model.hpp"
#include "gradconceal/ops.hpp"
#include "reference.hpp"

namespace gradcheck {

using gc::Tensor;
using gc::ad::Tape;
using gc::ad::Var;

struct Case {
  std::string name;
  std::vector<Tensor> inputs;
  // Gradients of sum(c * out) with respect to each input.
  std::function<std::vector<Tensor>(const std::vector<Tensor>&, const std::vector<float>&)> autodiff;
  std::function<ref::Vec(const std::vector<ref::Vec>&, ref::Pattern*)> reference;
  std::size_t max_coords = 0;  // per input; 0 checks every coordinate
};

struct Stats {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // stencil crossed a kink of the function
  std::string worst;
};

// |a - b| relative to the larger magnitude, floored at a small fraction of the
// gradient's scale so entries that are zero up to rounding compare absolutely.
inline double rel_error(double a, double b, double floor) {
  const double den = std::max({std::abs(a), std::abs(b), floor});
  return den == 0.0 ? 0.0 : std::abs(a - b) / den;
}

using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

inline Case primitive(std::string name, std::vector<Tensor> inputs, Build build,
                      std::function<ref::Vec(const std::vector<ref::Vec>&, ref::Pattern*)> reference) {
  Case c;
  c.name = std::move(name);
  c.inputs = std::move(inputs);
  c.reference = std::move(reference);
  c.autodiff = [build](const std::vector<Tensor>& in, const std::vector<float>& weights) {
    Tape t;
    std::vector<Var> vars;
    for (const auto& x : in) vars.push_back(t.input(x));
    const Var out = build(t, vars);
    const Var w = t.constant(Tensor(t.value(out).shape(), weights));
    const auto g = t.backward(gc::ad::sum(t, gc::ad::mul(t, out, w)));
    std::vector<Tensor> grads;
    for (const auto& v : vars) grads.push_back(g[v]);
    return grads;
  };
  return c;
}

inline std::vector<ref::Vec> to_double(const std::vector<Tensor>& in) {
  std::vector<ref::Vec> out;
  for (const auto& t : in) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

inline Stats check(const Case& c, double h, double tol, std::mt19937_64& rng, std::string* failures = nullptr) {
  std::vector<ref::Vec> base = to_double(c.inputs);
  ref::Pattern base_pattern;
  const ref::Vec out = c.reference(base, &base_pattern);
  std::uniform_real_distribution<float> wdist(-1.0f, 1.0f);
  std::vector<float> weights(out.size());
  for (auto& w : weights) w = wdist(rng);

  auto loss = [&](const std::vector<ref::Vec>& x, ref::Pattern* p) {
    const ref::Vec o = c.reference(x, p);
    double s = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) s += static_cast<double>(weights[i]) * o[i];
    return s;
  };

  const auto grads = c.autodiff(c.inputs, weights);
  Stats st;
  for (std::size_t k = 0; k < base.size(); ++k) {
    std::vector<std::size_t> coords(base[k].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (c.max_coords > 0 && coords.size() > c.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(c.max_coords);
    }
    std::vector<double> fd(coords.size());
    std::vector<bool> usable(coords.size(), true);
    double scale = 0.0;
    for (std::size_t j = 0; j < coords.size(); ++j) {
      auto x = base;
      const double x0 = x[k][coords[j]];
      ref::Pattern pp, pm;
      x[k][coords[j]] = x0 + h;
      const double fp = loss(x, &pp);
      x[k][coords[j]] = x0 - h;
      const double fm = loss(x, &pm);
      usable[j] = pp == base_pattern && pm == base_pattern;
      fd[j] = (fp - fm) / (2.0 * h);
      if (usable[j]) scale = std::max(scale, std::abs(fd[j]));
    }
    for (std::size_t j = 0; j < coords.size(); ++j) {
      if (!usable[j]) {
        ++st.excluded;
        continue;
      }
      ++st.checked;
      const double a = grads[k][coords[j]];
      const double e = rel_error(a, fd[j], 1e-3 * scale);
      if (e > st.max_rel) {
        st.max_rel = e;
        st.worst = c.name + " input " + std::to_string(k) + "[" + std::to_string(coords[j]) +
                   "]: autodiff " + std::to_string(a) + " vs fd " + std::to_string(fd[j]);
      }
      if (e > tol && failures) *failures += st.worst + "\n";
    }
  }
  return st;
}

// Random tensors with entries bounded away from the kinks of the op under test.
inline Tensor uniform(gc::Shape s, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(gc::shape_size(s));
  for (auto& x : v) x = d(rng);
  return Tensor(std::move(s), std::move(v));
}

inline Tensor away_from_zero(gc::Shape s, std::mt19937_64& rng) {
  Tensor t = uniform(std::move(s), rng, 0.1f, 1.0f);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.data())
    if (flip(rng)) v = -v;
  return t;
}

// Distinct values on a 0.01 lattice plus jitter: no two entries within 2h.
inline Tensor distinct(gc::Shape s, std::mt19937_64& rng) {
  const std::size_t n = gc::shape_size(s);
  std::vector<float> v(n);
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::shuffle(rank.begin(), rank.end(), rng);
  std::uniform_real_distribution<float> jitter(0.0f, 0.004f);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.01f * (static_cast<float>(rank[i]) - n / 2.0f) + jitter(rng);
  return Tensor(std::move(s), std::move(v));
}

inline std::vector<int> random_labels(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng() % k);
  return y;
}

// One randomly drawn case per differentiable primitive.
inline std::vector<Case> primitive_cases(std::mt19937_64& rng) {
  namespace ad = gc::ad;
  std::vector<Case> cases;
  const std::size_t batch = 2 + rng() % 2;

  {
    const std::size_t in = 3 + rng() % 4, out = 2 + rng() % 4;
    cases.push_back(primitive(
        "dense", {uniform({batch, in}, rng), uniform({in, out}, rng), uniform({out}, rng)},
        [](Tape& t, const std::vector<Var>& v) { return ad::dense(t, v[0], v[1], v[2]); },
        [=](const std::vector<ref::Vec>& x, ref::Pattern*) { return ref::dense(x[0], batch, in, x[1], x[2], out); }));
  }
  for (const auto& spec : {ad::Conv2dSpec{1, 0}, ad::Conv2dSpec{2, 1}}) {
    const std::size_t h = 5 + rng() % 2, w = 5, c = 1 + rng() % 2, oc = 2;
    cases.push_back(primitive(
        spec.stride == 1 ? "conv2d" : "conv2d_strided_padded",
        {uniform({batch, h, w, c}, rng), uniform({3, 3, c, oc}, rng), uniform({oc}, rng)},
        [spec](Tape& t, const std::vector<Var>& v) { return ad::conv2d(t, v[0], v[1], v[2], spec); },
        [=](const std::vector<ref::Vec>& x, ref::Pattern*) {
          ref::ImageShape out{};
          return ref::conv2d(x[0], {batch, h, w, c}, x[1], 3, 3, oc, x[2], spec.stride, spec.padding, out);
        }));
  }
  cases.push_back(primitive(
      "relu", {away_from_zero({batch, 7}, rng)}, [](Tape& t, const std::vector<Var>& v) { return ad::relu(t, v[0]); },
      [](const std::vector<ref::Vec>& x, ref::Pattern* p) { return ref::relu(x[0], p); }));
  {
    const std::size_t h = 4 + rng() % 2, w = 4, c = 2;
    cases.push_back(primitive(
        "max_pool2x2", {distinct({batch, h, w, c}, rng)},
        [](Tape& t, const std::vector<Var>& v) { return ad::max_pool2x2(t, v[0]); },
        [=](const std::vector<ref::Vec>& x, ref::Pattern* p) {
          ref::ImageShape out{};
          return ref::max_pool2x2(x[0], {batch, h, w, c}, out, p);
        }));
  }
  auto elementwise = [&](const char* name, auto op, auto fn) {
    cases.push_back(primitive(
        name, {uniform({batch, 5}, rng, -2.0f, 2.0f)}, [op](Tape& t, const std::vector<Var>& v) { return op(t, v[0]); },
        [fn](const std::vector<ref::Vec>& x, ref::Pattern*) {
          ref::Vec y = x[0];
          for (auto& e : y) e = fn(e);
          return y;
        }));
  };
  elementwise("sin", [](Tape& t, Var v) { return ad::sin(t, v); }, [](double x) { return std::sin(x); });
  elementwise("cos", [](Tape& t, Var v) { return ad::cos(t, v); }, [](double x) { return std::cos(x); });
  elementwise("tanh", [](Tape& t, Var v) { return ad::tanh(t, v); }, [](double x) { return std::tanh(x); });
  elementwise("scale", [](Tape& t, Var v) { return ad::scale(t, v, -1.75f); }, [](double x) { return -1.75 * x; });
  elementwise("add_scalar", [](Tape& t, Var v) { return ad::add_scalar(t, v, 0.5f); }, [](double x) { return x + 0.5; });
  elementwise("flatten", [](Tape& t, Var v) { return ad::flatten(t, v); }, [](double x) { return x; });
  elementwise("reshape", [batch](Tape& t, Var v) { return ad::reshape(t, v, {5, batch}); }, [](double x) { return x; });

  auto binary = [&](const char* name, auto op, auto fn) {
    cases.push_back(primitive(
        name, {uniform({batch, 4}, rng), uniform({batch, 4}, rng)},
        [op](Tape& t, const std::vector<Var>& v) { return op(t, v[0], v[1]); },
        [fn](const std::vector<ref::Vec>& x, ref::Pattern*) {
          ref::Vec y(x[0].size());
          for (std::size_t i = 0; i < y.size(); ++i) y[i] = fn(x[0][i], x[1][i]);
          return y;
        }));
  };
  binary("add", [](Tape& t, Var a, Var b) { return ad::add(t, a, b); }, [](double a, double b) { return a + b; });
  binary("sub", [](Tape& t, Var a, Var b) { return ad::sub(t, a, b); }, [](double a, double b) { return a - b; });
  binary("mul", [](Tape& t, Var a, Var b) { return ad::mul(t, a, b); }, [](double a, double b) { return a * b; });

  cases.push_back(primitive(
      "sum", {uniform({batch, 6}, rng)}, [](Tape& t, const std::vector<Var>& v) { return ad::sum(t, v[0]); },
      [](const std::vector<ref::Vec>& x, ref::Pattern*) { return ref::Vec{std::accumulate(x[0].begin(), x[0].end(), 0.0)}; }));

  const std::size_t k = 3 + rng() % 5;
  const auto labels = random_labels(batch, k, rng);
  for (auto red : {ad::Reduction::sum, ad::Reduction::mean}) {
    cases.push_back(primitive(
        red == ad::Reduction::sum ? "softmax_cross_entropy_sum" : "softmax_cross_entropy_mean",
        {uniform({batch, k}, rng, -3.0f, 3.0f)},
        [labels, red](Tape& t, const std::vector<Var>& v) { return ad::softmax_cross_entropy(t, v[0], labels, red); },
        [=](const std::vector<ref::Vec>& x, ref::Pattern*) {
          const double s = ref::softmax_ce_sum(x[0], batch, k, labels);
          return ref::Vec{red == ad::Reduction::sum ? s : s / static_cast<double>(batch)};
        }));
  }
  cases.push_back(primitive(
      "logit_margin", {distinct({batch, k}, rng)},
      [labels](Tape& t, const std::vector<Var>& v) { return ad::logit_margin(t, v[0], labels); },
      [=](const std::vector<ref::Vec>& x, ref::Pattern* p) { return ref::logit_margin(x[0], batch, k, labels, p); }));
  cases.push_back(primitive(
      "pick", {uniform({batch, k}, rng)}, [labels](Tape& t, const std::vector<Var>& v) { return ad::pick(t, v[0], labels); },
      [=](const std::vector<ref::Vec>& x, ref::Pattern*) {
        ref::Vec y(batch);
        for (std::size_t n = 0; n < batch; ++n) y[n] = x[0][n * k + static_cast<std::size_t>(labels[n])];
        return y;
      }));
  cases.push_back(primitive(
      "clamp_min", {away_from_zero({batch, 6}, rng)},
      [](Tape& t, const std::vector<Var>& v) { return ad::clamp_min(t, v[0], 0.0f); },
      [](const std::vector<ref::Vec>& x, ref::Pattern* p) {
        ref::Vec y = x[0];
        for (auto& e : y) {
          if (p) p->choices.push_back(e > 0 ? 1 : 0);
          e = std::max(e, 0.0);
        }
        return y;
      }));
  cases.push_back(primitive(
      "row_l2_norm", {uniform({batch, 2, 3}, rng, 0.2f, 1.0f)},
      [](Tape& t, const std::vector<Var>& v) { return ad::row_l2_norm(t, v[0]); },
      [=](const std::vector<ref::Vec>& x, ref::Pattern*) { return ref::row_l2_norm(x[0], batch); }));
  return cases;
}

// Softmax cross-entropy (summed) of a whole model, differentiated with respect
// to the input batch and every parameter tensor.
inline Case model_case(const gc::nn::Model& model, const Tensor& x, std::vector<int> labels, std::size_t max_coords) {
  Case c;
  c.name = model.arch().name;
  c.inputs.push_back(x);
  for (const auto& p : model.parameters()) c.inputs.push_back(p.value);
  c.max_coords = max_coords;
  const std::size_t batch = x.dim(0), k = model.num_classes();
  c.reference = [&model, labels, batch, k](const std::vector<ref::Vec>& in, ref::Pattern* p) {
    const std::vector<ref::Vec> params(in.begin() + 1, in.end());
    const ref::Vec z = ref::model_logits(model, params, in[0], batch, p);
    return ref::Vec{ref::softmax_ce_sum(z, batch, k, labels)};
  };
  c.autodiff = [&model, labels](const std::vector<Tensor>& in, const std::vector<float>& weights) {
    auto pass = gc::nn::forward_eval(model, in[0], gc::nn::ParamMode::track);
    const Var ce = gc::ad::softmax_cross_entropy(pass.tape, pass.logits, labels, gc::ad::Reduction::sum);
    const auto g = gc::nn::backward(pass, gc::ad::scale(pass.tape, ce, weights[0]));
    std::vector<Tensor> grads{g.input_gradient};
    for (const auto& p : model.parameters()) grads.push_back(g.parameter(p.id));
    return grads;
  };
  return c;
}

}  // namespace gradcheck
