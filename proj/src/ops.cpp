#include "gradconceal/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gradconceal/errors.hpp"

namespace gc::ad {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

Tensor unchecked(Shape shape, std::vector<float> data) {
  return Tensor(std::move(shape), std::move(data), Finite::unchecked);
}

template <class F>
Var unary(Tape& t, Var x, const char* name, F&& forward, std::function<float(float, float)> dfdx) {
  const Tensor& xv = t.value(x);
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(xv[i]);
  Tensor value = unchecked(xv.shape(), std::move(out));
  Tensor xcopy = xv;
  Tensor ycopy = value;
  return t.record(name, std::move(value), {x},
                  [xcopy = std::move(xcopy), ycopy = std::move(ycopy), dfdx = std::move(dfdx)](
                      const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    auto& gx = *in[0];
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xcopy[i], ycopy[i]);
                  });
}

}  // namespace

Var dense(Tape& t, Var x, Var weight, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(weight);
  const Tensor& bv = t.value(bias);
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != wv.dim(0) ||
      bv.dim(0) != wv.dim(1))
    throw ShapeError("dense: incompatible shapes x" + shape_string(xv.shape()) + " w" +
                     shape_string(wv.shape()) + " b" + shape_string(bv.shape()));
  const std::size_t n = xv.dim(0), in = wv.dim(0), out = wv.dim(1);
  std::vector<float> y(n * out);
  std::vector<double> acc(out);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out; ++o) acc[o] = bv[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double a = xv[r * in + i];
      if (a == 0.0) continue;
      const float* wrow = wv.data().data() + i * out;
      for (std::size_t o = 0; o < out; ++o) acc[o] += a * wrow[o];
    }
    for (std::size_t o = 0; o < out; ++o) y[r * out + o] = static_cast<float>(acc[o]);
  }
  return t.record(
      "dense", unchecked({n, out}, std::move(y)), {x, weight, bias},
      [xv, wv, n, in, out](const Tensor& g, std::span<Tensor* const> grads) {
        if (grads[0]) {
          auto& gx = *grads[0];
          for (std::size_t r = 0; r < n; ++r) {
            const float* grow = g.data().data() + r * out;
            for (std::size_t i = 0; i < in; ++i) {
              const float* wrow = wv.data().data() + i * out;
              double s = 0.0;
              for (std::size_t o = 0; o < out; ++o) s += static_cast<double>(grow[o]) * wrow[o];
              gx[r * in + i] += static_cast<float>(s);
            }
          }
        }
        if (grads[1]) {
          auto& gw = *grads[1];
          std::vector<double> acc(out);
          for (std::size_t i = 0; i < in; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t r = 0; r < n; ++r) {
              const double a = xv[r * in + i];
              if (a == 0.0) continue;
              const float* grow = g.data().data() + r * out;
              for (std::size_t o = 0; o < out; ++o) acc[o] += a * grow[o];
            }
            for (std::size_t o = 0; o < out; ++o) gw[i * out + o] += static_cast<float>(acc[o]);
          }
        }
        if (grads[2]) {
          auto& gb = *grads[2];
          for (std::size_t o = 0; o < out; ++o) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += g[r * out + o];
            gb[o] += static_cast<float>(s);
          }
        }
      });
}

namespace {
struct ConvGeom {
  std::size_t n, h, w, c, kh, kw, oc, oh, ow, stride, pad;
};
}  // namespace

Var conv2d(Tape& t, Var x, Var weight, Var bias, Conv2dSpec spec) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(weight);
  const Tensor& bv = t.value(bias);
  if (xv.rank() != 4 || wv.rank() != 4 || bv.rank() != 1 || wv.dim(2) != xv.dim(3) ||
      bv.dim(0) != wv.dim(3) || spec.stride == 0)
    throw ShapeError("conv2d: incompatible shapes x" + shape_string(xv.shape()) + " w" +
                     shape_string(wv.shape()) + " b" + shape_string(bv.shape()));
  ConvGeom gm{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(1), wv.dim(3),
              0,         0,         spec.stride, spec.padding};
  if (gm.h + 2 * gm.pad < gm.kh || gm.w + 2 * gm.pad < gm.kw)
    throw ShapeError("conv2d: kernel larger than padded input " + shape_string(xv.shape()));
  gm.oh = (gm.h + 2 * gm.pad - gm.kh) / gm.stride + 1;
  gm.ow = (gm.w + 2 * gm.pad - gm.kw) / gm.stride + 1;

  // Visits every (output pixel, kernel tap) pair that lands inside the input.
  auto for_each_tap = [gm](auto&& body) {
    for (std::size_t b = 0; b < gm.n; ++b)
      for (std::size_t oy = 0; oy < gm.oh; ++oy)
        for (std::size_t ox = 0; ox < gm.ow; ++ox) {
          const std::size_t out_base = ((b * gm.oh + oy) * gm.ow + ox) * gm.oc;
          for (std::size_t ky = 0; ky < gm.kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * gm.stride + ky) -
                                      static_cast<std::ptrdiff_t>(gm.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(gm.h)) continue;
            for (std::size_t kx = 0; kx < gm.kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * gm.stride + kx) -
                                        static_cast<std::ptrdiff_t>(gm.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(gm.w)) continue;
              const std::size_t in_base =
                  ((b * gm.h + static_cast<std::size_t>(iy)) * gm.w + static_cast<std::size_t>(ix)) * gm.c;
              const std::size_t w_base = (ky * gm.kw + kx) * gm.c * gm.oc;
              body(out_base, in_base, w_base);
            }
          }
        }
  };

  const std::size_t out_size = gm.n * gm.oh * gm.ow * gm.oc;
  std::vector<double> acc(out_size);
  for (std::size_t p = 0; p < out_size; p += gm.oc)
    for (std::size_t o = 0; o < gm.oc; ++o) acc[p + o] = bv[o];
  const float* xd = xv.data().data();
  const float* wd = wv.data().data();
  for_each_tap([&](std::size_t ob, std::size_t ib, std::size_t wb) {
    double* a = acc.data() + ob;
    for (std::size_t ci = 0; ci < gm.c; ++ci) {
      const double v = xd[ib + ci];
      if (v == 0.0) continue;
      const float* wrow = wd + wb + ci * gm.oc;
      for (std::size_t o = 0; o < gm.oc; ++o) a[o] += v * wrow[o];
    }
  });
  std::vector<float> y(out_size);
  for (std::size_t i = 0; i < out_size; ++i) y[i] = static_cast<float>(acc[i]);

  return t.record(
      "conv2d", unchecked({gm.n, gm.oh, gm.ow, gm.oc}, std::move(y)), {x, weight, bias},
      [xv, wv, gm, for_each_tap](const Tensor& g, std::span<Tensor* const> grads) {
        const float* gd = g.data().data();
        if (grads[0]) {
          std::vector<double> gx(xv.size(), 0.0);
          const float* wd = wv.data().data();
          for_each_tap([&](std::size_t ob, std::size_t ib, std::size_t wb) {
            const float* go = gd + ob;
            for (std::size_t ci = 0; ci < gm.c; ++ci) {
              const float* wrow = wd + wb + ci * gm.oc;
              double s = 0.0;
              for (std::size_t o = 0; o < gm.oc; ++o) s += static_cast<double>(go[o]) * wrow[o];
              gx[ib + ci] += s;
            }
          });
          auto& out = *grads[0];
          for (std::size_t i = 0; i < gx.size(); ++i) out[i] += static_cast<float>(gx[i]);
        }
        if (grads[1]) {
          std::vector<double> gw(wv.size(), 0.0);
          const float* xd = xv.data().data();
          for_each_tap([&](std::size_t ob, std::size_t ib, std::size_t wb) {
            const float* go = gd + ob;
            for (std::size_t ci = 0; ci < gm.c; ++ci) {
              const double v = xd[ib + ci];
              if (v == 0.0) continue;
              double* wrow = gw.data() + wb + ci * gm.oc;
              for (std::size_t o = 0; o < gm.oc; ++o) wrow[o] += v * go[o];
            }
          });
          auto& out = *grads[1];
          for (std::size_t i = 0; i < gw.size(); ++i) out[i] += static_cast<float>(gw[i]);
        }
        if (grads[2]) {
          std::vector<double> gb(gm.oc, 0.0);
          for (std::size_t p = 0; p < g.size(); p += gm.oc)
            for (std::size_t o = 0; o < gm.oc; ++o) gb[o] += gd[p + o];
          auto& out = *grads[2];
          for (std::size_t o = 0; o < gm.oc; ++o) out[o] += static_cast<float>(gb[o]);
        }
      });
}

Var relu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  std::vector<float> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  return t.record("relu", unchecked(xv.shape(), std::move(y)), {x},
                  [xv](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    auto& gx = *in[0];
                    for (std::size_t i = 0; i < g.size(); ++i)
                      if (xv[i] > 0.0f) gx[i] += g[i];
                  });
}

Var max_pool2x2(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 4 || xv.dim(1) < 2 || xv.dim(2) < 2)
    throw ShapeError("max_pool2x2: expected NHWC with H,W >= 2, got " + shape_string(xv.shape()));
  const std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<float> y(n * oh * ow * c);
  std::vector<std::size_t> argmax(y.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
              if (xv[idx] > xv[best]) best = idx;
            }
          const std::size_t o = ((b * oh + oy) * ow + ox) * c + ch;
          y[o] = xv[best];
          argmax[o] = best;
        }
  return t.record("max_pool2x2", unchecked({n, oh, ow, c}, std::move(y)), {x},
                  [argmax = std::move(argmax)](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    auto& gx = *in[0];
                    for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
                  });
}

Var reshape(Tape& t, Var x, Shape shape) {
  const Tensor& xv = t.value(x);
  Tensor y = xv.reshaped(std::move(shape));
  return t.record("reshape", std::move(y), {x}, [](const Tensor& g, std::span<Tensor* const> in) {
    if (!in[0]) return;
    auto& gx = *in[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var flatten(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() < 1) throw ShapeError("flatten: scalar input");
  const std::size_t n = xv.dim(0);
  Tensor y = xv.reshaped({n, xv.size() / n});
  return t.record("flatten", std::move(y), {x}, [](const Tensor& g, std::span<Tensor* const> in) {
    if (!in[0]) return;
    auto& gx = *in[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var sin(Tape& t, Var x) {
  return unary(
      t, x, "sin", [](float v) { return static_cast<float>(std::sin(static_cast<double>(v))); },
      [](float v, float) { return static_cast<float>(std::cos(static_cast<double>(v))); });
}

Var cos(Tape& t, Var x) {
  return unary(
      t, x, "cos", [](float v) { return static_cast<float>(std::cos(static_cast<double>(v))); },
      [](float v, float) { return static_cast<float>(-std::sin(static_cast<double>(v))); });
}

Var tanh(Tape& t, Var x) {
  return unary(
      t, x, "tanh", [](float v) { return static_cast<float>(std::tanh(static_cast<double>(v))); },
      [](float, float y) { return 1.0f - y * y; });
}

Var scale(Tape& t, Var x, float factor) {
  return unary(
      t, x, "scale", [factor](float v) { return v * factor; },
      [factor](float, float) { return factor; });
}

Var add_scalar(Tape& t, Var x, float offset) {
  return unary(
      t, x, "add_scalar", [offset](float v) { return v + offset; }, [](float, float) { return 1.0f; });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "add");
  std::vector<float> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return t.record("add", unchecked(av.shape(), std::move(y)), {a, b},
                  [](const Tensor& g, std::span<Tensor* const> in) {
                    for (Tensor* slot : in)
                      if (slot)
                        for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
                  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "sub");
  std::vector<float> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  return t.record("sub", unchecked(av.shape(), std::move(y)), {a, b},
                  [](const Tensor& g, std::span<Tensor* const> in) {
                    if (in[0])
                      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                    if (in[1])
                      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
                  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "mul");
  std::vector<float> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return t.record("mul", unchecked(av.shape(), std::move(y)), {a, b},
                  [av, bv](const Tensor& g, std::span<Tensor* const> in) {
                    if (in[0])
                      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * bv[i];
                    if (in[1])
                      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * av[i];
                  });
}

Var sum(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (float v : xv.data()) s += v;
  return t.record("sum", unchecked({}, {static_cast<float>(s)}), {x},
                  [](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    const float gv = g[0];
                    for (auto& v : in[0]->data()) v += gv;
                  });
}

namespace {
void check_labels(const Tensor& logits, std::span<const int> labels, const char* op) {
  if (logits.rank() != 2) throw ShapeError(std::string(op) + ": logits must be (batch, classes)");
  if (labels.size() != logits.dim(0))
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(logits.dim(0)));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1))
      throw ContractError(std::string(op) + ": label " + std::to_string(y) + " out of range");
}

std::size_t best_other(std::span<const float> row, std::size_t y) {
  std::size_t best = y == 0 ? 1 : 0;
  for (std::size_t j = 0; j < row.size(); ++j)
    if (j != y && row[j] > row[best]) best = j;
  return best;
}
}  // namespace

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels, Reduction reduction) {
  const Tensor& z = t.value(logits);
  check_labels(z, labels, "softmax_cross_entropy");
  const std::size_t n = z.dim(0), k = z.dim(1);
  std::vector<float> probs(z.size());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = z.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - m);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j)
      probs[r * k + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - m - log_denom));
    total += log_denom + m - static_cast<double>(row[static_cast<std::size_t>(labels[r])]);
  }
  const double norm = reduction == Reduction::mean ? static_cast<double>(n) : 1.0;
  std::vector<int> ys(labels.begin(), labels.end());
  return t.record("softmax_cross_entropy", unchecked({}, {static_cast<float>(total / norm)}), {logits},
                  [probs = std::move(probs), ys = std::move(ys), n, k, norm](
                      const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    auto& gz = *in[0];
                    const double scale = static_cast<double>(g[0]) / norm;
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t j = 0; j < k; ++j) {
                        double d = probs[r * k + j];
                        if (static_cast<int>(j) == ys[r]) d -= 1.0;
                        gz[r * k + j] += static_cast<float>(scale * d);
                      }
                  });
}

Var logit_margin(Tape& t, Var logits, std::span<const int> labels) {
  const Tensor& z = t.value(logits);
  check_labels(z, labels, "logit_margin");
  if (z.dim(1) < 2) throw ShapeError("logit_margin: needs at least two classes");
  const std::size_t n = z.dim(0), k = z.dim(1);
  std::vector<float> m(n);
  std::vector<std::size_t> own(n), other(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = z.row(r);
    own[r] = static_cast<std::size_t>(labels[r]);
    other[r] = best_other(row, own[r]);
    m[r] = row[own[r]] - row[other[r]];
  }
  return t.record("logit_margin", unchecked({n}, std::move(m)), {logits},
                  [own = std::move(own), other = std::move(other), k](const Tensor& g,
                                                                       std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    auto& gz = *in[0];
                    for (std::size_t r = 0; r < own.size(); ++r) {
                      gz[r * k + own[r]] += g[r];
                      gz[r * k + other[r]] -= g[r];
                    }
                  });
}

Var pick(Tape& t, Var logits, std::span<const int> labels) {
  const Tensor& z = t.value(logits);
  check_labels(z, labels, "pick");
  const std::size_t n = z.dim(0), k = z.dim(1);
  std::vector<float> v(n);
  std::vector<std::size_t> at(n);
  for (std::size_t r = 0; r < n; ++r) {
    at[r] = r * k + static_cast<std::size_t>(labels[r]);
    v[r] = z[at[r]];
  }
  return t.record("pick", unchecked({n}, std::move(v)), {logits},
                  [at = std::move(at)](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    for (std::size_t r = 0; r < at.size(); ++r) (*in[0])[at[r]] += g[r];
                  });
}

Var clamp_min(Tape& t, Var x, float floor) {
  return unary(
      t, x, "clamp_min", [floor](float v) { return v > floor ? v : floor; },
      [floor](float v, float) { return v > floor ? 1.0f : 0.0f; });
}

Var row_l2_norm(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() < 1) throw ShapeError("row_l2_norm: scalar input");
  const std::size_t n = xv.dim(0), stride = xv.row_size();
  std::vector<float> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (float v : xv.row(r)) s += static_cast<double>(v) * v;
    norms[r] = static_cast<float>(std::sqrt(s));
  }
  Tensor value = unchecked({n}, norms);
  return t.record("row_l2_norm", std::move(value), {x},
                  [xv, norms = std::move(norms), stride](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    auto& gx = *in[0];
                    for (std::size_t r = 0; r < norms.size(); ++r) {
                      if (norms[r] == 0.0f) continue;
                      const float f = g[r] / norms[r];
                      for (std::size_t i = 0; i < stride; ++i) gx[r * stride + i] += f * xv[r * stride + i];
                    }
                  });
}

}  // namespace gc::ad
