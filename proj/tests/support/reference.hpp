#pragma once
// Plain double-precision forward implementations used as test oracles. They
// share no code with the library: loops are written out directly from the
// layer definitions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "gradconceal/model.hpp"

namespace ref {

using Vec = std::vector<double>;

// Records the discrete choices a forward pass made (ReLU on/off, pool winner),
// so callers can tell whether a finite-difference stencil crossed a kink.
struct Pattern {
  std::vector<long> choices;
  bool operator==(const Pattern&) const = default;
};

inline Vec dense(const Vec& x, std::size_t batch, std::size_t in, const Vec& w, const Vec& b, std::size_t out) {
  Vec y(batch * out);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[n * in + i] * w[i * out + o];
      y[n * out + o] = s;
    }
  return y;
}

struct ImageShape {
  std::size_t n, h, w, c;
  std::size_t size() const { return n * h * w * c; }
};

// NHWC input, (kh, kw, ic, oc) kernel, zero padding.
inline Vec conv2d(const Vec& x, ImageShape s, const Vec& k, std::size_t kh, std::size_t kw, std::size_t oc,
                  const Vec& b, std::size_t stride, std::size_t pad, ImageShape& out) {
  out = {s.n, (s.h + 2 * pad - kh) / stride + 1, (s.w + 2 * pad - kw) / stride + 1, oc};
  Vec y(out.size());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t oy = 0; oy < out.h; ++oy)
      for (std::size_t ox = 0; ox < out.w; ++ox)
        for (std::size_t o = 0; o < oc; ++o) {
          double acc = b[o];
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.h) || ix >= static_cast<long>(s.w)) continue;
              for (std::size_t c = 0; c < s.c; ++c)
                acc += x[((n * s.h + iy) * s.w + ix) * s.c + c] * k[((ky * kw + kx) * s.c + c) * oc + o];
            }
          y[((n * out.h + oy) * out.w + ox) * oc + o] = acc;
        }
  return y;
}

inline Vec relu(Vec x, Pattern* p = nullptr) {
  for (auto& v : x) {
    if (p) p->choices.push_back(v > 0 ? 1 : 0);
    v = v > 0 ? v : 0.0;
  }
  return x;
}

inline Vec max_pool2x2(const Vec& x, ImageShape s, ImageShape& out, Pattern* p = nullptr) {
  out = {s.n, s.h / 2, s.w / 2, s.c};
  Vec y(out.size());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t oy = 0; oy < out.h; ++oy)
      for (std::size_t ox = 0; ox < out.w; ++ox)
        for (std::size_t c = 0; c < s.c; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          long arg = -1;
          for (std::size_t d = 0; d < 4; ++d) {
            const double v = x[((n * s.h + 2 * oy + d / 2) * s.w + 2 * ox + d % 2) * s.c + c];
            if (v > best) {
              best = v;
              arg = static_cast<long>(d);
            }
          }
          if (p) p->choices.push_back(arg);
          y[((n * out.h + oy) * out.w + ox) * s.c + c] = best;
        }
  return y;
}

inline double softmax_ce_sum(const Vec& z, std::size_t batch, std::size_t k, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    double m = z[n * k];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, z[n * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[n * k + j] - m);
    total += m + std::log(s) - z[n * k + static_cast<std::size_t>(labels[n])];
  }
  return total;
}

inline Vec logit_margin(const Vec& z, std::size_t batch, std::size_t k, const std::vector<int>& labels,
                        Pattern* p = nullptr) {
  Vec out(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    const auto y = static_cast<std::size_t>(labels[n]);
    double best = -std::numeric_limits<double>::infinity();
    long arg = -1;
    for (std::size_t j = 0; j < k; ++j)
      if (j != y && z[n * k + j] > best) {
        best = z[n * k + j];
        arg = static_cast<long>(j);
      }
    if (p) p->choices.push_back(arg);
    out[n] = z[n * k + y] - best;
  }
  return out;
}

inline Vec row_l2_norm(const Vec& x, std::size_t batch) {
  const std::size_t stride = x.size() / batch;
  Vec out(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < stride; ++i) s += x[n * stride + i] * x[n * stride + i];
    out[n] = std::sqrt(s);
  }
  return out;
}

inline std::vector<Vec> parameters_of(const gc::nn::Model& m) {
  std::vector<Vec> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.value.data().begin(), p.value.data().end());
  return out;
}

// Logits of a block-structured model evaluated in double, reading the layer
// list and parameter shapes from `m` but using the parameter values `params`.
inline Vec model_logits(const gc::nn::Model& m, const std::vector<Vec>& params, const Vec& x, std::size_t batch,
                        Pattern* p = nullptr) {
  using gc::nn::LayerKind;
  const auto& in = m.input_shape();
  ImageShape img{batch, 1, 1, 1};
  std::size_t features = 0;
  bool flat = in.size() == 1;
  if (flat) features = in[0];
  else img = {batch, in[0], in[1], in[2]};
  Vec a = x;
  for (const auto& block : m.blocks())
    for (const auto& layer : block.layers) {
      switch (layer.kind) {
        case LayerKind::flatten:
          if (!flat) features = img.h * img.w * img.c;
          flat = true;
          break;
        case LayerKind::dense: {
          const auto& w = m.parameters()[layer.weight].value;
          a = dense(a, batch, w.dim(0), params[layer.weight], params[layer.bias], w.dim(1));
          features = w.dim(1);
          break;
        }
        case LayerKind::conv2d: {
          const auto& k = m.parameters()[layer.weight].value;
          ImageShape out{};
          a = conv2d(a, img, params[layer.weight], k.dim(0), k.dim(1), k.dim(3), params[layer.bias],
                     layer.conv.stride, layer.conv.padding, out);
          img = out;
          break;
        }
        case LayerKind::relu:
          a = relu(std::move(a), p);
          break;
        case LayerKind::max_pool2x2: {
          ImageShape out{};
          a = max_pool2x2(a, img, out, p);
          img = out;
          break;
        }
      }
    }
  (void)features;
  return a;
}

}  // namespace ref
