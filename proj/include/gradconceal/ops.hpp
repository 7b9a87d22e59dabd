#pragma once

// Differentiable primitives. Layouts: dense inputs are (batch, features) with
// weights (in, out); images are NHWC with conv weights (kh, kw, in_ch, out_ch).
// Reductions accumulate in double and round once to float.

#include <cstddef>
#include <span>

#include "gradconceal/autodiff.hpp"

namespace gc::ad {

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

enum class Reduction { sum, mean };

Var dense(Tape& t, Var x, Var weight, Var bias);
Var conv2d(Tape& t, Var x, Var weight, Var bias, Conv2dSpec spec = {});
/// max(x, 0); the derivative at exactly 0 is 0.
Var relu(Tape& t, Var x);
/// 2x2 window, stride 2, floor on odd sizes. Ties route the gradient to the
/// first maximal element in row-major window order.
Var max_pool2x2(Tape& t, Var x);
Var flatten(Tape& t, Var x);
Var reshape(Tape& t, Var x, Shape shape);

Var sin(Tape& t, Var x);
Var cos(Tape& t, Var x);
Var tanh(Tape& t, Var x);
Var scale(Tape& t, Var x, float factor);
Var add_scalar(Tape& t, Var x, float offset);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var sum(Tape& t, Var x);

/// Softmax cross-entropy of (batch, classes) logits against integer labels.
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels,
                          Reduction reduction = Reduction::mean);
/// Per-row logits[y] - max_{j != y} logits[j]; the max breaks ties toward the
/// lowest index. Output shape (batch).
Var logit_margin(Tape& t, Var logits, std::span<const int> labels);
/// Per-row sum of logits[y]; output shape (batch).
Var pick(Tape& t, Var logits, std::span<const int> labels);
/// max(x, floor) elementwise; gradient passes only where x > floor.
Var clamp_min(Tape& t, Var x, float floor);
/// Per-row Euclidean norm of a (batch, ...) tensor; gradient at 0 is 0.
Var row_l2_norm(Tape& t, Var x);

}  // namespace gc::ad
