#pragma once
// Brute-force nearest point in an Lp ball, independent of the library's
// projection code. All but the last coordinate range over a 1e-3 grid; for
// each grid point the last coordinate takes its exact best feasible value
// (clamping r into the admissible interval), so points on the ball's surface
// are part of the search. In 3-D a coarse pass picks the window for the fine one.
// A few zoom passes (grid step / 10 around the incumbent) follow, since where the
// surface is steep a 1e-3 error in the leading coordinates moves the last one a lot.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gradconceal/attacks.hpp"

namespace oracle {

using gc::attack::Norm;

// Largest |z_last| allowed once the leading coordinates `head` are fixed; < 0 if infeasible.
// Grid sums like 0.267 + 0.017 can land an ulp above eps, which would drop
// exactly the grid points on the ball's faces, so rounding slack counts as 0.
inline double last_coordinate_room(const std::vector<double>& head, Norm p, double eps) {
  constexpr double slack = 1e-12;
  switch (p) {
    case Norm::linf:
      for (double v : head)
        if (std::abs(v) > eps + slack) return -1.0;
      return eps;
    case Norm::l2: {
      double s = 0.0;
      for (double v : head) s += v * v;
      return s > eps * eps + slack ? -1.0 : std::sqrt(std::max(eps * eps - s, 0.0));
    }
    case Norm::l1: {
      double s = 0.0;
      for (double v : head) s += std::abs(v);
      return s > eps + slack ? -1.0 : std::max(eps - s, 0.0);
    }
  }
  return -1.0;
}

struct Best {
  std::vector<double> z;
  double dist2 = std::numeric_limits<double>::infinity();
};

inline void consider(const std::vector<double>& head, const std::vector<double>& r, Norm p, double eps, Best& best) {
  const double room = last_coordinate_room(head, p, eps);
  if (room < 0) return;
  const double last = std::clamp(r.back(), -room, room);
  double d = (last - r.back()) * (last - r.back());
  for (std::size_t i = 0; i < head.size(); ++i) d += (head[i] - r[i]) * (head[i] - r[i]);
  if (d < best.dist2) {
    best.dist2 = d;
    best.z = head;
    best.z.push_back(last);
  }
}

inline std::vector<double> axis(double lo, double hi, double step, double eps) {
  lo = std::max(lo, -eps);
  hi = std::min(hi, eps);
  std::vector<double> out;
  for (long k = static_cast<long>(std::ceil(lo / step)); k * step <= hi; ++k) out.push_back(k * step);
  return out;
}

inline void zoom(const std::vector<double>& r, Norm p, double eps, double step, Best& best) {
  for (int pass = 0; pass < 4; ++pass) {
    const std::vector<double> centre(best.z.begin(), best.z.end() - 1);
    const double sub = step / 10.0;
    std::vector<double> head = centre;
    if (centre.size() == 1) {
      for (int i = -20; i <= 20; ++i) {
        head[0] = centre[0] + i * sub;
        consider(head, r, p, eps, best);
      }
    } else {
      for (int i = -20; i <= 20; ++i)
        for (int j = -20; j <= 20; ++j) {
          head = {centre[0] + i * sub, centre[1] + j * sub};
          consider(head, r, p, eps, best);
        }
    }
    step = sub;
  }
}

inline std::vector<double> nearest_in_ball(const std::vector<double>& r, Norm p, double eps) {
  constexpr double fine = 1e-3;
  Best best;
  if (r.size() == 2) {
    for (double a : axis(-eps, eps, fine, eps)) consider({a}, r, p, eps, best);
    zoom(r, p, eps, fine, best);
    return best.z;
  }
  Best coarse;
  const double step = 0.02;
  for (double a : axis(-eps, eps, step, eps))
    for (double b : axis(-eps, eps, step, eps)) consider({a, b}, r, p, eps, coarse);
  const double window = 0.1;
  for (double a : axis(coarse.z[0] - window, coarse.z[0] + window, fine, eps))
    for (double b : axis(coarse.z[1] - window, coarse.z[1] + window, fine, eps)) consider({a, b}, r, p, eps, best);
  zoom(r, p, eps, fine, best);
  return best.z;
}

}  // namespace oracle
