#include "spinecade/orientation.hpp"

#include <cmath>

#include "spinecade/error.hpp"

namespace spinecade {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double fold_half_pi(double angle) {
  const double folded = angle - kPi * std::floor(angle / kPi + 0.5);
  // floor rounding can leave the upper boundary itself; map it down.
  return folded >= kPi / 2.0 ? folded - kPi : folded;
}

SymMat2 structure_tensor(const Image2D<double>& gx, const Image2D<double>& gy,
                         int cx, int cy, int window_radius) {
  if (!gx.same_shape(gy))
    fail(Errc::shape_mismatch, "gradient components differ in shape");
  if (window_radius < 1)
    fail(Errc::too_small, "window_radius must be >= 1");
  if (cx < 0 || cx >= gx.width() || cy < 0 || cy >= gx.height())
    fail(Errc::out_of_bounds, "structure tensor center outside the image");

  const int x0 = std::max(0, cx - window_radius);
  const int x1 = std::min(gx.width() - 1, cx + window_radius);
  const int y0 = std::max(0, cy - window_radius);
  const int y1 = std::min(gx.height() - 1, cy + window_radius);

  SymMat2 t;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double a = gx(x, y);
      const double b = gy(x, y);
      t.xx += a * a;
      t.xy += a * b;
      t.yy += b * b;
    }
  }
  return t;
}

EdgeOrientation principal_orientation(const SymMat2& t, OrientMode mode) {
  EdgeOrientation o;

  const double half_trace = 0.5 * (t.xx + t.yy);
  const double half_diff = 0.5 * (t.xx - t.yy);
  const double root = std::sqrt(half_diff * half_diff + t.xy * t.xy);
  o.lambda1 = half_trace + root;
  o.lambda2 = half_trace - root;
  o.anisotropy = o.lambda1 > 0.0 ? 1.0 - o.lambda2 / o.lambda1 : 0.0;

  // Dominant gradient direction (lambda1 eigenvector).
  double vx, vy;
  if (root <= 0.0) {
    // Isotropic or zero tensor: no preferred direction.
    o.theta = 0.0;
    o.anisotropy = 0.0;
    o.direction = {1.0, 0.0};
    return o;
  }
  // Of the two algebraically equivalent eigenvector forms, pick the one
  // whose norm is farther from zero.
  const double ax = o.lambda1 - t.yy;  // (lambda1 - yy, xy)
  const double bx = t.xy;              // (xy, lambda1 - xx)
  const double by = o.lambda1 - t.xx;
  if (ax * ax + t.xy * t.xy >= bx * bx + by * by) {
    vx = ax;
    vy = t.xy;
  } else {
    vx = bx;
    vy = by;
  }
  const double norm = std::sqrt(vx * vx + vy * vy);
  vx /= norm;
  vy /= norm;

  double dir_x = vx, dir_y = vy;
  if (mode == OrientMode::tangent) {
    // Edge tangent is perpendicular to the dominant gradient.
    dir_x = -vy;
    dir_y = vx;
  }
  o.theta = fold_half_pi(std::atan2(dir_y, dir_x));
  o.direction = {std::cos(o.theta), std::sin(o.theta)};
  return o;
}

}  // namespace spinecade
