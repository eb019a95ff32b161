#pragma once

#include <array>

#include "spinecade/image2d.hpp"

namespace spinecade {

/// 2x2 symmetric matrix [xx, xy; xy, yy].
struct SymMat2 {
  double xx = 0.0;
  double xy = 0.0;
  double yy = 0.0;
};

/// Which direction the reported angle describes: the edge tangent (the
/// default; perpendicular to the dominant gradient) or the gradient itself.
enum class OrientMode : uint8_t { tangent, gradient };

/// In-plane orientation of a local edge from the eigen-system of the local
/// structure tensor.
struct EdgeOrientation {
  double theta = 0.0;       // radians, folded into [-pi/2, pi/2)
  double anisotropy = 0.0;  // 1 - lambda2/lambda1, 0 when lambda1 == 0
  std::array<double, 2> direction{1.0, 0.0};  // unit vector at angle theta
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

/// Unweighted gradient outer-product sum over a (2r+1)^2 window centered at
/// (cx, cy); the window is clamped to the image bounds. The center itself
/// must be inside the image.
SymMat2 structure_tensor(const Image2D<double>& gx, const Image2D<double>& gy,
                         int cx, int cy, int window_radius);

/// Closed-form eigen-decomposition of a symmetric 2x2 tensor. The
/// lambda1-eigenvector is the dominant gradient direction; theta reports the
/// edge tangent (or the gradient in gradient mode), folded into
/// [-pi/2, pi/2). Isotropic or zero tensors tie-break to theta = 0 with
/// anisotropy 0.
EdgeOrientation principal_orientation(const SymMat2& t,
                                      OrientMode mode = OrientMode::tangent);

/// Folds an angle into [-pi/2, pi/2) modulo pi.
double fold_half_pi(double angle);

}  // namespace spinecade
