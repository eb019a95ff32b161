#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "spinecade/image2d.hpp"
#include "spinecade/volume.hpp"

namespace spinecade {

enum class SliceAxis : uint8_t { axial };

/// One edge candidate: voxel index plus the in-slice gradient that put it on
/// the map. Gradients are computed on axial slices only.
struct EdgeVoxel {
  Index3 index{0, 0, 0};
  double grad_x = 0.0;
  double grad_y = 0.0;
  double magnitude = 0.0;  // sqrt(grad_x^2 + grad_y^2)
  SliceAxis slice_axis = SliceAxis::axial;
};

struct EdgeMap {
  std::vector<EdgeVoxel> voxels;  // sorted by (z, y, x), unique
  Index3 source_dims{0, 0, 0};
  double threshold_used = 0.0;    // absolute |G| threshold applied
};

struct GradientPair {
  Image2D<double> gx;
  Image2D<double> gy;
};

/// 3x3 Sobel cross-correlation with replicate-edge padding. gx responds to
/// intensity change along x, gy along y. Output has the slice's shape.
GradientPair sobel_slice(const Image2D<double>& slice);
GradientPair sobel_slice(const Image2D<int16_t>& slice);

/// Element-wise sqrt(gx^2 + gy^2).
Image2D<double> gradient_magnitude(const Image2D<double>& gx,
                                   const Image2D<double>& gy);

/// Extracts edge candidates from every axial slice of v.
///
/// A voxel is kept when (a) it lies inside the mask dilated by one voxel
/// (26-neighborhood), (b) its |G| exceeds the given percentile of |G| over
/// the dilated mask (nearest-rank, strict >), and (c) it survives 8-neighbor
/// non-maximum suppression along the quantized gradient direction. The NMS
/// tie rule is: keep the voxel if its magnitude is strictly greater than the
/// forward neighbor's (along the gradient) and at least the backward
/// neighbor's, so a two-voxel plateau yields exactly one edge voxel.
EdgeMap extract_edges(const Volume& v, const Volume& mask,
                      double threshold_percentile, int threads = 1);

/// CSV "x,y,z,gx,gy,mag" with full double precision.
void save_edge_map_csv(const EdgeMap& e, const std::filesystem::path& path);
EdgeMap load_edge_map_csv(const std::filesystem::path& path,
                          Index3 source_dims, double threshold_used);

/// Debug view of |G| over the whole volume as an int16 image (values
/// rounded and clamped); mask-independent.
Volume gradient_magnitude_volume(const Volume& v);

}  // namespace spinecade
