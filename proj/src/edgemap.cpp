#include "spinecade/edgemap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "spinecade/error.hpp"
#include "spinecade/threads.hpp"

namespace spinecade {

namespace {

// Kernels as cross-correlation weights, row index = y offset + 1,
// column index = x offset + 1.
constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

// Quantizes a gradient vector to one of four 8-neighbor axes and returns the
// offset pointing along the gradient (sign-aware).
std::pair<int, int> forward_offset(double gx, double gy) {
  double angle = std::atan2(gy, gx);
  if (angle < 0.0) angle += 3.14159265358979323846;  // fold to [0, pi)
  constexpr double kPi8 = 3.14159265358979323846 / 8.0;
  int dx, dy;
  if (angle < kPi8 || angle >= 7.0 * kPi8) {
    dx = 1; dy = 0;
  } else if (angle < 3.0 * kPi8) {
    dx = 1; dy = 1;
  } else if (angle < 5.0 * kPi8) {
    dx = 0; dy = 1;
  } else {
    dx = -1; dy = 1;
  }
  if (gx * dx + gy * dy < 0.0) {
    dx = -dx; dy = -dy;
  }
  return {dx, dy};
}

// Binary 26-neighborhood dilation by one voxel, as three 1D passes.
std::vector<uint8_t> dilate26(const Volume& mask) {
  const int nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
  const size_t n = mask.voxel_count();
  std::vector<uint8_t> a(n), b(n);
  for (size_t i = 0; i < n; ++i) a[i] = mask.data[i] != 0 ? 1 : 0;

  auto pass = [&](const std::vector<uint8_t>& src, std::vector<uint8_t>& dst,
                  int sx, int sy, int sz) {
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
          uint8_t v = src[mask.index(x, y, z)];
          if (!v) {
            const int xm = x - sx, ym = y - sy, zm = z - sz;
            const int xp = x + sx, yp = y + sy, zp = z + sz;
            if (mask.in_bounds(xm, ym, zm) && src[mask.index(xm, ym, zm)]) v = 1;
            else if (mask.in_bounds(xp, yp, zp) && src[mask.index(xp, yp, zp)]) v = 1;
          }
          dst[mask.index(x, y, z)] = v;
        }
  };
  pass(a, b, 1, 0, 0);
  pass(b, a, 0, 1, 0);
  pass(a, b, 0, 0, 1);
  return b;
}

}  // namespace

GradientPair sobel_slice(const Image2D<double>& slice) {
  const int w = slice.width(), h = slice.height();
  if (w < 3 || h < 3)
    fail(Errc::too_small, "sobel_slice needs at least a 3x3 slice");

  GradientPair g{Image2D<double>(w, h), Image2D<double>(w, h)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sx = 0.0, sy = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const double v = slice.at_clamped(x + dx, y + dy);
          sx += kSobelX[dy + 1][dx + 1] * v;
          sy += kSobelY[dy + 1][dx + 1] * v;
        }
      }
      g.gx(x, y) = sx;
      g.gy(x, y) = sy;
    }
  }
  return g;
}

GradientPair sobel_slice(const Image2D<int16_t>& slice) {
  Image2D<double> d(slice.width(), slice.height());
  for (size_t i = 0; i < slice.size(); ++i)
    d.data()[i] = static_cast<double>(slice.data()[i]);
  return sobel_slice(d);
}

Image2D<double> gradient_magnitude(const Image2D<double>& gx,
                                   const Image2D<double>& gy) {
  if (!gx.same_shape(gy))
    fail(Errc::shape_mismatch, "gradient components differ in shape");
  Image2D<double> m(gx.width(), gx.height());
  for (size_t i = 0; i < m.size(); ++i)
    m.data()[i] = std::sqrt(gx.data()[i] * gx.data()[i] +
                            gy.data()[i] * gy.data()[i]);
  return m;
}

EdgeMap extract_edges(const Volume& v, const Volume& mask,
                      double threshold_percentile, int threads) {
  if (v.dims != mask.dims || v.spacing != mask.spacing)
    fail(Errc::dim_mismatch, "image and mask dims/spacing differ");
  if (!(threshold_percentile > 0.0 && threshold_percentile < 100.0))
    fail(Errc::config_invalid, "threshold_percentile must be in (0,100)");

  bool any_mask = false;
  for (const int16_t m : mask.data)
    if (m != 0) { any_mask = true; break; }
  if (!any_mask) fail(Errc::empty_mask, "mask has no nonzero voxels");

  const std::vector<uint8_t> region = dilate26(mask);
  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];

  // Per-slice gradients, kept only where the dilated mask intersects.
  struct SliceGrad {
    bool active = false;
    GradientPair g;
    Image2D<double> mag;
  };
  std::vector<SliceGrad> slices(nz);
  parallel_for(static_cast<size_t>(nz), threads, [&](size_t z0, size_t z1) {
    for (size_t z = z0; z < z1; ++z) {
      bool active = false;
      const size_t base = v.index(0, 0, static_cast<int>(z));
      for (size_t i = 0; i < static_cast<size_t>(nx) * ny; ++i)
        if (region[base + i]) { active = true; break; }
      if (!active) continue;
      auto& s = slices[z];
      s.active = true;
      s.g = sobel_slice(v.axial_slice(static_cast<int>(z)));
      s.mag = gradient_magnitude(s.g.gx, s.g.gy);
    }
  });

  // Nearest-rank percentile over |G| inside the dilated mask.
  std::vector<double> mags;
  for (int z = 0; z < nz; ++z) {
    if (!slices[z].active) continue;
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        if (region[v.index(x, y, z)]) mags.push_back(slices[z].mag(x, y));
  }
  std::sort(mags.begin(), mags.end());
  const size_t rank = static_cast<size_t>(
      std::ceil(threshold_percentile / 100.0 * static_cast<double>(mags.size())));
  const double threshold = mags[std::max<size_t>(rank, 1) - 1];

  EdgeMap out;
  out.source_dims = v.dims;
  out.threshold_used = threshold;

  std::vector<std::vector<EdgeVoxel>> per_slice(nz);
  parallel_for(static_cast<size_t>(nz), threads, [&](size_t z0, size_t z1) {
    for (size_t zi = z0; zi < z1; ++zi) {
      const int z = static_cast<int>(zi);
      if (!slices[z].active) continue;
      const auto& g = slices[z].g;
      const auto& mag = slices[z].mag;
      auto& keep = per_slice[z];
      for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
          if (!region[v.index(x, y, z)]) continue;
          const double m = mag(x, y);
          if (!(m > threshold) || m <= 0.0) continue;
          const auto [dx, dy] = forward_offset(g.gx(x, y), g.gy(x, y));
          auto mag_at = [&](int px, int py) {
            return (px >= 0 && px < nx && py >= 0 && py < ny) ? mag(px, py)
                                                              : 0.0;
          };
          if (!(m > mag_at(x + dx, y + dy))) continue;
          if (!(m >= mag_at(x - dx, y - dy))) continue;
          keep.push_back(EdgeVoxel{{x, y, z}, g.gx(x, y), g.gy(x, y), m,
                                   SliceAxis::axial});
        }
      }
    }
  });
  for (int z = 0; z < nz; ++z)
    out.voxels.insert(out.voxels.end(), per_slice[z].begin(),
                      per_slice[z].end());
  return out;
}

void save_edge_map_csv(const EdgeMap& e, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out << "x,y,z,gx,gy,mag\n";
  out.precision(17);
  for (const auto& ev : e.voxels)
    out << ev.index[0] << "," << ev.index[1] << "," << ev.index[2] << ","
        << ev.grad_x << "," << ev.grad_y << "," << ev.magnitude << "\n";
  if (!out) fail(Errc::io_error, "write failed for " + path.string());
}

EdgeMap load_edge_map_csv(const std::filesystem::path& path,
                          Index3 source_dims, double threshold_used) {
  std::ifstream in(path);
  if (!in) fail(Errc::missing_file, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "x,y,z,gx,gy,mag")
    fail(Errc::malformed_row, "unexpected edge CSV header in " + path.string());

  EdgeMap e;
  e.source_dims = source_dims;
  e.threshold_used = threshold_used;
  size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    EdgeVoxel ev;
    char comma;
    std::istringstream row(line);
    row >> ev.index[0] >> comma >> ev.index[1] >> comma >> ev.index[2] >>
        comma >> ev.grad_x >> comma >> ev.grad_y >> comma >> ev.magnitude;
    if (!row)
      fail(Errc::malformed_row,
           path.string() + ": bad row " + std::to_string(row_no));
    ev.slice_axis = SliceAxis::axial;
    e.voxels.push_back(ev);
  }
  return e;
}

Volume gradient_magnitude_volume(const Volume& v) {
  Volume out = v;
  out.elem_type = ElementType::int16;
  for (int z = 0; z < v.dims[2]; ++z) {
    const auto g = sobel_slice(v.axial_slice(z));
    const auto mag = gradient_magnitude(g.gx, g.gy);
    for (int y = 0; y < v.dims[1]; ++y)
      for (int x = 0; x < v.dims[0]; ++x) {
        const double m = std::min(mag(x, y), 32767.0);
        out.at(x, y, z) = static_cast<int16_t>(std::lround(m));
      }
  }
  return out;
}

}  // namespace spinecade
