#include "spinecade/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "spinecade/error.hpp"
#include "spinecade/rng.hpp"

namespace spinecade {

namespace {

// Half-open voxel box; long_axis 0 (x) or 1 (y) is the direction a fracture
// gap cuts across.
struct ProcessBox {
  int x0, x1, y0, y1, z0, z1;
  int long_axis;
  ProcessLabel label;

  bool contains(int x, int y, int z) const {
    return x >= x0 && x < x1 && y >= y0 && y < y1 && z >= z0 && z < z1;
  }
  bool on_shell(int x, int y, int z) const {
    return x == x0 || x == x1 - 1 || y == y0 || y == y1 - 1 || z == z0 ||
           z == z1 - 1;
  }
};

struct VertebraGeometry {
  double cx, cy, rx, ry;
  int bone_z0, bone_z1;
  std::array<ProcessBox, 3> processes;  // left, right, spinous
};

VertebraGeometry vertebra_geometry(const PhantomSpec& spec, int v) {
  const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
  VertebraGeometry g;
  g.cx = nx / 2.0;
  g.cy = ny * 5.0 / 8.0;
  g.rx = nx * 0.22;
  g.ry = ny * 0.16;

  const int slab = nz / spec.n_vertebrae;
  const int margin = std::max(1, slab / 8);
  g.bone_z0 = v * slab + margin;
  g.bone_z1 = (v + 1) * slab - margin;

  const int bone_h = g.bone_z1 - g.bone_z0;
  const int pz = std::max(4, bone_h / 2);
  const int pz0 = g.bone_z0 + (bone_h - pz) / 2;
  const int pz1 = pz0 + pz;

  const int cxi = static_cast<int>(g.cx);
  const int wx = std::max(6, nx / 16);
  const int y_root = static_cast<int>(g.cy - g.ry);
  const int len_sp = std::max(10, ny / 6);
  ProcessBox spinous{cxi - wx / 2, cxi + wx / 2, y_root - len_sp, y_root + 1,
                     pz0,          pz1,          1,               ProcessLabel::spinous};

  const int wy = std::max(6, ny / 16);
  const int cy_tr = static_cast<int>(g.cy - 0.5 * g.ry);
  const int len_tr = std::max(10, nx / 8);
  const int x_in_l = static_cast<int>(g.cx - 0.85 * g.rx);
  const int x_in_r = static_cast<int>(g.cx + 0.85 * g.rx);
  ProcessBox left{x_in_l - len_tr, x_in_l + 1, cy_tr - wy / 2, cy_tr + wy / 2,
                  pz0,             pz1,        0,              ProcessLabel::left};
  ProcessBox right{x_in_r, x_in_r + 1 + len_tr, cy_tr - wy / 2, cy_tr + wy / 2,
                   pz0,    pz1,                 0,              ProcessLabel::right};

  g.processes = {left, right, spinous};
  return g;
}

void check_fits(const PhantomSpec& spec, const VertebraGeometry& g) {
  const auto bad = [&](const ProcessBox& b) {
    if (b.x0 < 1 || b.y0 < 1 || b.z0 < 1) return true;
    if (b.x1 > spec.dims[0] - 1 || b.y1 > spec.dims[1] - 1 ||
        b.z1 > spec.dims[2] - 1)
      return true;
    if (b.x1 - b.x0 < 3 || b.y1 - b.y0 < 3 || b.z1 - b.z0 < 3) return true;
    // A gap plus shell caps must fit along the long axis.
    const int axis_len = b.long_axis == 0 ? b.x1 - b.x0 : b.y1 - b.y0;
    const double gap_vox = spec.gap_width_mm / spec.spacing[b.long_axis];
    return axis_len < static_cast<int>(gap_vox) + 4;
  };
  for (const auto& b : g.processes)
    if (bad(b))
      fail(Errc::spec_too_small,
           "phantom processes do not fit the requested dims");
}

}  // namespace

PhantomResult generate_phantom(const PhantomSpec& spec) {
  const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
  if (spec.n_vertebrae < 1)
    fail(Errc::spec_too_small, "n_vertebrae must be >= 1");
  if (spec.fracture_count < 0 ||
      spec.fracture_count > 3 * spec.n_vertebrae)
    fail(Errc::spec_too_small,
         "fracture_count exceeds the available processes");
  if (!(spec.gap_width_mm > 0.0))
    fail(Errc::spec_too_small, "gap_width_mm must be > 0");
  if (nz / spec.n_vertebrae < 8)
    fail(Errc::spec_too_small, "vertebra slabs too thin");

  PhantomResult r;
  r.image.dims = spec.dims;
  r.image.spacing = spec.spacing;
  r.image.elem_type = ElementType::int16;
  r.image.data.assign(r.image.voxel_count(), kSoftTissueHu);
  r.mask = r.image;
  r.mask.elem_type = ElementType::uint8;
  std::fill(r.mask.data.begin(), r.mask.data.end(), int16_t{0});

  std::vector<VertebraGeometry> vertebrae;
  for (int v = 0; v < spec.n_vertebrae; ++v) {
    vertebrae.push_back(vertebra_geometry(spec, v));
    check_fits(spec, vertebrae.back());
  }

  // Elliptical body rings: cortical band over a trabecular core.
  for (const auto& g : vertebrae) {
    for (int z = g.bone_z0; z < g.bone_z1; ++z) {
      for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
          const double dx = (x - g.cx) / g.rx;
          const double dy = (y - g.cy) / g.ry;
          const double rr = std::sqrt(dx * dx + dy * dy);
          if (rr <= 1.0)
            r.image.at(x, y, z) = rr >= 0.75 ? kCorticalHu : kTrabecularHu;
        }
      }
    }
  }

  // Posterior processes: box shells with trabecular cores, masked.
  for (const auto& g : vertebrae) {
    for (const auto& b : g.processes) {
      for (int z = b.z0; z < b.z1; ++z)
        for (int y = b.y0; y < b.y1; ++y)
          for (int x = b.x0; x < b.x1; ++x) {
            r.image.at(x, y, z) =
                b.on_shell(x, y, z) ? kCorticalHu : kTrabecularHu;
            r.mask.at(x, y, z) = 1;
          }
    }
  }

  // Implant fractures into distinct (vertebra, process) pairs.
  Rng rng(derive_seed(spec.seed, "phantom"));
  std::vector<std::pair<int, int>> sites;
  for (int v = 0; v < spec.n_vertebrae; ++v)
    for (int p = 0; p < 3; ++p) sites.emplace_back(v, p);
  rng.shuffle(sites);

  for (int f = 0; f < spec.fracture_count; ++f) {
    const auto [v, p] = sites[f];
    const ProcessBox& b = vertebrae[v].processes[p];
    const int axis = b.long_axis;
    const double a0 = axis == 0 ? b.x0 : b.y0;
    const double a1 = axis == 0 ? b.x1 : b.y1;
    const double gap_half_vox = 0.5 * spec.gap_width_mm / spec.spacing[axis];
    const double margin = gap_half_vox + 0.2 * (a1 - a0);
    const double center =
        a0 + margin + rng.uniform() * ((a1 - a0) - 2.0 * margin);

    for (int z = b.z0; z < b.z1; ++z)
      for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) {
          const double a = axis == 0 ? x : y;
          const double dist = std::abs(a - center);
          if (dist <= gap_half_vox) {
            r.image.at(x, y, z) = kSoftTissueHu;
          } else if (dist <= gap_half_vox + 1.0) {
            // Exposed fracture surface: cortical-bright cross section.
            r.image.at(x, y, z) = kCorticalHu;
          }
        }

    Annotation ann;
    ann.patient_id = "phantom";
    ann.process_label = b.label;
    const double wx = axis == 0 ? center : 0.5 * (b.x0 + b.x1 - 1);
    const double wy = axis == 1 ? center : 0.5 * (b.y0 + b.y1 - 1);
    const double wz = 0.5 * (b.z0 + b.z1 - 1);
    ann.position = r.image.voxel_to_world(wx, wy, wz);
    r.annotations.push_back(std::move(ann));
  }

  if (spec.noise_sigma_hu > 0.0) {
    Rng noise(derive_seed(spec.seed, "noise"));
    for (auto& hu : r.image.data) {
      const double noisy = hu + noise.normal() * spec.noise_sigma_hu;
      hu = static_cast<int16_t>(
          std::clamp(std::lround(noisy), long{-32768}, long{32767}));
    }
  }
  return r;
}

}  // namespace spinecade
