#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spinecade/image2d.hpp"

namespace spinecade {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

/// Payload element type of a stored volume. Images carry Hounsfield units as
/// int16, masks are uint8. In memory everything is widened to int16_t; the
/// tag keeps save/load bit-exact.
enum class ElementType : uint8_t { int16, uint8 };

/// Dense 3D scalar grid with physical spacing. Storage is x-fastest.
/// Axis convention, fixed project-wide: x = left-to-right,
/// y = posterior-to-anterior, z = inferior-to-superior. An axial plane is a
/// fixed-z slice, sagittal fixed-x, coronal fixed-y.
struct Volume {
  Index3 dims{0, 0, 0};          // nx, ny, nz
  Vec3 spacing{1.0, 1.0, 1.0};   // mm per voxel step
  Vec3 origin{0.0, 0.0, 0.0};    // mm, world position of voxel (0,0,0)
  ElementType elem_type = ElementType::int16;
  std::vector<int16_t> data;     // nx*ny*nz elements

  size_t voxel_count() const {
    return static_cast<size_t>(dims[0]) * dims[1] * dims[2];
  }
  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  int16_t at(int x, int y, int z) const { return data[index(x, y, z)]; }
  int16_t& at(int x, int y, int z) { return data[index(x, y, z)]; }

  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && x < dims[0] && y >= 0 && y < dims[1] && z >= 0 &&
           z < dims[2];
  }

  /// Value at (x,y,z), or `fill` when the index is outside the grid.
  int16_t at_or(int x, int y, int z, int16_t fill) const {
    return in_bounds(x, y, z) ? data[index(x, y, z)] : fill;
  }

  Vec3 voxel_to_world(double x, double y, double z) const {
    return {origin[0] + x * spacing[0], origin[1] + y * spacing[1],
            origin[2] + z * spacing[2]};
  }
  Vec3 world_to_voxel(const Vec3& p) const {
    return {(p[0] - origin[0]) / spacing[0], (p[1] - origin[1]) / spacing[1],
            (p[2] - origin[2]) / spacing[2]};
  }

  /// World-space extent covered by the voxel grid, including the half-voxel
  /// margin around the outermost voxel centers.
  bool world_in_bounds(const Vec3& p) const {
    for (int a = 0; a < 3; ++a) {
      const double lo = origin[a] - 0.5 * spacing[a];
      const double hi = origin[a] + (dims[a] - 0.5) * spacing[a];
      if (p[a] < lo || p[a] > hi) return false;
    }
    return true;
  }

  /// Copies axial slice z into a 2D raster (nx wide, ny tall).
  Image2D<int16_t> axial_slice(int z) const;

  /// Checks dims/spacing/data-length invariants; throws on violation.
  void validate() const;
};

enum class ProcessLabel : uint8_t { left, right, spinous };

const char* process_label_name(ProcessLabel label);
ProcessLabel parse_process_label(const std::string& text);  // throws unknown_label

/// A marked fracture site in world millimeters.
struct Annotation {
  std::string patient_id;
  Vec3 position{0.0, 0.0, 0.0};  // mm
  ProcessLabel process_label = ProcessLabel::spinous;
};

/// Loads a two-file volume: plain-text header (NDims, DimSize,
/// ElementSpacing, Offset, ElementType, ElementDataFile) plus raw
/// little-endian payload next to it.
Volume load_volume(const std::filesystem::path& header_path);

/// Writes header + raw payload such that load_volume inverts bit-exactly.
void save_volume(const Volume& v, const std::filesystem::path& header_path);

/// Reads "patient_id,x_mm,y_mm,z_mm,process_label" rows (header row
/// required) and validates every position against v's bounding box.
std::vector<Annotation> load_annotations(const std::filesystem::path& csv_path,
                                         const Volume& v);

void save_annotations(const std::vector<Annotation>& annotations,
                      const std::filesystem::path& csv_path);

double world_distance(const Vec3& a, const Vec3& b);

}  // namespace spinecade
