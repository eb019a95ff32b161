#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <vector>

#include "spinecade/edgemap.hpp"
#include "spinecade/image2d.hpp"
#include "spinecade/orientation.hpp"
#include "spinecade/volume.hpp"

namespace spinecade {

inline constexpr int kPatchSize = 64;
inline constexpr int kPatchCenter = 32;  // pixel index mapped to offset 0

// Bone window applied to every patch value: HU clamped to
// [kWindowLowHu, kWindowHighHu], then mapped linearly onto [0, 1].
inline constexpr double kWindowLowHu = -200.0;
inline constexpr double kWindowHighHu = 1300.0;
inline constexpr double kPadHu = -1000.0;  // air, for out-of-volume samples

// Below this anisotropy the local orientation is treated as meaningless and
// oriented extraction falls back to the unrotated grid.
inline constexpr double kAnisotropyFallback = 0.05;

enum class PatchLabel : uint8_t { non_fracture = 0, fracture = 1 };

/// How a single patch was extracted. In a patch set, mirrored duplicates of
/// positives carry `mirrored`; their theta_used keeps the rotation of the
/// extraction they were flipped from (NaN when unrotated).
enum class Strategy : uint8_t { original = 0, mirrored = 1, oriented = 2 };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& text);  // throws unknown_label

/// Which patch axis a mirror flip reverses.
enum class MirrorAxis : uint8_t { left_right, up_down };

struct SamplerConfig {
  double radius_mm = 5.0;       // positive-label distance to an annotation
  int window_radius = 3;        // structure-tensor window (7x7)
  OrientMode orient_mode = OrientMode::tangent;
  MirrorAxis mirror_axis = MirrorAxis::left_right;
};

/// Three co-centered 64x64 planes (axial, coronal, sagittal) around one edge
/// voxel, windowed to [0,1].
struct Patch25D {
  std::array<Image2D<float>, 3> planes;
  PatchLabel label = PatchLabel::non_fracture;
  Index3 source_index{0, 0, 0};
  Strategy strategy = Strategy::original;
  float theta_used = std::numeric_limits<float>::quiet_NaN();  // NaN = none

  bool operator==(const Patch25D&) const = default;
};

struct PatchSet {
  std::vector<Patch25D> patches;
  size_t positives = 0;
  size_t negatives = 0;
  uint64_t seed = 0;
  // Shortfall report: what the caller asked for vs. what the edge map could
  // supply. delivered == requested unless candidates ran out.
  size_t requested_positives = 0;
  size_t requested_negatives = 0;

  bool shortfall() const {
    return positives < requested_positives || negatives < requested_negatives;
  }
};

float window_hu(double hu);

PatchLabel label_edge_voxel(const EdgeVoxel& e,
                            const std::vector<Annotation>& annotations,
                            const Volume& v, double radius_mm);

Patch25D extract_original(const Volume& v, const EdgeVoxel& e);
Patch25D extract_mirrored(const Volume& v, const EdgeVoxel& e,
                          MirrorAxis axis = MirrorAxis::left_right);
Patch25D extract_oriented(const Volume& v, const EdgeVoxel& e,
                          const EdgeOrientation& orient);

/// Flips every plane of p about the chosen patch axis (left_right reverses
/// columns: j -> 63-j). Involutive. The result is tagged Strategy::mirrored.
Patch25D mirror_patch(const Patch25D& p, MirrorAxis axis = MirrorAxis::left_right);

/// Extracts patches at edge voxels; computes per-slice gradients lazily for
/// oriented extraction and caches them. warm_slices() precomputes the cache
/// so later extract() calls are read-only and thread-safe.
class PatchExtractor {
 public:
  PatchExtractor(const Volume& v, SamplerConfig cfg);

  void warm_slices(const EdgeMap& edges);
  Patch25D extract(const EdgeVoxel& e, Strategy strategy) const;
  EdgeOrientation orientation_at(const EdgeVoxel& e) const;

 private:
  const GradientPair& slice_gradients(int z) const;

  const Volume* volume_;
  SamplerConfig cfg_;
  mutable std::map<int, GradientPair> cache_;
};

/// Samples a labeled patch set from an edge map. Positives are edge voxels
/// within cfg.radius_mm of an annotation, negatives the rest; both are drawn
/// without replacement. For the mirrored and oriented strategies every drawn
/// positive also contributes its mirrored copy, and the pair counts toward
/// the positive quota. Deterministic given (inputs, seed).
PatchSet build_patchset(const Volume& v, const EdgeMap& edges,
                        const std::vector<Annotation>& annotations,
                        Strategy strategy, size_t target_count,
                        double pos_fraction, uint64_t seed,
                        const SamplerConfig& cfg = {});

/// Binary container: magic "P25D", version u32, count u32, then per patch
/// label u8, strategy u8, theta f32 (NaN = none), source index 3xu32,
/// 3x64x64 f32, all little-endian. Planes in axial, coronal, sagittal order.
void save_patchset(const PatchSet& set, const std::filesystem::path& path);
PatchSet load_patchset(const std::filesystem::path& path);

}  // namespace spinecade
