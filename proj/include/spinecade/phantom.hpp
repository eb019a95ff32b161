#pragma once

#include <cstdint>
#include <vector>

#include "spinecade/volume.hpp"

namespace spinecade {

// Material intensities of the synthetic volumes. With zero noise the image
// contains exactly these values.
inline constexpr int16_t kSoftTissueHu = 40;
inline constexpr int16_t kTrabecularHu = 300;
inline constexpr int16_t kCorticalHu = 1200;

struct PhantomSpec {
  Index3 dims{128, 128, 96};
  Vec3 spacing{0.5, 0.5, 1.0};
  int n_vertebrae = 4;
  int fracture_count = 0;   // at most one per posterior process
  double gap_width_mm = 3.0;
  double noise_sigma_hu = 0.0;
  uint64_t seed = 1;
};

struct PhantomResult {
  Volume image;  // int16 HU
  Volume mask;   // uint8, 1 over the posterior processes
  std::vector<Annotation> annotations;
};

/// Builds a stack of vertebra-like elliptical rings with three box-shaped
/// posterior processes each (left, right, spinous). Every implanted fracture
/// replaces a gap_width_mm span across one process with soft tissue and is
/// recorded as an annotation at the gap center. Deterministic given the
/// seed.
PhantomResult generate_phantom(const PhantomSpec& spec);

}  // namespace spinecade
