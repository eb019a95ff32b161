#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "spinecade/convnet.hpp"
#include "spinecade/edgemap.hpp"
#include "spinecade/patch.hpp"
#include "spinecade/volume.hpp"

namespace spinecade {

/// Fracture probability at every edge voxel, in edge-map order.
struct ProbabilityMap {
  struct Entry {
    Index3 index{0, 0, 0};
    double probability = 0.0;
  };
  std::vector<Entry> entries;
  Index3 source_dims{0, 0, 0};
};

/// A clustered candidate for FROC scoring.
struct Detection {
  Vec3 position{0.0, 0.0, 0.0};  // mm, probability-weighted centroid
  double score = 0.0;            // max probability inside the cluster
  std::vector<Index3> member_voxels;
  std::optional<Annotation> matched_annotation;
};

/// Applies a trained model along the edge map: per edge voxel, the
/// strategy's patch (never mirrored at inference) and the fracture-class
/// probability. Per-voxel arithmetic is independent of batching, so any
/// batch size yields bit-identical results.
ProbabilityMap predict_map(ConvNetModel& model, const Volume& v,
                           const EdgeMap& edges, Strategy strategy,
                           const SamplerConfig& cfg = {}, int batch_size = 64,
                           int threads = 1);

/// Groups voxels with probability >= prob_threshold into 26-connected
/// components; one detection per component, sorted by descending score with
/// ties broken by centroid (z,y,x).
std::vector<Detection> cluster_detections(const ProbabilityMap& p,
                                          const Volume& v,
                                          double prob_threshold);

/// CSV "x,y,z,prob".
void save_probability_map_csv(const ProbabilityMap& p,
                              const std::filesystem::path& path);
ProbabilityMap load_probability_map_csv(const std::filesystem::path& path,
                                        Index3 source_dims);

/// CSV "x_mm,y_mm,z_mm,score,n_voxels,matched".
void save_detections_csv(const std::vector<Detection>& detections,
                         const std::filesystem::path& path);

}  // namespace spinecade
