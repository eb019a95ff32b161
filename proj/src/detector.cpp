#include "spinecade/detector.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "spinecade/error.hpp"

namespace spinecade {

ProbabilityMap predict_map(ConvNetModel& model, const Volume& v,
                           const EdgeMap& edges, Strategy strategy,
                           const SamplerConfig& cfg, int batch_size,
                           int threads) {
  if (edges.voxels.empty()) fail(Errc::empty_edge_map, "edge map is empty");
  if (batch_size < 1) fail(Errc::config_invalid, "batch_size must be >= 1");

  PatchExtractor extractor(v, cfg);
  if (strategy == Strategy::oriented) extractor.warm_slices(edges);

  ProbabilityMap out;
  out.source_dims = edges.source_dims;
  out.entries.resize(edges.voxels.size());

  const Shape in = model.input_shape();
  const size_t total = edges.voxels.size();
  for (size_t start = 0; start < total; start += batch_size) {
    const size_t end = std::min(total, start + batch_size);
    const int bs = static_cast<int>(end - start);
    Tensor<float> x(bs, in.c, in.h, in.w);

    std::vector<Patch25D> batch(bs);
    parallel_for(static_cast<size_t>(bs), threads, [&](size_t b0, size_t b1) {
      for (size_t b = b0; b < b1; ++b) {
        // Inference never mirrors; mirrored-strategy models see
        // original-aligned patches.
        const Strategy s = strategy == Strategy::mirrored ? Strategy::original
                                                          : strategy;
        batch[b] = extractor.extract(edges.voxels[start + b], s);
      }
    });
    for (int b = 0; b < bs; ++b)
      for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < kPatchSize; ++i)
          for (int j = 0; j < kPatchSize; ++j)
            x.at(b, ch, i, j) = batch[b].planes[ch](j, i);

    const Tensor<float> probs =
        model.forward(x, /*training=*/false, threads);
    for (int b = 0; b < bs; ++b) {
      out.entries[start + b].index = edges.voxels[start + b].index;
      out.entries[start + b].probability =
          static_cast<double>(probs.sample(b)[1]);
    }
  }
  return out;
}

namespace {

uint64_t pack_index(const Index3& i) {
  return (static_cast<uint64_t>(static_cast<uint32_t>(i[2])) << 42) |
         (static_cast<uint64_t>(static_cast<uint32_t>(i[1])) << 21) |
         static_cast<uint64_t>(static_cast<uint32_t>(i[0]));
}

}  // namespace

std::vector<Detection> cluster_detections(const ProbabilityMap& p,
                                          const Volume& v,
                                          double prob_threshold) {
  if (!(prob_threshold > 0.0 && prob_threshold < 1.0))
    fail(Errc::config_invalid, "prob_threshold must be in (0,1)");

  // Deterministic order: sort survivors by (z,y,x) before clustering so the
  // result is invariant to the input entry order.
  std::vector<std::pair<Index3, double>> survivors;
  for (const auto& e : p.entries)
    if (e.probability >= prob_threshold)
      survivors.emplace_back(e.index, e.probability);
  std::sort(survivors.begin(), survivors.end(),
            [](const auto& a, const auto& b) {
              return std::tie(a.first[2], a.first[1], a.first[0]) <
                     std::tie(b.first[2], b.first[1], b.first[0]);
            });

  std::unordered_map<uint64_t, size_t> lookup;
  lookup.reserve(survivors.size());
  for (size_t i = 0; i < survivors.size(); ++i)
    lookup.emplace(pack_index(survivors[i].first), i);

  std::vector<Detection> out;
  std::vector<uint8_t> visited(survivors.size(), 0);
  std::vector<size_t> stack;
  for (size_t seed = 0; seed < survivors.size(); ++seed) {
    if (visited[seed]) continue;
    Detection d;
    double weight_sum = 0.0;
    Vec3 centroid{0.0, 0.0, 0.0};
    stack.assign(1, seed);
    visited[seed] = 1;
    while (!stack.empty()) {
      const size_t cur = stack.back();
      stack.pop_back();
      const auto& [idx, prob] = survivors[cur];
      d.member_voxels.push_back(idx);
      d.score = std::max(d.score, prob);
      const Vec3 wp = v.voxel_to_world(idx[0], idx[1], idx[2]);
      weight_sum += prob;
      for (int a = 0; a < 3; ++a) centroid[a] += prob * wp[a];
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            const Index3 nb{idx[0] + dx, idx[1] + dy, idx[2] + dz};
            const auto it = lookup.find(pack_index(nb));
            if (it != lookup.end() && !visited[it->second]) {
              visited[it->second] = 1;
              stack.push_back(it->second);
            }
          }
    }
    for (int a = 0; a < 3; ++a) centroid[a] /= weight_sum;
    d.position = centroid;
    std::sort(d.member_voxels.begin(), d.member_voxels.end(),
              [](const Index3& a, const Index3& b) {
                return std::tie(a[2], a[1], a[0]) < std::tie(b[2], b[1], b[0]);
              });
    out.push_back(std::move(d));
  }

  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.position[2], a.position[1], a.position[0]) <
           std::tie(b.position[2], b.position[1], b.position[0]);
  });
  return out;
}

void save_probability_map_csv(const ProbabilityMap& p,
                              const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out << "x,y,z,prob\n";
  out.precision(17);
  for (const auto& e : p.entries)
    out << e.index[0] << "," << e.index[1] << "," << e.index[2] << ","
        << e.probability << "\n";
  if (!out) fail(Errc::io_error, "write failed for " + path.string());
}

ProbabilityMap load_probability_map_csv(const std::filesystem::path& path,
                                        Index3 source_dims) {
  std::ifstream in(path);
  if (!in) fail(Errc::missing_file, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "x,y,z,prob")
    fail(Errc::malformed_row, "unexpected probability CSV header");
  ProbabilityMap p;
  p.source_dims = source_dims;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ProbabilityMap::Entry e;
    char comma;
    std::istringstream row(line);
    row >> e.index[0] >> comma >> e.index[1] >> comma >> e.index[2] >> comma >>
        e.probability;
    if (!row) fail(Errc::malformed_row, "bad probability row: " + line);
    p.entries.push_back(e);
  }
  return p;
}

void save_detections_csv(const std::vector<Detection>& detections,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out << "x_mm,y_mm,z_mm,score,n_voxels,matched\n";
  out.precision(17);
  for (const auto& d : detections)
    out << d.position[0] << "," << d.position[1] << "," << d.position[2] << ","
        << d.score << "," << d.member_voxels.size() << ","
        << (d.matched_annotation ? 1 : 0) << "\n";
  if (!out) fail(Errc::io_error, "write failed for " + path.string());
}

}  // namespace spinecade
