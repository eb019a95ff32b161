#include "spinecade/patch.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include "spinecade/error.hpp"
#include "spinecade/rng.hpp"

namespace spinecade {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::original: return "original";
    case Strategy::mirrored: return "mirrored";
    case Strategy::oriented: return "oriented";
  }
  return "?";
}

Strategy parse_strategy(const std::string& text) {
  if (text == "original") return Strategy::original;
  if (text == "mirrored") return Strategy::mirrored;
  if (text == "oriented") return Strategy::oriented;
  fail(Errc::unknown_label, "unknown strategy '" + text + "'");
}

float window_hu(double hu) {
  const double clamped = std::clamp(hu, kWindowLowHu, kWindowHighHu);
  return static_cast<float>((clamped - kWindowLowHu) /
                            (kWindowHighHu - kWindowLowHu));
}

PatchLabel label_edge_voxel(const EdgeVoxel& e,
                            const std::vector<Annotation>& annotations,
                            const Volume& v, double radius_mm) {
  const Vec3 p = v.voxel_to_world(e.index[0], e.index[1], e.index[2]);
  for (const auto& a : annotations)
    if (world_distance(p, a.position) <= radius_mm)
      return PatchLabel::fracture;
  return PatchLabel::non_fracture;
}

namespace {

double sample_hu(const Volume& v, int x, int y, int z) {
  return static_cast<double>(
      v.at_or(x, y, z, static_cast<int16_t>(kPadHu)));
}

// Bilinear in-plane sample of axial slice z at continuous voxel coordinates.
// Out-of-volume taps read as air. Exact at integer coordinates.
double sample_axial_bilinear(const Volume& v, double px, double py, int z) {
  const double fx0 = std::floor(px);
  const double fy0 = std::floor(py);
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  const double fx = px - fx0;
  const double fy = py - fy0;
  const double v00 = sample_hu(v, x0, y0, z);
  const double v10 = sample_hu(v, x0 + 1, y0, z);
  const double v01 = sample_hu(v, x0, y0 + 1, z);
  const double v11 = sample_hu(v, x0 + 1, y0 + 1, z);
  return v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) +
         v01 * (1.0 - fx) * fy + v11 * fx * fy;
}

}  // namespace

Patch25D extract_original(const Volume& v, const EdgeVoxel& e) {
  Patch25D p;
  p.source_index = e.index;
  p.strategy = Strategy::original;
  const int ex = e.index[0], ey = e.index[1], ez = e.index[2];
  for (auto& plane : p.planes)
    plane = Image2D<float>(kPatchSize, kPatchSize);
  for (int i = 0; i < kPatchSize; ++i) {
    const int dv = i - kPatchCenter;
    for (int j = 0; j < kPatchSize; ++j) {
      const int du = j - kPatchCenter;
      p.planes[0](j, i) = window_hu(sample_hu(v, ex + du, ey + dv, ez));
      p.planes[1](j, i) = window_hu(sample_hu(v, ex + du, ey, ez + dv));
      p.planes[2](j, i) = window_hu(sample_hu(v, ex, ey + du, ez + dv));
    }
  }
  return p;
}

Patch25D mirror_patch(const Patch25D& p, MirrorAxis axis) {
  Patch25D m = p;
  m.strategy = Strategy::mirrored;
  for (int plane = 0; plane < 3; ++plane) {
    for (int i = 0; i < kPatchSize; ++i)
      for (int j = 0; j < kPatchSize; ++j)
        m.planes[plane](j, i) = axis == MirrorAxis::left_right
                                    ? p.planes[plane](kPatchSize - 1 - j, i)
                                    : p.planes[plane](j, kPatchSize - 1 - i);
  }
  return m;
}

Patch25D extract_mirrored(const Volume& v, const EdgeVoxel& e,
                          MirrorAxis axis) {
  return mirror_patch(extract_original(v, e), axis);
}

Patch25D extract_oriented(const Volume& v, const EdgeVoxel& e,
                          const EdgeOrientation& orient) {
  if (orient.anisotropy < kAnisotropyFallback) {
    Patch25D p = extract_original(v, e);
    p.strategy = Strategy::oriented;
    return p;  // theta_used stays NaN
  }

  Patch25D p = extract_original(v, e);  // coronal/sagittal stay axis-aligned
  p.strategy = Strategy::oriented;
  p.theta_used = static_cast<float>(orient.theta);

  // Resample the axial plane on a grid rotated by theta about e, so the
  // oriented axis maps onto the patch's horizontal axis. Rotation is in
  // voxel units (native in-plane resolution).
  const double c = std::cos(orient.theta);
  const double s = std::sin(orient.theta);
  const int ex = e.index[0], ey = e.index[1], ez = e.index[2];
  for (int i = 0; i < kPatchSize; ++i) {
    const double dv = i - kPatchCenter;
    for (int j = 0; j < kPatchSize; ++j) {
      const double du = j - kPatchCenter;
      const double px = ex + du * c - dv * s;
      const double py = ey + du * s + dv * c;
      p.planes[0](j, i) = window_hu(sample_axial_bilinear(v, px, py, ez));
    }
  }
  return p;
}

PatchExtractor::PatchExtractor(const Volume& v, SamplerConfig cfg)
    : volume_(&v), cfg_(cfg) {}

const GradientPair& PatchExtractor::slice_gradients(int z) const {
  auto it = cache_.find(z);
  if (it == cache_.end())
    it = cache_.emplace(z, sobel_slice(volume_->axial_slice(z))).first;
  return it->second;
}

void PatchExtractor::warm_slices(const EdgeMap& edges) {
  std::set<int> zs;
  for (const auto& e : edges.voxels) zs.insert(e.index[2]);
  for (const int z : zs) slice_gradients(z);
}

EdgeOrientation PatchExtractor::orientation_at(const EdgeVoxel& e) const {
  const auto& g = slice_gradients(e.index[2]);
  const SymMat2 t = structure_tensor(g.gx, g.gy, e.index[0], e.index[1],
                                     cfg_.window_radius);
  return principal_orientation(t, cfg_.orient_mode);
}

Patch25D PatchExtractor::extract(const EdgeVoxel& e, Strategy strategy) const {
  switch (strategy) {
    case Strategy::original:
      return extract_original(*volume_, e);
    case Strategy::mirrored:
      return extract_mirrored(*volume_, e, cfg_.mirror_axis);
    case Strategy::oriented:
      return extract_oriented(*volume_, e, orientation_at(e));
  }
  fail(Errc::unknown_label, "bad strategy");
}

PatchSet build_patchset(const Volume& v, const EdgeMap& edges,
                        const std::vector<Annotation>& annotations,
                        Strategy strategy, size_t target_count,
                        double pos_fraction, uint64_t seed,
                        const SamplerConfig& cfg) {
  if (edges.voxels.empty()) fail(Errc::empty_edge_map, "edge map is empty");
  if (target_count == 0)
    fail(Errc::config_invalid, "target_count must be > 0");
  if (!(pos_fraction > 0.0 && pos_fraction < 1.0))
    fail(Errc::config_invalid, "pos_fraction must be in (0,1)");

  // Edge voxels are already in deterministic (z,y,x) order.
  std::vector<size_t> pos_idx, neg_idx;
  for (size_t i = 0; i < edges.voxels.size(); ++i) {
    const PatchLabel label =
        label_edge_voxel(edges.voxels[i], annotations, v, cfg.radius_mm);
    (label == PatchLabel::fracture ? pos_idx : neg_idx).push_back(i);
  }

  const size_t want_pos = static_cast<size_t>(
      std::llround(static_cast<double>(target_count) * pos_fraction));
  const size_t want_neg = target_count - want_pos;
  if (want_pos > 0 && pos_idx.empty())
    fail(Errc::no_positives, "edge map has no fracture-labeled voxels");

  // Mirrored/oriented strategies emit (patch, mirror) pairs per drawn
  // positive, each pair counting two toward the positive quota.
  const bool with_mirrors = strategy != Strategy::original;
  const size_t draw_pos =
      std::min(pos_idx.size(), with_mirrors ? (want_pos + 1) / 2 : want_pos);
  const size_t draw_neg = std::min(neg_idx.size(), want_neg);

  Rng rng(derive_seed(seed, strategy_name(strategy)));
  auto draw_without_replacement = [&rng](std::vector<size_t>& from, size_t k) {
    for (size_t i = 0; i < k; ++i) {
      const size_t j = i + rng.index(from.size() - i);
      std::swap(from[i], from[j]);
    }
    from.resize(k);
    return from;
  };
  draw_without_replacement(pos_idx, draw_pos);
  draw_without_replacement(neg_idx, draw_neg);

  PatchSet set;
  set.seed = seed;
  set.requested_positives = want_pos;
  set.requested_negatives = want_neg;

  // Base alignment: the mirrored strategy extracts original-aligned patches
  // and only adds flipped copies of positives; the oriented strategy rotates
  // the base extraction as well.
  const Strategy base = strategy == Strategy::oriented ? Strategy::oriented
                                                       : Strategy::original;
  PatchExtractor extractor(v, cfg);
  for (const size_t i : pos_idx) {
    Patch25D p = extractor.extract(edges.voxels[i], base);
    p.label = PatchLabel::fracture;
    set.patches.push_back(p);
    ++set.positives;
    if (with_mirrors && set.positives < want_pos) {
      set.patches.push_back(mirror_patch(p, cfg.mirror_axis));
      set.patches.back().label = PatchLabel::fracture;
      ++set.positives;
    }
  }
  for (const size_t i : neg_idx) {
    Patch25D p = extractor.extract(edges.voxels[i], base);
    p.label = PatchLabel::non_fracture;
    set.patches.push_back(p);
    ++set.negatives;
  }
  return set;
}

namespace {

template <class T>
void put(std::string& out, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(T));
}

template <class T>
T take(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size())
    fail(Errc::size_mismatch, "patch set file truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

constexpr uint32_t kPatchSetVersion = 1;

}  // namespace

void save_patchset(const PatchSet& set, const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(16 + set.patches.size() * (10 + 14 + 3 * 64 * 64 * 4));
  buf.append("P25D", 4);
  put(buf, kPatchSetVersion);
  put(buf, static_cast<uint32_t>(set.patches.size()));
  for (const auto& p : set.patches) {
    put(buf, static_cast<uint8_t>(p.label));
    put(buf, static_cast<uint8_t>(p.strategy));
    put(buf, p.theta_used);
    for (int a = 0; a < 3; ++a)
      put(buf, static_cast<uint32_t>(p.source_index[a]));
    for (const auto& plane : p.planes)
      buf.append(reinterpret_cast<const char*>(plane.data().data()),
                 plane.size() * sizeof(float));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(Errc::io_error, "write failed for " + path.string());
}

PatchSet load_patchset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::missing_file, "cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());

  size_t pos = 0;
  if (buf.size() < 12 || buf.compare(0, 4, "P25D") != 0)
    fail(Errc::version_mismatch, "not a patch set file: " + path.string());
  pos = 4;
  if (take<uint32_t>(buf, pos) != kPatchSetVersion)
    fail(Errc::version_mismatch, "unsupported patch set version");
  const uint32_t count = take<uint32_t>(buf, pos);

  PatchSet set;
  set.patches.reserve(count);
  for (uint32_t k = 0; k < count; ++k) {
    Patch25D p;
    p.label = static_cast<PatchLabel>(take<uint8_t>(buf, pos));
    p.strategy = static_cast<Strategy>(take<uint8_t>(buf, pos));
    p.theta_used = take<float>(buf, pos);
    for (int a = 0; a < 3; ++a)
      p.source_index[a] = static_cast<int>(take<uint32_t>(buf, pos));
    for (auto& plane : p.planes) {
      plane = Image2D<float>(kPatchSize, kPatchSize);
      const size_t bytes = plane.size() * sizeof(float);
      if (pos + bytes > buf.size())
        fail(Errc::size_mismatch, "patch set file truncated");
      std::memcpy(plane.data().data(), buf.data() + pos, bytes);
      pos += bytes;
    }
    if (p.label == PatchLabel::fracture)
      ++set.positives;
    else
      ++set.negatives;
    set.patches.push_back(std::move(p));
  }
  set.requested_positives = set.positives;
  set.requested_negatives = set.negatives;
  return set;
}

}  // namespace spinecade
