#include "spinecade/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "spinecade/error.hpp"

namespace spinecade {

RocCurve roc(const std::vector<std::pair<double, bool>>& scores) {
  RocCurve curve;
  for (const auto& [s, pos] : scores) (pos ? curve.n_pos : curve.n_neg)++;
  if (curve.n_pos == 0 || curve.n_neg == 0)
    fail(Errc::degenerate_labels, "roc needs both classes");

  std::vector<std::pair<double, bool>> sorted = scores;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  curve.points.emplace_back(0.0, 0.0);
  size_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < sorted.size()) {
    const double s = sorted[i].first;
    while (i < sorted.size() && sorted[i].first == s) {
      (sorted[i].second ? tp : fp)++;
      ++i;
    }
    curve.points.emplace_back(
        static_cast<double>(fp) / static_cast<double>(curve.n_neg),
        static_cast<double>(tp) / static_cast<double>(curve.n_pos));
  }

  double auc = 0.0;
  for (size_t k = 1; k < curve.points.size(); ++k) {
    const auto& [x0, y0] = curve.points[k - 1];
    const auto& [x1, y1] = curve.points[k];
    auc += (x1 - x0) * 0.5 * (y0 + y1);
  }
  curve.auc = auc;
  return curve;
}

namespace {

struct MatchOutcome {
  size_t matched = 0;
  size_t false_positives = 0;
};

// Greedy matching for one patient: detections must already be sorted by
// descending score. Each annotation is claimed at most once.
MatchOutcome match_patient(const std::vector<const Detection*>& dets,
                           const std::vector<Annotation>& anns,
                           double radius_mm, bool process_mode,
                           std::vector<const Annotation*>* matched_with) {
  MatchOutcome out;
  std::vector<uint8_t> taken(anns.size(), 0);
  size_t det_i = 0;
  for (const Detection* d : dets) {
    int best = -1;
    double best_dist = 0.0;
    if (process_mode) {
      // The detection flags whichever process is nearest overall; it may
      // only claim that one.
      for (size_t a = 0; a < anns.size(); ++a) {
        const double dist = world_distance(d->position, anns[a].position);
        if (best < 0 || dist < best_dist) {
          best = static_cast<int>(a);
          best_dist = dist;
        }
      }
      if (best >= 0 && (best_dist > radius_mm || taken[best])) best = -1;
    } else {
      for (size_t a = 0; a < anns.size(); ++a) {
        if (taken[a]) continue;
        const double dist = world_distance(d->position, anns[a].position);
        if (dist > radius_mm) continue;
        if (best < 0 || dist < best_dist) {
          best = static_cast<int>(a);
          best_dist = dist;
        }
      }
    }
    if (best >= 0) {
      taken[best] = 1;
      ++out.matched;
      if (matched_with) (*matched_with)[det_i] = &anns[best];
    } else {
      ++out.false_positives;
    }
    ++det_i;
  }
  return out;
}

std::vector<const Detection*> sorted_pointers(
    const std::vector<Detection>& dets, double threshold) {
  std::vector<const Detection*> out;
  for (const auto& d : dets)
    if (d.score >= threshold) out.push_back(&d);
  std::sort(out.begin(), out.end(), [](const Detection* a, const Detection* b) {
    if (a->score != b->score) return a->score > b->score;
    return std::tie(a->position[2], a->position[1], a->position[0]) <
           std::tie(b->position[2], b->position[1], b->position[0]);
  });
  return out;
}

}  // namespace

FrocCurve froc(const DetectionsByPatient& detections,
               const AnnotationsByPatient& annotations, double match_radius_mm,
               const std::vector<double>& thresholds, bool process_mode) {
  if (!(match_radius_mm > 0.0))
    fail(Errc::config_invalid, "match_radius_mm must be > 0");
  if (thresholds.empty())
    fail(Errc::config_invalid, "thresholds must be non-empty");

  std::set<std::string> patients;
  for (const auto& [id, _] : detections) patients.insert(id);
  for (const auto& [id, _] : annotations) patients.insert(id);

  FrocCurve curve;
  curve.n_patients = patients.size();
  for (const auto& [_, anns] : annotations) curve.n_targets += anns.size();

  static const std::vector<Detection> kNoDetections;
  static const std::vector<Annotation> kNoAnnotations;

  for (const double t : thresholds) {
    size_t matched = 0, fp = 0;
    for (const auto& patient : patients) {
      const auto dit = detections.find(patient);
      const auto ait = annotations.find(patient);
      const auto& dets = dit == detections.end() ? kNoDetections : dit->second;
      const auto& anns =
          ait == annotations.end() ? kNoAnnotations : ait->second;
      const MatchOutcome m = match_patient(sorted_pointers(dets, t), anns,
                                           match_radius_mm, process_mode,
                                           nullptr);
      matched += m.matched;
      fp += m.false_positives;
    }
    const double sens =
        curve.n_targets == 0
            ? 0.0
            : static_cast<double>(matched) / static_cast<double>(curve.n_targets);
    const double fp_rate = curve.n_patients == 0
                               ? 0.0
                               : static_cast<double>(fp) /
                                     static_cast<double>(curve.n_patients);
    curve.points.emplace_back(fp_rate, sens);
  }

  std::sort(curve.points.begin(), curve.points.end());
  return curve;
}

std::vector<Detection> match_detections(const std::vector<Detection>& dets,
                                        const std::vector<Annotation>& anns,
                                        double match_radius_mm,
                                        double threshold, bool process_mode) {
  const auto sorted = sorted_pointers(dets, threshold);
  std::vector<const Annotation*> matched_with(sorted.size(), nullptr);
  match_patient(sorted, anns, match_radius_mm, process_mode, &matched_with);
  std::vector<Detection> out;
  out.reserve(sorted.size());
  for (size_t i = 0; i < sorted.size(); ++i) {
    Detection d = *sorted[i];
    if (matched_with[i]) d.matched_annotation = *matched_with[i];
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<double> sensitivity_at_fp(const FrocCurve& curve,
                                      const std::vector<double>& fp_targets) {
  std::vector<double> out;
  out.reserve(fp_targets.size());
  for (const double target : fp_targets) {
    double best = 0.0;
    for (const auto& [fp, sens] : curve.points)
      if (fp <= target) best = std::max(best, sens);
    out.push_back(best);
  }
  return out;
}

std::vector<double> default_thresholds(int n) {
  std::vector<double> out;
  out.reserve(n);
  for (int i = 1; i <= n; ++i)
    out.push_back(static_cast<double>(i) / (n + 1));
  return out;
}

void save_curve_csv(const std::vector<std::pair<double, double>>& points,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out << "x,y\n";
  out.precision(17);
  for (const auto& [x, y] : points) out << x << "," << y << "\n";
  if (!out) fail(Errc::io_error, "write failed for " + path.string());
}

}  // namespace spinecade
