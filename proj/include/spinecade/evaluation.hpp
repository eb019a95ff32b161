#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spinecade/detector.hpp"
#include "spinecade/volume.hpp"

namespace spinecade {

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr), sorted
  double auc = 0.0;
  size_t n_pos = 0;
  size_t n_neg = 0;
};

struct FrocCurve {
  std::vector<std::pair<double, double>> points;  // (fp_per_patient, sens)
  size_t n_targets = 0;
  size_t n_patients = 0;
};

/// Threshold-sweep ROC over (probability, is_positive) samples. Equal scores
/// collapse into a single step, so the trapezoidal AUC equals the
/// Mann-Whitney statistic with half credit for ties.
RocCurve roc(const std::vector<std::pair<double, bool>>& scores);

using DetectionsByPatient = std::map<std::string, std::vector<Detection>>;
using AnnotationsByPatient = std::map<std::string, std::vector<Annotation>>;

/// FROC over a threshold sweep. Per threshold and patient, detections with
/// score >= threshold are matched greedily in descending-score order to the
/// nearest unmatched annotation within match_radius_mm; the rest are false
/// positives. With process_mode a detection may only claim the annotation
/// nearest to it overall, i.e. the process it actually flags.
FrocCurve froc(const DetectionsByPatient& detections,
               const AnnotationsByPatient& annotations, double match_radius_mm,
               const std::vector<double>& thresholds,
               bool process_mode = false);

/// Max sensitivity among curve points with fp_per_patient <= target
/// (no interpolation); 0 when no point qualifies.
std::vector<double> sensitivity_at_fp(const FrocCurve& curve,
                                      const std::vector<double>& fp_targets);

/// One-threshold view of the froc matching rule: returns the detections with
/// score >= threshold, sorted as matched, with matched_annotation filled.
std::vector<Detection> match_detections(const std::vector<Detection>& dets,
                                        const std::vector<Annotation>& anns,
                                        double match_radius_mm,
                                        double threshold,
                                        bool process_mode = false);

/// n evenly spaced thresholds 1/(n+1) .. n/(n+1); n = 99 gives 0.01 .. 0.99.
std::vector<double> default_thresholds(int n = 99);

void save_curve_csv(const std::vector<std::pair<double, double>>& points,
                    const std::filesystem::path& path);

}  // namespace spinecade
