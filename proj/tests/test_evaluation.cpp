#include <doctest.h>

#include <cmath>
#include <fstream>

#include "spinecade/evaluation.hpp"
#include "spinecade/rng.hpp"
#include "test_util.hpp"

using namespace spinecade;

namespace {

// O(n^2) pairwise Mann-Whitney statistic with half credit for ties.
double mann_whitney_auc(const std::vector<std::pair<double, bool>>& scores) {
  double wins = 0.0;
  size_t n_pos = 0, n_neg = 0;
  for (const auto& [sp, lp] : scores) {
    if (!lp) continue;
    ++n_pos;
    for (const auto& [sn, ln] : scores) {
      if (ln) continue;
      if (sp > sn)
        wins += 1.0;
      else if (sp == sn)
        wins += 0.5;
    }
  }
  for (const auto& [s, l] : scores)
    if (!l) ++n_neg;
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

Detection det(Vec3 pos, double score) {
  Detection d;
  d.position = pos;
  d.score = score;
  return d;
}

Annotation ann(const std::string& id, Vec3 pos,
               ProcessLabel label = ProcessLabel::spinous) {
  return Annotation{id, pos, label};
}

// Two patients, five detections, three annotations; the matching table below
// is enumerated by hand from the greedy rule.
struct FrocFixture {
  DetectionsByPatient dets;
  AnnotationsByPatient anns;
  std::vector<double> thresholds{0.95, 0.85, 0.75, 0.65, 0.5, 0.3};
};

FrocFixture make_fixture() {
  FrocFixture f;
  f.dets["A"] = {det({1, 0, 0}, 0.9), det({2, 0, 0}, 0.8),
                 det({50, 0, 0}, 0.4)};
  f.dets["B"] = {det({3, 0, 0}, 0.7), det({0, 4, 0}, 0.6)};
  f.anns["A"] = {ann("A", {0, 0, 0}), ann("A", {20, 0, 0})};
  f.anns["B"] = {ann("B", {0, 0, 0})};
  return f;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("perfectly separated scores give AUC 1") {
  std::vector<std::pair<double, bool>> scores;
  for (int i = 0; i < 10; ++i) scores.emplace_back(0.9, true);
  for (int i = 0; i < 15; ++i) scores.emplace_back(0.1, false);
  const RocCurve c = roc(scores);
  CHECK(c.auc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.n_pos == 10);
  CHECK(c.n_neg == 15);
  CHECK(c.points.front() == std::pair{0.0, 0.0});
  CHECK(c.points.back() == std::pair{1.0, 1.0});
}

TEST_CASE("identical scores give AUC one half") {
  std::vector<std::pair<double, bool>> scores;
  for (int i = 0; i < 7; ++i) scores.emplace_back(0.5, true);
  for (int i = 0; i < 9; ++i) scores.emplace_back(0.5, false);
  CHECK(roc(scores).auc == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("roc equals the pairwise Mann-Whitney oracle with ties") {
  Rng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<double, bool>> scores;
    for (int i = 0; i < 200; ++i) {
      // Mix continuous scores with a coarse grid to force cross-class ties.
      const bool coarse = rng.uniform() < 0.5;
      double s = coarse ? std::floor(rng.uniform() * 10.0) / 10.0
                        : rng.uniform();
      const bool label = rng.uniform() < (0.3 + 0.4 * s);
      scores.emplace_back(s, label);
    }
    size_t pos = 0;
    for (const auto& [s, l] : scores) pos += l;
    if (pos == 0 || pos == scores.size()) continue;
    const RocCurve c = roc(scores);
    CHECK(std::abs(c.auc - mann_whitney_auc(scores)) < 1e-12);
  }
}

TEST_CASE("roc points are monotone and the AUC is their trapezoid integral") {
  Rng rng(52);
  std::vector<std::pair<double, bool>> scores;
  for (int i = 0; i < 150; ++i)
    scores.emplace_back(std::floor(rng.uniform() * 20.0) / 20.0,
                        rng.uniform() < 0.4);
  scores.emplace_back(0.5, true);
  scores.emplace_back(0.5, false);
  const RocCurve c = roc(scores);
  double auc = 0.0;
  for (size_t i = 1; i < c.points.size(); ++i) {
    CHECK(c.points[i].first >= c.points[i - 1].first);
    CHECK(c.points[i].second >= c.points[i - 1].second);
    auc += (c.points[i].first - c.points[i - 1].first) * 0.5 *
           (c.points[i].second + c.points[i - 1].second);
  }
  CHECK(std::abs(auc - c.auc) < 1e-12);
}

TEST_CASE("roc input order does not matter") {
  Rng rng(53);
  std::vector<std::pair<double, bool>> scores;
  for (int i = 0; i < 100; ++i)
    scores.emplace_back(rng.uniform(), rng.uniform() < 0.5);
  scores[0].second = true;
  scores[1].second = false;
  const RocCurve a = roc(scores);
  std::reverse(scores.begin(), scores.end());
  const RocCurve b = roc(scores);
  CHECK(a.auc == b.auc);
  CHECK(a.points == b.points);
}

TEST_CASE("single-class roc is rejected") {
  std::vector<std::pair<double, bool>> scores{{0.5, true}, {0.7, true}};
  check_errc(Errc::degenerate_labels, [&] { roc(scores); });
}

TEST_CASE("froc reproduces the hand-computed table") {
  const FrocFixture f = make_fixture();
  const FrocCurve c = froc(f.dets, f.anns, 10.0, f.thresholds);
  CHECK(c.n_targets == 3);
  CHECK(c.n_patients == 2);

  // Hand enumeration, thresholds descending:
  //  t=0.95: nothing fires.
  //  t=0.85: A1 (0.9) matches annotation A(0,0,0).
  //  t=0.75: A2 (0.8) fires; its only in-range annotation is taken -> FP.
  //  t=0.65: B1 (0.7) matches B(0,0,0).
  //  t=0.50: B2 (0.6) fires; B's annotation is taken -> FP.
  //  t=0.30: A3 (0.4) fires far from anything -> FP.
  // Annotation A(20,0,0) is never hit, so sensitivity tops out at 2/3.
  const std::vector<std::pair<double, double>> expected{
      {0.0, 0.0},       {0.0, 1.0 / 3.0}, {0.5, 1.0 / 3.0},
      {0.5, 2.0 / 3.0}, {1.0, 2.0 / 3.0}, {1.5, 2.0 / 3.0}};
  REQUIRE(c.points.size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i) {
    CHECK(c.points[i].first == doctest::Approx(expected[i].first));
    CHECK(c.points[i].second == doctest::Approx(expected[i].second));
  }
}

TEST_CASE("froc examples: exact matches and extra false positives") {
  {
    DetectionsByPatient dets;
    AnnotationsByPatient anns;
    dets["p"] = {det({0, 0, 0}, 0.9), det({20, 0, 0}, 0.9)};
    anns["p"] = {ann("p", {0, 0, 0}), ann("p", {20, 0, 0})};
    const FrocCurve c = froc(dets, anns, 10.0, {0.5});
    REQUIRE(c.points.size() == 1);
    CHECK(c.points[0].second == 1.0);
    CHECK(c.points[0].first == 0.0);
  }
  {
    DetectionsByPatient dets;
    AnnotationsByPatient anns;
    dets["p"] = {det({1, 0, 0}, 0.9), det({30, 0, 0}, 0.8),
                 det({60, 0, 0}, 0.7)};
    anns["p"] = {ann("p", {0, 0, 0})};
    const FrocCurve c = froc(dets, anns, 10.0, {0.5});
    CHECK(c.points[0].second == 1.0);
    CHECK(c.points[0].first == 2.0);
  }
}

TEST_CASE("froc monotonicity along the sweep") {
  const FrocFixture f = make_fixture();
  const FrocCurve c = froc(f.dets, f.anns, 10.0, default_thresholds(99));
  for (size_t i = 1; i < c.points.size(); ++i) {
    CHECK(c.points[i].first >= c.points[i - 1].first);
    CHECK(c.points[i].second >= c.points[i - 1].second);
  }
}

TEST_CASE("duplicating a detection at lower score never hurts sensitivity") {
  FrocFixture f = make_fixture();
  const FrocCurve before = froc(f.dets, f.anns, 10.0, f.thresholds);
  f.dets["A"].push_back(det({1, 0, 0}, 0.55));
  const FrocCurve after = froc(f.dets, f.anns, 10.0, f.thresholds);
  REQUIRE(before.points.size() == after.points.size());
  // Points are sorted by fp rate; compare sensitivities at matching sweep
  // positions via the threshold-ordered construction instead.
  std::vector<double> sens_before, sens_after;
  for (const auto& [fp, s] : before.points) sens_before.push_back(s);
  for (const auto& [fp, s] : after.points) sens_after.push_back(s);
  for (size_t i = 0; i < sens_before.size(); ++i)
    CHECK(sens_after[i] >= sens_before[i] - 1e-12);
}

TEST_CASE("greedy matching prefers the higher-scoring detection") {
  DetectionsByPatient dets;
  AnnotationsByPatient anns;
  // Lower-scoring detection is closer; the higher-scoring one still matches
  // first and the closer one becomes a false positive once taken.
  dets["p"] = {det({5, 0, 0}, 0.9), det({1, 0, 0}, 0.8)};
  anns["p"] = {ann("p", {0, 0, 0})};
  const FrocCurve c = froc(dets, anns, 10.0, {0.5});
  CHECK(c.points[0].second == 1.0);
  CHECK(c.points[0].first == 1.0);

  const auto matched = match_detections(dets["p"], anns["p"], 10.0, 0.5);
  REQUIRE(matched.size() == 2);
  CHECK(matched[0].score == 0.9);
  CHECK(matched[0].matched_annotation.has_value());
  CHECK(!matched[1].matched_annotation.has_value());
}

TEST_CASE("process mode only lets a detection claim its nearest annotation") {
  DetectionsByPatient dets;
  AnnotationsByPatient anns;
  // The detection sits nearest the left-process annotation, which is already
  // matched by a stronger detection; in process mode it may not fall back to
  // the farther spinous annotation.
  dets["p"] = {det({0, 1, 0}, 0.9), det({0, 2, 0}, 0.8)};
  anns["p"] = {ann("p", {0, 0, 0}, ProcessLabel::left),
               ann("p", {0, 8, 0}, ProcessLabel::spinous)};
  const FrocCurve strict = froc(dets, anns, 10.0, {0.5}, /*process_mode=*/true);
  CHECK(strict.points[0].second == doctest::Approx(0.5));
  CHECK(strict.points[0].first == 1.0);
  // Distance mode lets the second detection take the spinous annotation.
  const FrocCurve loose = froc(dets, anns, 10.0, {0.5}, /*process_mode=*/false);
  CHECK(loose.points[0].second == 1.0);
  CHECK(loose.points[0].first == 0.0);
}

TEST_CASE("sensitivity at fp targets") {
  FrocCurve curve;
  curve.points = {{2.0, 0.6}, {7.0, 0.8}};
  CHECK(sensitivity_at_fp(curve, {5.0}) == std::vector<double>{0.6});
  CHECK(sensitivity_at_fp(curve, {1.0}) == std::vector<double>{0.0});
  CHECK(sensitivity_at_fp(curve, {10.0}) == std::vector<double>{0.8});
  CHECK(sensitivity_at_fp(curve, {5.0, 10.0}) ==
        std::vector<double>{0.6, 0.8});
}

TEST_CASE("default threshold sweep spans 0.01 to 0.99") {
  const auto t = default_thresholds(99);
  REQUIRE(t.size() == 99);
  CHECK(t.front() == doctest::Approx(0.01));
  CHECK(t.back() == doctest::Approx(0.99));
}

TEST_CASE("curve CSV export") {
  const auto dir = test_dir("evaluation_csv");
  save_curve_csv({{0.0, 0.0}, {0.5, 0.25}, {1.0, 1.0}}, dir / "c.csv");
  std::ifstream in(dir / "c.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "x,y");
  std::getline(in, line);
  CHECK(line == "0,0");
}

}  // TEST_SUITE
