#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spinecade/convnet.hpp"
#include "spinecade/evaluation.hpp"
#include "spinecade/patch.hpp"
#include "spinecade/phantom.hpp"

namespace spinecade {

inline constexpr const char* kToolVersion = "spinecade 0.1.0";

/// One case: image + posterior-element mask + fracture annotations.
struct VolumePaths {
  std::string patient_id;
  std::filesystem::path image;
  std::filesystem::path mask;
  std::filesystem::path annotations;
};

/// Settings for generating a train/test suite of phantoms in one run
/// directory (used when no explicit data list is configured).
struct PhantomSuiteConfig {
  Index3 dims{128, 128, 96};
  Vec3 spacing{0.5, 0.5, 1.0};
  int n_vertebrae = 4;
  int train_volumes = 2;
  int test_volumes = 1;
  int fractures_per_volume = 3;
  double gap_width_mm = 3.0;
  double noise_sigma_hu = 20.0;
};

struct EdgeConfig {
  double threshold_percentile = 75.0;
};

struct SamplingConfig {
  Strategy strategy = Strategy::oriented;
  double radius_mm = 5.0;
  size_t target_count = 2000;
  double pos_fraction = 0.33;
  MirrorAxis mirror_axis = MirrorAxis::left_right;
  OrientMode orient_mode = OrientMode::tangent;
  int window_radius = 3;
};

struct EvalConfig {
  double match_radius_mm = 10.0;
  std::vector<double> fp_targets{5.0, 10.0};
  int num_thresholds = 99;
  bool process_mode = false;
  double report_threshold = 0.5;  // detections CSV export
};

struct PipelineConfig {
  uint64_t seed = 1;
  int threads = 1;
  std::filesystem::path output_dir;
  std::optional<PhantomSuiteConfig> phantom;  // unset when data is explicit
  std::vector<VolumePaths> train_data;
  std::vector<VolumePaths> test_data;
  EdgeConfig edges;
  SamplingConfig sampling;
  std::string net = "tiny64";
  std::vector<LayerSpec> net_layers;  // non-empty overrides `net`
  Shape net_input{3, 64, 64};
  TrainConfig train;
  EvalConfig eval;

  /// Canonical JSON of the effective config (after overrides).
  std::string canonical_json;
};

/// Parses and validates a JSON config file. `overrides` are dotted
/// "key.path=value" assignments applied before validation.
PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides = {});
PipelineConfig parse_config_text(const std::string& json_text,
                                 const std::vector<std::string>& overrides = {});

struct EvalSummary {
  double auc = 0.0;
  std::vector<std::pair<double, double>> sens_at;  // (fp_target, sensitivity)
  size_t n_targets = 0;
  size_t n_patients = 0;
};

// Stage commands. Each writes its artifacts under output_dir and updates the
// run manifest; upstream artifacts must exist.
void cmd_phantom(const PipelineConfig& cfg);
void cmd_edges(const PipelineConfig& cfg);
void cmd_sample(const PipelineConfig& cfg);
void cmd_train(const PipelineConfig& cfg);
void cmd_predict(const PipelineConfig& cfg);
EvalSummary cmd_eval(const PipelineConfig& cfg);

/// All six stages in sequence; equivalent to running them one by one.
EvalSummary cmd_run_all(const PipelineConfig& cfg);

/// Runs sample/train/predict/eval for all three strategies on the same data
/// split and writes a side-by-side comparison.
std::map<Strategy, EvalSummary> compare_strategies(const PipelineConfig& cfg);

}  // namespace spinecade
