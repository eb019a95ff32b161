#include "spinecade/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "spinecade/detector.hpp"
#include "spinecade/edgemap.hpp"
#include "spinecade/error.hpp"

namespace spinecade {

using json = nlohmann::json;

namespace {

std::string crc32_hex(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size()));
  char out[16];
  std::snprintf(out, sizeof(out), "%08lx", static_cast<unsigned long>(crc));
  return out;
}

std::string crc32_of_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot hash " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return crc32_hex(bytes);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out << text;
  if (!out) fail(Errc::io_error, "write failed for " + path.string());
}

// One process per run directory, enforced with an exclusively created lock
// file that is removed when the command finishes.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir)
      : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      fail(Errc::run_locked,
           "run directory is locked (" + path_.string() + " exists)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  fail(Errc::config_invalid, field + ": " + why);
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback,
         const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad_field(ctx + key, "wrong type");
  }
}

OrientMode parse_orient_mode(const std::string& s) {
  if (s == "tangent") return OrientMode::tangent;
  if (s == "gradient") return OrientMode::gradient;
  bad_field("sampling.orient_mode", "must be 'tangent' or 'gradient'");
}

MirrorAxis parse_mirror_axis(const std::string& s) {
  if (s == "leftright") return MirrorAxis::left_right;
  if (s == "updown") return MirrorAxis::up_down;
  bad_field("sampling.mirror_axis", "must be 'leftright' or 'updown'");
}

LayerSpec parse_layer(const json& j, const std::string& ctx) {
  const std::string kind = get_or<std::string>(j, "kind", "", ctx);
  if (kind == "conv")
    return LayerSpec::conv(get_or<int>(j, "in_channels", 0, ctx),
                           get_or<int>(j, "out_channels", 0, ctx),
                           get_or<int>(j, "kernel_size", 3, ctx),
                           get_or<int>(j, "stride", 1, ctx),
                           get_or<int>(j, "padding", 0, ctx));
  if (kind == "max_pool")
    return LayerSpec::max_pool(get_or<int>(j, "window", 2, ctx),
                               get_or<int>(j, "stride", 2, ctx));
  if (kind == "fully_connected")
    return LayerSpec::fully_connected(get_or<int>(j, "in_dim", 0, ctx),
                                      get_or<int>(j, "out_dim", 0, ctx));
  if (kind == "relu") return LayerSpec::relu();
  if (kind == "dropout")
    return LayerSpec::dropout(get_or<double>(j, "keep_prob", 0.5, ctx));
  if (kind == "softmax") return LayerSpec::softmax();
  bad_field(ctx + "kind", "unknown layer kind '" + kind + "'");
}

std::vector<VolumePaths> parse_data_list(const json& arr,
                                         const std::string& ctx) {
  std::vector<VolumePaths> out;
  size_t i = 0;
  for (const auto& item : arr) {
    const std::string ictx = ctx + "[" + std::to_string(i) + "].";
    VolumePaths v;
    auto path_field = [&](const char* key, std::filesystem::path& dest) {
      if (!item.contains(key)) bad_field(ictx + key, "missing");
      dest = item.at(key).get<std::string>();
      if (!std::filesystem::exists(dest))
        bad_field(ictx + key, "file not found: " + dest.string());
    };
    path_field("image", v.image);
    path_field("mask", v.mask);
    path_field("annotations", v.annotations);
    v.patient_id =
        get_or<std::string>(item, "patient_id", v.image.stem().string(), ictx);
    out.push_back(std::move(v));
    ++i;
  }
  return out;
}

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    bad_field("--set", "expected key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json* node = &root;
  std::istringstream keys(path);
  std::string key;
  std::vector<std::string> parts;
  while (std::getline(keys, key, '.')) parts.push_back(key);
  if (parts.empty()) bad_field("--set", "empty key path");
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];

  json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded()) parsed = value;  // plain string
  (*node)[parts.back()] = parsed;
}

json effective_config_json(const std::string& text,
                           const std::vector<std::string>& overrides) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded())
    fail(Errc::config_invalid, "config is not valid JSON");
  for (const auto& o : overrides) apply_override(j, o);
  return j;
}

}  // namespace

PipelineConfig parse_config_text(const std::string& json_text,
                                 const std::vector<std::string>& overrides) {
  const json j = effective_config_json(json_text, overrides);
  PipelineConfig cfg;

  cfg.seed = get_or<uint64_t>(j, "seed", 1, "");
  cfg.threads = get_or<int>(j, "threads", 1, "");
  if (cfg.threads < 1) bad_field("threads", "must be >= 1");
  const std::string out_dir = get_or<std::string>(j, "output_dir", "", "");
  if (out_dir.empty()) bad_field("output_dir", "missing");
  cfg.output_dir = out_dir;

  if (j.contains("data") && j.contains("phantom"))
    bad_field("data", "specify either data or phantom, not both");
  if (j.contains("data")) {
    const json& d = j.at("data");
    if (!d.contains("train")) bad_field("data.train", "missing");
    if (!d.contains("test")) bad_field("data.test", "missing");
    cfg.train_data = parse_data_list(d.at("train"), "data.train");
    cfg.test_data = parse_data_list(d.at("test"), "data.test");
    if (cfg.train_data.empty()) bad_field("data.train", "must be non-empty");
    if (cfg.test_data.empty()) bad_field("data.test", "must be non-empty");
  } else {
    PhantomSuiteConfig p;
    if (j.contains("phantom")) {
      const json& pj = j.at("phantom");
      const std::string ctx = "phantom.";
      if (pj.contains("dims")) {
        const auto d = pj.at("dims").get<std::vector<int>>();
        if (d.size() != 3) bad_field("phantom.dims", "needs 3 values");
        p.dims = {d[0], d[1], d[2]};
      }
      if (pj.contains("spacing")) {
        const auto s = pj.at("spacing").get<std::vector<double>>();
        if (s.size() != 3) bad_field("phantom.spacing", "needs 3 values");
        p.spacing = {s[0], s[1], s[2]};
      }
      p.n_vertebrae = get_or<int>(pj, "n_vertebrae", p.n_vertebrae, ctx);
      p.train_volumes = get_or<int>(pj, "train_volumes", p.train_volumes, ctx);
      p.test_volumes = get_or<int>(pj, "test_volumes", p.test_volumes, ctx);
      p.fractures_per_volume =
          get_or<int>(pj, "fractures_per_volume", p.fractures_per_volume, ctx);
      p.gap_width_mm = get_or<double>(pj, "gap_width_mm", p.gap_width_mm, ctx);
      p.noise_sigma_hu =
          get_or<double>(pj, "noise_sigma_hu", p.noise_sigma_hu, ctx);
      if (p.train_volumes < 1) bad_field("phantom.train_volumes", "must be >= 1");
      if (p.test_volumes < 1) bad_field("phantom.test_volumes", "must be >= 1");
    }
    cfg.phantom = p;
  }

  if (j.contains("edges")) {
    cfg.edges.threshold_percentile = get_or<double>(
        j.at("edges"), "threshold_percentile", 75.0, "edges.");
    if (!(cfg.edges.threshold_percentile > 0.0 &&
          cfg.edges.threshold_percentile < 100.0))
      bad_field("edges.threshold_percentile", "must be in (0,100)");
  }

  if (j.contains("sampling")) {
    const json& s = j.at("sampling");
    const std::string ctx = "sampling.";
    try {
      cfg.sampling.strategy =
          parse_strategy(get_or<std::string>(s, "strategy", "oriented", ctx));
    } catch (const Error& e) {
      bad_field("sampling.strategy", e.what());
    }
    cfg.sampling.radius_mm = get_or<double>(s, "radius_mm", 5.0, ctx);
    cfg.sampling.target_count = get_or<size_t>(s, "target_count", 2000, ctx);
    cfg.sampling.pos_fraction = get_or<double>(s, "pos_fraction", 0.33, ctx);
    cfg.sampling.mirror_axis = parse_mirror_axis(
        get_or<std::string>(s, "mirror_axis", "leftright", ctx));
    cfg.sampling.orient_mode = parse_orient_mode(
        get_or<std::string>(s, "orient_mode", "tangent", ctx));
    cfg.sampling.window_radius = get_or<int>(s, "window_radius", 3, ctx);
    if (!(cfg.sampling.radius_mm > 0.0))
      bad_field("sampling.radius_mm", "must be > 0");
    if (!(cfg.sampling.pos_fraction > 0.0 && cfg.sampling.pos_fraction < 1.0))
      bad_field("sampling.pos_fraction", "must be in (0,1)");
    if (cfg.sampling.window_radius < 1)
      bad_field("sampling.window_radius", "must be >= 1");
  }

  cfg.net = get_or<std::string>(j, "net", "tiny64", "");
  if (j.contains("net_layers")) {
    size_t i = 0;
    for (const auto& lj : j.at("net_layers")) {
      cfg.net_layers.push_back(
          parse_layer(lj, "net_layers[" + std::to_string(i) + "]."));
      ++i;
    }
    if (j.contains("net_input")) {
      const auto d = j.at("net_input").get<std::vector<int>>();
      if (d.size() != 3) bad_field("net_input", "needs [c,h,w]");
      cfg.net_input = Shape{d[0], d[1], d[2]};
    }
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    const std::string ctx = "train.";
    cfg.train.learning_rate = get_or<double>(t, "learning_rate", 0.01, ctx);
    cfg.train.momentum = get_or<double>(t, "momentum", 0.9, ctx);
    cfg.train.batch_size = get_or<int>(t, "batch_size", 32, ctx);
    cfg.train.epochs = get_or<int>(t, "epochs", 1, ctx);
    cfg.train.weight_decay = get_or<double>(t, "weight_decay", 0.0, ctx);
  }
  cfg.train.seed = cfg.seed;
  cfg.train.threads = cfg.threads;

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    const std::string ctx = "eval.";
    cfg.eval.match_radius_mm = get_or<double>(e, "match_radius_mm", 10.0, ctx);
    if (e.contains("fp_targets"))
      cfg.eval.fp_targets = e.at("fp_targets").get<std::vector<double>>();
    cfg.eval.num_thresholds = get_or<int>(e, "num_thresholds", 99, ctx);
    cfg.eval.process_mode = get_or<bool>(e, "process_mode", false, ctx);
    cfg.eval.report_threshold =
        get_or<double>(e, "report_threshold", 0.5, ctx);
    if (!(cfg.eval.match_radius_mm > 0.0))
      bad_field("eval.match_radius_mm", "must be > 0");
    if (cfg.eval.num_thresholds < 1)
      bad_field("eval.num_thresholds", "must be >= 1");
    if (cfg.eval.fp_targets.empty())
      bad_field("eval.fp_targets", "must be non-empty");
  }

  cfg.canonical_json = j.dump();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) fail(Errc::config_invalid, "cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text, overrides);
}

namespace {

struct RunPaths {
  std::filesystem::path data, edges, patches, models, probmaps, eval;
};

RunPaths run_paths(const PipelineConfig& cfg) {
  const auto& o = cfg.output_dir;
  return {o / "data", o / "edges",    o / "patches",
          o / "models", o / "probmaps", o / "eval"};
}

std::string volume_id(bool train, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%02d", train ? "train" : "test", i);
  return buf;
}

// Data resolution: explicit data lists win, otherwise the phantom outputs in
// this run directory.
std::vector<VolumePaths> resolve_data(const PipelineConfig& cfg, bool train) {
  const auto& given = train ? cfg.train_data : cfg.test_data;
  if (!given.empty()) return given;
  const PhantomSuiteConfig& p = *cfg.phantom;
  const auto dir = run_paths(cfg).data;
  std::vector<VolumePaths> out;
  const int count = train ? p.train_volumes : p.test_volumes;
  for (int i = 0; i < count; ++i) {
    const std::string id = volume_id(train, i);
    out.push_back(VolumePaths{id, dir / (id + "_image.mhd"),
                              dir / (id + "_mask.mhd"),
                              dir / (id + "_annotations.csv")});
  }
  return out;
}

void require_exists(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::exists(p))
    fail(Errc::missing_upstream_artifact,
         what + " not found: " + p.string() + " (run the upstream stage first)");
}

// The manifest accumulates stage records; everything in it is deterministic
// for a given config and inputs.
void update_manifest(const PipelineConfig& cfg, const std::string& stage,
                     const std::map<std::string, std::string>& input_hashes) {
  const auto path = cfg.output_dir / "manifest.json";
  json m;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    m = json::parse(std::string((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>()),
                    nullptr, false);
    if (m.is_discarded()) m = json::object();
  }
  m["tool_version"] = kToolVersion;
  m["seed"] = cfg.seed;
  m["config_hash"] = crc32_hex(cfg.canonical_json);
  if (!m.contains("inputs")) m["inputs"] = json::object();
  for (const auto& [k, v] : input_hashes) m["inputs"][k] = v;
  if (!m.contains("stages")) m["stages"] = json::array();
  bool seen = false;
  for (const auto& s : m["stages"])
    if (s == stage) seen = true;
  if (!seen) m["stages"].push_back(stage);
  write_text(path, m.dump(2) + "\n");
}

std::filesystem::path edge_csv_path(const PipelineConfig& cfg,
                                    const std::string& id) {
  return run_paths(cfg).edges / (id + "_edges.csv");
}
std::filesystem::path edge_meta_path(const PipelineConfig& cfg,
                                     const std::string& id) {
  return run_paths(cfg).edges / (id + "_edges.json");
}
std::filesystem::path patchset_path(const PipelineConfig& cfg, Strategy s) {
  return run_paths(cfg).patches /
         (std::string("train_") + strategy_name(s) + ".p25d");
}
std::filesystem::path model_path(const PipelineConfig& cfg, Strategy s) {
  return run_paths(cfg).models / (std::string(strategy_name(s)) + ".cnet");
}
std::filesystem::path probmap_path(const PipelineConfig& cfg,
                                   const std::string& id, Strategy s) {
  return run_paths(cfg).probmaps /
         (id + "_" + strategy_name(s) + ".csv");
}

EdgeMap load_edges_for(const PipelineConfig& cfg, const std::string& id) {
  const auto csv = edge_csv_path(cfg, id);
  const auto meta = edge_meta_path(cfg, id);
  require_exists(csv, "edge map for " + id);
  require_exists(meta, "edge metadata for " + id);
  std::ifstream in(meta);
  const json mj = json::parse(std::string((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>()));
  const auto d = mj.at("dims").get<std::vector<int>>();
  return load_edge_map_csv(csv, Index3{d[0], d[1], d[2]},
                           mj.at("threshold_used").get<double>());
}

ConvNetModel build_network(const PipelineConfig& cfg) {
  if (!cfg.net_layers.empty())
    return ConvNetModel(cfg.net_input, cfg.net_layers,
                        derive_seed(cfg.seed, "net"));
  return ConvNetModel(architecture_input(cfg.net), make_architecture(cfg.net),
                      derive_seed(cfg.seed, "net"));
}

SamplerConfig sampler_config(const PipelineConfig& cfg) {
  SamplerConfig s;
  s.radius_mm = cfg.sampling.radius_mm;
  s.window_radius = cfg.sampling.window_radius;
  s.orient_mode = cfg.sampling.orient_mode;
  s.mirror_axis = cfg.sampling.mirror_axis;
  return s;
}

void do_sample(const PipelineConfig& cfg, Strategy strategy);
void do_train(const PipelineConfig& cfg, Strategy strategy);
void do_predict(const PipelineConfig& cfg, Strategy strategy);
EvalSummary do_eval(const PipelineConfig& cfg, Strategy strategy,
                    bool write_summary);

}  // namespace

void cmd_phantom(const PipelineConfig& cfg) {
  if (!cfg.phantom)
    fail(Errc::config_invalid,
         "phantom: explicit data is configured; nothing to generate");
  RunLock lock(cfg.output_dir);
  const auto paths = run_paths(cfg);
  std::filesystem::create_directories(paths.data);

  std::map<std::string, std::string> hashes;
  for (const bool train : {true, false}) {
    const int count =
        train ? cfg.phantom->train_volumes : cfg.phantom->test_volumes;
    for (int i = 0; i < count; ++i) {
      const std::string id = volume_id(train, i);
      PhantomSpec spec;
      spec.dims = cfg.phantom->dims;
      spec.spacing = cfg.phantom->spacing;
      spec.n_vertebrae = cfg.phantom->n_vertebrae;
      spec.fracture_count = cfg.phantom->fractures_per_volume;
      spec.gap_width_mm = cfg.phantom->gap_width_mm;
      spec.noise_sigma_hu = cfg.phantom->noise_sigma_hu;
      spec.seed = derive_seed(cfg.seed, "phantom:" + id);
      PhantomResult r = generate_phantom(spec);
      for (auto& a : r.annotations) a.patient_id = id;

      const auto img = paths.data / (id + "_image.mhd");
      const auto msk = paths.data / (id + "_mask.mhd");
      const auto ann = paths.data / (id + "_annotations.csv");
      save_volume(r.image, img);
      save_volume(r.mask, msk);
      save_annotations(r.annotations, ann);
      hashes[id + "_image"] = crc32_of_file(img);
      hashes[id + "_mask"] = crc32_of_file(msk);
      hashes[id + "_annotations"] = crc32_of_file(ann);
    }
  }
  update_manifest(cfg, "phantom", hashes);
}

void cmd_edges(const PipelineConfig& cfg) {
  RunLock lock(cfg.output_dir);
  const auto paths = run_paths(cfg);
  std::filesystem::create_directories(paths.edges);

  std::map<std::string, std::string> hashes;
  for (const bool train : {true, false}) {
    for (const auto& vp : resolve_data(cfg, train)) {
      require_exists(vp.image, "image for " + vp.patient_id);
      require_exists(vp.mask, "mask for " + vp.patient_id);
      const Volume v = load_volume(vp.image);
      const Volume mask = load_volume(vp.mask);
      const EdgeMap edges =
          extract_edges(v, mask, cfg.edges.threshold_percentile, cfg.threads);
      save_edge_map_csv(edges, edge_csv_path(cfg, vp.patient_id));
      json meta;
      meta["dims"] = {edges.source_dims[0], edges.source_dims[1],
                      edges.source_dims[2]};
      meta["threshold_used"] = edges.threshold_used;
      meta["n_voxels"] = edges.voxels.size();
      write_text(edge_meta_path(cfg, vp.patient_id), meta.dump(2) + "\n");
      hashes[vp.patient_id + "_image"] = crc32_of_file(vp.image);
    }
  }
  update_manifest(cfg, "edges", hashes);
}

namespace {

void do_sample(const PipelineConfig& cfg, Strategy strategy) {
  const auto paths = run_paths(cfg);
  std::filesystem::create_directories(paths.patches);

  const auto train_list = resolve_data(cfg, /*train=*/true);
  // Per-volume quota, remainder to the first volumes.
  const size_t per = cfg.sampling.target_count / train_list.size();
  const size_t extra = cfg.sampling.target_count % train_list.size();

  PatchSet combined;
  combined.seed = cfg.seed;
  size_t vol_i = 0;
  for (const auto& vp : train_list) {
    require_exists(vp.image, "image for " + vp.patient_id);
    require_exists(vp.annotations, "annotations for " + vp.patient_id);
    const Volume v = load_volume(vp.image);
    const auto annotations = load_annotations(vp.annotations, v);
    const EdgeMap edges = load_edges_for(cfg, vp.patient_id);
    const size_t quota = per + (vol_i < extra ? 1 : 0);
    if (quota == 0) { ++vol_i; continue; }
    PatchSet part = build_patchset(
        v, edges, annotations, strategy, quota, cfg.sampling.pos_fraction,
        derive_seed(cfg.seed, "sample:" + vp.patient_id), sampler_config(cfg));
    combined.positives += part.positives;
    combined.negatives += part.negatives;
    combined.requested_positives += part.requested_positives;
    combined.requested_negatives += part.requested_negatives;
    for (auto& p : part.patches) combined.patches.push_back(std::move(p));
    ++vol_i;
  }
  save_patchset(combined, patchset_path(cfg, strategy));
  if (combined.shortfall()) {
    std::fprintf(stderr,
                 "note: patch shortfall for %s: %zu/%zu positives, "
                 "%zu/%zu negatives\n",
                 strategy_name(strategy), combined.positives,
                 combined.requested_positives, combined.negatives,
                 combined.requested_negatives);
  }
}

void do_train(const PipelineConfig& cfg, Strategy strategy) {
  const auto paths = run_paths(cfg);
  std::filesystem::create_directories(paths.models);
  const auto pset_path = patchset_path(cfg, strategy);
  require_exists(pset_path, "patch set");
  const PatchSet dataset = load_patchset(pset_path);

  ConvNetModel model = build_network(cfg);
  const TrainHistory history = train(model, dataset, cfg.train);
  save_model(model, model_path(cfg, strategy));
  save_train_log(history, paths.models / (std::string("train_log_") +
                                          strategy_name(strategy) + ".csv"));
}

void do_predict(const PipelineConfig& cfg, Strategy strategy) {
  const auto paths = run_paths(cfg);
  std::filesystem::create_directories(paths.probmaps);
  const auto mpath = model_path(cfg, strategy);
  require_exists(mpath, "model checkpoint");
  ConvNetModel model = load_model(mpath);

  for (const auto& vp : resolve_data(cfg, /*train=*/false)) {
    require_exists(vp.image, "image for " + vp.patient_id);
    const Volume v = load_volume(vp.image);
    const EdgeMap edges = load_edges_for(cfg, vp.patient_id);
    const ProbabilityMap pm = predict_map(model, v, edges, strategy,
                                          sampler_config(cfg), 64, cfg.threads);
    save_probability_map_csv(pm, probmap_path(cfg, vp.patient_id, strategy));
  }
}

EvalSummary do_eval(const PipelineConfig& cfg, Strategy strategy,
                    bool write_summary) {
  const auto paths = run_paths(cfg);
  std::filesystem::create_directories(paths.eval);

  std::vector<std::pair<double, bool>> roc_scores;
  DetectionsByPatient detections;
  AnnotationsByPatient annotations;
  const std::vector<double> thresholds =
      default_thresholds(cfg.eval.num_thresholds);

  for (const auto& vp : resolve_data(cfg, /*train=*/false)) {
    require_exists(vp.image, "image for " + vp.patient_id);
    require_exists(vp.annotations, "annotations for " + vp.patient_id);
    const Volume v = load_volume(vp.image);
    const auto anns = load_annotations(vp.annotations, v);
    const auto pmap_path = probmap_path(cfg, vp.patient_id, strategy);
    require_exists(pmap_path, "probability map for " + vp.patient_id);
    const ProbabilityMap pm = load_probability_map_csv(pmap_path, v.dims);

    for (const auto& e : pm.entries) {
      const Vec3 wp = v.voxel_to_world(e.index[0], e.index[1], e.index[2]);
      bool positive = false;
      for (const auto& a : anns)
        if (world_distance(wp, a.position) <= cfg.sampling.radius_mm) {
          positive = true;
          break;
        }
      roc_scores.emplace_back(e.probability, positive);
    }

    // Candidates for FROC: components at the lowest sweep threshold, then
    // swept by component score.
    detections[vp.patient_id] =
        cluster_detections(pm, v, thresholds.front());
    annotations[vp.patient_id] = anns;

    const auto matched = match_detections(
        detections[vp.patient_id], anns, cfg.eval.match_radius_mm,
        cfg.eval.report_threshold, cfg.eval.process_mode);
    save_detections_csv(matched,
                        paths.probmaps / (vp.patient_id + "_" +
                                          strategy_name(strategy) +
                                          "_detections.csv"));
  }

  const RocCurve roc_curve = roc(roc_scores);
  const FrocCurve froc_curve =
      froc(detections, annotations, cfg.eval.match_radius_mm, thresholds,
           cfg.eval.process_mode);
  const std::vector<double> sens =
      sensitivity_at_fp(froc_curve, cfg.eval.fp_targets);

  save_curve_csv(roc_curve.points,
                 paths.eval / (std::string("roc_") + strategy_name(strategy) +
                               ".csv"));
  save_curve_csv(froc_curve.points,
                 paths.eval / (std::string("froc_") + strategy_name(strategy) +
                               ".csv"));

  EvalSummary summary;
  summary.auc = roc_curve.auc;
  summary.n_targets = froc_curve.n_targets;
  summary.n_patients = froc_curve.n_patients;
  for (size_t i = 0; i < cfg.eval.fp_targets.size(); ++i)
    summary.sens_at.emplace_back(cfg.eval.fp_targets[i], sens[i]);

  json sj;
  sj["auc"] = summary.auc;
  sj["n_targets"] = summary.n_targets;
  sj["n_patients"] = summary.n_patients;
  sj["strategy"] = strategy_name(strategy);
  for (const auto& [target, s] : summary.sens_at) {
    char key[48];
    std::snprintf(key, sizeof(key), "sens_at_%gfp", target);
    sj[key] = s;
  }
  write_text(paths.eval / (std::string("summary_") + strategy_name(strategy) +
                           ".json"),
             sj.dump(2) + "\n");
  if (write_summary)
    write_text(cfg.output_dir / "summary.json", sj.dump(2) + "\n");
  return summary;
}

}  // namespace

void cmd_sample(const PipelineConfig& cfg) {
  RunLock lock(cfg.output_dir);
  do_sample(cfg, cfg.sampling.strategy);
  update_manifest(cfg, "sample", {});
}

void cmd_train(const PipelineConfig& cfg) {
  RunLock lock(cfg.output_dir);
  do_train(cfg, cfg.sampling.strategy);
  update_manifest(cfg, "train", {});
}

void cmd_predict(const PipelineConfig& cfg) {
  RunLock lock(cfg.output_dir);
  do_predict(cfg, cfg.sampling.strategy);
  update_manifest(cfg, "predict", {});
}

EvalSummary cmd_eval(const PipelineConfig& cfg) {
  RunLock lock(cfg.output_dir);
  const EvalSummary s = do_eval(cfg, cfg.sampling.strategy, true);
  update_manifest(cfg, "eval", {});
  return s;
}

EvalSummary cmd_run_all(const PipelineConfig& cfg) {
  if (cfg.phantom) cmd_phantom(cfg);
  cmd_edges(cfg);
  cmd_sample(cfg);
  cmd_train(cfg);
  cmd_predict(cfg);
  return cmd_eval(cfg);
}

std::map<Strategy, EvalSummary> compare_strategies(const PipelineConfig& cfg) {
  std::map<Strategy, EvalSummary> out;
  {
    RunLock lock(cfg.output_dir);
    for (const Strategy s :
         {Strategy::original, Strategy::mirrored, Strategy::oriented}) {
      do_sample(cfg, s);
      do_train(cfg, s);
      do_predict(cfg, s);
      out[s] = do_eval(cfg, s, /*write_summary=*/false);
    }
    json cj;
    for (const auto& [s, summary] : out) {
      json e;
      e["auc"] = summary.auc;
      e["n_targets"] = summary.n_targets;
      e["n_patients"] = summary.n_patients;
      for (const auto& [target, sens] : summary.sens_at) {
        char key[48];
        std::snprintf(key, sizeof(key), "sens_at_%gfp", target);
        e[key] = sens;
      }
      cj[strategy_name(s)] = e;
    }
    write_text(cfg.output_dir / "eval" / "compare.json", cj.dump(2) + "\n");
    update_manifest(cfg, "compare-strategies", {});
  }
  return out;
}

}  // namespace spinecade
