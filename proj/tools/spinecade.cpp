#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "spinecade/error.hpp"
#include "spinecade/pipeline.hpp"

namespace {

using spinecade::EvalSummary;
using spinecade::PipelineConfig;

void print_summary(const char* tag, const EvalSummary& s) {
  std::printf("%s auc=%.4f", tag, s.auc);
  for (const auto& [target, sens] : s.sens_at)
    std::printf(" sens@%gfp=%.4f", target, sens);
  std::printf(" targets=%zu patients=%zu\n", s.n_targets, s.n_patients);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge-based fracture detection pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;
  int threads = 0;
  bool compare = false;

  app.add_option("--config", config_path, "JSON pipeline config")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--set", overrides,
                 "Override a config key, e.g. --set sampling.strategy=original");
  app.add_option("--seed", seed, "Override the run seed");
  app.add_option("--threads", threads,
                 "Worker threads (default: config, then SPINECADE_THREADS)");
  app.add_flag("--compare-strategies", compare,
               "Run sample/train/predict/eval for all three strategies");

  auto* c_phantom = app.add_subcommand("phantom", "Generate synthetic volumes");
  auto* c_edges = app.add_subcommand("edges", "Compute edge candidate maps");
  auto* c_sample = app.add_subcommand("sample", "Build the training patch set");
  auto* c_train = app.add_subcommand("train", "Train the network");
  auto* c_predict = app.add_subcommand("predict", "Write probability maps");
  auto* c_eval = app.add_subcommand("eval", "Score the probability maps");
  auto* c_all = app.add_subcommand("run-all", "All stages in sequence");

  CLI11_PARSE(app, argc, argv);

  try {
    if (seed >= 0)
      overrides.push_back("seed=" + std::to_string(seed));
    if (threads > 0) {
      overrides.push_back("threads=" + std::to_string(threads));
    } else if (const char* env = std::getenv("SPINECADE_THREADS")) {
      overrides.push_back(std::string("threads=") + env);
    }

    const PipelineConfig cfg = spinecade::load_config(config_path, overrides);

    if (compare) {
      const auto results = spinecade::compare_strategies(cfg);
      std::printf("%-10s %8s", "strategy", "auc");
      for (const auto& [target, _] : results.begin()->second.sens_at)
        std::printf("  sens@%gfp", target);
      std::printf("\n");
      for (const auto& [s, summary] : results) {
        std::printf("%-10s %8.4f", spinecade::strategy_name(s), summary.auc);
        for (const auto& [_, sens] : summary.sens_at)
          std::printf("  %9.4f", sens);
        std::printf("\n");
      }
      return 0;
    }

    if (c_phantom->parsed()) {
      spinecade::cmd_phantom(cfg);
    } else if (c_edges->parsed()) {
      spinecade::cmd_edges(cfg);
    } else if (c_sample->parsed()) {
      spinecade::cmd_sample(cfg);
    } else if (c_train->parsed()) {
      spinecade::cmd_train(cfg);
    } else if (c_predict->parsed()) {
      spinecade::cmd_predict(cfg);
    } else if (c_eval->parsed()) {
      print_summary("eval:", spinecade::cmd_eval(cfg));
    } else if (c_all->parsed()) {
      print_summary("run-all:", spinecade::cmd_run_all(cfg));
    }
    return 0;
  } catch (const spinecade::Error& e) {
    std::fprintf(stderr, "error code=%s msg=\"%s\"\n",
                 spinecade::errc_name(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error code=Internal msg=\"%s\"\n", e.what());
    return 2;
  }
}
