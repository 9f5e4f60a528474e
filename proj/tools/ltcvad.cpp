// ltcvad: synthetic data, three-phase training, evaluation and sweeps.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ltcvad/config.hpp"
#include "ltcvad/error.hpp"
#include "ltcvad/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Long-term context video anomaly detection pipeline"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  app.add_option("-c,--config", config_path, "INI config file or an earlier run manifest (.json)");
  app.add_option("--set", overrides, "Override a setting: section.key=value (repeatable)");
  app.add_option("-o,--out", out, "Output directory (relative paths go under $LTCVAD_OUT)");
  auto* seed_opt = app.add_option("--seed", seed, "Run seed");
  app.add_option("-j,--jobs", jobs, "Worker threads for evaluation and sweeps")->check(CLI::PositiveNumber);
  app.fallthrough();

  ltcvad::CommandOptions options;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "Generate the synthetic train/test datasets"},
      {"train-phase1", "Train the MIL anomaly predictor"},
      {"train-phase2", "Co-train the detector with the long-term context lists"},
      {"gen-instructions", "Render pseudo-instructions from phase-2 scores"},
      {"train-phase3", "Train the adaptor and toy decoder on the instruction data"},
      {"eval", "Frame-level AUC report on the test split"},
      {"ablate", "List ablation grid (baseline, +Nor, +Abn, +Nor+Abn, +Nor+Abn+His)"},
      {"ksweep", "Sweep the list capacity K"},
      {"report", "Summarize eval, ablation and K-sweep results"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    if (name == "eval") {
      sub->add_option("--model", options.eval_model, "auto, phase1 or phase2")
          ->check(CLI::IsMember({"auto", "phase1", "phase2"}));
    }
  }

  CLI11_PARSE(app, argc, argv);

  try {
    ltcvad::RunConfig config = config_path.empty() ? ltcvad::RunConfig{} : ltcvad::load_config(config_path);
    for (const auto& o : overrides) ltcvad::apply_override(config, o);
    if (!out.empty()) config.out = out;
    if (seed_opt->count() > 0) config.seed = seed;
    if (jobs > 0) config.jobs = jobs;
    ltcvad::run_command(app.get_subcommands().front()->get_name(), config, options);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
