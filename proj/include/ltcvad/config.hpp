#pragma once

// Run configuration: an INI-style file of flat [section] key = value pairs.
//
// Precedence, lowest to highest: built-in defaults, the config file,
// --set section.key=value overrides, then the dedicated --seed/--out/--jobs
// flags. A relative output directory is placed under $LTCVAD_OUT when that
// variable is set.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltcvad/instruct.hpp"
#include "ltcvad/ltc.hpp"
#include "ltcvad/mil_detector.hpp"
#include "ltcvad/synthgen.hpp"

namespace ltcvad {

struct RunConfig {
  std::uint64_t seed = 42;
  std::filesystem::path out = "runs/default";
  double desk_scale = 0.01;
  std::size_t jobs = 1;

  std::optional<std::filesystem::path> train_manifest;
  std::optional<std::filesystem::path> test_manifest;

  SynthConfig synth{};
  Phase1Config phase1{};
  Phase2Config phase2{};
  Phase3Config phase3{};
  std::size_t phase3_full_iterations = 30000;  // scaled by desk_scale

  InstructConfig instruct{};
  std::size_t aux_pairs = 50;

  std::size_t eval_segments = 32;
  std::vector<std::uint64_t> ablate_seeds = {42};
  std::vector<std::size_t> ksweep_ks = {0, 2, 4, 6, 8};
  std::vector<std::uint64_t> ksweep_seeds = {42};

  /// Throws ConfigError on K/epoch/range violations or missing data paths.
  void validate() const;

  /// Every setting as "section.key" -> value text; round-trips through
  /// apply_setting.
  std::map<std::string, std::string> settings() const;

  /// Training seeds derived from `seed` (same scheme as run_experiment).
  Phase1Config phase1_config() const;
  Phase2Config phase2_config() const;
  Phase3Config phase3_config() const;
  InstructConfig instruct_config() const;
};

void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
/// "section.key=value"
void apply_override(RunConfig& config, const std::string& assignment);

RunConfig parse_config(const std::string& text, const std::string& source = "<config>");

/// Reads an INI file, or a run-manifest JSON whose "config" object holds the
/// settings of an earlier run.
RunConfig load_config(const std::filesystem::path& path);

std::string render_config(const RunConfig& config);

/// $LTCVAD_OUT / out for relative paths, out otherwise.
std::filesystem::path resolve_output_dir(const std::filesystem::path& out);

}  // namespace ltcvad
