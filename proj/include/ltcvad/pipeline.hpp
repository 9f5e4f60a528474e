#pragma once

// The command pipeline behind the ltcvad tool. Every command reads and
// writes under one output directory:
//
//   data/{train,test}.jsonl, data/features/...   synth
//   checkpoints/phase{1,2,3}.vadc, *_loss.csv     train-phase1/2/3
//   instructions/{instructions.jsonl,vocab.txt,prompts.vadf}
//   eval/{report.json,roc.csv,classwise.csv,timing.json}
//   ablate/ablation.csv, ksweep/ksweep.csv, report/summary.{json,md}
//   manifests/<command>.json                      run manifests

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ltcvad/config.hpp"

namespace ltcvad {

inline const std::vector<std::string> kCommands = {
    "synth", "train-phase1", "train-phase2", "train-phase3", "gen-instructions",
    "eval",  "ablate",       "ksweep",       "report",
};

struct CommandOptions {
  /// eval: "auto" (phase 2 when present, else phase 1), "phase1" or "phase2".
  std::string eval_model = "auto";
};

struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path checkpoint(int phase) const;
  std::filesystem::path instructions_dir() const { return root / "instructions"; }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path manifest(const std::string& command) const;
};

/// Runs one command; throws ltcvad::Error subclasses on failure.
void run_command(const std::string& command, const RunConfig& config,
                 const CommandOptions& options = {});

/// Git blob hash: sha1("blob <size>\0" + content), lowercase hex.
std::string git_blob_hash(std::span<const std::uint8_t> content);
std::string git_blob_hash_file(const std::filesystem::path& path);

}  // namespace ltcvad
