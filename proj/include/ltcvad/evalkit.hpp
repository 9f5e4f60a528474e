#pragma once

// Frame-level ROC/AUC evaluation (overall, abnormal-only, per class), the
// clip-to-frame expansion, the LTC ablation grid and the K sweep.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltcvad/feature_store.hpp"
#include "ltcvad/ltc.hpp"
#include "ltcvad/mil_detector.hpp"

namespace ltcvad {

/// Each score covers one segment of the video's clips (same partition as
/// segment sampling); every clip covers `frames_per_clip` frames.
Vec expand_clip_to_frames(std::span<const double> clip_scores, int frames_per_clip,
                          std::size_t total_frames);

/// Mann-Whitney AUC with half credit for ties, O(n log n).
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// ROC vertices from (0,0) to (1,1), one per distinct score threshold.
std::vector<RocPoint> roc_curve(std::span<const double> scores,
                                std::span<const std::uint8_t> labels);

struct ScoredFrames {
  std::string video_id;
  int video_label = 0;
  std::optional<std::string> class_name;
  Vec scores;
  std::vector<std::uint8_t> labels;
};

using VideoScorer = std::function<std::vector<double>(std::span<const Vec> clips)>;

VideoScorer baseline_scorer(const AnomalyPredictor& predictor);
/// Streaming scorer; list ranking uses the model's own fused scores.
VideoScorer ltc_scorer(const LtcModel& model);

/// Deterministic segment sampling, scoring and frame expansion for every
/// video with frame labels. `jobs` > 1 scores videos concurrently.
std::vector<ScoredFrames> score_dataset(const Dataset& test, const VideoScorer& scorer,
                                        std::size_t segments, std::size_t jobs = 1);

double auc_overall(std::span<const ScoredFrames> videos);
double auc_abnormal(std::span<const ScoredFrames> videos);
/// Classes whose pool lacks one frame class are omitted (and listed in
/// `omitted` when given).
std::map<std::string, double> classwise_auc(std::span<const ScoredFrames> videos,
                                            std::vector<std::string>* omitted = nullptr);

struct EvalReport {
  double auc_overall = 0.0;
  double auc_abnormal = 0.0;
  std::map<std::string, double> classwise;
  nlohmann::json config = nlohmann::json::object();
  double runtime_seconds = 0.0;

  /// Runtime is left out so that reports of identical runs are byte-equal.
  nlohmann::ordered_json to_json() const;
};

EvalReport evaluate(std::span<const ScoredFrames> videos, nlohmann::json config = {});

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
void write_roc_csv(std::span<const ScoredFrames> videos, const std::filesystem::path& path);
void write_classwise_csv(const EvalReport& report, const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct ExperimentConfig {
  Phase1Config phase1{};
  Phase2Config phase2{};
  std::size_t eval_segments = 32;
  std::size_t jobs = 1;
};

/// Training settings calibrated for the synthetic reference datasets:
/// literal attention, K = 4, all lists, phase-1 lr 1e-3, phase-2 lr 3e-3.
ExperimentConfig reference_experiment_config();

/// Phase-1 then phase-2 for one LTC configuration, evaluated on `test`.
/// phase1.seed = seed, phase2.seed = derive_seed(seed, "phase2"), so rows that
/// differ only in LTC configuration share every random stream.
struct ExperimentRun {
  AnomalyPredictor phase1;
  LtcModel phase2;
  double auc_overall = 0.0;
  double auc_abnormal = 0.0;
};

ExperimentRun run_experiment(const Dataset& train, const Dataset& test,
                             const ExperimentConfig& config, const LtcConfig& ltc,
                             std::uint64_t seed, const AnomalyPredictor* phase1 = nullptr);

struct AblationRow {
  std::string name;
  ListSelection lists{};
  std::uint64_t seed = 0;
  double auc_overall = 0.0;
  double auc_abnormal = 0.0;
};

/// Rows: baseline, +Nor, +Abn, +Nor+Abn, +Nor+Abn+His, for every seed.
std::vector<AblationRow> ablation_grid(const Dataset& train, const Dataset& test,
                                       const ExperimentConfig& config,
                                       std::span<const std::uint64_t> seeds);

struct KSweepRow {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  double auc_overall = 0.0;
  double auc_abnormal = 0.0;
};

inline const std::vector<std::size_t> kDefaultKSweep = {0, 2, 4, 6, 8};

std::vector<KSweepRow> k_sweep(const Dataset& train, const Dataset& test,
                               const ExperimentConfig& config, std::span<const std::size_t> ks,
                               std::span<const std::uint64_t> seeds);

void write_ablation_csv(std::span<const AblationRow> rows, const std::filesystem::path& path);
void write_ksweep_csv(std::span<const KSweepRow> rows, const std::filesystem::path& path);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// "%.17g" formatting, round-trip exact for doubles.
std::string format_double(double v);

}  // namespace ltcvad
