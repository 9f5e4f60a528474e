#pragma once

// Long-(short-)term context memory: per-video top-K normal/abnormal lists and
// a recent-history list, cross-attention retrieval, gated fusion, streaming
// inference and phase-2 co-training.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltcvad/feature_store.hpp"
#include "ltcvad/mil_detector.hpp"
#include "ltcvad/neuralops.hpp"

namespace ltcvad {

struct LtcEntry {
  double score = 0.0;
  Vec feature;
  std::size_t clip_index = 0;
  std::uint64_t arrival = 0;  // per-video arrival counter; larger = more recent
};

/// N holds the K lowest-scored entries seen so far (sorted by score
/// ascending, most recent first on ties), A the K highest (score descending,
/// most recent first on ties), H the K most recent in arrival order.
class LtcState {
 public:
  explicit LtcState(std::size_t k = 4) : k_(k) {}

  void update(double score, std::span<const double> feature, std::size_t clip_index);
  void reset() { *this = LtcState(k_); }

  std::size_t k() const { return k_; }
  const std::vector<LtcEntry>& normal() const { return normal_; }
  const std::vector<LtcEntry>& abnormal() const { return abnormal_; }
  const std::vector<LtcEntry>& history() const { return history_; }
  std::uint64_t seen() const { return seen_; }

 private:
  std::size_t k_;
  std::uint64_t seen_ = 0;
  std::vector<LtcEntry> normal_;
  std::vector<LtcEntry> abnormal_;
  std::vector<LtcEntry> history_;
};

/// Value-returning form of LtcState::update.
LtcState ltc_update(LtcState state, double score, std::span<const double> feature,
                    std::size_t clip_index);

enum class AttentionMode { literal, softmax };

std::string to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& text);

/// literal: (x . X^T) X with raw dot-product weights.
/// softmax: weights softmax(x . X^T / sqrt(d)).
/// Empty list -> zero vector.
Vec cross_attention(std::span<const double> query, std::span<const Vec> list, AttentionMode mode);
Vec cross_attention(std::span<const double> query, const std::vector<LtcEntry>& list,
                    AttentionMode mode);

/// One scalar gate per list: w = logistic(dense(x)), dense: d -> 1.
struct FusionGate {
  DenseLayer normal;
  DenseLayer abnormal;
  DenseLayer history;

  static FusionGate init(std::size_t dim, std::uint64_t seed);
  static FusionGate zeros(std::size_t dim);

  ParamSpans parameters();
  ConstParamSpans parameters() const;

  bool operator==(const FusionGate&) const = default;
};

struct ListSelection {
  bool normal = true;
  bool abnormal = true;
  bool history = true;

  bool any() const { return normal || abnormal || history; }
  bool operator==(const ListSelection&) const = default;
};

/// Parses "nor,abn,his" style lists; "none" or "" disables everything.
ListSelection list_selection_from_string(const std::string& text);
std::string to_string(const ListSelection& lists);

struct LtcConfig {
  std::size_t k = 4;
  AttentionMode attention = AttentionMode::softmax;
  ListSelection lists{};
};

struct Retrievals {
  std::optional<Vec> normal;
  std::optional<Vec> abnormal;
  std::optional<Vec> history;
};

/// Retrieves from every enabled, non-empty list of the state.
Retrievals retrieve(std::span<const double> x, const LtcState& state, const LtcConfig& config);

struct FuseResult {
  Vec fused;
  double gate_normal = 0.0;
  double gate_abnormal = 0.0;
  double gate_history = 0.0;
};

/// x~ = x + w_n n + w_a a (+ w_h h). Absent retrievals contribute nothing.
FuseResult fuse(std::span<const double> x, const Retrievals& r, const FusionGate& gates);

/// Detector + gates + memory configuration.
struct LtcModel {
  AnomalyPredictor detector;
  FusionGate gates;
  LtcConfig config;

  bool operator==(const LtcModel& o) const {
    return detector == o.detector && gates == o.gates && config.k == o.config.k &&
           config.attention == o.config.attention && config.lists == o.config.lists;
  }
};

struct StreamStep {
  Vec fused;
  double score = 0.0;
  Retrievals retrievals;
  FuseResult fusion;
  PredictorTrace trace;
};

/// Forward pass for one incoming clip: retrieve from the current memory,
/// fuse, score, then update the memory. The list-ranking score is
/// `selection_scorer`'s score on the raw clip when given (phase-2 training),
/// otherwise the model's own fused score (inference).
StreamStep ltc_forward_stream(const LtcModel& model, LtcState& state, std::span<const double> x,
                              std::size_t clip_index,
                              const AnomalyPredictor* selection_scorer = nullptr);

/// Streams a whole clip sequence through a fresh memory; returns the scores.
std::vector<double> score_stream(const LtcModel& model, std::span<const Vec> clips,
                                 const AnomalyPredictor* selection_scorer = nullptr);

// ---------------------------------------------------------------------------

/// Gradient container mirroring the trainable parameters of LtcModel.
struct LtcGrad {
  AnomalyPredictor detector;
  FusionGate gates;

  static LtcGrad zeros(std::size_t dim, std::size_t hidden_width);
  ConstParamSpans parameters() const;
};

ParamSpans trainable_parameters(LtcModel& model);

struct LtcBag {
  std::vector<Vec> clips;
  int label = 0;
};

/// Phase-2 batch objective: for each bag stream the clips (lists ranked by
/// `selection_scorer` on raw clips, contents detached), take the MIL max over
/// fused scores and average the BCE. Gradient flows into detector and gates
/// through the argmax clip only.
double ltc_objective(const LtcModel& model, std::span<const LtcBag> bags,
                     const AnomalyPredictor& selection_scorer, LtcGrad* grad);

struct Phase2Config {
  LtcConfig ltc{};
  std::size_t segments = 32;
  TrainSchedule schedule{};
  std::uint64_t seed = 42;
};

struct Phase2Result {
  LtcModel model;
  std::vector<double> loss_trace;
  bool degenerate = false;
};

/// Co-trains detector and gates starting from the phase-1 predictor, which
/// also serves (frozen) as the list-selection scorer.
Phase2Result train_phase2(const Dataset& train, const AnomalyPredictor& phase1,
                          const Phase2Config& config);

}  // namespace ltcvad
