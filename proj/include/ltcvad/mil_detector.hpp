#pragma once

// Anomaly predictor (two dense layers -> two logits) and MIL training with the
// video-level binary cross-entropy objective.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ltcvad/feature_store.hpp"
#include "ltcvad/neuralops.hpp"

namespace ltcvad {

/// hidden: d -> hidden (ReLU), head: hidden -> [logit_normal, logit_abnormal].
struct AnomalyPredictor {
  DenseLayer hidden;
  DenseLayer head;

  static AnomalyPredictor init(std::size_t dim, std::size_t hidden_width, std::uint64_t seed);
  static AnomalyPredictor zeros(std::size_t dim, std::size_t hidden_width);

  std::size_t dim() const { return hidden.in; }
  std::size_t hidden_width() const { return hidden.out; }

  ParamSpans parameters();
  ConstParamSpans parameters() const;
  void validate() const;

  bool operator==(const AnomalyPredictor&) const = default;
};

/// Forward-pass intermediates kept for the backward pass.
struct PredictorTrace {
  Vec hidden_pre;
  Vec hidden;
  double logit_normal = 0.0;
  double logit_abnormal = 0.0;
  double score = 0.0;

  /// Score logit z = logit_abnormal - logit_normal; score = logistic(z).
  double margin() const { return logit_abnormal - logit_normal; }
};

PredictorTrace predictor_forward(const AnomalyPredictor& g, std::span<const double> x);
double predict_score(const AnomalyPredictor& g, std::span<const double> x);
double predict_score(const AnomalyPredictor& g, std::span<const float> x);

/// Backpropagates dL/dz (z = score logit) into `grad`; writes dL/dx into
/// `grad_x` when non-null.
void predictor_backward(const AnomalyPredictor& g, std::span<const double> x,
                        const PredictorTrace& trace, double dloss_dmargin, AnomalyPredictor& grad,
                        Vec* grad_x = nullptr);

struct MilSelection {
  double value = 0.0;
  std::size_t index = 0;
};

/// Maximum and its first index.
MilSelection mil_select(std::span<const double> scores);

struct MilTuple {
  double predicted = 0.0;
  int label = 0;
};

inline constexpr double kBceEpsilon = 1e-7;

double bce_loss(std::span<const MilTuple> tuples);

/// d BCE(p, y) / dz for p = logistic(z), before averaging. Zero where the
/// prediction is clamped.
double bce_grad_margin(double predicted, int label);

// ---------------------------------------------------------------------------

/// One video's sampled clips, already widened to float64.
struct MilBag {
  std::vector<Vec> clips;
  int label = 0;
};

struct MarginOptions {
  bool enabled = false;
  double margin = 1.0;
};

/// Batch objective: mean BCE over one MIL tuple per bag, plus (optionally)
/// hinge max(0, margin - (z_abn_top - z_nor_top)) across the batch. When
/// `grad` is non-null it receives the gradient (added to existing content).
double mil_objective(const AnomalyPredictor& g, std::span<const MilBag> bags,
                     const MarginOptions& margin, AnomalyPredictor* grad);

struct TrainSchedule {
  int epochs = 30;
  int warmup_epochs = 5;
  std::size_t batch_size = 8;
  double lr_max = 1e-5;
  double lr_min = 0.0;
  AdamWConfig optimizer{};
};

struct Phase1Config {
  std::size_t hidden_width = 128;
  std::size_t segments = 32;
  TrainSchedule schedule{};
  MarginOptions margin{};
  std::uint64_t seed = 42;
};

struct Phase1Result {
  AnomalyPredictor predictor;
  std::vector<double> loss_trace;  // per-epoch mean batch loss
  bool degenerate = false;         // training set held only one label class
};

Phase1Result train_phase1(const Dataset& train, const Phase1Config& config,
                          const AnomalyPredictor* initial = nullptr);

// ---------------------------------------------------------------------------
// Shared MIL loop. Phase 2 reuses it so that a phase-2 run with every list
// disabled walks exactly the same batches, clip samples and LR steps as a
// resumed phase-1 run.

namespace detail {

struct LoopHooks {
  /// Computes the batch loss and accumulates gradients for the given video
  /// indices; clip sampling for video v uses `sample_seed(epoch, v)`.
  std::function<double(std::span<const std::size_t> videos, int epoch)> batch;
  std::function<void()> zero_grad;
  std::function<ParamSpans()> params;
  std::function<ConstParamSpans()> grads;
};

std::vector<double> run_mil_loop(std::size_t n_videos, const TrainSchedule& schedule,
                                 std::uint64_t seed, const LoopHooks& hooks);

std::uint64_t sample_seed(std::uint64_t seed, int epoch, std::size_t video);

MilBag make_bag(const VideoRecord& video, std::size_t segments, const Sampling& sampling);

bool is_degenerate(const Dataset& train);

}  // namespace detail

}  // namespace ltcvad
