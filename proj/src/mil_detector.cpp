#include "ltcvad/mil_detector.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <optional>
#include <utility>

#include "ltcvad/error.hpp"

namespace ltcvad {

AnomalyPredictor AnomalyPredictor::init(std::size_t dim, std::size_t hidden_width,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "predictor-init"));
  AnomalyPredictor g;
  g.hidden = glorot_uniform(dim, hidden_width, rng);
  g.head = glorot_uniform(hidden_width, 2, rng);
  return g;
}

AnomalyPredictor AnomalyPredictor::zeros(std::size_t dim, std::size_t hidden_width) {
  return {DenseLayer(dim, hidden_width), DenseLayer(hidden_width, 2)};
}

ParamSpans AnomalyPredictor::parameters() {
  ParamSpans out = hidden.parameters();
  for (auto s : head.parameters()) out.push_back(s);
  return out;
}

ConstParamSpans AnomalyPredictor::parameters() const {
  ConstParamSpans out = hidden.parameters();
  for (auto s : head.parameters()) out.push_back(s);
  return out;
}

void AnomalyPredictor::validate() const {
  hidden.validate();
  head.validate();
  if (head.in != hidden.out || head.out != 2) throw ShapeError("predictor shape mismatch");
}

PredictorTrace predictor_forward(const AnomalyPredictor& g, std::span<const double> x) {
  if (x.size() != g.dim()) throw ShapeError("shape mismatch: predictor input");
  PredictorTrace t;
  t.hidden_pre = dense_forward(g.hidden, x);
  t.hidden.resize(t.hidden_pre.size());
  std::transform(t.hidden_pre.begin(), t.hidden_pre.end(), t.hidden.begin(), relu);
  const Vec logits = dense_forward(g.head, t.hidden);
  t.logit_normal = logits[0];
  t.logit_abnormal = logits[1];
  t.score = softmax_binary(t.logit_normal, t.logit_abnormal);
  return t;
}

double predict_score(const AnomalyPredictor& g, std::span<const double> x) {
  return predictor_forward(g, x).score;
}

double predict_score(const AnomalyPredictor& g, std::span<const float> x) {
  const Vec wide = widen(x);
  return predictor_forward(g, wide).score;
}

void predictor_backward(const AnomalyPredictor& g, std::span<const double> x,
                        const PredictorTrace& trace, double dloss_dmargin, AnomalyPredictor& grad,
                        Vec* grad_x) {
  const double up[2] = {-dloss_dmargin, dloss_dmargin};
  Vec grad_hidden;
  dense_backward_into(g.head, trace.hidden, up, grad.head, &grad_hidden);
  for (std::size_t i = 0; i < grad_hidden.size(); ++i) {
    if (!(trace.hidden_pre[i] > 0.0)) grad_hidden[i] = 0.0;
  }
  dense_backward_into(g.hidden, x, grad_hidden, grad.hidden, grad_x);
}

MilSelection mil_select(std::span<const double> scores) {
  if (scores.empty()) throw Error("empty score sequence");
  MilSelection best{scores[0], 0};
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > best.value) best = {scores[i], i};
  }
  return best;
}

double bce_loss(std::span<const MilTuple> tuples) {
  if (tuples.empty()) throw Error("empty tuple set");
  double total = 0.0;
  for (const auto& t : tuples) {
    if (t.label != 0 && t.label != 1) throw Error("label must be 0 or 1");
    const double p = std::clamp(t.predicted, kBceEpsilon, 1.0 - kBceEpsilon);
    total -= t.label == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(tuples.size());
}

double bce_grad_margin(double predicted, int label) {
  if (predicted < kBceEpsilon || predicted > 1.0 - kBceEpsilon) return 0.0;
  return predicted - static_cast<double>(label);
}

double mil_objective(const AnomalyPredictor& g, std::span<const MilBag> bags,
                     const MarginOptions& margin, AnomalyPredictor* grad) {
  if (bags.empty()) throw Error("empty batch");
  const double inv_n = 1.0 / static_cast<double>(bags.size());

  struct Pick {
    std::size_t bag;
    std::size_t clip;
    PredictorTrace trace;
  };
  std::vector<Pick> picks;
  picks.reserve(bags.size());
  std::vector<MilTuple> tuples;
  tuples.reserve(bags.size());

  for (std::size_t b = 0; b < bags.size(); ++b) {
    const auto& bag = bags[b];
    if (bag.clips.empty()) throw Error("empty bag");
    std::vector<PredictorTrace> traces;
    traces.reserve(bag.clips.size());
    Vec scores;
    scores.reserve(bag.clips.size());
    for (const auto& clip : bag.clips) {
      traces.push_back(predictor_forward(g, clip));
      scores.push_back(traces.back().score);
    }
    const auto sel = mil_select(scores);
    tuples.push_back({sel.value, bag.label});
    picks.push_back({b, sel.index, std::move(traces[sel.index])});
  }

  double loss = bce_loss(tuples);
  std::vector<double> dz(picks.size(), 0.0);
  for (std::size_t k = 0; k < picks.size(); ++k) {
    dz[k] = bce_grad_margin(tuples[k].predicted, tuples[k].label) * inv_n;
  }

  if (margin.enabled) {
    std::optional<std::size_t> top_abn;
    std::optional<std::size_t> top_nor;
    for (std::size_t k = 0; k < picks.size(); ++k) {
      auto& slot = bags[picks[k].bag].label == 1 ? top_abn : top_nor;
      if (!slot || picks[k].trace.margin() > picks[*slot].trace.margin()) slot = k;
    }
    if (top_abn && top_nor) {
      const double gap = picks[*top_abn].trace.margin() - picks[*top_nor].trace.margin();
      const double hinge = margin.margin - gap;
      if (hinge > 0.0) {
        loss += hinge;
        dz[*top_abn] -= 1.0;
        dz[*top_nor] += 1.0;
      }
    }
  }

  if (grad != nullptr) {
    for (std::size_t k = 0; k < picks.size(); ++k) {
      if (dz[k] == 0.0) continue;
      const auto& p = picks[k];
      predictor_backward(g, bags[p.bag].clips[p.clip], p.trace, dz[k], *grad);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------

namespace detail {

std::uint64_t sample_seed(std::uint64_t seed, int epoch, std::size_t video) {
  return derive_seed(seed, "clip-sample", static_cast<std::uint64_t>(epoch), video);
}

MilBag make_bag(const VideoRecord& video, std::size_t segments, const Sampling& sampling) {
  MilBag bag;
  bag.label = video.label;
  for (auto i : sample_indices(video.clips.size(), segments, sampling)) {
    bag.clips.push_back(widen(video.clips[i]));
  }
  return bag;
}

bool is_degenerate(const Dataset& train) {
  return train.count_label(0) == 0 || train.count_label(1) == 0;
}

std::vector<double> run_mil_loop(std::size_t n_videos, const TrainSchedule& schedule,
                                 std::uint64_t seed, const LoopHooks& hooks) {
  if (n_videos == 0) throw Error("empty training set");
  if (schedule.batch_size == 0) throw ConfigError("batch_size must be positive");
  const LrSchedule lr_sched{schedule.warmup_epochs, schedule.epochs, schedule.lr_max,
                            schedule.lr_min};
  lr_sched.validate();

  AdamW optimizer(schedule.optimizer);
  const std::size_t n_batches = (n_videos + schedule.batch_size - 1) / schedule.batch_size;
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(schedule.epochs));
  std::vector<std::size_t> order(n_videos);

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, "epoch-order", static_cast<std::uint64_t>(epoch)));
    shuffle(order, rng);

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t begin = b * schedule.batch_size;
      const std::size_t end = std::min(begin + schedule.batch_size, n_videos);
      std::span<const std::size_t> ids(order.data() + begin, end - begin);
      hooks.zero_grad();
      epoch_loss += hooks.batch(ids, epoch);
      const double progress =
          epoch + static_cast<double>(b + 1) / static_cast<double>(n_batches);
      optimizer.step(hooks.params(), hooks.grads(), schedule_lr(lr_sched, progress));
    }
    trace.push_back(epoch_loss / static_cast<double>(n_batches));
  }
  return trace;
}

}  // namespace detail

Phase1Result train_phase1(const Dataset& train, const Phase1Config& config,
                          const AnomalyPredictor* initial) {
  if (train.videos.empty()) throw Error("empty training set");
  Phase1Result result;
  result.degenerate = detail::is_degenerate(train);
  if (result.degenerate) {
    std::cerr << "warning: training set holds a single label class; training is degenerate\n";
  }
  result.predictor = initial != nullptr
                         ? *initial
                         : AnomalyPredictor::init(train.dim, config.hidden_width, config.seed);
  if (result.predictor.dim() != train.dim) throw ShapeError("predictor/dataset dimension mismatch");

  AnomalyPredictor grad = AnomalyPredictor::zeros(result.predictor.dim(),
                                                  result.predictor.hidden_width());
  detail::LoopHooks hooks;
  hooks.zero_grad = [&] { grad = AnomalyPredictor::zeros(grad.dim(), grad.hidden_width()); };
  hooks.params = [&] { return result.predictor.parameters(); };
  hooks.grads = [&] { return std::as_const(grad).parameters(); };
  hooks.batch = [&](std::span<const std::size_t> ids, int epoch) {
    std::vector<MilBag> bags;
    bags.reserve(ids.size());
    for (auto v : ids) {
      bags.push_back(detail::make_bag(train.videos[v], config.segments,
                                      Sampling::random(detail::sample_seed(config.seed, epoch, v))));
    }
    return mil_objective(result.predictor, bags, config.margin, &grad);
  };
  result.loss_trace = detail::run_mil_loop(train.videos.size(), config.schedule, config.seed, hooks);
  return result;
}

}  // namespace ltcvad
