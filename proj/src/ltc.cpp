#include "ltcvad/ltc.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>
#include <utility>

#include "ltcvad/error.hpp"

namespace ltcvad {

void LtcState::update(double score, std::span<const double> feature, std::size_t clip_index) {
  if (!(score >= 0.0 && score <= 1.0)) throw Error("list score outside [0, 1]");
  ++seen_;
  if (k_ == 0) return;
  LtcEntry entry{score, Vec(feature.begin(), feature.end()), clip_index, seen_};

  history_.push_back(entry);
  if (history_.size() > k_) history_.erase(history_.begin());

  // The newcomer is the most recent entry, so it precedes every equal score.
  auto pos_n = std::find_if(normal_.begin(), normal_.end(),
                            [&](const LtcEntry& e) { return e.score >= score; });
  if (static_cast<std::size_t>(pos_n - normal_.begin()) < k_) {
    normal_.insert(pos_n, entry);
    if (normal_.size() > k_) normal_.pop_back();
  }
  auto pos_a = std::find_if(abnormal_.begin(), abnormal_.end(),
                            [&](const LtcEntry& e) { return e.score <= score; });
  if (static_cast<std::size_t>(pos_a - abnormal_.begin()) < k_) {
    abnormal_.insert(pos_a, std::move(entry));
    if (abnormal_.size() > k_) abnormal_.pop_back();
  }
}

LtcState ltc_update(LtcState state, double score, std::span<const double> feature,
                    std::size_t clip_index) {
  state.update(score, feature, clip_index);
  return state;
}

std::string to_string(AttentionMode mode) {
  return mode == AttentionMode::literal ? "literal" : "softmax";
}

AttentionMode attention_mode_from_string(const std::string& text) {
  if (text == "literal") return AttentionMode::literal;
  if (text == "softmax") return AttentionMode::softmax;
  throw ConfigError("unknown attention mode: " + text);
}

namespace {

template <typename GetFeature>
Vec attend(std::span<const double> query, std::size_t n, GetFeature get, AttentionMode mode) {
  Vec out(query.size(), 0.0);
  if (n == 0) return out;
  Vec weights(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& v = get(j);
    if (v.size() != query.size()) throw ShapeError("dimension mismatch: attention list");
    weights[j] = dot(query, v);
  }
  if (mode == AttentionMode::softmax) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
    for (double& w : weights) w *= scale;
    weights = softmax(weights);
  }
  for (std::size_t j = 0; j < n; ++j) {
    const auto& v = get(j);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[j] * v[i];
  }
  return out;
}

double gate_value(const DenseLayer& gate, std::span<const double> x) {
  return logistic(dense_forward(gate, x)[0]);
}

}  // namespace

Vec cross_attention(std::span<const double> query, std::span<const Vec> list, AttentionMode mode) {
  return attend(query, list.size(), [&](std::size_t j) -> const Vec& { return list[j]; }, mode);
}

Vec cross_attention(std::span<const double> query, const std::vector<LtcEntry>& list,
                    AttentionMode mode) {
  return attend(
      query, list.size(), [&](std::size_t j) -> const Vec& { return list[j].feature; }, mode);
}

FusionGate FusionGate::init(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "gate-init"));
  FusionGate g;
  g.normal = glorot_uniform(dim, 1, rng);
  g.abnormal = glorot_uniform(dim, 1, rng);
  g.history = glorot_uniform(dim, 1, rng);
  return g;
}

FusionGate FusionGate::zeros(std::size_t dim) {
  return {DenseLayer(dim, 1), DenseLayer(dim, 1), DenseLayer(dim, 1)};
}

ParamSpans FusionGate::parameters() {
  ParamSpans out;
  for (auto* layer : {&normal, &abnormal, &history}) {
    for (auto s : layer->parameters()) out.push_back(s);
  }
  return out;
}

ConstParamSpans FusionGate::parameters() const {
  ConstParamSpans out;
  for (const auto* layer : {&normal, &abnormal, &history}) {
    for (auto s : layer->parameters()) out.push_back(s);
  }
  return out;
}

ListSelection list_selection_from_string(const std::string& text) {
  ListSelection sel{false, false, false};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty() || item == "none") continue;
    if (item == "nor" || item == "normal") {
      sel.normal = true;
    } else if (item == "abn" || item == "abnormal") {
      sel.abnormal = true;
    } else if (item == "his" || item == "history") {
      sel.history = true;
    } else {
      throw ConfigError("unknown list: " + item);
    }
  }
  return sel;
}

std::string to_string(const ListSelection& lists) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(lists.normal, "nor");
  add(lists.abnormal, "abn");
  add(lists.history, "his");
  return out.empty() ? "none" : out;
}

Retrievals retrieve(std::span<const double> x, const LtcState& state, const LtcConfig& config) {
  Retrievals r;
  if (config.lists.normal && !state.normal().empty()) {
    r.normal = cross_attention(x, state.normal(), config.attention);
  }
  if (config.lists.abnormal && !state.abnormal().empty()) {
    r.abnormal = cross_attention(x, state.abnormal(), config.attention);
  }
  if (config.lists.history && !state.history().empty()) {
    r.history = cross_attention(x, state.history(), config.attention);
  }
  return r;
}

FuseResult fuse(std::span<const double> x, const Retrievals& r, const FusionGate& gates) {
  FuseResult out;
  out.fused.assign(x.begin(), x.end());
  auto add = [&](const std::optional<Vec>& retrieved, const DenseLayer& gate, double& w) {
    if (!retrieved) return;
    if (retrieved->size() != x.size()) throw ShapeError("dimension mismatch: fusion");
    w = gate_value(gate, x);
    for (std::size_t i = 0; i < x.size(); ++i) out.fused[i] += w * (*retrieved)[i];
  };
  add(r.normal, gates.normal, out.gate_normal);
  add(r.abnormal, gates.abnormal, out.gate_abnormal);
  add(r.history, gates.history, out.gate_history);
  return out;
}

StreamStep ltc_forward_stream(const LtcModel& model, LtcState& state, std::span<const double> x,
                              std::size_t clip_index, const AnomalyPredictor* selection_scorer) {
  StreamStep step;
  step.retrievals = retrieve(x, state, model.config);
  step.fusion = fuse(x, step.retrievals, model.gates);
  step.trace = predictor_forward(model.detector, step.fusion.fused);
  step.score = step.trace.score;
  step.fused = step.fusion.fused;
  const double list_score =
      selection_scorer != nullptr ? predict_score(*selection_scorer, x) : step.score;
  state.update(list_score, x, clip_index);
  return step;
}

std::vector<double> score_stream(const LtcModel& model, std::span<const Vec> clips,
                                 const AnomalyPredictor* selection_scorer) {
  LtcState state(model.config.k);
  std::vector<double> scores;
  scores.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    scores.push_back(ltc_forward_stream(model, state, clips[i], i, selection_scorer).score);
  }
  return scores;
}

// ---------------------------------------------------------------------------

LtcGrad LtcGrad::zeros(std::size_t dim, std::size_t hidden_width) {
  return {AnomalyPredictor::zeros(dim, hidden_width), FusionGate::zeros(dim)};
}

ConstParamSpans LtcGrad::parameters() const {
  ConstParamSpans out = detector.parameters();
  for (auto s : gates.parameters()) out.push_back(s);
  return out;
}

ParamSpans trainable_parameters(LtcModel& model) {
  ParamSpans out = model.detector.parameters();
  for (auto s : model.gates.parameters()) out.push_back(s);
  return out;
}

double ltc_objective(const LtcModel& model, std::span<const LtcBag> bags,
                     const AnomalyPredictor& selection_scorer, LtcGrad* grad) {
  if (bags.empty()) throw Error("empty batch");
  const double inv_n = 1.0 / static_cast<double>(bags.size());
  std::vector<MilTuple> tuples;
  tuples.reserve(bags.size());

  for (const auto& bag : bags) {
    if (bag.clips.empty()) throw Error("empty bag");
    LtcState state(model.config.k);
    std::vector<StreamStep> steps;
    steps.reserve(bag.clips.size());
    Vec scores;
    scores.reserve(bag.clips.size());
    for (std::size_t i = 0; i < bag.clips.size(); ++i) {
      steps.push_back(ltc_forward_stream(model, state, bag.clips[i], i, &selection_scorer));
      scores.push_back(steps.back().score);
    }
    const auto sel = mil_select(scores);
    tuples.push_back({sel.value, bag.label});
    if (grad == nullptr) continue;

    const double dz = bce_grad_margin(sel.value, bag.label) * inv_n;
    if (dz == 0.0) continue;
    const auto& step = steps[sel.index];
    const Vec& x = bag.clips[sel.index];
    Vec grad_fused;
    predictor_backward(model.detector, step.fused, step.trace, dz, grad->detector, &grad_fused);

    auto gate_back = [&](const std::optional<Vec>& retrieved, const DenseLayer& gate, double w,
                         DenseLayer& gate_grad) {
      if (!retrieved) return;
      const double dw = dot(grad_fused, *retrieved);
      const double dpre[1] = {dw * w * (1.0 - w)};
      dense_backward_into(gate, x, dpre, gate_grad, nullptr);
    };
    gate_back(step.retrievals.normal, model.gates.normal, step.fusion.gate_normal,
              grad->gates.normal);
    gate_back(step.retrievals.abnormal, model.gates.abnormal, step.fusion.gate_abnormal,
              grad->gates.abnormal);
    gate_back(step.retrievals.history, model.gates.history, step.fusion.gate_history,
              grad->gates.history);
  }
  return bce_loss(tuples);
}

Phase2Result train_phase2(const Dataset& train, const AnomalyPredictor& phase1,
                          const Phase2Config& config) {
  if (train.videos.empty()) throw Error("empty training set");
  if (phase1.dim() != train.dim) throw ShapeError("checkpoint/dataset dimension mismatch");
  Phase2Result result;
  result.degenerate = detail::is_degenerate(train);
  if (result.degenerate) {
    std::cerr << "warning: training set holds a single label class; training is degenerate\n";
  }
  result.model.detector = phase1;
  result.model.gates = FusionGate::init(train.dim, config.seed);
  result.model.config = config.ltc;
  const AnomalyPredictor selection = phase1;

  LtcGrad grad = LtcGrad::zeros(train.dim, phase1.hidden_width());
  detail::LoopHooks hooks;
  hooks.zero_grad = [&] { grad = LtcGrad::zeros(train.dim, phase1.hidden_width()); };
  hooks.params = [&] { return trainable_parameters(result.model); };
  hooks.grads = [&] { return grad.parameters(); };
  hooks.batch = [&](std::span<const std::size_t> ids, int epoch) {
    std::vector<LtcBag> bags;
    bags.reserve(ids.size());
    for (auto v : ids) {
      auto bag = detail::make_bag(train.videos[v], config.segments,
                                  Sampling::random(detail::sample_seed(config.seed, epoch, v)));
      bags.push_back({std::move(bag.clips), bag.label});
    }
    return ltc_objective(result.model, bags, selection, &grad);
  };
  result.loss_trace = detail::run_mil_loop(train.videos.size(), config.schedule, config.seed, hooks);
  return result;
}

}  // namespace ltcvad
