#include "ltcvad/evalkit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <thread>

#include "ltcvad/error.hpp"

namespace ltcvad {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Vec expand_clip_to_frames(std::span<const double> clip_scores, int frames_per_clip,
                          std::size_t total_frames) {
  if (clip_scores.empty()) throw Error("inconsistent counts: no clip scores");
  if (frames_per_clip < 1) throw Error("inconsistent counts: frames_per_clip");
  const auto fpc = static_cast<std::size_t>(frames_per_clip);
  if (total_frames % fpc != 0) throw Error("inconsistent counts: frames not a clip multiple");
  const std::size_t n_clips = total_frames / fpc;
  if (n_clips < clip_scores.size()) throw Error("inconsistent counts: more scores than clips");

  Vec frames;
  frames.reserve(total_frames);
  const auto bounds = segment_bounds(n_clips, clip_scores.size());
  for (std::size_t s = 0; s < bounds.size(); ++s) {
    frames.insert(frames.end(), (bounds[s].end - bounds[s].begin) * fpc, clip_scores[s]);
  }
  return frames;
}

namespace {

void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores/labels length mismatch");
  for (double s : scores) {
    if (std::isnan(s)) throw Error("NaN score");
  }
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  std::int64_t n_pos = 0;
  for (auto l : labels) n_pos += l != 0 ? 1 : 0;
  const std::int64_t n_neg = static_cast<std::int64_t>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error("undefined AUC: single-class input");

  const auto idx = order_by_score(scores, false);
  // Twice the Mann-Whitney U, kept integral so the result is exact.
  std::int64_t twice_u = 0;
  std::int64_t neg_below = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::int64_t pos = 0;
    std::int64_t neg = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] != 0 ? pos : neg) += 1;
      ++j;
    }
    twice_u += 2 * pos * neg_below + pos * neg;
    neg_below += neg;
    i = j;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores,
                                std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  std::size_t n_pos = 0;
  for (auto l : labels) n_pos += l != 0 ? 1 : 0;
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error("undefined ROC: single-class input");

  const auto idx = order_by_score(scores, true);
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] != 0 ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                   static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return pts;
}

VideoScorer baseline_scorer(const AnomalyPredictor& predictor) {
  return [predictor](std::span<const Vec> clips) {
    std::vector<double> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back(predict_score(predictor, c));
    return out;
  };
}

VideoScorer ltc_scorer(const LtcModel& model) {
  return [model](std::span<const Vec> clips) { return score_stream(model, clips); };
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < jobs; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<ScoredFrames> score_dataset(const Dataset& test, const VideoScorer& scorer,
                                        std::size_t segments, std::size_t jobs) {
  std::vector<ScoredFrames> out(test.videos.size());
  parallel_for(test.videos.size(), jobs, [&](std::size_t i) {
    const auto& v = test.videos[i];
    if (!v.frame_labels) throw Error("test video without frame labels: " + v.id);
    std::vector<Vec> clips;
    for (auto idx : sample_indices(v.clips.size(), segments, Sampling::deterministic())) {
      clips.push_back(widen(v.clips[idx]));
    }
    const auto clip_scores = scorer(clips);
    ScoredFrames sf;
    sf.video_id = v.id;
    sf.video_label = v.label;
    sf.class_name = v.class_name;
    sf.scores = expand_clip_to_frames(clip_scores, v.frames_per_clip, v.total_frames());
    sf.labels = *v.frame_labels;
    out[i] = std::move(sf);
  });
  return out;
}

namespace {

double pooled_auc(std::span<const ScoredFrames> videos,
                  const std::function<bool(const ScoredFrames&)>& keep) {
  Vec scores;
  std::vector<std::uint8_t> labels;
  for (const auto& v : videos) {
    if (!keep(v)) continue;
    if (v.scores.size() != v.labels.size()) throw ShapeError("scores/labels length mismatch");
    scores.insert(scores.end(), v.scores.begin(), v.scores.end());
    labels.insert(labels.end(), v.labels.begin(), v.labels.end());
  }
  return roc_auc(scores, labels);
}

bool has_both_classes(const ScoredFrames& v) {
  bool pos = false;
  bool neg = false;
  for (auto l : v.labels) (l != 0 ? pos : neg) = true;
  return pos && neg;
}

}  // namespace

double auc_overall(std::span<const ScoredFrames> videos) {
  return pooled_auc(videos, [](const ScoredFrames&) { return true; });
}

double auc_abnormal(std::span<const ScoredFrames> videos) {
  const bool qualifying = std::any_of(videos.begin(), videos.end(), [](const ScoredFrames& v) {
    return v.video_label == 1 && has_both_classes(v);
  });
  if (!qualifying) throw Error("no abnormal video with both frame classes");
  return pooled_auc(videos, [](const ScoredFrames& v) { return v.video_label == 1; });
}

std::map<std::string, double> classwise_auc(std::span<const ScoredFrames> videos,
                                            std::vector<std::string>* omitted) {
  std::map<std::string, std::vector<ScoredFrames>> by_class;
  for (const auto& v : videos) {
    if (v.video_label == 1 && v.class_name) by_class[*v.class_name].push_back(v);
  }
  std::map<std::string, double> out;
  for (const auto& [name, group] : by_class) {
    const bool mixed = std::any_of(group.begin(), group.end(), has_both_classes);
    if (!mixed) {
      std::cerr << "warning: class '" << name << "' has no mixed-label frames; omitted\n";
      if (omitted != nullptr) omitted->push_back(name);
      continue;
    }
    out[name] = auc_abnormal(group);
  }
  return out;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["auc_overall"] = auc_overall;
  j["auc_abnormal"] = auc_abnormal;
  j["classwise"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : classwise) j["classwise"][k] = v;
  j["config"] = config;
  return j;
}

EvalReport evaluate(std::span<const ScoredFrames> videos, nlohmann::json config) {
  EvalReport r;
  r.auc_overall = auc_overall(videos);
  r.auc_abnormal = auc_abnormal(videos);
  r.classwise = classwise_auc(videos);
  r.config = config.is_null() ? nlohmann::json::object() : std::move(config);
  return r;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

void write_report_json(const EvalReport& report, const fs::path& path) {
  auto out = open_out(path);
  out << report.to_json().dump(2) << '\n';
}

void write_roc_csv(std::span<const ScoredFrames> videos, const fs::path& path) {
  Vec scores;
  std::vector<std::uint8_t> labels;
  for (const auto& v : videos) {
    scores.insert(scores.end(), v.scores.begin(), v.scores.end());
    labels.insert(labels.end(), v.labels.begin(), v.labels.end());
  }
  auto out = open_out(path);
  out << "fpr,tpr\n";
  for (const auto& p : roc_curve(scores, labels)) {
    out << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
  }
}

void write_classwise_csv(const EvalReport& report, const fs::path& path) {
  auto out = open_out(path);
  out << "class,auc_abnormal\n";
  out << "Average," << format_double(report.auc_abnormal) << '\n';
  for (const auto& [name, auc] : report.classwise) out << name << ',' << format_double(auc) << '\n';
}

// ---------------------------------------------------------------------------

ExperimentConfig reference_experiment_config() {
  ExperimentConfig c;
  c.phase1.hidden_width = 128;
  c.phase1.schedule.lr_max = 1e-3;
  c.phase2.schedule.lr_max = 3e-3;
  c.phase2.ltc.k = 4;
  c.phase2.ltc.attention = AttentionMode::literal;
  c.phase2.ltc.lists = {true, true, true};
  return c;
}

ExperimentRun run_experiment(const Dataset& train, const Dataset& test,
                             const ExperimentConfig& config, const LtcConfig& ltc,
                             std::uint64_t seed, const AnomalyPredictor* phase1) {
  ExperimentRun run;
  if (phase1 != nullptr) {
    run.phase1 = *phase1;
  } else {
    Phase1Config p1 = config.phase1;
    p1.seed = seed;
    run.phase1 = train_phase1(train, p1).predictor;
  }
  Phase2Config p2 = config.phase2;
  p2.ltc = ltc;
  p2.seed = derive_seed(seed, "phase2");
  run.phase2 = train_phase2(train, run.phase1, p2).model;
  const auto frames = score_dataset(test, ltc_scorer(run.phase2), config.eval_segments);
  run.auc_overall = auc_overall(frames);
  run.auc_abnormal = auc_abnormal(frames);
  return run;
}

std::vector<AblationRow> ablation_grid(const Dataset& train, const Dataset& test,
                                       const ExperimentConfig& config,
                                       std::span<const std::uint64_t> seeds) {
  const std::vector<std::pair<std::string, ListSelection>> variants = {
      {"baseline", {false, false, false}},
      {"+Nor", {true, false, false}},
      {"+Abn", {false, true, false}},
      {"+Nor+Abn", {true, true, false}},
      {"+Nor+Abn+His", {true, true, true}},
  };
  std::vector<AnomalyPredictor> phase1(seeds.size());
  parallel_for(seeds.size(), config.jobs, [&](std::size_t s) {
    Phase1Config p1 = config.phase1;
    p1.seed = seeds[s];
    phase1[s] = train_phase1(train, p1).predictor;
  });

  std::vector<AblationRow> rows(seeds.size() * variants.size());
  parallel_for(rows.size(), config.jobs, [&](std::size_t i) {
    const std::size_t s = i / variants.size();
    const auto& [name, lists] = variants[i % variants.size()];
    LtcConfig ltc = config.phase2.ltc;
    ltc.lists = lists;
    const auto run = run_experiment(train, test, config, ltc, seeds[s], &phase1[s]);
    rows[i] = {name, lists, seeds[s], run.auc_overall, run.auc_abnormal};
  });
  return rows;
}

std::vector<KSweepRow> k_sweep(const Dataset& train, const Dataset& test,
                               const ExperimentConfig& config, std::span<const std::size_t> ks,
                               std::span<const std::uint64_t> seeds) {
  std::vector<AnomalyPredictor> phase1(seeds.size());
  parallel_for(seeds.size(), config.jobs, [&](std::size_t s) {
    Phase1Config p1 = config.phase1;
    p1.seed = seeds[s];
    phase1[s] = train_phase1(train, p1).predictor;
  });

  std::vector<KSweepRow> rows(seeds.size() * ks.size());
  parallel_for(rows.size(), config.jobs, [&](std::size_t i) {
    const std::size_t s = i / ks.size();
    LtcConfig ltc = config.phase2.ltc;
    ltc.k = ks[i % ks.size()];
    const auto run = run_experiment(train, test, config, ltc, seeds[s], &phase1[s]);
    rows[i] = {ltc.k, seeds[s], run.auc_overall, run.auc_abnormal};
  });
  return rows;
}

void write_ablation_csv(std::span<const AblationRow> rows, const fs::path& path) {
  auto out = open_out(path);
  out << "row,nor,abn,his,seed,auc_overall,auc_abnormal\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.lists.normal << ',' << r.lists.abnormal << ',' << r.lists.history
        << ',' << r.seed << ',' << format_double(r.auc_overall) << ','
        << format_double(r.auc_abnormal) << '\n';
  }
}

void write_ksweep_csv(std::span<const KSweepRow> rows, const fs::path& path) {
  auto out = open_out(path);
  out << "k,seed,auc_overall,auc_abnormal\n";
  for (const auto& r : rows) {
    out << r.k << ',' << r.seed << ',' << format_double(r.auc_overall) << ','
        << format_double(r.auc_abnormal) << '\n';
  }
}

}  // namespace ltcvad
