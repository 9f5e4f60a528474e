#pragma once

// Shared generators and brute-force oracles for the unit tests and the
// acceptance binary.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>
#include <utility>

#include <unistd.h>

#include "ltcvad/instruct.hpp"
#include "ltcvad/ltc.hpp"
#include "ltcvad/mil_detector.hpp"
#include "ltcvad/neuralops.hpp"

namespace testsupport {

using ltcvad::Vec;

inline Vec random_vec(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (double& x : v) x = ltcvad::uniform(rng, lo, hi);
  return v;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + ltcvad::uniform_index(rng, hi - lo + 1);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ltcvad_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// AUC oracle: every positive/negative pair, integer counts.

inline double pairwise_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  std::uint64_t twice_u = 0;
  std::uint64_t pos = 0;
  std::uint64_t neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i]) ++pos; else ++neg;
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) twice_u += 2;
      else if (scores[i] == scores[j]) twice_u += 1;
    }
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

// ---------------------------------------------------------------------------
// LTC oracle: recompute every list from the full history.

struct SeenClip {
  double score;
  std::uint64_t arrival;
  std::size_t clip;
};

struct BruteLists {
  std::vector<std::size_t> normal, abnormal, history;  // clip indices in list order
};

inline BruteLists brute_lists(const std::vector<SeenClip>& seen, std::size_t k) {
  BruteLists out;
  auto take = [&](auto less) {
    auto v = seen;
    std::sort(v.begin(), v.end(), less);
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < std::min(k, v.size()); ++i) ids.push_back(v[i].clip);
    return ids;
  };
  out.normal = take([](const SeenClip& a, const SeenClip& b) {
    return a.score != b.score ? a.score < b.score : a.arrival > b.arrival;
  });
  out.abnormal = take([](const SeenClip& a, const SeenClip& b) {
    return a.score != b.score ? a.score > b.score : a.arrival > b.arrival;
  });
  const std::size_t first = seen.size() > k ? seen.size() - k : 0;
  for (std::size_t i = first; i < seen.size(); ++i) out.history.push_back(seen[i].clip);
  return out;
}

inline std::vector<std::size_t> clip_ids(const std::vector<ltcvad::LtcEntry>& list) {
  std::vector<std::size_t> ids;
  for (const auto& e : list) ids.push_back(e.clip_index);
  return ids;
}

/// Streams of random scores; `tie_heavy` draws from a handful of values.
inline std::vector<double> random_stream(std::mt19937_64& rng, std::size_t n, bool tie_heavy) {
  std::vector<double> s(n);
  for (double& x : s) {
    x = tie_heavy ? static_cast<double>(ltcvad::uniform_index(rng, 4)) / 3.0 : ltcvad::uniform01(rng);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Interval oracle: per-clip membership, runs found from indicator edges.

inline std::vector<ltcvad::Interval> brute_intervals(const std::vector<double>& scores, double dur,
                                                     double threshold) {
  std::vector<int> ind(scores.size() + 2, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) ind[i + 1] = scores[i] > threshold ? 1 : 0;
  std::vector<ltcvad::Interval> out;
  std::size_t start = 0;
  for (std::size_t i = 1; i < ind.size(); ++i) {
    if (ind[i] == 1 && ind[i - 1] == 0) start = i - 1;
    if (ind[i] == 0 && ind[i - 1] == 1) {
      out.push_back({static_cast<double>(start) * dur, static_cast<double>(i - 1) * dur});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random small training instances for the gradient checks.

/// Shift hidden biases away from zero so ReLU kinks are not straddled.
inline void nudge_biases(ltcvad::AnomalyPredictor& g, std::mt19937_64& rng) {
  for (double& b : g.hidden.bias) b = ltcvad::uniform(rng, 0.05, 0.3) * (ltcvad::uniform01(rng) < 0.5 ? -1 : 1);
  for (double& b : g.head.bias) b = ltcvad::uniform(rng, -0.2, 0.2);
}

inline double phase1_grad_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t dim = pick(rng, 1, 8);
  auto g = ltcvad::AnomalyPredictor::init(dim, pick(rng, 1, 6), seed);
  nudge_biases(g, rng);
  std::vector<ltcvad::MilBag> bags(pick(rng, 2, 4));
  for (std::size_t b = 0; b < bags.size(); ++b) {
    bags[b].label = static_cast<int>(b % 2);
    for (std::size_t c = pick(rng, 1, 5); c > 0; --c) bags[b].clips.push_back(random_vec(rng, dim));
  }
  ltcvad::MarginOptions margin{ltcvad::uniform01(rng) < 0.5, ltcvad::uniform(rng, 0.5, 2.0)};
  auto grad = ltcvad::AnomalyPredictor::zeros(dim, g.hidden_width());
  ltcvad::mil_objective(g, bags, margin, &grad);
  return ltcvad::grad_check([&] { return ltcvad::mil_objective(g, bags, margin, nullptr); },
                            g.parameters(), std::as_const(grad).parameters());
}

inline double phase2_grad_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t dim = pick(rng, 1, 8);
  const std::size_t hidden = pick(rng, 1, 6);
  ltcvad::LtcModel model;
  model.detector = ltcvad::AnomalyPredictor::init(dim, hidden, seed);
  nudge_biases(model.detector, rng);
  model.gates = ltcvad::FusionGate::init(dim, seed + 1);
  for (auto* layer : {&model.gates.normal, &model.gates.abnormal, &model.gates.history}) {
    layer->bias[0] = ltcvad::uniform(rng, -1.0, 1.0);
  }
  model.config.k = pick(rng, 1, 3);
  model.config.attention =
      ltcvad::uniform01(rng) < 0.5 ? ltcvad::AttentionMode::literal : ltcvad::AttentionMode::softmax;
  model.config.lists = {ltcvad::uniform01(rng) < 0.8, ltcvad::uniform01(rng) < 0.8, ltcvad::uniform01(rng) < 0.8};
  const auto scorer = ltcvad::AnomalyPredictor::init(dim, hidden, seed + 2);
  std::vector<ltcvad::LtcBag> bags(pick(rng, 2, 4));
  for (std::size_t b = 0; b < bags.size(); ++b) {
    bags[b].label = static_cast<int>(b % 2);
    for (std::size_t c = pick(rng, 2, 6); c > 0; --c) bags[b].clips.push_back(random_vec(rng, dim, -0.5, 0.5));
  }
  auto grad = ltcvad::LtcGrad::zeros(dim, hidden);
  ltcvad::ltc_objective(model, bags, scorer, &grad);
  return ltcvad::grad_check([&] { return ltcvad::ltc_objective(model, bags, scorer, nullptr); },
                            ltcvad::trainable_parameters(model), std::as_const(grad).parameters());
}

inline double phase3_grad_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t vocab = pick(rng, 3, 8);
  const std::size_t dim = pick(rng, 1, 4);
  const std::size_t d_embed = pick(rng, 2, 4);
  const std::size_t max_len = pick(rng, 1, 4);
  auto adaptor = ltcvad::Adaptor::init(dim, d_embed, seed);
  auto decoder = ltcvad::ToyDecoder::init(vocab, d_embed, pick(rng, 2, 3), max_len, seed);
  std::vector<ltcvad::AnomalyPrompt> prompts;
  for (std::size_t p = pick(rng, 1, 3); p > 0; --p) {
    prompts.push_back(ltcvad::make_prompt(random_vec(rng, dim), random_vec(rng, dim)));
  }
  std::vector<ltcvad::InstructionPair> batch(pick(rng, 1, 3));
  for (auto& pair : batch) {
    for (std::size_t t = pick(rng, 1, 4); t > 0; --t) {
      pair.question_tokens.push_back(static_cast<int>(ltcvad::uniform_index(rng, vocab)));
    }
    for (std::size_t t = pick(rng, 1, max_len); t > 0; --t) {
      pair.answer_tokens.push_back(static_cast<int>(ltcvad::uniform_index(rng, vocab)));
    }
    pair.prompt_ref = static_cast<long>(ltcvad::uniform_index(rng, prompts.size() + 1)) - 1;
  }
  auto grad = ltcvad::Phase3Grad::zeros(adaptor, decoder);
  ltcvad::instruction_objective(adaptor, decoder, batch, prompts, &grad);
  ltcvad::ParamSpans params = adaptor.projection.parameters();
  for (auto s : decoder.parameters()) params.push_back(s);
  return ltcvad::grad_check(
      [&] { return ltcvad::instruction_objective(adaptor, decoder, batch, prompts, nullptr); },
      params, std::as_const(grad).parameters());
}

}  // namespace testsupport
