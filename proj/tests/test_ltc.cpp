#include <doctest.h>

#include <cmath>
#include <limits>

#include "ltcvad/error.hpp"
#include "ltcvad/evalkit.hpp"
#include "ltcvad/ltc.hpp"
#include "ltcvad/synthgen.hpp"
#include "support.hpp"

using namespace ltcvad;
using testsupport::random_vec;

namespace {

LtcModel random_model(std::size_t dim, std::size_t k, AttentionMode mode, std::uint64_t seed) {
  LtcModel m;
  m.detector = AnomalyPredictor::init(dim, 6, seed);
  m.gates = FusionGate::init(dim, seed + 1);
  m.config.k = k;
  m.config.attention = mode;
  return m;
}

}  // namespace

TEST_SUITE("ltc") {

TEST_CASE("lists equal brute-force recomputation after every update") {
  std::mt19937_64 rng(2024);
  for (int stream = 0; stream < 1000; ++stream) {
    const std::size_t k = testsupport::pick(rng, 0, 8);
    const std::size_t n = testsupport::pick(rng, 1, 100);
    const auto scores = testsupport::random_stream(rng, n, stream % 2 == 0);
    LtcState state(k);
    std::vector<testsupport::SeenClip> seen;
    for (std::size_t i = 0; i < n; ++i) {
      state.update(scores[i], Vec{static_cast<double>(i)}, i);
      seen.push_back({scores[i], i + 1, i});
      const auto want = testsupport::brute_lists(seen, k);
      REQUIRE(testsupport::clip_ids(state.normal()) == want.normal);
      REQUIRE(testsupport::clip_ids(state.abnormal()) == want.abnormal);
      REQUIRE(testsupport::clip_ids(state.history()) == want.history);
    }
    CHECK(state.seen() == n);
  }
}

TEST_CASE("value-returning update leaves the input untouched") {
  const LtcState s(2);
  const auto t = ltc_update(s, 0.4, Vec{1.0}, 0);
  CHECK(s.seen() == 0);
  CHECK(t.seen() == 1);
  CHECK(t.normal().size() == 1);
  CHECK_THROWS(LtcState(2).update(1.5, Vec{1.0}, 0));
}

TEST_CASE("literal attention hand cases") {
  const Vec e1 = {1.0, 0.0, 0.0};
  const Vec e2 = {0.0, 1.0, 0.0};
  const std::vector<Vec> ortho = {e1, e2};
  CHECK(cross_attention(Vec{2.0, -1.0, 5.0}, ortho, AttentionMode::literal) == Vec{2.0, -1.0, 0.0});
  const std::vector<Vec> scaled = {{3.0, 0.0, 0.0}, {0.0, 2.0, 0.0}};
  CHECK(cross_attention(Vec{1.0, 1.0, 1.0}, scaled, AttentionMode::literal) == Vec{9.0, 4.0, 0.0});
  CHECK(cross_attention(Vec{1.0, 1.0, 1.0}, std::vector<Vec>{}, AttentionMode::literal) == Vec{0.0, 0.0, 0.0});
}

TEST_CASE("literal attention is linear in the query") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = testsupport::pick(rng, 1, 8);
    std::vector<Vec> list(testsupport::pick(rng, 1, 8));
    for (auto& v : list) v = random_vec(rng, d);
    const Vec x = random_vec(rng, d);
    const Vec y = random_vec(rng, d);
    const double a = ltcvad::uniform(rng, -2, 2);
    const double b = ltcvad::uniform(rng, -2, 2);
    Vec comb(d);
    for (std::size_t i = 0; i < d; ++i) comb[i] = a * x[i] + b * y[i];
    const Vec fc = cross_attention(comb, list, AttentionMode::literal);
    const Vec fx = cross_attention(x, list, AttentionMode::literal);
    const Vec fy = cross_attention(y, list, AttentionMode::literal);
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(fc[i] - (a * fx[i] + b * fy[i])) <= 1e-12);
  }
}

TEST_CASE("softmax attention returns a convex combination") {
  std::mt19937_64 rng(4);
  const std::vector<Vec> one = {{0.3, -0.2}};
  CHECK(cross_attention(Vec{5.0, 5.0}, one, AttentionMode::softmax) == Vec{0.3, -0.2});
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec> list(3);
    for (auto& v : list) v = random_vec(rng, 4, 0.0, 1.0);
    const Vec out = cross_attention(random_vec(rng, 4), list, AttentionMode::softmax);
    for (std::size_t i = 0; i < 4; ++i) {
      double lo = 1.0, hi = 0.0;
      for (const auto& v : list) {
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
      }
      CHECK(out[i] >= lo - 1e-12);
      CHECK(out[i] <= hi + 1e-12);
    }
  }
  CHECK_THROWS_AS(cross_attention(Vec{1.0}, one, AttentionMode::softmax), ShapeError);
}

TEST_CASE("fusion with empty memory or closed gates returns the raw feature") {
  std::mt19937_64 rng(5);
  const Vec x = random_vec(rng, 6);
  const auto gates = FusionGate::init(6, 9);
  CHECK(fuse(x, Retrievals{}, gates).fused == x);

  LtcState state(3);
  LtcConfig cfg;
  CHECK(fuse(x, retrieve(x, state, cfg), gates).fused == x);

  for (int i = 0; i < 3; ++i) state.update(0.5, random_vec(rng, 6), static_cast<std::size_t>(i));
  auto closed = gates;
  for (auto* g : {&closed.normal, &closed.abnormal, &closed.history}) {
    g->bias[0] = -std::numeric_limits<double>::infinity();
  }
  const auto r = fuse(x, retrieve(x, state, cfg), closed);
  CHECK(r.fused == x);
  CHECK(r.gate_normal == 0.0);
}

TEST_CASE("fusion adds gated retrievals") {
  const Vec x = {1.0, 2.0};
  auto gates = FusionGate::zeros(2);
  Retrievals r;
  r.normal = Vec{2.0, 0.0};
  r.history = Vec{0.0, 4.0};
  const auto out = fuse(x, r, gates);
  CHECK(out.fused == Vec{2.0, 4.0});
  CHECK(out.gate_normal == 0.5);
  CHECK(out.gate_abnormal == 0.0);
}

TEST_CASE("disabled lists are not retrieved") {
  LtcState state(2);
  state.update(0.2, Vec{1.0, 0.0}, 0);
  LtcConfig cfg;
  cfg.lists = list_selection_from_string("his");
  const auto r = retrieve(Vec{1.0, 1.0}, state, cfg);
  CHECK_FALSE(r.normal.has_value());
  CHECK_FALSE(r.abnormal.has_value());
  CHECK(r.history.has_value());
  CHECK(to_string(list_selection_from_string("abnormal, nor")) == "nor,abn");
  CHECK_FALSE(list_selection_from_string("none").any());
  CHECK_THROWS(list_selection_from_string("foo"));
}

TEST_CASE("K = 0 streaming equals per-clip baseline scoring bit for bit") {
  std::mt19937_64 rng(6);
  for (auto mode : {AttentionMode::literal, AttentionMode::softmax}) {
    const auto model = random_model(5, 0, mode, 77);
    std::vector<Vec> clips(20);
    for (auto& c : clips) c = random_vec(rng, 5);
    const auto s = score_stream(model, clips);
    for (std::size_t i = 0; i < clips.size(); ++i) CHECK(s[i] == predict_score(model.detector, clips[i]));
  }
}

TEST_CASE("streaming replays step by step") {
  std::mt19937_64 rng(7);
  const auto model = random_model(4, 3, AttentionMode::literal, 5);
  const auto scorer = AnomalyPredictor::init(4, 6, 8);
  std::vector<Vec> clips(15);
  for (auto& c : clips) c = random_vec(rng, 4);
  for (const AnomalyPredictor* sel : {static_cast<const AnomalyPredictor*>(nullptr), &scorer}) {
    const auto whole = score_stream(model, clips, sel);
    LtcState state(model.config.k);
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const auto step = ltc_forward_stream(model, state, clips[i], i, sel);
      CHECK(step.score == whole[i]);
    }
  }
}

TEST_CASE("phase-2 objective gradient matches finite differences") {
  for (std::uint64_t seed = 200; seed < 230; ++seed) {
    CAPTURE(seed);
    CHECK(testsupport::phase2_grad_error(seed) < 1e-4);
  }
}

TEST_CASE("phase 2 with every list off reduces to resumed phase-1 training") {
  SynthConfig sc = reference_easy_config();
  sc.n_videos = 30;
  const auto train = generate(sc, Split::train);
  Phase1Config p1;
  p1.hidden_width = 8;
  p1.schedule.epochs = 2;
  p1.schedule.warmup_epochs = 1;
  p1.schedule.lr_max = 1e-2;
  const auto base = train_phase1(train, p1).predictor;

  Phase2Config p2;
  p2.ltc.lists = {false, false, false};
  p2.schedule = p1.schedule;
  p2.seed = 99;
  const auto off = train_phase2(train, base, p2);

  Phase1Config resumed = p1;
  resumed.seed = 99;
  const auto again = train_phase1(train, resumed, &base);
  CHECK(off.model.detector == again.predictor);
  CHECK(off.loss_trace == again.loss_trace);

  p2.ltc.lists = {true, true, true};
  p2.ltc.k = 0;
  CHECK(train_phase2(train, base, p2).model.detector == again.predictor);
}

TEST_CASE("phase-2 training is deterministic") {
  SynthConfig sc = reference_hard_config();
  sc.n_videos = 20;
  const auto train = generate(sc, Split::train);
  const auto base = AnomalyPredictor::init(train.dim, 8, 1);
  Phase2Config p2;
  p2.schedule.epochs = 2;
  p2.schedule.warmup_epochs = 1;
  p2.schedule.lr_max = 1e-3;
  p2.ltc.attention = AttentionMode::literal;
  const auto a = train_phase2(train, base, p2);
  const auto b = train_phase2(train, base, p2);
  CHECK(a.model == b.model);
  CHECK(a.loss_trace == b.loss_trace);
}

}
