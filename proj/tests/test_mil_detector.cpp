#include <doctest.h>

#include <cmath>

#include "ltcvad/error.hpp"
#include "ltcvad/mil_detector.hpp"
#include "ltcvad/synthgen.hpp"
#include "support.hpp"

using namespace ltcvad;

TEST_SUITE("mil_detector") {

TEST_CASE("bce matches the closed form and clamps") {
  const std::vector<MilTuple> t = {{0.8, 1}, {0.3, 0}};
  CHECK(bce_loss(t) == doctest::Approx(-(std::log(0.8) + std::log(0.7)) / 2.0).epsilon(1e-15));
  const std::vector<MilTuple> sure = {{1.0, 1}, {0.0, 0}};
  CHECK(bce_loss(sure) == doctest::Approx(-std::log(1.0 - kBceEpsilon)).epsilon(1e-12));
  const std::vector<MilTuple> wrong = {{0.0, 1}};
  CHECK(bce_loss(wrong) == doctest::Approx(-std::log(kBceEpsilon)).epsilon(1e-12));
  CHECK_THROWS(bce_loss(std::vector<MilTuple>{}));
}

TEST_CASE("bce margin gradient equals p - y away from the clamp") {
  for (double z : {-4.0, -0.3, 0.0, 1.7, 5.0}) {
    for (int y : {0, 1}) {
      const double h = 1e-6;
      auto f = [&](double zz) {
        const std::vector<MilTuple> t = {{logistic(zz), y}};
        return bce_loss(t);
      };
      const double numeric = (f(z + h) - f(z - h)) / (2 * h);
      CHECK(bce_grad_margin(logistic(z), y) == doctest::Approx(logistic(z) - y).epsilon(1e-12));
      CHECK(numeric == doctest::Approx(logistic(z) - y).epsilon(1e-6));
    }
  }
  CHECK(bce_grad_margin(1.0, 1) == 0.0);
  CHECK(bce_grad_margin(0.0, 0) == 0.0);
}

TEST_CASE("mil selection takes the first maximum") {
  const Vec s = {0.1, 0.7, 0.3, 0.7};
  const auto sel = mil_select(s);
  CHECK(sel.value == 0.7);
  CHECK(sel.index == 1);
  CHECK_THROWS(mil_select(Vec{}));
}

TEST_CASE("score is the logistic of the logit gap") {
  std::mt19937_64 rng(1);
  const auto g = AnomalyPredictor::init(5, 7, 3);
  for (int i = 0; i < 20; ++i) {
    const Vec x = testsupport::random_vec(rng, 5);
    const auto t = predictor_forward(g, x);
    CHECK(t.score == doctest::Approx(logistic(t.logit_abnormal - t.logit_normal)).epsilon(1e-15));
    CHECK(t.score == predict_score(g, x));
    for (double h : t.hidden) CHECK(h >= 0.0);
  }
  CHECK_THROWS_AS(predict_score(g, Vec{1.0}), ShapeError);
}

TEST_CASE("phase-1 objective gradient matches finite differences") {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    CAPTURE(seed);
    CHECK(testsupport::phase1_grad_error(seed) < 1e-4);
  }
}

TEST_CASE("phase-1 training is deterministic and lowers the loss on easy data") {
  SynthConfig sc = reference_easy_config();
  sc.n_videos = 40;
  const auto train = generate(sc, Split::train);
  Phase1Config cfg;
  cfg.hidden_width = 16;
  cfg.schedule.epochs = 6;
  cfg.schedule.warmup_epochs = 1;
  cfg.schedule.lr_max = 1e-2;
  const auto a = train_phase1(train, cfg);
  const auto b = train_phase1(train, cfg);
  CHECK(a.predictor == b.predictor);
  CHECK(a.loss_trace == b.loss_trace);
  REQUIRE(a.loss_trace.size() == 6);
  CHECK(a.loss_trace.back() < a.loss_trace.front());
  CHECK_FALSE(a.degenerate);

  cfg.seed = 43;
  CHECK_FALSE(train_phase1(train, cfg).predictor == a.predictor);
}

TEST_CASE("single-class training data is flagged") {
  SynthConfig sc = reference_easy_config();
  sc.n_videos = 10;
  auto train = generate(sc, Split::train);
  for (auto& v : train.videos) v.label = 0;
  Phase1Config cfg;
  cfg.hidden_width = 4;
  cfg.schedule.epochs = 1;
  cfg.schedule.warmup_epochs = 1;
  CHECK(train_phase1(train, cfg).degenerate);
}

TEST_CASE("bags sample one clip per segment") {
  VideoRecord v;
  v.label = 1;
  for (int i = 0; i < 70; ++i) v.clips.push_back({static_cast<float>(i)});
  const auto bag = detail::make_bag(v, 32, Sampling::deterministic());
  CHECK(bag.clips.size() == 32);
  CHECK(bag.label == 1);
  CHECK(bag.clips[0][0] == 1.0);
}

}
