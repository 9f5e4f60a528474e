#include <doctest.h>

#include <cmath>

#include "ltcvad/error.hpp"
#include "ltcvad/synthgen.hpp"
#include "support.hpp"

using namespace ltcvad;

namespace {

double norm(const ClipFeature& c) {
  double s = 0.0;
  for (float v : c) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("synthgen") {

TEST_CASE("abnormal frame fraction equals w / T") {
  const SynthConfig c;  // n 200, T 32, w 4
  const auto ds = generate(c, Split::test);
  std::size_t abn_frames = 0;
  std::size_t frames = 0;
  for (const auto& v : ds.videos) {
    if (v.label != 1) continue;
    for (auto f : *v.frame_labels) abn_frames += f;
    frames += v.frame_labels->size();
  }
  CHECK(ds.count_label(1) == 100);
  CHECK(static_cast<double>(abn_frames) / static_cast<double>(frames) == 0.125);
}

TEST_CASE("hard-mode clips have unit norm") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    Vec v = testsupport::random_vec(rng, testsupport::pick(rng, 1, 40), -5, 5);
    v[0] += 0.1;
    CHECK(std::sqrt(dot(unit_normalize(v), unit_normalize(v))) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK_THROWS(unit_normalize(Vec{0.0, 0.0}));
  for (const auto& cfg : {SynthConfig{}, reference_hard_config()}) {
    for (const auto& v : generate(cfg, Split::train).videos) {
      for (const auto& c : v.clips) REQUIRE(std::abs(norm(c) - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("labels follow the window and precursor placement") {
  const auto c = reference_hard_config();
  const auto ds = generate(c, Split::test);
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    const auto& v = ds.videos[i];
    const auto& fl = *v.frame_labels;
    if (v.label == 0) {
      for (auto f : fl) REQUIRE(f == 0);
      CHECK_FALSE(v.class_name.has_value());
      continue;
    }
    const auto t = synth_truth(c, Split::test, i);
    CHECK(t.window_end - t.window_begin == c.window_length);
    CHECK(t.window_begin >= c.clips_per_video / 2);
    CHECK(t.precursor_clip < 8);
    for (std::size_t clip = 0; clip < c.clips_per_video; ++clip) {
      const bool in_window = clip >= t.window_begin && clip < t.window_end;
      REQUIRE(fl[clip * 16] == (in_window ? 1 : 0));
    }
    CHECK((v.class_name == "window-early" || v.class_name == "window-late"));
  }
}

TEST_CASE("precursor and window carry the per-video marker in hard mode") {
  SynthConfig c = reference_hard_config();
  c.n_videos = 40;
  c.noise_sigma = 0.0;
  const auto ds = generate(c, Split::train);
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    const auto& v = ds.videos[i];
    if (v.label == 0) continue;
    const auto t = synth_truth(c, Split::train, i);
    const auto& pre = v.clips[t.precursor_clip];
    const auto& win = v.clips[t.window_begin];
    const auto& plain = v.clips[t.precursor_clip == 0 ? 1 : 0];
    // Without noise every plain clip is the scene direction; precursor and
    // window clips differ from it and the window clips are identical.
    CHECK(pre != plain);
    CHECK(win != plain);
    CHECK(win == v.clips[t.window_end - 1]);
  }
}

TEST_CASE("easy mode is separable by the marker direction") {
  const auto c = reference_easy_config();
  const auto ds = generate(c, Split::test);
  // Marker direction estimate: within-video mean difference between window
  // and non-window clips, which cancels the per-video scene vector.
  Vec dir(ds.dim, 0.0);
  for (const auto& v : ds.videos) {
    if (v.label != 1) continue;
    Vec in(ds.dim, 0.0), out(ds.dim, 0.0);
    double n_in = 0, n_out = 0;
    for (std::size_t clip = 0; clip < v.clips.size(); ++clip) {
      const bool abn = (*v.frame_labels)[clip * 16] == 1;
      auto& m = abn ? in : out;
      for (std::size_t k = 0; k < ds.dim; ++k) m[k] += v.clips[clip][k];
      (abn ? n_in : n_out) += 1;
    }
    for (std::size_t k = 0; k < ds.dim; ++k) dir[k] += in[k] / n_in - out[k] / n_out;
  }
  dir = unit_normalize(dir);
  double n_abn = 0, n_nor = 0;
  std::size_t ok_abn = 0, ok_nor = 0;
  for (const auto& v : ds.videos) {
    for (std::size_t clip = 0; clip < v.clips.size(); ++clip) {
      const double p = dot(widen(v.clips[clip]), dir);
      if ((*v.frame_labels)[clip * 16] == 1) {
        ok_abn += p >= c.marker_alpha - 3 * c.noise_sigma;
        n_abn += 1;
      } else {
        ok_nor += p <= 3 * c.noise_sigma;
        n_nor += 1;
      }
    }
  }
  CHECK(static_cast<double>(ok_abn) >= 0.99 * n_abn);
  CHECK(static_cast<double>(ok_nor) >= 0.99 * n_nor);
}

TEST_CASE("generation is deterministic and split-separated") {
  SynthConfig c = reference_hard_config();
  c.n_videos = 30;
  const auto a = generate(c, Split::train);
  const auto b = generate(c, Split::train);
  const auto t = generate(c, Split::test);
  for (std::size_t i = 0; i < a.videos.size(); ++i) {
    CHECK(encode_features(a.videos[i]) == encode_features(b.videos[i]));
    CHECK(a.videos[i].clips != t.videos[i].clips);
    CHECK_FALSE(a.videos[i].frame_labels.has_value());
  }
  CHECK(a.metadata == b.metadata);
  c.seed = 43;
  CHECK(generate(c, Split::train).videos[0].clips != a.videos[0].clips);
}

TEST_CASE("invalid configs are rejected") {
  SynthConfig c;
  c.abnormal_fraction = 1.0;
  CHECK_THROWS_AS(generate(c, Split::train), ConfigError);
  c = SynthConfig{};
  c.window_length = 32;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.marker_alpha = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(synth_mode_from_string("medium"), ConfigError);
}

}
