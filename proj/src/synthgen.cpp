#include "ltcvad/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "ltcvad/error.hpp"

namespace ltcvad {

std::string to_string(SynthMode mode) { return mode == SynthMode::easy ? "easy" : "hard"; }

SynthMode synth_mode_from_string(const std::string& text) {
  if (text == "easy") return SynthMode::easy;
  if (text == "hard") return SynthMode::hard;
  throw ConfigError("unknown synth mode: " + text);
}

void SynthConfig::validate() const {
  if (n_videos < 2) throw ConfigError("n_videos must be at least 2");
  if (!(abnormal_fraction > 0.0 && abnormal_fraction < 1.0)) {
    throw ConfigError("abnormal_fraction must lie in (0, 1)");
  }
  if (clips_per_video < 2 || dim < 1) throw ConfigError("clips_per_video and dim must be positive");
  if (!(noise_sigma >= 0.0) || !(marker_alpha >= 0.0)) {
    throw ConfigError("noise_sigma and marker_alpha must be non-negative");
  }
  if (window_length < 1 || window_length >= clips_per_video) {
    throw ConfigError("window_length must lie in [1, clips_per_video)");
  }
  if (window_length > clips_per_video - clips_per_video / 2) {
    throw ConfigError("window must fit in the second half of the video");
  }
  if (!(precursor_window > 0.0 && precursor_window <= 0.5)) {
    throw ConfigError("precursor_window must lie in (0, 0.5]");
  }
  if (!(fps > 0.0) || frames_per_clip < 1) throw ConfigError("invalid fps/frames_per_clip");
}

nlohmann::json SynthConfig::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["n_videos"] = n_videos;
  j["abnormal_fraction"] = abnormal_fraction;
  j["clips_per_video"] = clips_per_video;
  j["dim"] = dim;
  j["noise_sigma"] = noise_sigma;
  j["marker_alpha"] = marker_alpha;
  j["precursor_window"] = precursor_window;
  j["window_length"] = window_length;
  j["seed"] = seed;
  j["fps"] = fps;
  j["frames_per_clip"] = frames_per_clip;
  return j;
}

SynthConfig reference_hard_config() {
  SynthConfig c;
  c.mode = SynthMode::hard;
  c.n_videos = 1000;
  c.dim = 16;
  c.noise_sigma = 2.0;
  c.marker_alpha = 20.0;
  c.window_length = 8;
  return c;
}

SynthConfig reference_easy_config() {
  SynthConfig c;
  c.mode = SynthMode::easy;
  c.marker_alpha = 1.0;
  return c;
}

Vec unit_normalize(Vec v) {
  double norm = std::sqrt(dot(v, v));
  if (!(norm > 0.0)) throw Error("cannot normalize a zero vector");
  for (double& x : v) x /= norm;
  return v;
}

namespace {

Vec gaussian_vector(std::mt19937_64& rng, std::size_t d) {
  Vec v(d);
  for (double& x : v) x = standard_normal(rng);
  return v;
}

ClipFeature narrow(const Vec& v) { return ClipFeature(v.begin(), v.end()); }

std::string split_tag(Split split) { return to_string(split); }

SynthTruth placement(const SynthConfig& c, Split split, std::size_t i) {
  std::mt19937_64 rng(derive_seed(c.seed, split_tag(split) + "-placement", i));
  const std::size_t T = c.clips_per_video;
  const std::size_t pre_span =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(c.precursor_window * T)));
  SynthTruth t;
  t.precursor_clip = uniform_index(rng, pre_span);
  const std::size_t first = T / 2;
  const std::size_t last = T - c.window_length;  // inclusive
  t.window_begin = first + uniform_index(rng, last - first + 1);
  t.window_end = t.window_begin + c.window_length;
  return t;
}

std::vector<int> video_labels(const SynthConfig& c, Split split) {
  const auto n_abn = static_cast<std::size_t>(
      std::llround(c.abnormal_fraction * static_cast<double>(c.n_videos)));
  std::vector<int> labels(c.n_videos, 0);
  for (std::size_t i = 0; i < n_abn && i < labels.size(); ++i) labels[i] = 1;
  std::mt19937_64 rng(derive_seed(c.seed, split_tag(split) + "-labels"));
  shuffle(labels, rng);
  return labels;
}

}  // namespace

SynthTruth synth_truth(const SynthConfig& config, Split split, std::size_t video_index) {
  config.validate();
  return placement(config, split, video_index);
}

Dataset generate(const SynthConfig& config, Split split) {
  config.validate();
  const std::size_t T = config.clips_per_video;
  const std::size_t d = config.dim;

  Dataset ds;
  ds.dim = d;
  ds.split = split;
  ds.metadata = nlohmann::json::object();
  ds.metadata["generator"] = "synthgen";
  ds.metadata["config"] = config.to_json();

  Vec global_marker;
  if (config.mode == SynthMode::easy) {
    std::mt19937_64 rng(derive_seed(config.seed, "global-marker"));
    global_marker = unit_normalize(gaussian_vector(rng, d));
  }

  const auto labels = video_labels(config, split);
  for (std::size_t i = 0; i < config.n_videos; ++i) {
    std::mt19937_64 rng(derive_seed(config.seed, split_tag(split) + "-video", i));
    VideoRecord v;
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%04zu", split_tag(split).c_str(), i);
    v.id = id;
    v.label = labels[i];
    v.fps = config.fps;
    v.frames_per_clip = config.frames_per_clip;

    Vec scene = gaussian_vector(rng, d);
    Vec marker;
    if (config.mode == SynthMode::easy) {
      const double along = dot(scene, global_marker);
      for (std::size_t k = 0; k < d; ++k) scene[k] -= along * global_marker[k];
      marker = global_marker;
    } else {
      marker = unit_normalize(gaussian_vector(rng, d));
    }

    std::vector<std::uint8_t> clip_labels(T, 0);
    SynthTruth truth;
    if (v.label == 1) {
      truth = placement(config, split, i);
      for (std::size_t c = truth.window_begin; c < truth.window_end; ++c) clip_labels[c] = 1;
      v.class_name = truth.window_begin < (T / 2 + (T - config.window_length)) / 2
                         ? "window-early"
                         : "window-late";
    }

    for (std::size_t c = 0; c < T; ++c) {
      Vec x = scene;
      double marker_weight = 0.0;
      if (v.label == 1 && clip_labels[c] == 1) marker_weight = config.marker_alpha;
      if (v.label == 1 && config.mode == SynthMode::hard && c == truth.precursor_clip) {
        marker_weight = 1.0;
      }
      for (std::size_t k = 0; k < d; ++k) {
        x[k] += marker_weight * marker[k] + config.noise_sigma * standard_normal(rng);
      }
      if (config.mode == SynthMode::hard) x = unit_normalize(std::move(x));
      v.clips.push_back(narrow(x));
    }

    if (split == Split::test) {
      std::vector<std::uint8_t> frames;
      frames.reserve(v.total_frames());
      for (std::size_t c = 0; c < T; ++c) {
        frames.insert(frames.end(), static_cast<std::size_t>(config.frames_per_clip), clip_labels[c]);
      }
      v.frame_labels = std::move(frames);
    }
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

}  // namespace ltcvad
