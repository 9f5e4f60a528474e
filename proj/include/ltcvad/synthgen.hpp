#pragma once

// Deterministic synthetic clip-feature datasets.
//
// hard mode: every clip is unit-normalized. Abnormal videos carry a per-video
// random marker m_v; one precursor clip early in the video contains m_v at
// full strength (labeled normal) and a contiguous window in the second half
// contains alpha * m_v (labeled abnormal). Without context the clips of all
// classes are identically distributed on the sphere.
//
// easy mode: one global marker direction orthogonal to every scene vector, no
// normalization, no precursor; linearly separable per clip.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "ltcvad/feature_store.hpp"
#include "ltcvad/neuralops.hpp"

namespace ltcvad {

enum class SynthMode { easy, hard };

std::string to_string(SynthMode mode);
SynthMode synth_mode_from_string(const std::string& text);

struct SynthConfig {
  std::size_t n_videos = 200;
  double abnormal_fraction = 0.5;
  std::size_t clips_per_video = 32;
  std::size_t dim = 32;
  double noise_sigma = 0.1;
  double marker_alpha = 0.35;
  double precursor_window = 0.25;  // fraction of the video that may hold the precursor
  std::size_t window_length = 4;
  SynthMode mode = SynthMode::hard;
  std::uint64_t seed = 42;
  double fps = 30.0;
  int frames_per_clip = 16;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Calibrated hard-mode configuration used by the directional tests.
SynthConfig reference_hard_config();
/// Calibrated easy-mode configuration used by the smoke tests.
SynthConfig reference_easy_config();

/// Scales v to unit Euclidean norm (v must be non-zero).
Vec unit_normalize(Vec v);

/// Generates one split. Train and test draw from independent streams of the
/// same seed; test videos carry frame labels. Abnormal videos are tagged
/// "window-early" or "window-late" by where their anomalous window starts.
Dataset generate(const SynthConfig& config, Split split);

/// Per-video ground truth for hard-mode tests.
struct SynthTruth {
  std::size_t precursor_clip = 0;
  std::size_t window_begin = 0;
  std::size_t window_end = 0;
};

/// Recovers the generator's window/precursor placement for an abnormal video.
SynthTruth synth_truth(const SynthConfig& config, Split split, std::size_t video_index);

}  // namespace ltcvad
