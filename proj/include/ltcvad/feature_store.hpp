#pragma once

// Clip-feature data model, the VADF binary feature file, JSONL manifests and
// segment sampling.
//
// VADF layout (little-endian):
//   0..3   magic "VADF"
//   4..7   u32 version (1)
//   8..11  u32 clip_count
//   12..15 u32 dim
//   16..   clip_count * dim float32 values, clip-major

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ltcvad {

using ClipFeature = std::vector<float>;

struct VideoRecord {
  std::string id;
  int label = 0;
  std::optional<std::string> class_name;
  std::vector<ClipFeature> clips;
  double fps = 30.0;
  int frames_per_clip = 16;
  std::optional<std::vector<std::uint8_t>> frame_labels;

  std::size_t dim() const { return clips.empty() ? 0 : clips.front().size(); }
  std::size_t total_frames() const { return clips.size() * static_cast<std::size_t>(frames_per_clip); }
  double clip_duration() const { return frames_per_clip / fps; }

  /// Throws on any broken record invariant.
  void validate() const;
};

enum class Split { train, test };

std::string to_string(Split split);
Split split_from_string(const std::string& text);

struct ManifestEntry {
  std::string id;
  int label = 0;
  std::optional<std::string> class_name;
  std::filesystem::path feature_path;  // as written in the manifest (may be relative)
  double fps = 30.0;
  int frames_per_clip = 16;
  std::optional<std::vector<std::uint8_t>> frame_labels;
};

struct DatasetManifest {
  std::size_t dimension = 0;
  Split split = Split::train;
  std::vector<ManifestEntry> videos;
  /// Generator or producer metadata, echoed into the sidecar file.
  nlohmann::json metadata = nlohmann::json::object();
};

/// Videos loaded into memory; all share `dim`.
struct Dataset {
  std::size_t dim = 0;
  Split split = Split::train;
  std::vector<VideoRecord> videos;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t count_label(int label) const;
};

void write_features(const VideoRecord& record, const std::filesystem::path& path);
/// Returns a record holding only the clips; metadata comes from the manifest.
VideoRecord read_features(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_features(const VideoRecord& record);
VideoRecord decode_features(std::span<const std::uint8_t> bytes);

/// Manifest: `<path>` holds one JSON object per video; `<path>.meta.json`
/// holds {dimension, split, metadata}.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Reads the manifest and every referenced feature file; checks that all
/// files exist and declare the same dimension.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes one feature file per video under `directory/features/` plus the
/// manifest `directory/<name>.jsonl`. Returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& directory,
                                   const std::string& name);

// ---------------------------------------------------------------------------

struct SegmentBounds {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

/// Partitions n items into m contiguous near-equal segments, earlier segments
/// taking the remainder. m is clamped to n.
std::vector<SegmentBounds> segment_bounds(std::size_t n, std::size_t m);

struct Sampling {
  enum class Kind { deterministic, random };
  Kind kind = Kind::deterministic;
  std::uint64_t seed = 0;

  static Sampling deterministic() { return {Kind::deterministic, 0}; }
  static Sampling random(std::uint64_t seed) { return {Kind::random, seed}; }
};

/// One index per segment: floor-midpoint in deterministic mode, uniform
/// within the segment in random mode.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, const Sampling& sampling);

std::vector<ClipFeature> segment_and_sample(std::span<const ClipFeature> clips, std::size_t m,
                                            const Sampling& sampling);

}  // namespace ltcvad
