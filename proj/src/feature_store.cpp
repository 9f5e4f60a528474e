#include "ltcvad/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ltcvad/error.hpp"
#include "ltcvad/neuralops.hpp"

namespace ltcvad {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'V', 'A', 'D', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

fs::path meta_path(const fs::path& manifest) {
  fs::path p = manifest;
  p += ".meta.json";
  return p;
}

}  // namespace

void VideoRecord::validate() const {
  if (label != 0 && label != 1) throw Error("label must be 0 or 1");
  if (!(fps > 0.0)) throw Error("fps must be positive");
  if (frames_per_clip < 1) throw Error("frames_per_clip must be positive");
  const std::size_t d = dim();
  for (const auto& clip : clips) {
    if (clip.size() != d || d == 0) throw ShapeError("clip dimension mismatch");
    for (float v : clip) {
      if (!std::isfinite(v)) throw Error("non-finite feature");
    }
  }
  if (frame_labels) {
    if (frame_labels->size() != total_frames()) throw Error("frame_labels length mismatch");
    for (auto v : *frame_labels) {
      if (v > 1) throw Error("frame label must be 0 or 1");
      if (label == 0 && v != 0) throw Error("normal video with abnormal frame labels");
    }
  }
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw FormatError("unknown split: " + text);
}

std::size_t Dataset::count_label(int label) const {
  return static_cast<std::size_t>(std::count_if(
      videos.begin(), videos.end(), [label](const VideoRecord& v) { return v.label == label; }));
}

std::vector<std::uint8_t> encode_features(const VideoRecord& record) {
  const std::size_t d = record.dim();
  if (record.clips.empty() || d == 0) throw Error("empty feature record");
  for (const auto& clip : record.clips) {
    if (clip.size() != d) throw ShapeError("clip dimension mismatch");
    for (float v : clip) {
      if (!std::isfinite(v)) throw Error("non-finite feature");
    }
  }
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + record.clips.size() * d * 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(record.clips.size()));
  put_u32(out, static_cast<std::uint32_t>(d));
  for (const auto& clip : record.clips) {
    for (float v : clip) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

VideoRecord decode_features(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw FormatError("truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic");
  if (get_u32(bytes, 4) != kVersion) throw FormatError("unsupported version");
  const std::size_t clip_count = get_u32(bytes, 8);
  const std::size_t dim = get_u32(bytes, 12);
  if (dim == 0) throw FormatError("dimension 0");
  const std::size_t expected = kHeaderBytes + clip_count * dim * 4;
  if (bytes.size() < expected) throw FormatError("truncated");
  if (bytes.size() > expected) throw FormatError("trailing bytes");

  VideoRecord record;
  record.clips.assign(clip_count, ClipFeature(dim));
  std::size_t offset = kHeaderBytes;
  for (auto& clip : record.clips) {
    for (float& v : clip) {
      v = std::bit_cast<float>(get_u32(bytes, offset));
      offset += 4;
      if (!std::isfinite(v)) throw FormatError("non-finite feature");
    }
  }
  return record;
}

void write_features(const VideoRecord& record, const fs::path& path) {
  write_file(path, encode_features(record));
}

VideoRecord read_features(const fs::path& path) {
  auto bytes = read_file(path);
  auto record = decode_features(bytes);
  record.id = path.stem().string();
  return record;
}

// ---------------------------------------------------------------------------

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& v : manifest.videos) {
    nlohmann::ordered_json line;
    line["id"] = v.id;
    line["label"] = v.label;
    if (v.class_name) line["class_name"] = *v.class_name;
    line["feature_path"] = v.feature_path.generic_string();
    line["fps"] = v.fps;
    line["frames_per_clip"] = v.frames_per_clip;
    if (v.frame_labels) line["frame_labels"] = *v.frame_labels;
    out << line.dump() << '\n';
  }
  nlohmann::ordered_json meta;
  meta["dimension"] = manifest.dimension;
  meta["split"] = to_string(manifest.split);
  meta["metadata"] = manifest.metadata;
  std::ofstream meta_out(meta_path(path), std::ios::trunc);
  meta_out << meta.dump(2) << '\n';
  if (!out || !meta_out) throw Error("write failed: " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.label = j.at("label").get<int>();
      if (j.contains("class_name") && !j["class_name"].is_null()) {
        e.class_name = j["class_name"].get<std::string>();
      }
      e.feature_path = j.at("feature_path").get<std::string>();
      e.fps = j.at("fps").get<double>();
      e.frames_per_clip = j.at("frames_per_clip").get<int>();
      if (j.contains("frame_labels") && !j["frame_labels"].is_null()) {
        e.frame_labels = j["frame_labels"].get<std::vector<std::uint8_t>>();
      }
      manifest.videos.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  const auto mp = meta_path(path);
  if (fs::exists(mp)) {
    std::ifstream meta_in(mp);
    auto meta = nlohmann::json::parse(meta_in);
    manifest.dimension = meta.value("dimension", std::size_t{0});
    manifest.split = split_from_string(meta.value("split", std::string("train")));
    if (meta.contains("metadata")) manifest.metadata = meta["metadata"];
  }
  return manifest;
}

Dataset load_dataset(const fs::path& manifest_path) {
  const auto manifest = read_manifest(manifest_path);
  Dataset ds;
  ds.split = manifest.split;
  ds.dim = manifest.dimension;
  ds.metadata = manifest.metadata;
  const fs::path base = manifest_path.parent_path();
  for (const auto& e : manifest.videos) {
    fs::path fp = e.feature_path.is_absolute() ? e.feature_path : base / e.feature_path;
    if (!fs::exists(fp)) throw Error("missing feature file: " + fp.string());
    VideoRecord r = read_features(fp);
    if (ds.dim == 0) ds.dim = r.dim();
    if (r.dim() != ds.dim) throw ShapeError("feature file dimension mismatch: " + fp.string());
    r.id = e.id;
    r.label = e.label;
    r.class_name = e.class_name;
    r.fps = e.fps;
    r.frames_per_clip = e.frames_per_clip;
    r.frame_labels = e.frame_labels;
    r.validate();
    ds.videos.push_back(std::move(r));
  }
  return ds;
}

fs::path save_dataset(const Dataset& dataset, const fs::path& directory, const std::string& name) {
  DatasetManifest manifest;
  manifest.dimension = dataset.dim;
  manifest.split = dataset.split;
  manifest.metadata = dataset.metadata;
  for (const auto& v : dataset.videos) {
    v.validate();
    const fs::path rel = fs::path("features") / name / (v.id + ".vadf");
    write_features(v, directory / rel);
    manifest.videos.push_back(
        {v.id, v.label, v.class_name, rel, v.fps, v.frames_per_clip, v.frame_labels});
  }
  const fs::path path = directory / (name + ".jsonl");
  write_manifest(manifest, path);
  return path;
}

// ---------------------------------------------------------------------------

std::vector<SegmentBounds> segment_bounds(std::size_t n, std::size_t m) {
  if (m == 0) throw Error("segment count must be positive");
  m = std::min(m, n);
  std::vector<SegmentBounds> out;
  out.reserve(m);
  const std::size_t base = n / m;
  const std::size_t extra = n % m;
  std::size_t begin = 0;
  for (std::size_t s = 0; s < m; ++s) {
    const std::size_t len = base + (s < extra ? 1 : 0);
    out.push_back({begin, begin + len});
    begin += len;
  }
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, const Sampling& sampling) {
  if (m == 0) throw Error("segment count must be positive");
  if (n == 0) throw Error("no clips to sample");
  const auto bounds = segment_bounds(n, m);
  std::vector<std::size_t> idx;
  idx.reserve(bounds.size());
  if (sampling.kind == Sampling::Kind::deterministic) {
    for (const auto& b : bounds) idx.push_back(b.begin + (b.end - b.begin - 1) / 2);
  } else {
    std::mt19937_64 rng(sampling.seed);
    for (const auto& b : bounds) idx.push_back(b.begin + uniform_index(rng, b.end - b.begin));
  }
  return idx;
}

std::vector<ClipFeature> segment_and_sample(std::span<const ClipFeature> clips, std::size_t m,
                                            const Sampling& sampling) {
  const auto idx = sample_indices(clips.size(), m, sampling);
  std::vector<ClipFeature> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(clips[i]);
  return out;
}

}  // namespace ltcvad
