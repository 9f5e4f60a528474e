#pragma once

// Model checkpoints.
//
// VADC layout (little-endian):
//   0..3    magic "VADC"
//   4..7    u32 version (1)
//   8..15   u64 header length H
//   16..    H bytes of UTF-8 JSON: {"kind", ..., "tensors": [{"name", "shape"}]}
//   then    float64 payload, tensors in header order, row-major

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltcvad/instruct.hpp"
#include "ltcvad/ltc.hpp"
#include "ltcvad/mil_detector.hpp"

namespace ltcvad {

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  Vec data;

  bool operator==(const Tensor&) const = default;
};

struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Tensor> tensors;

  const Tensor& tensor(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint phase1_checkpoint(const AnomalyPredictor& predictor, nlohmann::json meta = {});
AnomalyPredictor phase1_from_checkpoint(const Checkpoint& ckpt);

/// Phase-1 tensors plus the gates and the LTC configuration.
Checkpoint phase2_checkpoint(const LtcModel& model, nlohmann::json meta = {});
LtcModel phase2_from_checkpoint(const Checkpoint& ckpt);

struct Phase3Model {
  LtcModel frozen;
  Adaptor adaptor;
  ToyDecoder decoder;

  bool operator==(const Phase3Model&) const = default;
};

Checkpoint phase3_checkpoint(const Phase3Model& model, nlohmann::json meta = {});
Phase3Model phase3_from_checkpoint(const Checkpoint& ckpt);

}  // namespace ltcvad
