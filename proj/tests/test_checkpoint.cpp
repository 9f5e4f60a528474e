#include <doctest.h>

#include <cstring>

#include "ltcvad/checkpoint.hpp"
#include "ltcvad/error.hpp"
#include "support.hpp"

using namespace ltcvad;

namespace {

LtcModel random_ltc(std::uint64_t seed) {
  LtcModel m;
  m.detector = AnomalyPredictor::init(5, 7, seed);
  m.gates = FusionGate::init(5, seed + 1);
  m.config.k = 3;
  m.config.attention = AttentionMode::literal;
  m.config.lists = {true, false, true};
  return m;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("container layout") {
  Checkpoint c;
  c.kind = "test";
  c.tensors.push_back({"w", {1}, {2.5}});
  const auto bytes = encode_checkpoint(c);
  REQUIRE(bytes.size() > 24);
  CHECK(std::memcmp(bytes.data(), "VADC", 4) == 0);
  CHECK(bytes[4] == 1);
  std::uint64_t header = 0;
  std::memcpy(&header, bytes.data() + 8, 8);
  CHECK(bytes.size() == 16 + header + 8);
  double v = 0.0;
  std::memcpy(&v, bytes.data() + 16 + header, 8);
  CHECK(v == 2.5);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.kind == "test");
  CHECK(back.tensors == c.tensors);
  CHECK_THROWS(back.tensor("missing"));
}

TEST_CASE("malformed checkpoints are rejected") {
  Checkpoint c;
  c.kind = "test";
  c.tensors.push_back({"w", {2}, {1.0, 2.0}});
  const auto bytes = encode_checkpoint(c);
  auto bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_WITH(decode_checkpoint(bad), "bad magic");
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_WITH(decode_checkpoint(bad), "truncated");
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_WITH(decode_checkpoint(bad), "trailing bytes");
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_WITH(decode_checkpoint(bad), "unsupported version");
  Checkpoint shape;
  shape.kind = "x";
  shape.tensors.push_back({"w", {3}, {1.0}});
  CHECK_THROWS(encode_checkpoint(shape));
}

TEST_CASE("phase checkpoints round-trip exactly") {
  testsupport::TempDir dir("ckpt");
  const auto p1 = AnomalyPredictor::init(6, 9, 3);
  write_checkpoint(phase1_checkpoint(p1, {{"seed", 3}}), dir.path() / "p1.vadc");
  const auto c1 = read_checkpoint(dir.path() / "p1.vadc");
  CHECK(phase1_from_checkpoint(c1) == p1);
  CHECK(c1.meta.at("seed") == 3);

  const auto m = random_ltc(4);
  write_checkpoint(phase2_checkpoint(m), dir.path() / "p2.vadc");
  const auto c2 = read_checkpoint(dir.path() / "p2.vadc");
  CHECK(phase2_from_checkpoint(c2) == m);
  CHECK_THROWS_WITH(phase1_from_checkpoint(c2), doctest::Contains("expected a phase1 checkpoint"));

  Phase3Model p3{m, Adaptor::init(5, 4, 2), ToyDecoder::init(11, 4, 3, 6, 2)};
  write_checkpoint(phase3_checkpoint(p3), dir.path() / "p3.vadc");
  CHECK(phase3_from_checkpoint(read_checkpoint(dir.path() / "p3.vadc")) == p3);
  CHECK(encode_checkpoint(phase3_checkpoint(p3)) == encode_checkpoint(phase3_checkpoint(p3)));
}

}
