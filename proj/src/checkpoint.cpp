#include "ltcvad/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "ltcvad/error.hpp"

namespace ltcvad {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'V', 'A', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t offset, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

void add_layer(Checkpoint& c, const std::string& name, const DenseLayer& layer) {
  c.tensors.push_back({name + ".weight", {layer.out, layer.in}, layer.weights});
  c.tensors.push_back({name + ".bias", {layer.out}, layer.bias});
}

DenseLayer get_layer(const Checkpoint& c, const std::string& name) {
  const auto& w = c.tensor(name + ".weight");
  const auto& b = c.tensor(name + ".bias");
  if (w.shape.size() != 2 || b.shape.size() != 1 || b.shape[0] != w.shape[0]) {
    throw FormatError("bad tensor shapes for " + name);
  }
  DenseLayer layer(w.shape[1], w.shape[0]);
  layer.weights = w.data;
  layer.bias = b.data;
  layer.validate();
  return layer;
}

void add_predictor(Checkpoint& c, const AnomalyPredictor& p) {
  add_layer(c, "detector.hidden", p.hidden);
  add_layer(c, "detector.head", p.head);
}

AnomalyPredictor get_predictor(const Checkpoint& c) {
  AnomalyPredictor p{get_layer(c, "detector.hidden"), get_layer(c, "detector.head")};
  if (p.head.in != p.hidden.out || p.head.out != 2) throw FormatError("inconsistent detector shapes");
  return p;
}

nlohmann::json ltc_json(const LtcConfig& cfg) {
  nlohmann::ordered_json j;
  j["k"] = cfg.k;
  j["attention"] = to_string(cfg.attention);
  j["lists"] = to_string(cfg.lists);
  return j;
}

LtcConfig ltc_from_json(const nlohmann::json& j) {
  LtcConfig cfg;
  cfg.k = j.at("k").get<std::size_t>();
  cfg.attention = attention_mode_from_string(j.at("attention").get<std::string>());
  cfg.lists = list_selection_from_string(j.at("lists").get<std::string>());
  return cfg;
}

void add_ltc(Checkpoint& c, const LtcModel& m) {
  add_predictor(c, m.detector);
  add_layer(c, "gates.normal", m.gates.normal);
  add_layer(c, "gates.abnormal", m.gates.abnormal);
  add_layer(c, "gates.history", m.gates.history);
  c.meta["ltc"] = ltc_json(m.config);
}

LtcModel get_ltc(const Checkpoint& c) {
  LtcModel m;
  m.detector = get_predictor(c);
  m.gates = {get_layer(c, "gates.normal"), get_layer(c, "gates.abnormal"),
             get_layer(c, "gates.history")};
  m.config = ltc_from_json(c.meta.at("ltc"));
  return m;
}

void expect_kind(const Checkpoint& c, const std::string& kind) {
  if (c.kind != kind) throw FormatError("expected a " + kind + " checkpoint, found " + c.kind);
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw FormatError("missing tensor " + name);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["kind"] = ckpt.kind;
  header["meta"] = ckpt.meta.is_null() ? nlohmann::json::object() : ckpt.meta;
  header["tensors"] = nlohmann::ordered_json::array();
  for (const auto& t : ckpt.tensors) {
    if (element_count(t.shape) != t.data.size()) throw ShapeError("tensor size mismatch: " + t.name);
    nlohmann::ordered_json e;
    e["name"] = t.name;
    e["shape"] = t.shape;
    header["tensors"].push_back(e);
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le(out, kVersion, 4);
  put_le(out, text.size(), 8);
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : ckpt.tensors) {
    for (double v : t.data) {
      if (!std::isfinite(v)) throw Error("non-finite parameter in " + t.name);
      put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw FormatError("truncated");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) throw FormatError("bad magic");
  if (get_le(bytes, 4, 4) != kVersion) throw FormatError("unsupported version");
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - 16) throw FormatError("truncated");
  Checkpoint c;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    c.kind = header.at("kind").get<std::string>();
    c.meta = header.at("meta");
    for (const auto& e : header.at("tensors")) {
      c.tensors.push_back({e.at("name").get<std::string>(), e.at("shape").get<std::vector<std::size_t>>(), {}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  std::size_t offset = 16 + header_len;
  for (auto& t : c.tensors) {
    const std::size_t n = element_count(t.shape);
    if ((bytes.size() - offset) / 8 < n) throw FormatError("truncated");
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i, offset += 8) {
      t.data[i] = std::bit_cast<double>(get_le(bytes, offset, 8));
      if (!std::isfinite(t.data[i])) throw FormatError("non-finite parameter in " + t.name);
    }
  }
  if (offset != bytes.size()) throw FormatError("trailing bytes");
  return c;
}

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint phase1_checkpoint(const AnomalyPredictor& predictor, nlohmann::json meta) {
  Checkpoint c;
  c.kind = "phase1";
  c.meta = meta.is_null() ? nlohmann::json::object() : std::move(meta);
  add_predictor(c, predictor);
  return c;
}

AnomalyPredictor phase1_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, "phase1");
  return get_predictor(ckpt);
}

Checkpoint phase2_checkpoint(const LtcModel& model, nlohmann::json meta) {
  Checkpoint c;
  c.kind = "phase2";
  c.meta = meta.is_null() ? nlohmann::json::object() : std::move(meta);
  add_ltc(c, model);
  return c;
}

LtcModel phase2_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, "phase2");
  return get_ltc(ckpt);
}

Checkpoint phase3_checkpoint(const Phase3Model& model, nlohmann::json meta) {
  Checkpoint c;
  c.kind = "phase3";
  c.meta = meta.is_null() ? nlohmann::json::object() : std::move(meta);
  add_ltc(c, model.frozen);
  add_layer(c, "adaptor", model.adaptor.projection);
  const auto& d = model.decoder;
  c.tensors.push_back({"decoder.question_embedding", {d.vocab_size, d.question_dim}, d.question_embedding});
  for (std::size_t j = 0; j < d.positions.size(); ++j) {
    add_layer(c, "decoder.position" + std::to_string(j), d.positions[j]);
  }
  c.meta["decoder"] = {{"vocab_size", d.vocab_size},
                       {"d_embed", d.d_embed},
                       {"question_dim", d.question_dim},
                       {"positions", d.positions.size()}};
  return c;
}

Phase3Model phase3_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, "phase3");
  Phase3Model m;
  m.frozen = get_ltc(ckpt);
  m.adaptor.projection = get_layer(ckpt, "adaptor");
  const auto& dj = ckpt.meta.at("decoder");
  m.decoder.vocab_size = dj.at("vocab_size").get<std::size_t>();
  m.decoder.d_embed = dj.at("d_embed").get<std::size_t>();
  m.decoder.question_dim = dj.at("question_dim").get<std::size_t>();
  const auto& emb = ckpt.tensor("decoder.question_embedding");
  if (emb.data.size() != m.decoder.vocab_size * m.decoder.question_dim) {
    throw FormatError("bad question embedding shape");
  }
  m.decoder.question_embedding = emb.data;
  const auto n = dj.at("positions").get<std::size_t>();
  for (std::size_t j = 0; j < n; ++j) {
    m.decoder.positions.push_back(get_layer(ckpt, "decoder.position" + std::to_string(j)));
  }
  if (m.adaptor.projection.out != m.decoder.d_embed) throw FormatError("adaptor/decoder mismatch");
  return m;
}

}  // namespace ltcvad
