#include "ltcvad/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "ltcvad/checkpoint.hpp"
#include "ltcvad/error.hpp"
#include "ltcvad/evalkit.hpp"
#include "ltcvad/instruct.hpp"
#include "ltcvad/synthgen.hpp"

namespace ltcvad {

namespace fs = std::filesystem;

fs::path RunLayout::checkpoint(int phase) const {
  return root / "checkpoints" / ("phase" + std::to_string(phase) + ".vadc");
}

fs::path RunLayout::manifest(const std::string& command) const {
  return root / "manifests" / (command + ".json");
}

std::string git_blob_hash(std::span<const std::uint8_t> content) {
  const std::string prefix = "blob " + std::to_string(content.size()) + '\0';
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw Error("hash context allocation failed");
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, prefix.data(), prefix.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1 failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string git_blob_hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return git_blob_hash(bytes);
}

namespace {

std::string text_hash(const std::string& text) {
  return git_blob_hash(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

class ManifestBuilder {
 public:
  ManifestBuilder(const RunLayout& layout, std::string command)
      : layout_(layout), command_(std::move(command)) {}

  void input(const fs::path& p) { inputs_.emplace_back(display(p), git_blob_hash_file(p)); }
  void output(const fs::path& p) { outputs_.emplace_back(display(p), git_blob_hash_file(p)); }

  void dataset_inputs(const fs::path& manifest_path) {
    input(manifest_path);
    fs::path meta = manifest_path;
    meta += ".meta.json";
    if (fs::exists(meta)) input(meta);
    for (const auto& e : read_manifest(manifest_path).videos) {
      input(e.feature_path.is_absolute() ? e.feature_path : manifest_path.parent_path() / e.feature_path);
    }
  }

  void write(const RunConfig& config) const {
    nlohmann::ordered_json j;
    j["command"] = command_;
    j["seed"] = config.seed;
    j["desk_scale"] = config.desk_scale;
    j["config"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : config.settings()) j["config"][k] = v;
    std::string listing;
    j["inputs"] = nlohmann::ordered_json::array();
    for (const auto& [p, h] : inputs_) {
      j["inputs"].push_back({{"path", p}, {"hash", h}});
      listing += h + " " + p + "\n";
    }
    j["input_hash"] = text_hash(listing);
    j["outputs"] = nlohmann::ordered_json::array();
    for (const auto& [p, h] : outputs_) j["outputs"].push_back({{"path", p}, {"hash", h}});
    const auto path = layout_.manifest(command_);
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
  }

 private:
  std::string display(const fs::path& p) const {
    const auto rel = p.lexically_normal().lexically_relative(layout_.root.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
  }

  const RunLayout& layout_;
  std::string command_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> outputs_;
};

fs::path train_path(const RunConfig& c, const RunLayout& l) {
  return c.train_manifest ? *c.train_manifest : l.data_dir() / "train.jsonl";
}

fs::path test_path(const RunConfig& c, const RunLayout& l) {
  return c.test_manifest ? *c.test_manifest : l.data_dir() / "test.jsonl";
}

Dataset load_required(const fs::path& path) {
  if (!fs::exists(path)) throw Error("missing dataset " + path.string() + " (run synth first)");
  return load_dataset(path);
}

void require(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw Error("missing prerequisite checkpoint: " + path.string() + " (" + hint + ")");
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_loss_csv(const fs::path& path, std::span<const double> trace, const char* step_name) {
  std::string text = std::string(step_name) + ",loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    text += std::to_string(i + 1) + "," + format_double(trace[i]) + "\n";
  }
  write_text(path, text);
}

ExperimentConfig experiment_config(const RunConfig& c) {
  ExperimentConfig e;
  e.phase1 = c.phase1;
  e.phase2 = c.phase2;
  e.eval_segments = c.eval_segments;
  e.jobs = c.jobs;
  return e;
}

// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& c, const RunLayout& l) {
  ManifestBuilder m(l, "synth");
  for (auto split : {Split::train, Split::test}) {
    const auto path = save_dataset(generate(c.synth, split), l.data_dir(), to_string(split));
    m.dataset_inputs(path);
  }
  m.write(c);
}

void cmd_train_phase1(const RunConfig& c, const RunLayout& l) {
  ManifestBuilder m(l, "train-phase1");
  const auto tp = train_path(c, l);
  const auto train = load_required(tp);
  m.dataset_inputs(tp);
  const auto result = train_phase1(train, c.phase1_config());
  nlohmann::json meta = {{"seed", c.seed}, {"epochs", c.phase1.schedule.epochs}};
  write_checkpoint(phase1_checkpoint(result.predictor, meta), l.checkpoint(1));
  const auto loss = l.root / "checkpoints" / "phase1_loss.csv";
  write_loss_csv(loss, result.loss_trace, "epoch");
  m.output(l.checkpoint(1));
  m.output(loss);
  m.write(c);
}

void cmd_train_phase2(const RunConfig& c, const RunLayout& l) {
  ManifestBuilder m(l, "train-phase2");
  require(l.checkpoint(1), "run train-phase1 first");
  const auto tp = train_path(c, l);
  const auto train = load_required(tp);
  m.dataset_inputs(tp);
  m.input(l.checkpoint(1));
  const auto phase1 = phase1_from_checkpoint(read_checkpoint(l.checkpoint(1)));
  const auto result = train_phase2(train, phase1, c.phase2_config());
  nlohmann::json meta = {{"seed", c.seed}, {"epochs", c.phase2.schedule.epochs}};
  write_checkpoint(phase2_checkpoint(result.model, meta), l.checkpoint(2));
  const auto loss = l.root / "checkpoints" / "phase2_loss.csv";
  write_loss_csv(loss, result.loss_trace, "epoch");
  m.output(l.checkpoint(2));
  m.output(loss);
  m.write(c);
}

void cmd_gen_instructions(const RunConfig& c, const RunLayout& l) {
  ManifestBuilder m(l, "gen-instructions");
  require(l.checkpoint(2), "run train-phase2 first");
  const auto tp = train_path(c, l);
  const auto train = load_required(tp);
  m.dataset_inputs(tp);
  m.input(l.checkpoint(2));
  const auto model = phase2_from_checkpoint(read_checkpoint(l.checkpoint(2)));
  const auto ic = c.instruct_config();
  const auto vad = generate_vad_instructions(train, model, ic);
  const auto aux = auxiliary_corpus(c.aux_pairs, ic.seed);
  const auto records = assemble_dataset(vad.records, aux, ic.mix_ratio, ic.seed);
  std::vector<std::string> texts;
  for (const auto& r : records) {
    texts.push_back(r.question);
    texts.push_back(r.answer);
  }
  const auto dir = l.instructions_dir();
  write_instructions(records, dir / "instructions.jsonl");
  ToyVocab::build(texts).save(dir / "vocab.txt");
  write_prompts(vad.prompts, dir / "prompts.vadf");
  for (const char* f : {"instructions.jsonl", "vocab.txt", "prompts.vadf"}) m.output(dir / f);
  m.write(c);
}

void cmd_train_phase3(const RunConfig& c, const RunLayout& l) {
  ManifestBuilder m(l, "train-phase3");
  require(l.checkpoint(2), "run train-phase2 first");
  const auto dir = l.instructions_dir();
  for (const char* f : {"instructions.jsonl", "vocab.txt", "prompts.vadf"}) {
    if (!fs::exists(dir / f)) throw Error("missing instruction data " + (dir / f).string() + " (run gen-instructions first)");
    m.input(dir / f);
  }
  m.input(l.checkpoint(2));
  const auto model = phase2_from_checkpoint(read_checkpoint(l.checkpoint(2)));
  const auto vocab = ToyVocab::load(dir / "vocab.txt");
  const auto records = read_instructions(dir / "instructions.jsonl");
  const auto prompts = read_prompts(dir / "prompts.vadf");
  const auto pairs = tokenize_records(records, vocab);
  const auto cfg3 = c.phase3_config();
  const auto result = train_phase3(pairs, prompts, model, vocab.size(), cfg3);
  nlohmann::json meta = {{"seed", c.seed},
                         {"iterations", cfg3.iterations},
                         {"desk_scale", c.desk_scale},
                         {"initial_loss", result.initial_loss},
                         {"final_loss", result.final_loss}};
  write_checkpoint(phase3_checkpoint({result.frozen, result.adaptor, result.decoder}, meta), l.checkpoint(3));
  const auto loss = l.root / "checkpoints" / "phase3_loss.csv";
  write_loss_csv(loss, result.loss_trace, "iteration");
  m.output(l.checkpoint(3));
  m.output(loss);
  m.write(c);
}

void cmd_eval(const RunConfig& c, const RunLayout& l, const CommandOptions& o) {
  ManifestBuilder m(l, "eval");
  std::string which = o.eval_model;
  if (which == "auto") which = fs::exists(l.checkpoint(2)) ? "phase2" : "phase1";
  if (which != "phase1" && which != "phase2") throw ConfigError("unknown eval model: " + which);
  const int phase = which == "phase1" ? 1 : 2;
  require(l.checkpoint(phase), "train the model first");
  const auto sp = test_path(c, l);
  const auto test = load_required(sp);
  m.dataset_inputs(sp);
  m.input(l.checkpoint(phase));

  const auto start = std::chrono::steady_clock::now();
  const auto ckpt = read_checkpoint(l.checkpoint(phase));
  nlohmann::json report_cfg = {{"model", which}, {"segments", c.eval_segments}};
  VideoScorer scorer;
  if (phase == 1) {
    scorer = baseline_scorer(phase1_from_checkpoint(ckpt));
  } else {
    const auto model = phase2_from_checkpoint(ckpt);
    report_cfg["ltc"] = ckpt.meta.at("ltc");
    scorer = ltc_scorer(model);
  }
  const auto frames = score_dataset(test, scorer, c.eval_segments, c.jobs);
  auto report = evaluate(frames, report_cfg);
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const auto dir = l.eval_dir();
  write_report_json(report, dir / "report.json");
  write_roc_csv(frames, dir / "roc.csv");
  write_classwise_csv(report, dir / "classwise.csv");
  write_text(dir / "timing.json",
             nlohmann::json({{"runtime_seconds", report.runtime_seconds}}).dump(2) + "\n");
  for (const char* f : {"report.json", "roc.csv", "classwise.csv"}) m.output(dir / f);
  m.write(c);
}

void cmd_ablate(const RunConfig& c, const RunLayout& l) {
  ManifestBuilder m(l, "ablate");
  const auto tp = train_path(c, l);
  const auto sp = test_path(c, l);
  const auto train = load_required(tp);
  const auto test = load_required(sp);
  m.dataset_inputs(tp);
  m.dataset_inputs(sp);
  const auto rows = ablation_grid(train, test, experiment_config(c), c.ablate_seeds);
  const auto out = l.root / "ablate" / "ablation.csv";
  write_ablation_csv(rows, out);
  m.output(out);
  m.write(c);
}

void cmd_ksweep(const RunConfig& c, const RunLayout& l) {
  ManifestBuilder m(l, "ksweep");
  const auto tp = train_path(c, l);
  const auto sp = test_path(c, l);
  const auto train = load_required(tp);
  const auto test = load_required(sp);
  m.dataset_inputs(tp);
  m.dataset_inputs(sp);
  const auto rows = k_sweep(train, test, experiment_config(c), c.ksweep_ks, c.ksweep_seeds);
  const auto out = l.root / "ksweep" / "ksweep.csv";
  write_ksweep_csv(rows, out);
  m.output(out);
  m.write(c);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

/// key -> (mean AUC_O, mean AUC_A) over seeds, keeping first-seen order.
std::vector<std::pair<std::string, std::pair<double, double>>> mean_by(
    const std::vector<std::vector<std::string>>& rows, std::size_t key_col, std::size_t o_col,
    std::size_t a_col) {
  std::vector<std::pair<std::string, std::pair<double, double>>> out;
  std::map<std::string, std::size_t> count;
  for (const auto& r : rows) {
    if (r.size() <= std::max({key_col, o_col, a_col})) throw FormatError("malformed csv row");
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == r[key_col]; });
    if (it == out.end()) {
      out.push_back({r[key_col], {0.0, 0.0}});
      it = out.end() - 1;
    }
    it->second.first += std::stod(r[o_col]);
    it->second.second += std::stod(r[a_col]);
    ++count[r[key_col]];
  }
  for (auto& [k, v] : out) {
    v.first /= static_cast<double>(count[k]);
    v.second /= static_cast<double>(count[k]);
  }
  return out;
}

void cmd_report(const RunConfig& c, const RunLayout& l) {
  ManifestBuilder m(l, "report");
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
  std::string md = "# Run summary\n";
  char buf[128];

  const auto eval_report = l.eval_dir() / "report.json";
  if (fs::exists(eval_report)) {
    m.input(eval_report);
    std::ifstream in(eval_report);
    const auto j = nlohmann::ordered_json::parse(in);
    summary["eval"] = j;
    std::snprintf(buf, sizeof(buf), "\n## Evaluation\n\n| AUC_O | AUC_A |\n|---|---|\n| %.4f | %.4f |\n",
                  j.at("auc_overall").get<double>(), j.at("auc_abnormal").get<double>());
    md += buf;
  }
  const auto ablation = l.root / "ablate" / "ablation.csv";
  if (fs::exists(ablation)) {
    m.input(ablation);
    md += "\n## Ablation (mean over seeds)\n\n| row | AUC_O | AUC_A |\n|---|---|---|\n";
    summary["ablation"] = nlohmann::ordered_json::array();
    for (const auto& [name, v] : mean_by(read_csv(ablation), 0, 5, 6)) {
      summary["ablation"].push_back({{"row", name}, {"auc_overall", v.first}, {"auc_abnormal", v.second}});
      std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.4f |\n", name.c_str(), v.first, v.second);
      md += buf;
    }
  }
  const auto ksweep = l.root / "ksweep" / "ksweep.csv";
  if (fs::exists(ksweep)) {
    m.input(ksweep);
    md += "\n## K sweep (mean over seeds)\n\n| K | AUC_O | AUC_A |\n|---|---|---|\n";
    summary["ksweep"] = nlohmann::ordered_json::array();
    for (const auto& [k, v] : mean_by(read_csv(ksweep), 0, 2, 3)) {
      summary["ksweep"].push_back({{"k", std::stoul(k)}, {"auc_overall", v.first}, {"auc_abnormal", v.second}});
      std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.4f |\n", k.c_str(), v.first, v.second);
      md += buf;
    }
  }
  if (summary.empty()) throw Error("nothing to report: run eval, ablate or ksweep first");
  const auto dir = l.root / "report";
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_text(dir / "summary.md", md);
  m.output(dir / "summary.json");
  m.output(dir / "summary.md");
  m.write(c);
}

}  // namespace

void run_command(const std::string& command, const RunConfig& config, const CommandOptions& options) {
  config.validate();
  const RunLayout layout{resolve_output_dir(config.out)};
  if (command == "synth") {
    cmd_synth(config, layout);
  } else if (command == "train-phase1") {
    cmd_train_phase1(config, layout);
  } else if (command == "train-phase2") {
    cmd_train_phase2(config, layout);
  } else if (command == "gen-instructions") {
    cmd_gen_instructions(config, layout);
  } else if (command == "train-phase3") {
    cmd_train_phase3(config, layout);
  } else if (command == "eval") {
    cmd_eval(config, layout, options);
  } else if (command == "ablate") {
    cmd_ablate(config, layout);
  } else if (command == "ksweep") {
    cmd_ksweep(config, layout);
  } else if (command == "report") {
    cmd_report(config, layout);
  } else {
    throw ConfigError("unknown command: " + command);
  }
}

}  // namespace ltcvad
