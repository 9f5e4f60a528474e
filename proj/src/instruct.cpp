#include "ltcvad/instruct.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "ltcvad/error.hpp"
#include "ltcvad/evalkit.hpp"

namespace ltcvad {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string>& base_words() {
  static const std::vector<std::string> words = {
      kPad, kUnk, kVideoTokens,
      "#", "human", ":", "<", "video", ">", "/", "assistant",
      "yes", ",", "there", "are", "anomalies", "from", "s", "to", ".", ";", "and",
      "no", "is", "anomaly", "in", "the", "any", "?", "this", "does", "contain",
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
  };
  return words;
}

bool is_word_char(unsigned char c) { return std::isalpha(c) != 0 || c == '\''; }

}  // namespace

ToyVocab ToyVocab::from_words(std::vector<std::string> words) {
  ToyVocab v;
  v.words_ = std::move(words);
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    const auto& w = v.words_[i];
    if (w.empty() || w.find('\n') != std::string::npos) throw FormatError("invalid vocab word");
    if (!v.index_.emplace(w, static_cast<int>(i)).second) {
      throw FormatError("duplicate vocab word: " + w);
    }
  }
  if (!v.index_.contains(kUnk)) throw FormatError("vocab without UNK");
  return v;
}

ToyVocab ToyVocab::build(std::span<const std::string> texts) {
  std::vector<std::string> words = base_words();
  const std::set<std::string> base(words.begin(), words.end());
  std::set<std::string> extra;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) {
      if (!base.contains(w)) extra.insert(std::move(w));
    }
  }
  words.insert(words.end(), extra.begin(), extra.end());
  return from_words(std::move(words));
}

int ToyVocab::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it != index_.end()) return it->second;
  return index_.at(kUnk);
}

const std::string& ToyVocab::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) throw Error("token id out of range");
  return words_[static_cast<std::size_t>(id)];
}

void ToyVocab::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& w : words_) out << w << '\n';
}

ToyVocab ToyVocab::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) words.push_back(line);
  return from_words(std::move(words));
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  const std::string placeholder = kVideoTokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c) != 0) {
      ++i;
    } else if (text.compare(i, placeholder.size(), placeholder) == 0) {
      out.push_back(placeholder);
      i += placeholder.size();
    } else if (std::isdigit(c) != 0) {
      std::size_t j = i;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j])) != 0) ++j;
      if (j + 1 < text.size() && text[j] == '.' &&
          std::isdigit(static_cast<unsigned char>(text[j + 1])) != 0) {
        ++j;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j])) != 0) ++j;
      }
      out.push_back(text.substr(i, j - i));
      i = j;
    } else if (is_word_char(c)) {
      std::size_t j = i;
      std::string word;
      while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[j]))));
        ++j;
      }
      out.push_back(std::move(word));
      i = j;
    } else {
      out.emplace_back(1, text[i]);
      ++i;
    }
  }
  return out;
}

std::vector<int> tokenize(const std::string& text, const ToyVocab& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

// ---------------------------------------------------------------------------

std::vector<Interval> scores_to_intervals(std::span<const double> scores, double clip_duration,
                                          double threshold) {
  if (scores.empty()) throw Error("empty scores");
  if (!(clip_duration > 0.0)) throw ConfigError("clip_duration must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  std::vector<Interval> out;
  std::size_t i = 0;
  while (i < scores.size()) {
    if (!(scores[i] > threshold)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < scores.size() && scores[j + 1] > threshold) ++j;
    out.push_back({static_cast<double>(i) * clip_duration, static_cast<double>(j + 1) * clip_duration});
    i = j + 1;
  }
  return out;
}

std::string format_seconds(double seconds) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", seconds);
  std::string s = buf;
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  if (s == "-0") s = "0";
  return s;
}

std::string video_description(double length_seconds, double fps) {
  return "The video is " + format_seconds(length_seconds) + "s long and sampled at " +
         format_seconds(fps) + " frames per second.";
}

RenderedPair render_pair(std::span<const Interval> intervals, const std::string& description,
                         std::size_t question_variant) {
  RenderedPair p;
  const auto& q = kQuestionVariants.at(question_variant % kQuestionVariants.size());
  p.question = std::string("### Human: <Video> ") + kVideoTokens + " </video> " + description + " " + q;
  if (intervals.empty()) {
    p.answer = "### Assistant: No, there is no anomaly in the video.";
    return p;
  }
  p.answer = "### Assistant: Yes, there are anomalies";
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    p.answer += i == 0 ? " from " : "; and from ";
    p.answer += format_seconds(intervals[i].start) + "s to " + format_seconds(intervals[i].end) + "s";
  }
  p.answer += ".";
  return p;
}

// ---------------------------------------------------------------------------

Vec AnomalyPrompt::stacked() const {
  Vec out = raw;
  out.insert(out.end(), fused.begin(), fused.end());
  return out;
}

AnomalyPrompt make_prompt(Vec raw, Vec fused) {
  if (raw.size() != fused.size() || raw.empty()) throw ShapeError("prompt raw/fused length mismatch");
  return {std::move(raw), std::move(fused)};
}

Adaptor Adaptor::init(std::size_t dim, std::size_t d_embed, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "adaptor-init"));
  return {glorot_uniform(2 * dim, d_embed, rng)};
}

Vec adaptor_forward(const Adaptor& adaptor, std::span<const double> stacked) {
  if (stacked.size() != adaptor.projection.in) throw ShapeError("prompt length does not match adaptor");
  return dense_forward(adaptor.projection, stacked);
}

Vec adaptor_forward(const Adaptor& adaptor, const AnomalyPrompt& prompt) {
  return adaptor_forward(adaptor, prompt.stacked());
}

double ce_loss(std::span<const Vec> distributions, std::span<const int> targets) {
  if (distributions.size() != targets.size()) throw ShapeError("distribution/target length mismatch");
  if (targets.empty()) throw Error("empty target sequence");
  double sum = 0.0;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const auto& p = distributions[j];
    double total = 0.0;
    for (double v : p) total += v;
    if (std::abs(total - 1.0) > 1e-9) throw Error("distribution does not sum to 1");
    if (targets[j] < 0 || static_cast<std::size_t>(targets[j]) >= p.size()) {
      throw Error("target id out of range");
    }
    sum -= std::log(p[static_cast<std::size_t>(targets[j])]);
  }
  return sum / static_cast<double>(targets.size());
}

// ---------------------------------------------------------------------------

std::string to_string(PairSource source) { return source == PairSource::vad ? "vad" : "auxiliary"; }

PairSource pair_source_from_string(const std::string& text) {
  if (text == "vad") return PairSource::vad;
  if (text == "auxiliary") return PairSource::auxiliary;
  throw FormatError("unknown pair source: " + text);
}

InstructionSet generate_vad_instructions(const Dataset& dataset, const LtcModel& model,
                                         const InstructConfig& config) {
  if (dataset.videos.empty()) throw Error("empty dataset");
  InstructionSet set;
  for (std::size_t v = 0; v < dataset.videos.size(); ++v) {
    const auto& video = dataset.videos[v];
    const auto picked = sample_indices(video.clips.size(), config.segments, Sampling::deterministic());
    LtcState state(model.config.k);
    Vec scores;
    std::vector<StreamStep> steps;
    for (std::size_t i = 0; i < picked.size(); ++i) {
      steps.push_back(ltc_forward_stream(model, state, widen(video.clips[picked[i]]), i));
      scores.push_back(steps.back().score);
    }
    const auto clip_scores = expand_clip_to_frames(scores, 1, video.clips.size());
    const auto intervals = scores_to_intervals(clip_scores, video.clip_duration(), config.threshold);
    std::mt19937_64 rng(derive_seed(config.seed, "question-variant", v));
    const auto rendered =
        render_pair(intervals,
                    video_description(static_cast<double>(video.total_frames()) / video.fps, video.fps),
                    uniform_index(rng, kQuestionVariants.size()));

    const auto top = mil_select(scores).index;
    set.prompts.push_back(make_prompt(widen(video.clips[picked[top]]), steps[top].fused));
    set.records.push_back({rendered.question, rendered.answer, video.id,
                           static_cast<long>(picked[top]), PairSource::vad,
                           static_cast<long>(set.prompts.size() - 1)});
  }
  return set;
}

std::vector<InstructionRecord> auxiliary_corpus(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::string> subjects = {"A person", "A dog", "A car", "A cyclist",
                                                    "A child", "Two people"};
  static const std::vector<std::string> actions = {"walking", "running", "standing", "waiting",
                                                   "turning"};
  static const std::vector<std::string> places = {"on the street", "in the park", "near the door",
                                                  "in a hall"};
  std::vector<std::string> captions;
  for (const auto& s : subjects) {
    for (const auto& a : actions) {
      for (const auto& p : places) {
        const std::string verb = s == "Two people" ? " are " : " is ";
        captions.push_back(s + verb + a + " " + p + ".");
      }
    }
  }
  std::mt19937_64 rng(derive_seed(seed, "auxiliary-corpus"));
  shuffle(captions, rng);
  std::vector<InstructionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double length = 4.0 + static_cast<double>(uniform_index(rng, 13));
    char id[32];
    std::snprintf(id, sizeof(id), "aux_%04zu", i);
    InstructionRecord r;
    r.question = std::string("### Human: <Video> ") + kVideoTokens + " </video> " +
                 video_description(length, 30.0) + " What is happening in the video?";
    r.answer = "### Assistant: " + captions[i % captions.size()];
    r.video_id = id;
    r.source = PairSource::auxiliary;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<InstructionRecord> assemble_dataset(std::span<const InstructionRecord> vad,
                                                std::span<const InstructionRecord> auxiliary,
                                                double mix_ratio, std::uint64_t seed) {
  if (vad.empty()) throw Error("empty vad pairs");
  if (!(mix_ratio > 0.0)) throw ConfigError("mix_ratio must be positive");
  std::vector<InstructionRecord> out(vad.begin(), vad.end());
  if (auxiliary.empty()) {
    std::cerr << "warning: no auxiliary pairs; dataset holds vad pairs only\n";
  } else {
    const auto target =
        static_cast<std::size_t>(std::llround(static_cast<double>(vad.size()) / mix_ratio));
    std::vector<std::size_t> order(auxiliary.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(derive_seed(seed, "auxiliary-pick"));
    shuffle(order, rng);
    for (std::size_t i = 0; i < target; ++i) out.push_back(auxiliary[order[i % order.size()]]);
  }
  std::mt19937_64 rng(derive_seed(seed, "instruction-order"));
  shuffle(out, rng);
  return out;
}

void write_instructions(std::span<const InstructionRecord> records, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["question"] = r.question;
    j["answer"] = r.answer;
    j["video_id"] = r.video_id;
    j["clip_index"] = r.clip_index;
    j["source"] = to_string(r.source);
    j["prompt_ref"] = r.prompt_ref;
    out << j.dump() << '\n';
  }
}

std::vector<InstructionRecord> read_instructions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<InstructionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("question").get<std::string>(), j.at("answer").get<std::string>(),
                     j.at("video_id").get<std::string>(), j.at("clip_index").get<long>(),
                     pair_source_from_string(j.at("source").get<std::string>()),
                     j.at("prompt_ref").get<long>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_prompts(std::span<const AnomalyPrompt> prompts, const fs::path& path) {
  if (prompts.empty()) throw Error("no prompts to write");
  VideoRecord rec;
  rec.id = "prompts";
  for (const auto& p : prompts) {
    const auto s = p.stacked();
    rec.clips.emplace_back(s.begin(), s.end());
  }
  write_features(rec, path);
}

std::vector<AnomalyPrompt> read_prompts(const fs::path& path) {
  const auto rec = read_features(path);
  if (rec.dim() % 2 != 0) throw FormatError("prompt file dimension must be even");
  const std::size_t d = rec.dim() / 2;
  std::vector<AnomalyPrompt> out;
  for (const auto& c : rec.clips) {
    const Vec s = widen(c);
    out.push_back(make_prompt(Vec(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(d)),
                              Vec(s.begin() + static_cast<std::ptrdiff_t>(d), s.end())));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<InstructionPair> tokenize_records(std::span<const InstructionRecord> records,
                                              const ToyVocab& vocab) {
  std::vector<InstructionPair> out;
  for (const auto& r : records) {
    InstructionPair p;
    p.question_tokens = tokenize(r.question, vocab);
    p.answer_tokens = tokenize(r.answer, vocab);
    p.prompt_ref = r.prompt_ref;
    p.source = r.source;
    if (p.answer_tokens.empty()) throw Error("empty answer for " + r.video_id);
    if (std::count(p.question_tokens.begin(), p.question_tokens.end(), vocab.video_tokens()) != 1) {
      throw Error("question must hold exactly one video-token placeholder: " + r.video_id);
    }
    out.push_back(std::move(p));
  }
  return out;
}

ToyDecoder ToyDecoder::init(std::size_t vocab_size, std::size_t d_embed, std::size_t question_dim,
                            std::size_t max_answer_length, std::uint64_t seed) {
  if (vocab_size == 0 || d_embed == 0 || question_dim == 0 || max_answer_length == 0) {
    throw ConfigError("toy decoder sizes must be positive");
  }
  ToyDecoder dec;
  dec.vocab_size = vocab_size;
  dec.d_embed = d_embed;
  dec.question_dim = question_dim;
  std::mt19937_64 emb_rng(derive_seed(seed, "question-embedding"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(question_dim));
  dec.question_embedding.resize(vocab_size * question_dim);
  for (double& v : dec.question_embedding) v = scale * standard_normal(emb_rng);
  std::mt19937_64 rng(derive_seed(seed, "decoder-init"));
  for (std::size_t j = 0; j < max_answer_length; ++j) {
    dec.positions.push_back(glorot_uniform(d_embed + question_dim, vocab_size, rng));
  }
  return dec;
}

ParamSpans ToyDecoder::parameters() {
  ParamSpans out;
  for (auto& layer : positions) {
    for (auto s : layer.parameters()) out.push_back(s);
  }
  return out;
}

ConstParamSpans ToyDecoder::parameters() const {
  ConstParamSpans out;
  for (const auto& layer : positions) {
    for (auto s : layer.parameters()) out.push_back(s);
  }
  return out;
}

Vec ToyDecoder::condition(std::span<const double> embedding, std::span<const int> question) const {
  if (embedding.size() != d_embed) throw ShapeError("embedding size does not match decoder");
  Vec c(embedding.begin(), embedding.end());
  c.resize(d_embed + question_dim, 0.0);
  if (question.empty()) return c;
  const double inv = 1.0 / static_cast<double>(question.size());
  for (int t : question) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) throw Error("token id out of range");
    const double* row = &question_embedding[static_cast<std::size_t>(t) * question_dim];
    for (std::size_t k = 0; k < question_dim; ++k) c[d_embed + k] += inv * row[k];
  }
  return c;
}

Phase3Grad Phase3Grad::zeros(const Adaptor& adaptor, const ToyDecoder& decoder) {
  Phase3Grad g;
  g.adaptor = DenseLayer(adaptor.projection.in, adaptor.projection.out);
  for (const auto& layer : decoder.positions) g.positions.emplace_back(layer.in, layer.out);
  return g;
}

ConstParamSpans Phase3Grad::parameters() const {
  ConstParamSpans out = adaptor.parameters();
  for (const auto& layer : positions) {
    for (auto s : layer.parameters()) out.push_back(s);
  }
  return out;
}

double instruction_objective(const Adaptor& adaptor, const ToyDecoder& decoder,
                             std::span<const InstructionPair> batch,
                             std::span<const AnomalyPrompt> prompts, Phase3Grad* grad) {
  if (batch.empty()) throw Error("empty batch");
  if (adaptor.projection.out != decoder.d_embed) throw ShapeError("adaptor/decoder size mismatch");
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& pair : batch) {
    Vec stacked;
    if (pair.prompt_ref < 0) {
      stacked.assign(adaptor.projection.in, 0.0);
    } else {
      if (static_cast<std::size_t>(pair.prompt_ref) >= prompts.size()) {
        throw Error("prompt_ref out of range");
      }
      stacked = prompts[static_cast<std::size_t>(pair.prompt_ref)].stacked();
    }
    const Vec embedding = adaptor_forward(adaptor, stacked);
    const Vec cond = decoder.condition(embedding, pair.question_tokens);
    const std::size_t n = pair.answer_tokens.size();
    if (n > decoder.positions.size()) throw Error("answer longer than the decoder");

    // Log-sum-exp form: large prompt norms saturate the softmax, and a
    // probability of exactly 0 would make the loss infinite.
    std::vector<Vec> dists;
    dists.reserve(n);
    double seq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      Vec logits = dense_forward(decoder.positions[j], cond);
      const auto t = static_cast<std::size_t>(pair.answer_tokens[j]);
      if (pair.answer_tokens[j] < 0 || t >= logits.size()) throw Error("token id out of range");
      const double top = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (double v : logits) sum += std::exp(v - top);
      const double lse = top + std::log(sum);
      seq += lse - logits[t];
      for (double& v : logits) v = std::exp(v - lse);
      dists.push_back(std::move(logits));
    }
    total += seq / static_cast<double>(n);
    if (grad == nullptr) continue;

    const double scale = inv_batch / static_cast<double>(n);
    Vec grad_cond(cond.size(), 0.0);
    Vec grad_in;
    for (std::size_t j = 0; j < n; ++j) {
      Vec up = dists[j];
      up[static_cast<std::size_t>(pair.answer_tokens[j])] -= 1.0;
      for (double& v : up) v *= scale;
      dense_backward_into(decoder.positions[j], cond, up, grad->positions[j], &grad_in);
      for (std::size_t k = 0; k < grad_cond.size(); ++k) grad_cond[k] += grad_in[k];
    }
    const std::span<const double> grad_embedding(grad_cond.data(), decoder.d_embed);
    dense_backward_into(adaptor.projection, stacked, grad_embedding, grad->adaptor, nullptr);
  }
  return total * inv_batch;
}

Phase3Result train_phase3(std::span<const InstructionPair> dataset,
                          std::span<const AnomalyPrompt> prompts, const LtcModel& phase2,
                          std::size_t vocab_size, const Phase3Config& config) {
  if (dataset.empty()) throw Error("empty instruction dataset");
  if (config.iterations == 0 || config.batch_size == 0) {
    throw ConfigError("iterations and batch_size must be positive");
  }
  const std::size_t dim = phase2.detector.dim();
  for (const auto& p : prompts) {
    if (p.raw.size() != dim) throw ShapeError("prompt dimension does not match the phase-2 model");
  }
  std::size_t max_len = 0;
  for (const auto& p : dataset) max_len = std::max(max_len, p.answer_tokens.size());

  Phase3Result result;
  result.frozen = phase2;
  result.adaptor = Adaptor::init(dim, config.d_embed, config.seed);
  result.decoder =
      ToyDecoder::init(vocab_size, config.d_embed, config.question_dim, max_len, config.seed);

  LrSchedule sched;
  sched.total_epochs = static_cast<int>(config.iterations);
  sched.warmup_epochs = static_cast<int>(config.iterations / 6);
  sched.lr_max = config.lr_max;
  sched.lr_min = config.lr_min;
  sched.validate();

  result.initial_loss =
      instruction_objective(result.adaptor, result.decoder, dataset, prompts, nullptr);
  AdamW opt(config.optimizer);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::size_t pass = 0;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<InstructionPair> batch;
    while (batch.size() < config.batch_size) {
      if (cursor == order.size()) {
        order.resize(dataset.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 rng(derive_seed(config.seed, "phase3-order", pass++));
        shuffle(order, rng);
        cursor = 0;
      }
      batch.push_back(dataset[order[cursor++]]);
    }
    auto grad = Phase3Grad::zeros(result.adaptor, result.decoder);
    result.loss_trace.push_back(
        instruction_objective(result.adaptor, result.decoder, batch, prompts, &grad));
    ParamSpans params = result.adaptor.projection.parameters();
    for (auto s : result.decoder.parameters()) params.push_back(s);
    opt.step(params, grad.parameters(), schedule_lr(sched, static_cast<double>(it + 1)));
  }
  result.final_loss = instruction_objective(result.adaptor, result.decoder, dataset, prompts, nullptr);
  return result;
}

}  // namespace ltcvad
