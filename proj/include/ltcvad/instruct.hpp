#pragma once

// Phase 3: pseudo-instruction text from anomaly scores, a toy tokenizer and
// vocabulary, anomaly prompts, the adaptor and a toy decoder trained with a
// per-sequence mean cross-entropy over answer tokens.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ltcvad/feature_store.hpp"
#include "ltcvad/ltc.hpp"
#include "ltcvad/neuralops.hpp"

namespace ltcvad {

inline constexpr const char* kVideoTokens = "[Video Tokens]";
inline constexpr const char* kUnk = "<unk>";
inline constexpr const char* kPad = "<pad>";

class ToyVocab {
 public:
  /// Fixed base list (PAD, UNK, placeholder, template words, digits,
  /// punctuation) followed by the sorted extra words.
  static ToyVocab build(std::span<const std::string> texts);
  static ToyVocab from_words(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  int id(const std::string& word) const;  // UNK when absent
  const std::string& word(int id) const;
  int unk() const { return id(kUnk); }
  int pad() const { return id(kPad); }
  int video_tokens() const { return id(kVideoTokens); }
  const std::vector<std::string>& words() const { return words_; }

  void save(const std::filesystem::path& path) const;
  static ToyVocab load(const std::filesystem::path& path);

  bool operator==(const ToyVocab& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// Lowercased words; "[Video Tokens]" stays one token, numerals such as
/// "1.5" stay whole, every other non-space, non-alphanumeric char is a token.
std::vector<std::string> split_words(const std::string& text);
std::vector<int> tokenize(const std::string& text, const ToyVocab& vocab);

// ---------------------------------------------------------------------------

struct Interval {
  double start = 0.0;
  double end = 0.0;
  bool operator==(const Interval&) const = default;
};

/// Maximal runs of clips with score > threshold, as [i*dur, (j+1)*dur).
std::vector<Interval> scores_to_intervals(std::span<const double> scores, double clip_duration,
                                          double threshold = 0.5);

/// Seconds with at most two decimals and trailing zeros dropped ("2", "1.5").
std::string format_seconds(double seconds);

inline const std::vector<std::string> kQuestionVariants = {
    "Is there any anomaly in the video?",
    "Are there any anomalies in this video?",
    "Does the video contain any anomaly?",
};

std::string video_description(double length_seconds, double fps);

struct RenderedPair {
  std::string question;
  std::string answer;
};

RenderedPair render_pair(std::span<const Interval> intervals, const std::string& description,
                         std::size_t question_variant = 0);

// ---------------------------------------------------------------------------

struct AnomalyPrompt {
  Vec raw;
  Vec fused;

  /// [raw, fused]
  Vec stacked() const;
};

AnomalyPrompt make_prompt(Vec raw, Vec fused);

struct Adaptor {
  DenseLayer projection;  // 2d -> d_embed

  static Adaptor init(std::size_t dim, std::size_t d_embed, std::uint64_t seed);
  std::size_t feature_dim() const { return projection.in / 2; }
  bool operator==(const Adaptor&) const = default;
};

Vec adaptor_forward(const Adaptor& adaptor, std::span<const double> stacked);
Vec adaptor_forward(const Adaptor& adaptor, const AnomalyPrompt& prompt);

/// -(1/n) sum_j ln p_j(target_j).
double ce_loss(std::span<const Vec> distributions, std::span<const int> targets);

// ---------------------------------------------------------------------------

enum class PairSource { vad, auxiliary };
std::string to_string(PairSource source);
PairSource pair_source_from_string(const std::string& text);

struct InstructionRecord {
  std::string question;
  std::string answer;
  std::string video_id;
  long clip_index = -1;
  PairSource source = PairSource::vad;
  long prompt_ref = -1;  // index into the prompt table, -1 = zero prompt

  bool operator==(const InstructionRecord&) const = default;
};

struct InstructConfig {
  double threshold = 0.5;
  double mix_ratio = 1.0;  // vad : auxiliary
  std::uint64_t seed = 42;
  std::size_t segments = 32;
};

struct InstructionSet {
  std::vector<InstructionRecord> records;
  std::vector<AnomalyPrompt> prompts;
};

/// One record per video: scores and fused features come from streaming the
/// phase-2 model; the prompt is taken at the highest-scoring clip.
InstructionSet generate_vad_instructions(const Dataset& dataset, const LtcModel& model,
                                         const InstructConfig& config);

/// Deterministic caption pairs standing in for a general video corpus.
std::vector<InstructionRecord> auxiliary_corpus(std::size_t n = 50, std::uint64_t seed = 42);

/// Adds round(n_vad / ratio) auxiliary records (subsampled, or cycled when
/// too few) and shuffles everything by seed.
std::vector<InstructionRecord> assemble_dataset(std::span<const InstructionRecord> vad,
                                                std::span<const InstructionRecord> auxiliary,
                                                double mix_ratio, std::uint64_t seed);

void write_instructions(std::span<const InstructionRecord> records,
                        const std::filesystem::path& path);
std::vector<InstructionRecord> read_instructions(const std::filesystem::path& path);

/// Prompts are stored as one feature file whose clips are the stacked vectors.
void write_prompts(std::span<const AnomalyPrompt> prompts, const std::filesystem::path& path);
std::vector<AnomalyPrompt> read_prompts(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct InstructionPair {
  std::vector<int> question_tokens;
  std::vector<int> answer_tokens;
  long prompt_ref = -1;
  PairSource source = PairSource::vad;
};

/// Throws unless every question holds exactly one placeholder token and
/// every answer is non-empty.
std::vector<InstructionPair> tokenize_records(std::span<const InstructionRecord> records,
                                              const ToyVocab& vocab);

/// Stand-in for the frozen language model: a frozen token-embedding table
/// for the question and one trainable affine map per answer position over
/// [adaptor embedding, mean question embedding].
struct ToyDecoder {
  std::size_t vocab_size = 0;
  std::size_t d_embed = 0;
  std::size_t question_dim = 0;
  Vec question_embedding;  // vocab_size x question_dim, frozen
  std::vector<DenseLayer> positions;

  static ToyDecoder init(std::size_t vocab_size, std::size_t d_embed, std::size_t question_dim,
                         std::size_t max_answer_length, std::uint64_t seed);
  ParamSpans parameters();
  ConstParamSpans parameters() const;
  Vec condition(std::span<const double> embedding, std::span<const int> question) const;
  bool operator==(const ToyDecoder&) const = default;
};

struct Phase3Grad {
  DenseLayer adaptor;
  std::vector<DenseLayer> positions;

  static Phase3Grad zeros(const Adaptor& adaptor, const ToyDecoder& decoder);
  ConstParamSpans parameters() const;
};

/// Batch mean of per-sequence mean cross-entropy over answer tokens.
double instruction_objective(const Adaptor& adaptor, const ToyDecoder& decoder,
                             std::span<const InstructionPair> batch,
                             std::span<const AnomalyPrompt> prompts, Phase3Grad* grad);

struct Phase3Config {
  std::size_t d_embed = 32;
  std::size_t question_dim = 16;
  std::size_t iterations = 300;
  std::size_t batch_size = 2;
  double lr_max = 1e-2;
  double lr_min = 0.0;
  AdamWConfig optimizer{};
  std::uint64_t seed = 42;
};

struct Phase3Result {
  LtcModel frozen;  // the phase-2 model, untouched
  Adaptor adaptor;
  ToyDecoder decoder;
  std::vector<double> loss_trace;  // one minibatch loss per iteration
  double initial_loss = 0.0;       // whole dataset, before the first step
  double final_loss = 0.0;         // whole dataset, after the last step
};

Phase3Result train_phase3(std::span<const InstructionPair> dataset,
                          std::span<const AnomalyPrompt> prompts, const LtcModel& phase2,
                          std::size_t vocab_size, const Phase3Config& config);

}  // namespace ltcvad
