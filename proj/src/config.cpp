#include "ltcvad/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "ltcvad/error.hpp"
#include "ltcvad/evalkit.hpp"

namespace ltcvad {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
  T v{};
  const auto t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError("invalid value for " + key + ": " + text);
  }
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) throw ConfigError("invalid value for " + key + ": " + text);
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("invalid value for " + key + ": " + text);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(parse_integer<T>(key, item));
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(items[i]);
  }
  return out;
}

std::string real(double v) { return format_double(v); }
std::string boolean(bool v) { return v ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

void add_schedule_fields(std::vector<Field>& f, const std::string& section,
                         std::function<TrainSchedule&(RunConfig&)> ref) {
  auto cref = [ref](const RunConfig& c) -> const TrainSchedule& { return ref(const_cast<RunConfig&>(c)); };
  const std::string s = section + ".";
  f.push_back({s + "epochs", [=](const RunConfig& c) { return std::to_string(cref(c).epochs); },
               [=](RunConfig& c, const std::string& v) { ref(c).epochs = parse_integer<int>(s + "epochs", v); }});
  f.push_back({s + "warmup_epochs", [=](const RunConfig& c) { return std::to_string(cref(c).warmup_epochs); },
               [=](RunConfig& c, const std::string& v) {
                 ref(c).warmup_epochs = parse_integer<int>(s + "warmup_epochs", v);
               }});
  f.push_back({s + "batch_size", [=](const RunConfig& c) { return std::to_string(cref(c).batch_size); },
               [=](RunConfig& c, const std::string& v) {
                 ref(c).batch_size = parse_integer<std::size_t>(s + "batch_size", v);
               }});
  f.push_back({s + "lr_max", [=](const RunConfig& c) { return real(cref(c).lr_max); },
               [=](RunConfig& c, const std::string& v) { ref(c).lr_max = parse_real(s + "lr_max", v); }});
  f.push_back({s + "lr_min", [=](const RunConfig& c) { return real(cref(c).lr_min); },
               [=](RunConfig& c, const std::string& v) { ref(c).lr_min = parse_real(s + "lr_min", v); }});
  f.push_back({s + "weight_decay", [=](const RunConfig& c) { return real(cref(c).optimizer.weight_decay); },
               [=](RunConfig& c, const std::string& v) {
                 ref(c).optimizer.weight_decay = parse_real(s + "weight_decay", v);
               }});
  f.push_back({s + "beta1", [=](const RunConfig& c) { return real(cref(c).optimizer.beta1); },
               [=](RunConfig& c, const std::string& v) { ref(c).optimizer.beta1 = parse_real(s + "beta1", v); }});
  f.push_back({s + "beta2", [=](const RunConfig& c) { return real(cref(c).optimizer.beta2); },
               [=](RunConfig& c, const std::string& v) { ref(c).optimizer.beta2 = parse_real(s + "beta2", v); }});
  f.push_back({s + "epsilon", [=](const RunConfig& c) { return real(cref(c).optimizer.epsilon); },
               [=](RunConfig& c, const std::string& v) {
                 ref(c).optimizer.epsilon = parse_real(s + "epsilon", v);
               }});
}

#define LTC_FIELD(KEY, GET, SET) \
  f.push_back({KEY, [](const RunConfig& c) { return GET; }, [](RunConfig& c, const std::string& v) { SET; }})

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    LTC_FIELD("run.seed", std::to_string(c.seed), c.seed = parse_integer<std::uint64_t>("run.seed", v));
    LTC_FIELD("run.out", c.out.string(), c.out = trim(v));
    LTC_FIELD("run.desk_scale", real(c.desk_scale), c.desk_scale = parse_real("run.desk_scale", v));
    LTC_FIELD("run.jobs", std::to_string(c.jobs), c.jobs = parse_integer<std::size_t>("run.jobs", v));

    LTC_FIELD("data.train", c.train_manifest ? c.train_manifest->string() : std::string(),
              if (trim(v).empty()) c.train_manifest.reset(); else c.train_manifest = trim(v));
    LTC_FIELD("data.test", c.test_manifest ? c.test_manifest->string() : std::string(),
              if (trim(v).empty()) c.test_manifest.reset(); else c.test_manifest = trim(v));

    LTC_FIELD("synth.mode", to_string(c.synth.mode), c.synth.mode = synth_mode_from_string(trim(v)));
    LTC_FIELD("synth.n_videos", std::to_string(c.synth.n_videos),
              c.synth.n_videos = parse_integer<std::size_t>("synth.n_videos", v));
    LTC_FIELD("synth.abnormal_fraction", real(c.synth.abnormal_fraction),
              c.synth.abnormal_fraction = parse_real("synth.abnormal_fraction", v));
    LTC_FIELD("synth.clips_per_video", std::to_string(c.synth.clips_per_video),
              c.synth.clips_per_video = parse_integer<std::size_t>("synth.clips_per_video", v));
    LTC_FIELD("synth.dim", std::to_string(c.synth.dim), c.synth.dim = parse_integer<std::size_t>("synth.dim", v));
    LTC_FIELD("synth.noise_sigma", real(c.synth.noise_sigma),
              c.synth.noise_sigma = parse_real("synth.noise_sigma", v));
    LTC_FIELD("synth.marker_alpha", real(c.synth.marker_alpha),
              c.synth.marker_alpha = parse_real("synth.marker_alpha", v));
    LTC_FIELD("synth.precursor_window", real(c.synth.precursor_window),
              c.synth.precursor_window = parse_real("synth.precursor_window", v));
    LTC_FIELD("synth.window_length", std::to_string(c.synth.window_length),
              c.synth.window_length = parse_integer<std::size_t>("synth.window_length", v));
    LTC_FIELD("synth.seed", std::to_string(c.synth.seed),
              c.synth.seed = parse_integer<std::uint64_t>("synth.seed", v));
    LTC_FIELD("synth.fps", real(c.synth.fps), c.synth.fps = parse_real("synth.fps", v));
    LTC_FIELD("synth.frames_per_clip", std::to_string(c.synth.frames_per_clip),
              c.synth.frames_per_clip = parse_integer<int>("synth.frames_per_clip", v));

    LTC_FIELD("phase1.hidden_width", std::to_string(c.phase1.hidden_width),
              c.phase1.hidden_width = parse_integer<std::size_t>("phase1.hidden_width", v));
    LTC_FIELD("phase1.segments", std::to_string(c.phase1.segments),
              c.phase1.segments = parse_integer<std::size_t>("phase1.segments", v));
    LTC_FIELD("phase1.margin_enabled", boolean(c.phase1.margin.enabled),
              c.phase1.margin.enabled = parse_bool("phase1.margin_enabled", v));
    LTC_FIELD("phase1.margin", real(c.phase1.margin.margin),
              c.phase1.margin.margin = parse_real("phase1.margin", v));
    add_schedule_fields(f, "phase1", [](RunConfig& c) -> TrainSchedule& { return c.phase1.schedule; });

    LTC_FIELD("phase2.k", std::to_string(c.phase2.ltc.k), c.phase2.ltc.k = parse_integer<std::size_t>("phase2.k", v));
    LTC_FIELD("phase2.attention", to_string(c.phase2.ltc.attention),
              c.phase2.ltc.attention = attention_mode_from_string(trim(v)));
    LTC_FIELD("phase2.lists", to_string(c.phase2.ltc.lists),
              c.phase2.ltc.lists = list_selection_from_string(v));
    LTC_FIELD("phase2.segments", std::to_string(c.phase2.segments),
              c.phase2.segments = parse_integer<std::size_t>("phase2.segments", v));
    add_schedule_fields(f, "phase2", [](RunConfig& c) -> TrainSchedule& { return c.phase2.schedule; });

    LTC_FIELD("phase3.iterations", std::to_string(c.phase3_full_iterations),
              c.phase3_full_iterations = parse_integer<std::size_t>("phase3.iterations", v));
    LTC_FIELD("phase3.batch_size", std::to_string(c.phase3.batch_size),
              c.phase3.batch_size = parse_integer<std::size_t>("phase3.batch_size", v));
    LTC_FIELD("phase3.lr_max", real(c.phase3.lr_max), c.phase3.lr_max = parse_real("phase3.lr_max", v));
    LTC_FIELD("phase3.lr_min", real(c.phase3.lr_min), c.phase3.lr_min = parse_real("phase3.lr_min", v));
    LTC_FIELD("phase3.weight_decay", real(c.phase3.optimizer.weight_decay),
              c.phase3.optimizer.weight_decay = parse_real("phase3.weight_decay", v));
    LTC_FIELD("phase3.d_embed", std::to_string(c.phase3.d_embed),
              c.phase3.d_embed = parse_integer<std::size_t>("phase3.d_embed", v));
    LTC_FIELD("phase3.question_dim", std::to_string(c.phase3.question_dim),
              c.phase3.question_dim = parse_integer<std::size_t>("phase3.question_dim", v));

    LTC_FIELD("instruct.threshold", real(c.instruct.threshold),
              c.instruct.threshold = parse_real("instruct.threshold", v));
    LTC_FIELD("instruct.mix_ratio", real(c.instruct.mix_ratio),
              c.instruct.mix_ratio = parse_real("instruct.mix_ratio", v));
    LTC_FIELD("instruct.aux_pairs", std::to_string(c.aux_pairs),
              c.aux_pairs = parse_integer<std::size_t>("instruct.aux_pairs", v));
    LTC_FIELD("instruct.segments", std::to_string(c.instruct.segments),
              c.instruct.segments = parse_integer<std::size_t>("instruct.segments", v));

    LTC_FIELD("eval.segments", std::to_string(c.eval_segments),
              c.eval_segments = parse_integer<std::size_t>("eval.segments", v));
    LTC_FIELD("ablate.seeds", join(c.ablate_seeds), c.ablate_seeds = parse_list<std::uint64_t>("ablate.seeds", v));
    LTC_FIELD("ksweep.ks", join(c.ksweep_ks), c.ksweep_ks = parse_list<std::size_t>("ksweep.ks", v));
    LTC_FIELD("ksweep.seeds", join(c.ksweep_seeds),
              c.ksweep_seeds = parse_list<std::uint64_t>("ksweep.seeds", v));
    return f;
  }();
  return table;
}

#undef LTC_FIELD

}  // namespace

void RunConfig::validate() const {
  synth.validate();
  if (jobs < 1) throw ConfigError("run.jobs must be at least 1");
  if (!(desk_scale > 0.0 && desk_scale <= 1.0)) throw ConfigError("run.desk_scale must lie in (0, 1]");
  for (const auto* s : {&phase1.schedule, &phase2.schedule}) {
    if (s->epochs < 1) throw ConfigError("epochs must be at least 1");
    if (s->batch_size < 1) throw ConfigError("batch_size must be at least 1");
    LrSchedule{s->warmup_epochs, s->epochs, s->lr_max, s->lr_min}.validate();
  }
  if (phase1.hidden_width < 1 || phase1.segments < 1 || phase2.segments < 1) {
    throw ConfigError("hidden_width and segments must be positive");
  }
  if (phase3_full_iterations < 1 || phase3.batch_size < 1) {
    throw ConfigError("phase3 iterations and batch_size must be positive");
  }
  if (!(instruct.threshold > 0.0 && instruct.threshold < 1.0)) {
    throw ConfigError("instruct.threshold must lie in (0, 1)");
  }
  if (!(instruct.mix_ratio > 0.0)) throw ConfigError("instruct.mix_ratio must be positive");
  if (eval_segments < 1) throw ConfigError("eval.segments must be positive");
  if (ablate_seeds.empty() || ksweep_seeds.empty() || ksweep_ks.empty()) {
    throw ConfigError("seed and K lists must not be empty");
  }
  for (const auto* p : {&train_manifest, &test_manifest}) {
    if (*p && !fs::exists(**p)) throw ConfigError("data path does not exist: " + (*p)->string());
  }
}

std::map<std::string, std::string> RunConfig::settings() const {
  std::map<std::string, std::string> out;
  for (const auto& f : fields()) out[f.key] = f.get(*this);
  return out;
}

Phase1Config RunConfig::phase1_config() const {
  Phase1Config c = phase1;
  c.seed = seed;
  return c;
}

Phase2Config RunConfig::phase2_config() const {
  Phase2Config c = phase2;
  c.seed = derive_seed(seed, "phase2");
  return c;
}

Phase3Config RunConfig::phase3_config() const {
  Phase3Config c = phase3;
  c.seed = derive_seed(seed, "phase3");
  const auto scaled = std::llround(static_cast<double>(phase3_full_iterations) * desk_scale);
  c.iterations = static_cast<std::size_t>(std::max<long long>(1, scaled));
  return c;
}

InstructConfig RunConfig::instruct_config() const {
  InstructConfig c = instruct;
  c.seed = derive_seed(seed, "instruct");
  return c;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      try {
        f.set(config, value);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError("invalid value for " + key + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown setting: " + key);
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like section.key=value: " + assignment);
  apply_setting(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig config;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto where = source + ":" + std::to_string(line_no);
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside a section");
    try {
      apply_setting(config, section + "." + trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.extension() != ".json") return parse_config(buf.str(), path.string());

  RunConfig config;
  try {
    const auto j = nlohmann::json::parse(buf.str());
    for (const auto& [key, value] : j.at("config").items()) {
      apply_setting(config, key, value.get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad run manifest " + path.string() + ": " + e.what());
  }
  return config;
}

std::string render_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& [key, value] : config.settings()) {
    const auto dot = key.find('.');
    const auto sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += '\n';
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

fs::path resolve_output_dir(const fs::path& out) {
  if (out.is_absolute()) return out;
  if (const char* root = std::getenv("LTCVAD_OUT"); root != nullptr && *root != '\0') {
    return fs::path(root) / out;
  }
  return out;
}

}  // namespace ltcvad
