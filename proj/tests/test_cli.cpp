#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ltcvad/pipeline.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Cli {
  fs::path root;

  int operator()(const std::string& args) const {
    const std::string cmd = "LTCVAD_OUT='" + root.string() + "' '" LTCVAD_CLI "' " + args + " >'" +
                            (root / "stdout.txt").string() + "' 2>'" + (root / "stderr.txt").string() + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string err() const { return slurp(root / "stderr.txt"); }
};

const std::string kEasy = std::string("-c '") + LTCVAD_SOURCE_DIR + "/configs/reference_easy.ini' ";

// Small, quick settings for plumbing tests.
const std::string kTiny =
    "--set synth.n_videos=16 --set phase1.epochs=2 --set phase1.warmup_epochs=1 "
    "--set phase2.epochs=2 --set phase2.warmup_epochs=1 --set phase1.hidden_width=8 "
    "--set phase3.iterations=2000 ";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("git blob hashes") {
  CHECK(ltcvad::git_blob_hash({}) == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  const std::string hello = "hello\n";
  CHECK(ltcvad::git_blob_hash(std::span(reinterpret_cast<const std::uint8_t*>(hello.data()), hello.size())) ==
        "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("easy synth, train-phase1, eval") {
  testsupport::TempDir dir("cli_easy");
  const Cli cli{dir.path()};
  REQUIRE(cli(kEasy + "--out e synth") == 0);
  REQUIRE(cli(kEasy + "--out e train-phase1") == 0);
  REQUIRE(cli(kEasy + "--out e eval") == 0);
  const auto report = nlohmann::json::parse(slurp(dir.path() / "e/eval/report.json"));
  CHECK(report.at("auc_overall").get<double>() >= 0.95);
  CHECK(report.at("config").at("model") == "phase1");
  CHECK(fs::exists(dir.path() / "e/eval/roc.csv"));
  CHECK(fs::exists(dir.path() / "e/eval/timing.json"));

  const auto manifest = nlohmann::json::parse(slurp(dir.path() / "e/manifests/train-phase1.json"));
  CHECK(manifest.at("command") == "train-phase1");
  CHECK(manifest.at("seed") == 42);
  CHECK(manifest.at("config").at("synth.mode") == "easy");
  CHECK(manifest.at("input_hash").get<std::string>().size() == 40);
  bool saw_train = false;
  for (const auto& in : manifest.at("inputs")) {
    if (in.at("path") == "data/train.jsonl") {
      saw_train = true;
      CHECK(in.at("hash") == ltcvad::git_blob_hash_file(dir.path() / "e/data/train.jsonl"));
    }
  }
  CHECK(saw_train);
  CHECK(manifest.at("outputs").at(0).at("path") == "checkpoints/phase1.vadc");
}

TEST_CASE("rerunning from a run manifest reproduces the checkpoint") {
  testsupport::TempDir dir("cli_manifest");
  const Cli cli{dir.path()};
  REQUIRE(cli(kEasy + kTiny + "--out a synth") == 0);
  REQUIRE(cli(kEasy + kTiny + "--out a train-phase1") == 0);
  const auto first = slurp(dir.path() / "a/checkpoints/phase1.vadc");
  fs::copy_file(dir.path() / "a/manifests/train-phase1.json", dir.path() / "run.json");
  REQUIRE(cli("-c '" + (dir.path() / "run.json").string() + "' train-phase1") == 0);
  CHECK(slurp(dir.path() / "a/checkpoints/phase1.vadc") == first);
}

TEST_CASE("phase order is enforced") {
  testsupport::TempDir dir("cli_order");
  const Cli cli{dir.path()};
  REQUIRE(cli(kEasy + kTiny + "--out o synth") == 0);
  CHECK(cli(kEasy + kTiny + "--out o train-phase2") == 1);
  CHECK(cli.err().find("missing prerequisite checkpoint") != std::string::npos);
  CHECK(cli(kEasy + kTiny + "--out o gen-instructions") == 1);
  CHECK(cli(kEasy + kTiny + "--out o train-phase3") == 1);
  CHECK(cli(kEasy + kTiny + "--out o --set eval.segments=32 eval --model phase2") == 1);
  CHECK(cli(kEasy + kTiny + "--out fresh train-phase1") == 1);
  CHECK(cli.err().find("run synth first") != std::string::npos);
}

TEST_CASE("bad invocations fail with a nonzero status") {
  testsupport::TempDir dir("cli_bad");
  const Cli cli{dir.path()};
  CHECK(cli("frobnicate") != 0);
  CHECK(cli("--set nope.key=1 synth") == 1);
  CHECK(cli.err().find("unknown setting") != std::string::npos);
  CHECK(cli("--set phase1.epochs=0 synth") == 1);
  CHECK(cli("-c /no/such/file.ini synth") == 1);
  CHECK(cli("--out x report") == 1);
  CHECK(cli("--help") == 0);
}

TEST_CASE("full pipeline, ksweep, ablate and report") {
  testsupport::TempDir dir("cli_full");
  const Cli cli{dir.path()};
  for (const char* cmd : {"synth", "train-phase1", "train-phase2", "gen-instructions", "train-phase3", "eval"}) {
    CAPTURE(cmd);
    REQUIRE(cli(kEasy + kTiny + "--out f " + cmd) == 0);
  }
  const auto report = nlohmann::json::parse(slurp(dir.path() / "f/eval/report.json"));
  CHECK(report.at("config").at("model") == "phase2");
  CHECK(fs::exists(dir.path() / "f/checkpoints/phase3.vadc"));
  CHECK(fs::exists(dir.path() / "f/instructions/vocab.txt"));
  CHECK(slurp(dir.path() / "f/checkpoints/phase3_loss.csv").rfind("iteration,loss\n", 0) == 0);

  REQUIRE(cli(kEasy + kTiny + "--out f --jobs 2 ksweep") == 0);
  const auto csv = slurp(dir.path() / "f/ksweep/ksweep.csv");
  std::vector<std::string> ks;
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "k,seed,auc_overall,auc_abnormal");
  while (std::getline(ss, line)) ks.push_back(line.substr(0, line.find(',')));
  CHECK(ks == std::vector<std::string>{"0", "2", "4", "6", "8"});

  REQUIRE(cli(kEasy + kTiny + "--out f ablate") == 0);
  REQUIRE(cli(kEasy + kTiny + "--out f report") == 0);
  const auto summary = nlohmann::json::parse(slurp(dir.path() / "f/report/summary.json"));
  CHECK(summary.at("ablation").size() == 5);
  CHECK(summary.at("ksweep").size() == 5);
  CHECK(slurp(dir.path() / "f/report/summary.md").find("| +Nor+Abn+His |") != std::string::npos);
}

}
