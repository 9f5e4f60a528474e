#include <doctest.h>

#include <cstdlib>

#include "ltcvad/config.hpp"
#include "ltcvad/error.hpp"

using namespace ltcvad;

TEST_SUITE("config") {

TEST_CASE("defaults mirror the documented hyperparameters") {
  const RunConfig c;
  CHECK(c.phase1.schedule.epochs == 30);
  CHECK(c.phase2.schedule.epochs == 30);
  CHECK(c.phase1.schedule.lr_max == 1e-5);
  CHECK(c.phase1.schedule.optimizer.weight_decay == 1e-3);
  CHECK(c.phase3_config().iterations == 300);
  CHECK(c.ksweep_ks == std::vector<std::size_t>{0, 2, 4, 6, 8});
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("ini parsing") {
  const auto c = parse_config(
      "# comment\n"
      "[run]\nseed = 7\nout = runs/x\n\n"
      "[synth]\nmode = easy\nn_videos = 12\n"
      "[phase2]\nk = 6\nattention = literal\nlists = his\n"
      "; another comment\n"
      "[ksweep]\nks = 0, 4\n");
  CHECK(c.seed == 7);
  CHECK(c.out == "runs/x");
  CHECK(c.synth.mode == SynthMode::easy);
  CHECK(c.synth.n_videos == 12);
  CHECK(c.phase2.ltc.k == 6);
  CHECK(c.phase2.ltc.attention == AttentionMode::literal);
  CHECK(c.phase2.ltc.lists == ListSelection{false, false, true});
  CHECK(c.ksweep_ks == std::vector<std::size_t>{0, 4});
}

TEST_CASE("parse errors name the line") {
  CHECK_THROWS_WITH_AS(parse_config("[run]\nbogus = 1\n", "f.ini"), doctest::Contains("f.ini:2"), ConfigError);
  CHECK_THROWS_WITH(parse_config("[run]\nbogus = 1\n"), doctest::Contains("unknown setting"));
  CHECK_THROWS_AS(parse_config("seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run]\nseed = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[phase2]\nattention = cosine\n"), ConfigError);
}

TEST_CASE("overrides and validation") {
  RunConfig c;
  apply_override(c, "phase1.epochs=3");
  apply_override(c, " phase1.warmup_epochs = 1 ");
  CHECK(c.phase1.schedule.epochs == 3);
  CHECK_THROWS_AS(apply_override(c, "phase1.epochs"), ConfigError);
  apply_override(c, "phase1.epochs=0");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  apply_override(c, "data.train=/definitely/not/here.jsonl");
  CHECK_THROWS_WITH(c.validate(), doctest::Contains("does not exist"));
  apply_override(c, "data.train=");
  CHECK_FALSE(c.train_manifest.has_value());
}

TEST_CASE("rendered config parses back to the same settings") {
  RunConfig c;
  c.seed = 123;
  c.phase2.ltc.k = 2;
  c.phase1.schedule.lr_max = 0.1 + 0.2;
  c.desk_scale = 0.05;
  const auto back = parse_config(render_config(c));
  CHECK(back.settings() == c.settings());
  CHECK(back.phase1.schedule.lr_max == c.phase1.schedule.lr_max);
  CHECK(back.phase3_config().iterations == 1500);
}

TEST_CASE("derived phase seeds") {
  RunConfig c;
  c.seed = 9;
  CHECK(c.phase1_config().seed == 9);
  CHECK(c.phase2_config().seed == derive_seed(9, "phase2"));
  CHECK(c.phase3_config().seed == derive_seed(9, "phase3"));
  CHECK(c.instruct_config().seed == derive_seed(9, "instruct"));
}

TEST_CASE("output root from the environment") {
  ::setenv("LTCVAD_OUT", "/tmp/root", 1);
  CHECK(resolve_output_dir("runs/a") == std::filesystem::path("/tmp/root/runs/a"));
  CHECK(resolve_output_dir("/abs/b") == std::filesystem::path("/abs/b"));
  ::unsetenv("LTCVAD_OUT");
  CHECK(resolve_output_dir("runs/a") == std::filesystem::path("runs/a"));
}

}
