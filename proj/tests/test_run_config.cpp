#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "lantern/digest.hpp"
#include "lantern/errors.hpp"
#include "lantern/run_config.hpp"

using namespace lantern;

TEST_SUITE("run_config") {

TEST_CASE("defaults are the desk-scale configuration") {
  RunConfig cfg;
  cfg.validate();
  CHECK(cfg.gen.n_users == 5000);
  CHECK(cfg.model.d_embed == 32);
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.eval_threshold == 0.5);
  CHECK(cfg.eval_grid == std::vector<double>{0.3, 0.5, 0.7});
}

TEST_CASE("parser: key = value with comments and blank lines") {
  const std::string text =
      "# run setup\n"
      "\n"
      "gen.n_users = 123   # inline comment\n"
      "train.learning_rate=0.01\n"
      "  model.d_embed =  16\n"
      "train.variant = survey_only\n"
      "eval.grid = 0.2, 0.4 ,0.8\n"
      "data_dir = /tmp/run1/data\n";
  RunConfig cfg = parse_run_config(text, "inline");
  CHECK(cfg.gen.n_users == 123);
  CHECK(cfg.train.learning_rate == 0.01);
  CHECK(cfg.model.d_embed == 16);
  CHECK(cfg.train.variant == Variant::survey_only);
  CHECK(cfg.eval_grid == std::vector<double>{0.2, 0.4, 0.8});
  CHECK(cfg.data_dir == "/tmp/run1/data");
}

TEST_CASE("parser: unknown keys are rejected by name") {
  CHECK_THROWS_WITH_AS(parse_run_config("gen.n_user = 5\n", "f"),
                       "config f:1: unknown key 'gen.n_user'", ValidationError);
  CHECK_THROWS_WITH_AS(parse_run_config("\n\nfoo = 1\n", "f"),
                       "config f:3: unknown key 'foo'", ValidationError);
}

TEST_CASE("parser: malformed lines and values carry file:line context") {
  CHECK_THROWS_WITH_AS(parse_run_config("gen.n_users\n", "cfg.txt"),
                       "config cfg.txt:1: expected key = value, got 'gen.n_users'",
                       ValidationError);
  CHECK_THROWS_WITH_AS(parse_run_config("gen.n_users = lots\n", "cfg.txt"),
                       "config cfg.txt:1: key 'gen.n_users': cannot parse 'lots' as an integer",
                       ValidationError);
  CHECK_THROWS_AS(parse_run_config("= 3\n", "cfg.txt"), ValidationError);
  CHECK_THROWS_AS(parse_run_config("train.variant = both\n", "cfg.txt"), ValidationError);
}

TEST_CASE("apply_override: --set path reports its own origin") {
  RunConfig cfg;
  apply_override(cfg, "train.seed", "99", "--set");
  CHECK(cfg.train.seed == 99);
  CHECK_THROWS_WITH_AS(apply_override(cfg, "nope", "1", "--set"),
                       "config --set: unknown key 'nope'", ValidationError);
  CHECK_THROWS_WITH_AS(apply_override(cfg, "eval.bins", "few", "--set"),
                       "config --set: key 'eval.bins': cannot parse 'few' as an integer",
                       ValidationError);
}

TEST_CASE("render/parse is the identity on every field") {
  RunConfig cfg;
  apply_override(cfg, "gen.n_users", "777", "t");
  apply_override(cfg, "gen.rare_favorability_rate", "0.35", "t");
  apply_override(cfg, "model.n_layers", "3", "t");
  apply_override(cfg, "train.learning_rate", "0.0025", "t");
  apply_override(cfg, "train.variant", "external_only", "t");
  apply_override(cfg, "eval.grid", "0.25,0.5,0.75", "t");
  apply_override(cfg, "eval.bucket_mode", "favorable", "t");
  apply_override(cfg, "eval.averaging", "macro", "t");
  apply_override(cfg, "checkpoint", "/tmp/x.ckpt", "t");

  const std::string rendered = render_run_config(cfg);
  RunConfig back = parse_run_config(rendered, "rendered");
  CHECK(render_run_config(back) == rendered);
  CHECK(back.gen.n_users == 777);
  CHECK(back.gen.rare_favorability_rate == 0.35);
  CHECK(back.model.n_layers == 3);
  CHECK(back.train.learning_rate == 0.0025);
  CHECK(back.train.variant == Variant::external_only);
  CHECK(back.eval_grid == std::vector<double>{0.25, 0.5, 0.75});
  CHECK(back.eval_bucket_mode == BucketCountMode::favorable);
  CHECK(back.eval_averaging == Averaging::macro);
  CHECK(back.checkpoint == "/tmp/x.ckpt");
}

TEST_CASE("validate: cross-field rules") {
  RunConfig cfg;
  cfg.eval_threshold = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = RunConfig{};
  cfg.eval_grid = {0.5, 0.3};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = RunConfig{};
  cfg.eval_bins = 1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("bucket_k defaults to a tenth of the label space") {
  RunConfig cfg;
  CHECK(cfg.bucket_k_or_default(76) == 7);
  CHECK(cfg.bucket_k_or_default(5) == 1);
  cfg.eval_bucket_k = 12;
  CHECK(cfg.bucket_k_or_default(76) == 12);
}

TEST_CASE("sha256: published test vectors") {
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("The quick brown fox jumps over the lazy dog") ==
        "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
}

TEST_CASE("sha256: files and error on missing path") {
  const std::string path = "/tmp/lantern_digest_probe.txt";
  {
    std::ofstream f(path, std::ios::trunc);
    f << "abc";
  }
  CHECK(file_sha256_hex(path) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  std::remove(path.c_str());
  CHECK_THROWS_AS(file_sha256_hex(path), IoError);
}

}  // TEST_SUITE
