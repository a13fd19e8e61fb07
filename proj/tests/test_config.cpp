#include <doctest.h>

#include <fstream>

#include "genaf/config.hpp"
#include "genaf/error.hpp"
#include "support.hpp"

using namespace genaf;

TEST_CASE("parse_rational") {
  CHECK(parse_rational("10/255") == 10.0 / 255.0);
  CHECK(parse_rational("0.25") == 0.25);
  CHECK(parse_rational(" 3 ") == 3.0);
  CHECK(parse_rational("-1/4") == -0.25);
  CHECK_THROWS_AS(parse_rational("1/0"), ConfigError);
  CHECK_THROWS_AS(parse_rational("abc"), ConfigError);
  CHECK_THROWS_AS(parse_rational(""), ConfigError);
  CHECK_THROWS_AS(parse_rational("1/2/3"), ConfigError);
}

TEST_CASE("defaults carry the reference hyperparameters") {
  auto c = RunConfig::defaults();
  c.validate();
  auto s1 = c.stage1();
  CHECK(s1.lambda == 20.0);
  CHECK(s1.lr_encoder == 1e-4);
  CHECK(s1.lr_classifier == 5e-3);
  CHECK(s1.epochs == 50);
  CHECK(s1.batch_size == 256);
  CHECK(s1.attack.epsilon == 10.0 / 255.0);
  CHECK(s1.attack.steps == 10);
  CHECK(s1.attack.step_size == doctest::Approx(2.5 / 255.0));
  CHECK(s1.attack.norm == Norm::inf);
  CHECK(s1.lr_shared == 0.01);
  CHECK_FALSE(s1.single_optimizer);
  auto s2 = c.stage2();
  CHECK(s2.topk_ratio == 0.2);
  CHECK(s2.lr == 1e-3);
  CHECK(s2.epochs == 20);
  auto rc = c.rc();
  CHECK(rc.gamma == 0.01);
  CHECK(rc.norm == Norm::l2);
  CHECK(c.eval_attack().epsilon == 10.0 / 255.0);
  CHECK_FALSE(c.eval_attack().random_start);
}

TEST_CASE("desk preset") {
  auto d = RunConfig::desk();
  d.validate();
  CHECK(d.stage1().batch_size == 128);
  CHECK(d.stage1().epochs == 20);
  CHECK(d.stage2().epochs == 20);
  CHECK(d.stage2().batch_size == 128);
  CHECK(d.baseline().epochs == 20);
  CHECK(d.preset("desk").serialize() == d.serialize());
  CHECK(RunConfig::preset("default").serialize() == RunConfig::defaults().serialize());
  CHECK_THROWS_AS(RunConfig::preset("huge"), ConfigError);
}

TEST_CASE("parse applies overrides and rejects unknown keys") {
  auto c = RunConfig::parse(R"(
# comment line
stage1.lambda = 5
attack.epsilon = 8/255   # trailing comment
stage2.topk_ratio=0.5
)");
  CHECK(c.stage1().lambda == 5.0);
  CHECK(c.attack().epsilon == 8.0 / 255.0);
  CHECK(c.stage2().topk_ratio == 0.5);
  CHECK_THROWS_AS(RunConfig::parse("stage1.lamda = 5"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("stage1.lambda"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("stage1.epochs = many"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("attack.norm = 3"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("stage1.random = true"), ConfigError);
  auto bad = RunConfig::parse("stage1.lambda = -1");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("serialize is a fixed point of parse") {
  auto c = RunConfig::desk();
  c.set("stage1.lambda", "7.5");
  c.set("attack.epsilon", "4/255");
  c.set("model.channels", "8,16");
  const auto text = c.serialize();
  auto back = RunConfig::parse(text, RunConfig::defaults());
  CHECK(back.serialize() == text);
  CHECK(back.hash() == c.hash());
  CHECK(back.int_list("model.channels") == std::vector<int64_t>{8, 16});
  c.set("seed", "9");
  CHECK(c.hash() != back.hash());

  testing::TempDir dir("config");
  {
    std::ofstream out(dir / "run.txt");
    out << text;
  }
  CHECK(RunConfig::load(dir / "run.txt").serialize() == text);
  CHECK_THROWS_AS(RunConfig::load(dir / "missing.txt"), IoError);
}

TEST_CASE("seeds of the typed views are derived from the run seed") {
  auto c = RunConfig::desk();
  c.set("seed", "4");
  CHECK(c.seed() == 4);
  CHECK(c.stage1().seed != c.stage2().seed);
  CHECK(c.rc().seed != c.stage1().seed);
  CHECK(c.synthetic("train").seed != c.synthetic("test").seed);
  auto d = c;
  d.set("seed", "5");
  CHECK(d.stage1().seed != c.stage1().seed);
  CHECK(d.synthetic("train").seed != c.synthetic("train").seed);
}

TEST_CASE("architecture and stage views") {
  auto c = RunConfig::desk();
  auto arch = c.architecture();
  CHECK(arch.input_shape == std::array<int64_t, 3>{3, 32, 32});
  CHECK(arch.num_classes == 2);
  c.set("stage1.single_optimizer", "true");
  CHECK(c.stage1().single_optimizer);
  CHECK_FALSE(c.baseline().single_optimizer);
  c.set("attack.step_size", "1/255");
  CHECK(c.attack().step_size == 1.0 / 255.0);
  c.set("stage1.graph_features", "encoder");
  CHECK(c.stage1().graph_features == GraphFeatures::encoder);
  CHECK_THROWS_AS(c.set("stage1.graph_features", "pixels"), ConfigError);
  CHECK(c.known_keys().size() > 40);
}
