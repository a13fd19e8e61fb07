#include <doctest.h>

#include <cmath>
#include <set>

#include "genaf/attacks.hpp"
#include "genaf/error.hpp"
#include "genaf/sensitivity.hpp"
#include "support.hpp"

using namespace genaf;

namespace {

DownstreamModel small_conv(uint64_t seed) {
  return DownstreamModel(Architecture::conv_encoder({3, 8, 8}, {4, 8}, 8, 2), seed);
}

RcConfig fast_rc(double gamma = 0.05) {
  RcConfig c;
  c.gamma = gamma;
  c.ascent_steps = 3;
  c.eval_subset_size = 32;
  c.batch_size = 32;
  return c;
}

AttackConfig fast_attack() {
  auto a = AttackConfig::pgd(8.0 / 255.0, true);
  a.steps = 3;
  return a;
}

// Linear → linear toy; the loss is convex in either layer's weights.
DownstreamModel linear_toy(uint64_t seed) {
  auto m = DownstreamModel(Architecture::mlp({1, 1, 2}, {2}, 2, {}, /*bias=*/false), seed);
  m.to(torch::kFloat64);
  return m;
}

// Largest loss increase over `samples` points on the boundary of the 2-norm ball
// around one 2x2 weight matrix of the toy, evaluated in closed form.
double boundary_oracle(DownstreamModel& m, const std::string& layer, const genaf::ImageBatch& data, double gamma,
                       int64_t samples, uint64_t seed) {
  auto E = m.layer("encoder.linear0").params[0].detach().clone();
  auto C = m.layer("classifier.linear0").params[0].detach().clone();
  const auto x = data.pixels.reshape({data.size(), 2}).to(torch::kFloat64);
  const auto y = data.labels;
  auto loss_of = [&](const torch::Tensor& Es, const torch::Tensor& Cs) {
    // Es, Cs: (M, 2, 2); returns (M) mean cross-entropy
    auto h = torch::einsum("mij,nj->mni", {Es, x});
    auto logits = torch::einsum("mij,mnj->mni", {Cs, h});
    auto lse = torch::logsumexp(logits, 2);
    auto picked = logits.gather(2, y.view({1, -1, 1}).expand({logits.size(0), -1, 1})).squeeze(2);
    return (lse - picked).mean(1);
  };
  auto target = layer == "encoder.linear0" ? E : C;
  const double radius = gamma * target.norm().item<double>();
  auto base = loss_of(E.unsqueeze(0), C.unsqueeze(0)).item<double>();
  auto gen = make_generator(seed);
  double best = 0.0;
  const int64_t chunk = 20000;
  for (int64_t done = 0; done < samples; done += chunk) {
    auto dirs = torch::randn({chunk, 4}, gen, torch::kFloat64);
    dirs = dirs / dirs.norm(2, 1, true) * radius;
    auto deltas = dirs.view({chunk, 2, 2});
    auto Es = E.unsqueeze(0).expand({chunk, 2, 2});
    auto Cs = C.unsqueeze(0).expand({chunk, 2, 2});
    auto losses = layer == "encoder.linear0" ? loss_of(Es + deltas, Cs) : loss_of(Es, Cs + deltas);
    best = std::max(best, losses.max().item<double>() - base);
  }
  return best;
}

}  // namespace

TEST_CASE("rc is zero when gamma is zero") {
  auto m = small_conv(1);
  auto data = testing::random_batch(48, {3, 8, 8}, 2, 2);
  auto dict = build_sensitivity_dictionary(m, data, fast_rc(0.0), fast_attack());
  REQUIRE(dict.entries.size() == m.layers().size());
  for (const auto& e : dict.entries) CHECK(e.rc == 0.0);
}

TEST_CASE("rc of a zero-parameter layer is zero") {
  auto m = small_conv(3);
  const auto& rec = m.layer("encoder.conv1");
  {
    torch::NoGradGuard ng;
    for (const auto& p : rec.params) p.zero_();
  }
  auto adv = testing::random_batch(16, {3, 8, 8}, 2, 4);
  CHECK(layer_robustness_contribution(m, "encoder.conv1", adv, fast_rc()) == 0.0);
}

TEST_CASE("rc restores parameters bitwise and perturbs only the scored layer") {
  auto m = small_conv(5);
  m.train();
  auto adv = testing::random_batch(16, {3, 8, 8}, 2, 6);
  const auto before = snapshot_params(m);
  for (const auto& rec : m.layers()) {
    int calls = 0;
    bool target_moved = false;
    auto observer = [&](const DownstreamModel& live) {
      ++calls;
      const auto now = snapshot_params(live);
      for (const auto& other : live.layers()) {
        if (other.layer_id == rec.layer_id)
          target_moved = target_moved || !layer_bitwise_equal(now, before, other.layer_id);
        else
          CHECK(layer_bitwise_equal(now, before, other.layer_id));
      }
      CHECK_FALSE(live.is_training());
    };
    const double rc = layer_robustness_contribution(m, rec.layer_id, adv, fast_rc(), observer);
    CHECK(rc >= 0.0);
    CHECK(calls == 3);
    CHECK(target_moved);
    CHECK(bitwise_equal(snapshot_params(m), before));
  }
  CHECK(m.is_training());
}

TEST_CASE("rc on a convex toy reaches a dense boundary-sampling oracle") {
  auto data = testing::random_batch(40, {1, 1, 2}, 2, 11, torch::kFloat64);
  data.pixels = data.pixels * 2.0 - 1.0;
  for (uint64_t seed : {1u, 2u, 3u}) {
    auto m = linear_toy(seed);
    RcConfig cfg;
    cfg.gamma = 0.3;
    cfg.ascent_steps = 5;
    for (const std::string layer : {"encoder.linear0", "classifier.linear0"}) {
      CAPTURE(seed);
      CAPTURE(layer);
      const double est = layer_robustness_contribution(m, layer, data, cfg);
      const double oracle = boundary_oracle(m, layer, data, cfg.gamma, 200000, seed + 100);
      REQUIRE(oracle > 0.0);
      CHECK(est >= 0.8 * oracle);
      CHECK(est <= 1.02 * oracle);
    }
  }
}

TEST_CASE("dictionary covers every layer and matches per-layer recomputation") {
  auto m = small_conv(7);
  auto data = testing::random_batch(64, {3, 8, 8}, 2, 8);
  const auto rc = fast_rc();
  const auto attack = fast_attack();
  auto dict = build_sensitivity_dictionary(m, data, rc, attack);
  REQUIRE(dict.entries.size() == m.layers().size());
  std::set<std::string> ids;
  for (const auto& e : dict.entries) {
    CHECK(std::isfinite(e.rc));
    CHECK(e.rc >= 0.0);
    ids.insert(e.layer_id);
  }
  CHECK(ids.size() == m.layers().size());
  CHECK(dict.model_hash == model_hash(m));

  const auto eval_set = subset(data, rc.eval_subset_size, rc.seed);
  const auto adv = pgd_attack_dataset(m, eval_set, attack, rc.batch_size, rc.seed);
  for (const auto& rec : m.layers())
    CHECK(layer_robustness_contribution(m, rec.layer_id, adv, rc) == doctest::Approx(dict.at(rec.layer_id)).epsilon(1e-9));
  CHECK_THROWS_AS(dict.at("encoder.nope"), InputError);
}

TEST_CASE("select_topk_least_robust") {
  SensitivityDictionary d;
  d.entries = {{"a", 0.5}, {"b", 0.1}, {"c", 0.9}};
  CHECK(select_topk_least_robust(d, 1.0 / 3.0) == std::vector<std::string>{"b"});
  CHECK(select_topk_least_robust(d, 0.0).empty());
  CHECK(select_topk_least_robust(d, 0.5) == std::vector<std::string>{"b"});
  CHECK(select_topk_least_robust(d, 0.67) == std::vector<std::string>{"b", "a"});
  CHECK(select_topk_least_robust(d, 1.0) == std::vector<std::string>{"b", "a", "c"});
  CHECK_THROWS_AS(select_topk_least_robust(d, 1.5), InputError);
  CHECK_THROWS_AS(select_topk_least_robust(d, -0.1), InputError);

  SensitivityDictionary ties;
  ties.entries = {{"x", 0.2}, {"y", 0.2}, {"z", 0.1}, {"w", 0.2}};
  CHECK(select_topk_least_robust(ties, 0.75) == std::vector<std::string>{"z", "x", "y"});
}

TEST_CASE("nested rc is monotone in gamma") {
  auto m = small_conv(9);
  auto adv = testing::random_batch(24, {3, 8, 8}, 2, 10);
  const std::vector<double> gammas{0.05, 0.0, 0.2, 0.01, 0.1};
  for (const auto& rec : m.layers()) {
    const auto before = snapshot_params(m);
    auto rc = layer_robustness_contribution_nested(m, rec.layer_id, adv, fast_rc(), gammas);
    REQUIRE(rc.size() == gammas.size());
    CHECK(rc[1] == 0.0);
    CHECK(rc[1] <= rc[3]);
    CHECK(rc[3] <= rc[0]);
    CHECK(rc[0] <= rc[4]);
    CHECK(rc[4] <= rc[2]);
    CHECK(bitwise_equal(snapshot_params(m), before));
  }
}

TEST_CASE("sensitivity json is sorted ascending and round trips") {
  SensitivityDictionary d;
  d.entries = {{"encoder.conv0", 0.3}, {"encoder.bn0", 0.1}, {"classifier.linear0", 0.2}};
  d.config = fast_rc(0.02);
  d.config.seed = 42;
  d.model_hash = "abc";
  auto j = d.to_json();
  REQUIRE(j["entries"].size() == 3);
  CHECK(j["entries"][0]["layer_id"] == "encoder.bn0");
  CHECK(j["entries"][1]["layer_id"] == "classifier.linear0");
  CHECK(j["entries"][2]["layer_id"] == "encoder.conv0");
  CHECK(j["config"]["gamma"] == 0.02);
  CHECK(j["config"]["norm_p"] == "2");
  CHECK(j["config"]["seed"] == 42);
  CHECK(j["model_hash"] == "abc");

  testing::TempDir dir("sens");
  d.save(dir / "s.json");
  auto back = SensitivityDictionary::load(dir / "s.json");
  CHECK(back.model_hash == "abc");
  CHECK(back.at("encoder.conv0") == 0.3);
  CHECK(back.config.gamma == 0.02);
  CHECK_THROWS_AS(SensitivityDictionary::load(dir / "missing.json"), IoError);
}

TEST_CASE("rc config validation") {
  auto m = small_conv(1);
  auto adv = testing::random_batch(4, {3, 8, 8}, 2, 1);
  auto cfg = fast_rc();
  cfg.gamma = -1.0;
  CHECK_THROWS_AS(layer_robustness_contribution(m, "encoder.conv0", adv, cfg), ConfigError);
  CHECK_THROWS_AS(layer_robustness_contribution(m, "encoder.conv9", adv, fast_rc()), InputError);
}
