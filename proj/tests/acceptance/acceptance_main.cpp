// Acceptance run: one PASS/FAIL line per criterion.
//
//   genaf_acceptance [--only 1,2,8] [--work DIR] [--keep]
//
// Criteria 8-10 share three desk-preset pipeline runs (seeds 0, 1, 2).

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "genaf/attacks.hpp"
#include "genaf/checkpoint.hpp"
#include "genaf/config.hpp"
#include "genaf/error.hpp"
#include "genaf/feature_graph.hpp"
#include "genaf/metrics.hpp"
#include "genaf/pipeline.hpp"
#include "genaf/sensitivity.hpp"
#include "genaf/stage2.hpp"

using namespace genaf;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Report {
 public:
  std::ostringstream out;
  bool ok = true;
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      out << (out.tellp() > 0 ? "; " : "") << "violated: " << what;
    }
  }
  void note(const std::string& s) { out << (out.tellp() > 0 ? "; " : "") << s; }
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(prec);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(2);
  s << v;
  return s.str();
}

ImageBatch random_batch(int64_t n, std::array<int64_t, 3> shape, int64_t classes, uint64_t seed,
                        torch::Dtype dtype = torch::kFloat32) {
  auto gen = make_generator(seed);
  ImageBatch b;
  b.pixels = torch::rand({n, shape[0], shape[1], shape[2]}, gen, torch::kFloat64).to(dtype);
  b.labels = torch::randint(0, classes, {n}, gen, torch::kLong);
  return b;
}

void set_param(DownstreamModel& m, const std::string& layer, size_t index, const torch::Tensor& v) {
  torch::NoGradGuard ng;
  auto& p = m.layer(layer).params.at(index);
  p.copy_(v.to(p.dtype()).view_as(p));
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Report r;
  std::mt19937_64 rng(1);
  double worst_row = 0.0, worst_scale = 0.0, lo = 1.0, hi = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int64_t n = std::uniform_int_distribution<int64_t>(2, 64)(rng);
    const int64_t d = std::uniform_int_distribution<int64_t>(2, 128)(rng);
    auto gen = make_generator(rng());
    auto v = torch::randn({n, d}, gen, torch::kFloat64);
    auto g = build_feature_graph(v);
    worst_row = std::max(worst_row, (g.weights.sum(1) - 1.0).abs().max().item<double>());
    auto off = g.weights.masked_select(~torch::eye(n, torch::kBool));
    lo = std::min(lo, off.min().item<double>());
    hi = std::max(hi, off.max().item<double>());
    auto scale = torch::rand({n, 1}, gen, torch::kFloat64) * 50.0 + 0.02;
    worst_scale = std::max(worst_scale, (build_feature_graph(v * scale).weights - g.weights).abs().max().item<double>());
  }
  r.expect(worst_row <= 1e-6, "row sums within 1e-6");
  r.expect(lo >= 0.0 && hi <= 1.0, "weights in [0,1]");
  r.expect(worst_scale <= 1e-9, "rescaling invariance within 1e-9");
  r.note("max |rowsum-1| " + sci(worst_row) + ", weights in [" + fmt(lo, 4) + ", " + fmt(hi, 4) +
         "], max rescale change " + sci(worst_scale));
  return {r.ok, r.out.str()};
}

Outcome criterion2() {
  Report r;
  auto gen = make_generator(2);
  double self_loss = 0.0;
  for (int t = 0; t < 20; ++t) {
    auto g = build_feature_graph(torch::randn({2 + t, 6}, gen, torch::kFloat64));
    self_loss = std::max(self_loss, std::abs(genetic_regularization_loss(GraphPair{g, g, true}).item<double>()));
  }
  double min_loss = 1e300;
  for (int t = 0; t < 1000; ++t) {
    const int64_t n = 2 + t % 40;
    auto a = torch::randn({n, 8}, gen, torch::kFloat64);
    auto b = a + torch::rand({1}, gen, torch::kFloat64).item<double>() * torch::randn({n, 8}, gen, torch::kFloat64);
    min_loss = std::min(min_loss,
                        genetic_regularization_loss(GraphPair{build_feature_graph(a), build_feature_graph(b), true})
                            .item<double>());
  }
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    auto vc = torch::randn({8, 5}, gen, torch::kFloat64).requires_grad_(true);
    auto va = (vc.detach() + 0.3 * torch::randn({8, 5}, gen, torch::kFloat64)).requires_grad_(true);
    auto loss = genetic_regularization_loss(GraphPair{build_feature_graph(vc), build_feature_graph(va), true});
    auto grads = torch::autograd::grad({loss}, {vc, va});
    torch::NoGradGuard ng;
    const double h = 1e-6;
    for (int which = 0; which < 2; ++which) {
      auto base = (which == 0 ? vc : va).detach().clone();
      auto flat = base.view(-1);
      auto fd = torch::zeros_like(base);
      for (int64_t i = 0; i < flat.numel(); ++i) {
        const double orig = flat[i].item<double>();
        auto eval = [&](double x) {
          flat[i] = x;
          const auto& c = which == 0 ? base : vc.detach();
          const auto& a = which == 1 ? base : va.detach();
          return genetic_regularization_loss(GraphPair{build_feature_graph(c), build_feature_graph(a), true})
              .item<double>();
        };
        const double up = eval(orig + h), down = eval(orig - h);
        flat[i] = orig;
        fd.view(-1)[i] = (up - down) / (2 * h);
      }
      worst = std::max(worst, (grads[which] - fd).norm().item<double>() / std::max(1e-12, fd.norm().item<double>()));
    }
  }
  r.expect(self_loss <= 1e-10, "L_gr(G,G) = 0 within 1e-10");
  r.expect(min_loss >= 0.0, "L_gr >= 0");
  r.expect(worst < 1e-4, "gradient relative error < 1e-4");
  r.note("max L_gr(G,G) " + sci(self_loss) + ", min L_gr " + sci(min_loss) + ", worst FD rel. error " + sci(worst));
  return {r.ok, r.out.str()};
}

Outcome criterion3() {
  Report r;
  const double s = 1.0 / std::sqrt(2.0);
  auto g = build_feature_graph(torch::tensor({1.0, 0.0, 0.0, 1.0, s, s}, torch::kFloat64).view({3, 2}));
  const double w12 = g.weights[0][1].item<double>(), w13 = g.weights[0][2].item<double>();
  r.expect(std::abs(w12 - 0.39262) <= 1e-4, "W_12 = 0.39262");
  r.expect(std::abs(w13 - 0.60738) <= 1e-4, "W_13 = 0.60738");
  r.note("W_12 " + fmt(w12, 5) + ", W_13 " + fmt(w13, 5));
  return {r.ok, r.out.str()};
}

Outcome criterion4() {
  Report r;
  std::mt19937_64 rng(4);
  DownstreamModel conv(Architecture::conv_encoder({3, 8, 8}, {4}, 8, 3), 1);
  DownstreamModel mlp(Architecture::mlp({1, 6, 6}, {8}, 4), 2);
  int bad = 0;
  double worst_excess = -1.0;
  for (int t = 0; t < 1000; ++t) {
    auto& model = t % 2 == 0 ? conv : mlp;
    const auto shape = t % 2 == 0 ? std::array<int64_t, 3>{3, 8, 8} : std::array<int64_t, 3>{1, 6, 6};
    auto batch = random_batch(4, shape, model.num_classes(), rng());
    batch.pixels = torch::where(batch.pixels < 0.1, torch::zeros_like(batch.pixels), batch.pixels);
    batch.pixels = torch::where(batch.pixels > 0.9, torch::ones_like(batch.pixels), batch.pixels);
    AttackConfig cfg;
    cfg.epsilon = std::uniform_real_distribution<double>(0.0, 16.0 / 255.0)(rng);
    cfg.steps = std::uniform_int_distribution<int64_t>(1, 5)(rng);
    cfg.step_size = cfg.epsilon > 0 ? cfg.epsilon / 2.0 : 0.01;
    cfg.random_start = t % 3 != 0;
    auto gen = make_generator(rng());
    auto adv = pgd_attack(model, batch, cfg, &gen);
    const double linf = (adv.pixels.to(torch::kFloat64) - batch.pixels.to(torch::kFloat64)).abs().max().item<double>();
    worst_excess = std::max(worst_excess, linf - cfg.epsilon);
    if (linf > cfg.epsilon || adv.pixels.min().item<double>() < 0.0 || adv.pixels.max().item<double>() > 1.0) ++bad;
  }
  auto batch = random_batch(6, {3, 8, 8}, 3, 5);
  auto gen = make_generator(3);
  const bool zero_ok = torch::equal(pgd_attack(conv, batch, AttackConfig::pgd(0.0, true), &gen).pixels, batch.pixels);

  DownstreamModel lin(Architecture::mlp({1, 1, 6}, {}, 2), 3);
  lin.to(torch::kFloat64);
  auto g2 = make_generator(8);
  ImageBatch lb{torch::rand({5, 1, 1, 6}, g2, torch::kFloat64) * 0.6 + 0.2, torch::tensor({0, 1, 1, 0, 1}, torch::kLong)};
  AttackConfig one;
  one.epsilon = 8.0 / 255.0;
  one.steps = 1;
  one.step_size = one.epsilon;
  one.random_start = false;
  auto adv = pgd_attack(lin, lb, one);
  auto w = lin.layer("classifier.linear0").params[0].detach();
  // d CE / d x = W^T (softmax - onehot); sign of it is the analytic step.
  auto probs = torch::softmax(lb.pixels.flatten(1).matmul(w.t()) + lin.layer("classifier.linear0").params[1].detach(), 1);
  auto onehot = torch::one_hot(lb.labels, 2).to(torch::kFloat64);
  auto grad = (probs - onehot).matmul(w).view_as(lb.pixels);
  const double sign_err = ((adv.pixels - lb.pixels) - one.epsilon * grad.sign()).abs().max().item<double>();

  r.expect(bad == 0, "budget and range on every call");
  r.expect(zero_ok, "eps=0 returns the input bitwise");
  r.expect(sign_err < 1e-12, "single-step linear PGD equals eps*sign(grad)");
  r.note(std::to_string(bad) + " violations in 1000 calls (max |d|-eps " + sci(worst_excess) + "), eps=0 bitwise " +
         (zero_ok ? "yes" : "no") + ", sign-step error " + sci(sign_err));
  return {r.ok, r.out.str()};
}

// Dense boundary sampling of the 2-norm ball around one 2x2 layer of a linear toy.
double toy_oracle(DownstreamModel& m, const std::string& layer, const ImageBatch& data, double gamma) {
  auto E = m.layer("encoder.linear0").params[0].detach().clone();
  auto C = m.layer("classifier.linear0").params[0].detach().clone();
  const auto x = data.pixels.reshape({data.size(), 2});
  const auto y = data.labels;
  auto loss_of = [&](const torch::Tensor& Es, const torch::Tensor& Cs) {
    auto logits = torch::einsum("mij,mnj->mni", {Cs, torch::einsum("mij,nj->mni", {Es, x})});
    auto picked = logits.gather(2, y.view({1, -1, 1}).expand({logits.size(0), -1, 1})).squeeze(2);
    return (torch::logsumexp(logits, 2) - picked).mean(1);
  };
  const auto& target = layer == "encoder.linear0" ? E : C;
  const double radius = gamma * target.norm().item<double>();
  const double base = loss_of(E.unsqueeze(0), C.unsqueeze(0)).item<double>();
  auto gen = make_generator(17);
  double best = 0.0;
  const int64_t chunk = 25000;
  for (int k = 0; k < 16; ++k) {
    auto dirs = torch::randn({chunk, 4}, gen, torch::kFloat64);
    auto delta = (dirs / dirs.norm(2, 1, true) * radius).view({chunk, 2, 2});
    auto Es = E.unsqueeze(0).expand({chunk, 2, 2});
    auto Cs = C.unsqueeze(0).expand({chunk, 2, 2});
    auto l = layer == "encoder.linear0" ? loss_of(Es + delta, Cs) : loss_of(Es, Cs + delta);
    best = std::max(best, l.max().item<double>() - base);
  }
  return best;
}

Outcome criterion5() {
  Report r;
  DownstreamModel m(Architecture::conv_encoder({3, 8, 8}, {4, 8}, 8, 2), 5);
  auto data = random_batch(64, {3, 8, 8}, 2, 6);
  RcConfig rc;
  rc.ascent_steps = 3;
  rc.eval_subset_size = 48;
  rc.gamma = 0.0;
  auto attack = AttackConfig::pgd(8.0 / 255.0, true);
  attack.steps = 3;
  auto zero = build_sensitivity_dictionary(m, data, rc, attack);
  bool all_zero = zero.entries.size() == m.layers().size();
  for (const auto& e : zero.entries) all_zero = all_zero && e.rc == 0.0;

  rc.gamma = 0.05;
  auto adv = pgd_attack_dataset(m, data, attack, 64, 1);
  const auto before = snapshot_params(m);
  bool restored = true, local = true;
  int trials = 0;
  for (const auto& rec : m.layers()) {
    layer_robustness_contribution(m, rec.layer_id, adv, rc, [&](const DownstreamModel& live) {
      ++trials;
      const auto now = snapshot_params(live);
      for (const auto& other : live.layers())
        if (other.layer_id != rec.layer_id) local = local && layer_bitwise_equal(now, before, other.layer_id);
    });
    restored = restored && bitwise_equal(snapshot_params(m), before);
  }

  auto toy_data = random_batch(40, {1, 1, 2}, 2, 11, torch::kFloat64);
  toy_data.pixels = toy_data.pixels * 2.0 - 1.0;
  double worst_ratio = 1e300;
  for (uint64_t seed : {1u, 2u, 3u}) {
    DownstreamModel toy(Architecture::mlp({1, 1, 2}, {2}, 2, {}, false), seed);
    toy.to(torch::kFloat64);
    RcConfig cfg;
    cfg.gamma = 0.3;
    for (const std::string layer : {"encoder.linear0", "classifier.linear0"}) {
      const double est = layer_robustness_contribution(toy, layer, toy_data, cfg);
      const double oracle = toy_oracle(toy, layer, toy_data, cfg.gamma);
      worst_ratio = std::min(worst_ratio, oracle > 0 ? est / oracle : 0.0);
    }
  }
  r.expect(all_zero, "gamma=0 gives RC=0 for every layer");
  r.expect(restored, "bitwise restoration");
  r.expect(local, "only the target layer changes");
  r.expect(worst_ratio >= 0.8, "ascent >= 0.8x oracle");
  r.note("gamma=0 zero " + std::string(all_zero ? "yes" : "no") + ", restored " + (restored ? "yes" : "no") +
         ", local over " + std::to_string(trials) + " trials " + (local ? "yes" : "no") + ", min ascent/oracle " +
         fmt(worst_ratio, 4));
  return {r.ok, r.out.str()};
}

Outcome criterion6() {
  Report r;
  auto cfg = RunConfig::desk();
  auto model = DownstreamModel(cfg.architecture(), 6);
  auto train = load_split(cfg, "train");
  auto dict = build_sensitivity_dictionary(model, train, cfg.rc(), cfg.attack());
  const auto selection = select_topk_least_robust(dict, 0.2);
  auto tuned = model.clone();
  auto s2 = cfg.stage2();
  train_stage2(tuned, train, selection, s2);
  const auto a = tuned.named_state();
  const auto b = model.named_state();
  bool frozen = a.size() == b.size();
  size_t unselected = 0;
  for (const auto& rec : model.layers()) {
    if (std::find(selection.begin(), selection.end(), rec.layer_id) != selection.end()) continue;
    ++unselected;
    for (size_t i = 0; i < a.size(); ++i)
      if (a[i].first.rfind(rec.layer_id + ".", 0) == 0) frozen = frozen && torch::equal(a[i].second, b[i].second);
  }
  auto untouched = model.clone();
  train_stage2(untouched, train, {}, s2);
  const bool noop = bitwise_equal(snapshot_params(untouched), snapshot_params(model));
  r.expect(selection.size() == static_cast<size_t>(std::floor(0.2 * model.layers().size())), "selection size");
  r.expect(frozen, "unselected layers bitwise unchanged");
  r.expect(noop, "empty selection is a no-op");
  std::string sel;
  for (const auto& s : selection) sel += (sel.empty() ? "" : ",") + s;
  r.note("selected {" + sel + "}, " + std::to_string(unselected) + " frozen layers " + (frozen ? "unchanged" : "CHANGED") +
         ", empty selection no-op " + (noop ? "yes" : "no"));
  return {r.ok, r.out.str()};
}

Outcome criterion7() {
  Report r;
  // Lookup model: input e_i is classified as table[i].
  auto table_model = [](const std::vector<int64_t>& table) {
    const auto n = static_cast<int64_t>(table.size());
    DownstreamModel m(Architecture::mlp({1, 1, n}, {n}, 10), 0);
    set_param(m, "encoder.linear0", 0, torch::eye(n));
    set_param(m, "encoder.linear0", 1, torch::zeros({n}));
    auto w = torch::zeros({10, n});
    for (int64_t i = 0; i < n; ++i) w[table[i]][i] = 1.0;
    set_param(m, "classifier.linear0", 0, w);
    set_param(m, "classifier.linear0", 1, torch::zeros({10}));
    return m;
  };
  std::vector<int64_t> table(20);
  for (int64_t i = 0; i < 10; ++i) {
    table[i] = i < 7 ? i : 0;                      // 7 correct clean predictions
    table[10 + i] = i < 6 ? i : (i < 9 ? 9 : 8);  // 6 correct adversarial predictions
  }
  auto m = table_model(table);
  ImageBatch all{torch::eye(20).view({20, 1, 1, 20}), torch::arange(20, torch::kLong) % 10};
  auto clean = all.slice(0, 10), adv = all.slice(10, 20);
  auto rep = evaluate(m, clean, adv, "table", 0);
  // Flips: clean preds {0..6,0,0,0} vs adversarial {0..5,9,9,9,8} differ at 6,7,8,9.
  r.expect(rep.ta == 70.0 && rep.ra == 60.0 && rep.asr == 40.0, "table oracles 70/60/40");

  bool invariant = true, eps0 = true;
  for (uint64_t seed = 0; seed < 8; ++seed) {
    DownstreamModel net(Architecture::conv_encoder({3, 8, 8}, {4, 8}, 8, 3), seed);
    auto data = random_batch(64, {3, 8, 8}, 3, 100 + seed);
    auto a = pgd_attack_dataset(net, data, AttackConfig::pgd(8.0 / 255.0, seed % 2 == 0), 32, seed);
    auto e = evaluate(net, data, a, "pgd", seed);
    invariant = invariant && e.ra >= e.ta - e.asr;
    auto same = pgd_attack_dataset(net, data, AttackConfig::pgd(0.0, true), 32, seed);
    auto z = evaluate(net, data, same, "pgd0", seed);
    eps0 = eps0 && z.ra == z.ta;
  }
  r.expect(invariant, "RA >= TA - ASR");
  r.expect(eps0, "eps=0 gives RA = TA");
  r.note("table TA/RA/ASR " + fmt(rep.ta, 1) + "/" + fmt(rep.ra, 1) + "/" + fmt(rep.asr, 1) +
         " (oracle 70/60/40), RA>=TA-ASR on 8 evaluations " + (invariant ? "yes" : "no") + ", eps=0 RA=TA " +
         (eps0 ? "yes" : "no"));
  return {r.ok, r.out.str()};
}

// ---------------------------------------------------------------------------

struct SeedRun {
  MetricsReport baseline, stage1, stage2;
  fs::path dir;
};

MetricsReport pgd_report(const fs::path& dir, const std::string& model) {
  return MetricsReport::load(dir / "metrics" / (model + "_pgd.json"));
}

struct TrendRuns {
  std::vector<SeedRun> dual;
  double dual_seconds = 0.0;
  std::vector<SeedRun> shared;
  double shared_seconds = 0.0;
};

SeedRun run_seed(const RunConfig& cfg, const fs::path& dir) {
  run_pipeline(cfg, dir);
  SeedRun s;
  s.dir = dir;
  s.baseline = pgd_report(dir, "baseline");
  s.stage1 = pgd_report(dir, "stage1");
  s.stage2 = pgd_report(dir, "stage2");
  return s;
}

double mean_of(const std::vector<SeedRun>& runs, const std::function<double(const SeedRun&)>& f) {
  double s = 0.0;
  for (const auto& r : runs) s += f(r);
  return s / static_cast<double>(runs.size());
}

const std::vector<uint64_t> kSeeds{0, 1, 2};

void ensure_dual(TrendRuns& t, const fs::path& work) {
  if (!t.dual.empty()) return;
  const auto t0 = Clock::now();
  for (auto seed : kSeeds) {
    auto cfg = RunConfig::desk();
    cfg.set("seed", std::to_string(seed));
    t.dual.push_back(run_seed(cfg, work / ("dual_seed" + std::to_string(seed))));
  }
  t.dual_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string per_seed(const std::vector<SeedRun>& runs, const std::function<std::string(const SeedRun&)>& f) {
  std::string s;
  for (size_t i = 0; i < runs.size(); ++i) s += (i ? " | " : "") + f(runs[i]);
  return s;
}

Outcome criterion8(TrendRuns& t, const fs::path& work) {
  Report r;
  ensure_dual(t, work);
  const double std_ra = mean_of(t.dual, [](const SeedRun& s) { return s.baseline.ra; });
  const double std_ta = mean_of(t.dual, [](const SeedRun& s) { return s.baseline.ta; });
  const double gen_ra = mean_of(t.dual, [](const SeedRun& s) { return s.stage2.ra; });
  const double gen_ta = mean_of(t.dual, [](const SeedRun& s) { return s.stage2.ta; });
  r.expect(gen_ra >= std_ra + 15.0, "Gen-AF RA >= standard RA + 15");
  r.expect(gen_ta >= std_ta - 5.0, "Gen-AF TA >= standard TA - 5");
  r.expect(t.dual_seconds <= 900.0, "runtime <= 15 min");
  r.note("standard TA/RA " + fmt(std_ta, 1) + "/" + fmt(std_ra, 1) + ", Gen-AF TA/RA " + fmt(gen_ta, 1) + "/" +
         fmt(gen_ra, 1) + " (per seed std vs Gen-AF RA: " +
         per_seed(t.dual, [](const SeedRun& s) { return fmt(s.baseline.ra, 1) + " vs " + fmt(s.stage2.ra, 1); }) +
         "), " + fmt(t.dual_seconds, 0) + " s");
  return {r.ok, r.out.str()};
}

Outcome criterion9(TrendRuns& t, const fs::path& work) {
  Report r;
  ensure_dual(t, work);
  const auto t0 = Clock::now();
  for (size_t i = 0; i < kSeeds.size(); ++i) {
    auto cfg = RunConfig::desk();
    cfg.set("seed", std::to_string(kSeeds[i]));
    cfg.set("stage1.single_optimizer", "true");
    cfg.set("stage1.lr_shared", "0.01");
    // Same pre-trained encoder as the dual-rate run of this seed.
    cfg.set("encoder.checkpoint", (t.dual[i].dir / "encoder").string());
    t.shared.push_back(run_seed(cfg, work / ("shared_seed" + std::to_string(kSeeds[i]))));
  }
  t.shared_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  const double dual_ta = mean_of(t.dual, [](const SeedRun& s) { return s.stage2.ta; });
  const double shared_ta = mean_of(t.shared, [](const SeedRun& s) { return s.stage2.ta; });
  r.expect(shared_ta <= dual_ta - 10.0, "shared-lr TA at least 10 below dual-rate TA");
  r.expect(t.shared_seconds <= 900.0, "runtime <= 15 min");
  r.note("dual-rate TA " + fmt(dual_ta, 1) + ", shared lr 0.01 TA " + fmt(shared_ta, 1) + " (per seed: " +
         per_seed(t.shared, [](const SeedRun& s) { return fmt(s.stage2.ta, 1); }) + "), " + fmt(t.shared_seconds, 0) +
         " s");
  return {r.ok, r.out.str()};
}

Outcome criterion10(TrendRuns& t, const fs::path& work) {
  Report r;
  ensure_dual(t, work);
  const double ta1 = mean_of(t.dual, [](const SeedRun& s) { return s.stage1.ta; });
  const double ra1 = mean_of(t.dual, [](const SeedRun& s) { return s.stage1.ra; });
  const double ta2 = mean_of(t.dual, [](const SeedRun& s) { return s.stage2.ta; });
  const double ra2 = mean_of(t.dual, [](const SeedRun& s) { return s.stage2.ra; });
  r.expect(ta2 >= ta1 - 1.0, "TA(stage2) >= TA(stage1) - 1");
  r.expect(ra2 >= ra1 - 5.0, "RA(stage2) >= RA(stage1) - 5");
  r.note("stage1 TA/RA " + fmt(ta1, 1) + "/" + fmt(ra1, 1) + ", stage2 TA/RA " + fmt(ta2, 1) + "/" + fmt(ra2, 1) +
         " (per seed RA stage1 -> stage2: " +
         per_seed(t.dual, [](const SeedRun& s) { return fmt(s.stage1.ra, 1) + " -> " + fmt(s.stage2.ra, 1); }) + ")");
  return {r.ok, r.out.str()};
}

std::set<int> parse_only(const std::string& s) {
  std::set<int> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  at::set_num_threads(1);
  std::set<int> only;
  fs::path work = fs::temp_directory_path() / ("genaf_acceptance_" + std::to_string(::getpid()));
  bool keep = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only = parse_only(argv[++i]);
    } else if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--keep") {
      keep = true;
    } else {
      std::cerr << "usage: genaf_acceptance [--only 1,2,...] [--work DIR] [--keep]\n";
      return 2;
    }
  }
  fs::create_directories(work);

  TrendRuns trend;
  struct Entry {
    int id;
    const char* title;
    double limit_s;  // 0: no runtime limit of its own
    std::function<Outcome()> run;
  };
  const std::vector<Entry> entries{
      {1, "graph-weight invariants", 60, criterion1},
      {2, "genetic-loss correctness", 120, criterion2},
      {3, "hand-oracle graph case", 0, criterion3},
      {4, "attack constraint suite", 120, criterion4},
      {5, "sensitivity suite", 300, criterion5},
      {6, "freeze integrity", 300, criterion6},
      {7, "metrics oracle", 0, criterion7},
      {8, "end-to-end robustness trend", 0, [&] { return criterion8(trend, work); }},
      {9, "bilevel-optimizer ablation trend", 0, [&] { return criterion9(trend, work); }},
      {10, "stage-2 trade-off", 0, [&] { return criterion10(trend, work); }},
  };

  int failures = 0;
  for (const auto& e : entries) {
    if (!only.empty() && !only.count(e.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = e.run();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (e.limit_s > 0 && secs > e.limit_s) {
      o.pass = false;
      o.detail += "; runtime " + fmt(secs, 1) + " s exceeds " + fmt(e.limit_s, 0) + " s";
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << e.id << " (" << e.title << "): " << o.detail << " ["
              << fmt(secs, 1) << " s]" << std::endl;
  }
  if (!keep) {
    std::error_code ec;
    fs::remove_all(work, ec);
  }
  return failures == 0 ? 0 : 1;
}
