#include <doctest.h>

#include <fstream>

#include <fstream>

#include "genaf/checkpoint.hpp"
#include "genaf/error.hpp"
#include "genaf/pretrain.hpp"
#include "support.hpp"

using namespace genaf;

namespace {

Architecture arch() { return Architecture::conv_encoder({3, 16, 16}, {4, 8}, 16, 2); }

bool mentions(const std::exception& e, const std::string& what) {
  return std::string(e.what()).find(what) != std::string::npos;
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise and keeps logits") {
  testing::TempDir tmp("ckpt");
  DownstreamModel m(arch(), 3);
  auto b = testing::random_batch(4, {3, 16, 16}, 2, 1);
  // Move BN running statistics away from their defaults.
  m.train();
  forward(m, b);
  m.eval();
  const auto before = forward(m, b).logits;

  CheckpointMeta meta;
  meta.stage = "stage1";
  meta.epoch = 7;
  meta.seed = 42;
  meta.config_hash = "abc";
  meta.extra["note"] = "x";
  save_checkpoint(m, tmp / "c", meta);

  CheckpointMeta got;
  auto loaded = load_encoder(tmp / "c");
  CHECK(bitwise_equal(snapshot_params(loaded), snapshot_params(m)));
  auto again = load_checkpoint(tmp / "c", &got, arch());
  CHECK(got.stage == "stage1");
  CHECK(got.epoch == 7);
  CHECK(got.seed == 42);
  CHECK(got.config_hash == "abc");
  CHECK(got.extra["note"] == "x");
  again.eval();
  CHECK(torch::equal(forward(again, b).logits, before));
  CHECK(model_hash(again) == model_hash(m));
}

TEST_CASE("checkpoint errors name the file") {
  testing::TempDir tmp("ckpt_err");
  DownstreamModel m(arch(), 3);
  save_checkpoint(m, tmp / "c", {});

  try {
    load_checkpoint(tmp / "missing");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(mentions(e, kArchitectureFile));
  }

  auto broken = tmp / "broken";
  std::filesystem::copy(tmp / "c", broken);
  {
    std::ofstream out(broken / kParamsFile, std::ios::binary | std::ios::trunc);
    out << "not a packed file";
  }
  try {
    load_checkpoint(broken);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(mentions(e, kParamsFile));
  }

  std::filesystem::remove(tmp / "c" / kMetaFile);
  try {
    load_checkpoint(tmp / "c");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(mentions(e, kMetaFile));
  }
}

TEST_CASE("loading against a different architecture is a configuration error") {
  testing::TempDir tmp("ckpt_arch");
  DownstreamModel m(arch(), 3);
  save_checkpoint(m, tmp / "c", {});
  CHECK_THROWS_AS(load_checkpoint(tmp / "c", nullptr, Architecture::conv_encoder({3, 16, 16}, {4, 4}, 16, 2)),
                  ConfigError);

  // A descriptor that disagrees with the parameter blob.
  DownstreamModel other(Architecture::conv_encoder({3, 16, 16}, {4, 4}, 16, 2), 3);
  save_checkpoint(other, tmp / "o", {});
  std::filesystem::copy_file(tmp / "o" / kArchitectureFile, tmp / "c" / kArchitectureFile,
                             std::filesystem::copy_options::overwrite_existing);
  CHECK_THROWS_AS(load_checkpoint(tmp / "c"), ConfigError);
}

TEST_CASE("double precision models round trip") {
  testing::TempDir tmp("ckpt64");
  DownstreamModel m(Architecture::mlp({1, 2, 2}, {3}, 2), 1);
  m.to(torch::kFloat64);
  save_checkpoint(m, tmp / "c", {});
  auto l = load_checkpoint(tmp / "c");
  CHECK((l.dtype() == torch::kFloat64));
  CHECK(bitwise_equal(snapshot_params(l), snapshot_params(m)));
}
