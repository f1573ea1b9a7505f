#include <catch2/catch_amalgamated.hpp>
#include <cstring>

#include "monokd/checkpoint.hpp"
#include "monokd/detector.hpp"
#include "monokd/training.hpp"

using namespace monokd;

namespace {

ModelConfig tiny_config() {
  ModelConfig m;
  m.channels = {4, 6, 8, 10};
  m.fused_channels = 8;
  m.head_hidden = 6;
  return m;
}

}  // namespace

TEST_CASE("serialize/parse round trip is bit exact") {
  DetectorModel model(tiny_config(), 11);
  const auto bytes = serialize_params(model.params(), model.config().to_text());
  const LoadedCheckpoint ck = parse_checkpoint(bytes);

  REQUIRE(ck.config_text == model.config().to_text());
  REQUIRE(ck.params.size() == model.params().params().size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto& orig = model.params().params()[i];
    const auto& got = ck.params[i];
    REQUIRE(got.name == orig.name);
    REQUIRE(got.trainable == orig.trainable);
    REQUIRE(got.shape == orig.tensor.shape());
    REQUIRE(got.value == orig.tensor.value());  // exact doubles
  }

  // reserialize after applying: identical bytes
  DetectorModel other(tiny_config(), 99);
  apply_params(other.params(), ck);
  REQUIRE(serialize_params(other.params(), ck.config_text) == bytes);
  REQUIRE(params_hash(other.params()) == params_hash(model.params()));
}

TEST_CASE("model_from_checkpoint reproduces outputs exactly") {
  DetectorModel model(tiny_config(), 21);
  const LoadedCheckpoint ck =
      parse_checkpoint(serialize_params(model.params(), model.config().to_text()));
  DetectorModel reborn = model_from_checkpoint(ck);

  Rng rng(5);
  std::vector<double> img(3 * 32 * 32);
  for (auto& v : img) v = rng.uniform();
  const Tensor x = Tensor::from({3, 32, 32}, img);
  const auto a = model.forward_heads(model.forward_backbone(x).fused);
  const auto b = reborn.forward_heads(reborn.forward_backbone(x).fused);
  REQUIRE(a.heatmap.value() == b.heatmap.value());
  REQUIRE(a.depth.value() == b.depth.value());
  REQUIRE(a.orientation.value() == b.orientation.value());
}

TEST_CASE("file round trip via save/load") {
  DetectorModel model(tiny_config(), 31);
  const std::string path = "/tmp/monokd_ck_test.ckpt";
  save_checkpoint(path, model.params(), model.config().to_text());
  const LoadedCheckpoint ck = load_checkpoint(path);
  REQUIRE(ck.config_text == model.config().to_text());
  DetectorModel reborn = model_from_checkpoint(ck);
  REQUIRE(params_hash(reborn.params()) == params_hash(model.params()));
  std::remove(path.c_str());
}

TEST_CASE("corruption and truncation are detected") {
  DetectorModel model(tiny_config(), 41);
  auto bytes = serialize_params(model.params(), model.config().to_text());

  SECTION("bad magic") {
    bytes[0] ^= 0xff;
    REQUIRE_THROWS_AS(parse_checkpoint(bytes), IoError);
  }
  SECTION("flipped payload byte fails the trailing hash") {
    bytes[bytes.size() / 2] ^= 0x01;
    REQUIRE_THROWS_AS(parse_checkpoint(bytes), IoError);
  }
  SECTION("flipped hash byte") {
    bytes.back() ^= 0x01;
    REQUIRE_THROWS_AS(parse_checkpoint(bytes), IoError);
  }
  SECTION("truncated") {
    for (std::size_t keep : {std::size_t{4}, bytes.size() / 2, bytes.size() - 1}) {
      std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + keep);
      REQUIRE_THROWS(parse_checkpoint(cut));
    }
  }
  SECTION("trailing garbage") {
    bytes.push_back(0);
    REQUIRE_THROWS_AS(parse_checkpoint(bytes), IoError);
  }
}

TEST_CASE("apply_params rejects mismatched stores") {
  DetectorModel model(tiny_config(), 51);
  LoadedCheckpoint ck =
      parse_checkpoint(serialize_params(model.params(), model.config().to_text()));

  SECTION("renamed parameter") {
    ck.params[0].name += "_x";
    DetectorModel m2(tiny_config(), 52);
    REQUIRE_THROWS_AS(apply_params(m2.params(), ck), ArchMismatch);
  }
  SECTION("reshaped parameter") {
    ck.params[0].shape.push_back(1);
    DetectorModel m2(tiny_config(), 52);
    REQUIRE_THROWS_AS(apply_params(m2.params(), ck), ArchMismatch);
  }
  SECTION("dropped parameter") {
    ck.params.pop_back();
    DetectorModel m2(tiny_config(), 52);
    REQUIRE_THROWS_AS(apply_params(m2.params(), ck), ArchMismatch);
  }
  SECTION("different architecture") {
    ModelConfig wide = tiny_config();
    wide.channels[0] = 5;
    DetectorModel m2(wide, 52);
    REQUIRE_THROWS_AS(apply_params(m2.params(), ck), ArchMismatch);
  }
}

TEST_CASE("params_hash tracks values") {
  DetectorModel a(tiny_config(), 61);
  DetectorModel b(tiny_config(), 61);
  REQUIRE(params_hash(a.params()) == params_hash(b.params()));
  DetectorModel c(tiny_config(), 62);
  REQUIRE(params_hash(a.params()) != params_hash(c.params()));

  // a single-bit change in one value changes the hash
  auto& node = a.params().params()[3].tensor.node()->value;
  node[0] = std::nextafter(node[0], 1e30);
  REQUIRE(params_hash(a.params()) != params_hash(b.params()));
}
