// Binary checkpoint serialization: bitwise round-trips, corruption handling,
// and compatibility verification on load.

#include <unistd.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "winnow/checkpoint.hpp"
#include "winnow/errors.hpp"
#include "winnow/graph.hpp"
#include "winnow/resnet.hpp"
#include "winnow/rng.hpp"

namespace {

namespace fs = std::filesystem;
using winnow::ModelGraph;
using winnow::ModelMeta;
using winnow::ResnetConfig;
using winnow::Rng;
using winnow::Tensor;
namespace ops = winnow::ops;

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("winnow_ckpt_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const {
    return (dir_ / name).string();
  }

  static ModelGraph small_model(uint64_t seed = 17) {
    ResnetConfig c;
    c.depth = 18;
    c.width_scale = 0.125f;
    c.in_channels = 1;
    c.in_h = 32;
    c.in_w = 32;
    c.num_classes = 2;
    Rng rng(seed);
    return winnow::build_resnet(c, rng);
  }

  static bool tensors_bitwise_equal(const ModelGraph& a, const ModelGraph& b) {
    auto ta = a.named_tensors();
    auto tb = b.named_tensors();
    if (ta.size() != tb.size()) return false;
    for (size_t i = 0; i < ta.size(); ++i) {
      if (ta[i].first != tb[i].first) return false;
      const Tensor& x = ta[i].second;
      const Tensor& y = tb[i].second;
      if (x.shape() != y.shape()) return false;
      if (std::memcmp(x.data().data(), y.data().data(),
                      x.data().size() * sizeof(float)) != 0)
        return false;
    }
    return true;
  }

  fs::path dir_;
};

TEST_F(CheckpointTest, SerializeDeserializeIsBitwiseLossless) {
  ModelGraph g = small_model();
  // Perturb some buffers so the round-trip is not on pristine init values.
  g.param("s1.b1.bn1.running_mean").mutable_data()[0] = -0.123456f;
  g.param("fc.bias").mutable_data()[1] = 3.0e-38f;  // denormal-adjacent

  std::vector<uint8_t> bytes = winnow::serialize_checkpoint(g);
  ModelGraph back = winnow::deserialize_checkpoint(bytes);
  EXPECT_TRUE(tensors_bitwise_equal(g, back));
  EXPECT_EQ(back.meta.arch, "resnet18");
  EXPECT_FLOAT_EQ(back.meta.width_scale, 0.125f);
  EXPECT_EQ(back.meta.num_classes, 2);

  // Serialization itself must be deterministic.
  std::vector<uint8_t> bytes2 = winnow::serialize_checkpoint(back);
  EXPECT_EQ(bytes, bytes2);
}

TEST_F(CheckpointTest, SaveLoadRoundTripThroughDisk) {
  ModelGraph g = small_model(21);
  winnow::save_checkpoint(g, path("model.ckpt"));
  ModelGraph back = winnow::load_checkpoint(path("model.ckpt"));
  EXPECT_TRUE(tensors_bitwise_equal(g, back));

  // The reloaded model must compute the same function.
  Rng in_rng(22);
  Tensor x = Tensor::randn({2, 1, 32, 32}, in_rng);
  winnow::NoGradGuard guard;
  Tensor a = g.forward(x, ops::BnMode::kEval);
  Tensor b = back.forward(x, ops::BnMode::kEval);
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(),
                        a.data().size() * sizeof(float)),
            0);
}

TEST_F(CheckpointTest, TruncatedFileIsRejected) {
  ModelGraph g = small_model();
  std::vector<uint8_t> bytes = winnow::serialize_checkpoint(g);
  for (size_t keep : {size_t{0}, size_t{4}, size_t{20}, bytes.size() / 2,
                      bytes.size() - 1}) {
    std::vector<uint8_t> cut(bytes.begin(),
                             bytes.begin() + static_cast<long>(keep));
    EXPECT_THROW(winnow::deserialize_checkpoint(cut), winnow::FormatError)
        << "kept " << keep << " bytes";
  }
}

TEST_F(CheckpointTest, GarbageMagicIsRejected) {
  ModelGraph g = small_model();
  std::vector<uint8_t> bytes = winnow::serialize_checkpoint(g);
  bytes[0] ^= 0x5a;
  EXPECT_THROW(winnow::deserialize_checkpoint(bytes), winnow::FormatError);
}

TEST_F(CheckpointTest, TrailingGarbageIsRejected) {
  ModelGraph g = small_model();
  std::vector<uint8_t> bytes = winnow::serialize_checkpoint(g);
  bytes.push_back(0xff);
  EXPECT_THROW(winnow::deserialize_checkpoint(bytes), winnow::FormatError);
}

TEST_F(CheckpointTest, MissingFileIsAnIoError) {
  EXPECT_THROW(winnow::load_checkpoint(path("absent.ckpt")),
               winnow::IoError);
}

TEST_F(CheckpointTest, ExpectedMetaMismatchIsIncompatibility) {
  ModelGraph g = small_model();
  winnow::save_checkpoint(g, path("model.ckpt"));

  ModelMeta want = g.meta;
  want.num_classes = 10;
  try {
    (void)winnow::load_checkpoint(path("model.ckpt"), want);
    FAIL() << "expected IncompatibilityError";
  } catch (const winnow::IncompatibilityError& e) {
    // The message must point at something actionable.
    EXPECT_NE(std::string(e.what()).find("classes"), std::string::npos);
  }

  ModelMeta wrong_arch = g.meta;
  wrong_arch.arch = "resnet34";
  EXPECT_THROW((void)winnow::load_checkpoint(path("model.ckpt"), wrong_arch),
               winnow::IncompatibilityError);

  ModelMeta wrong_input = g.meta;
  wrong_input.in_h = 64;
  EXPECT_THROW((void)winnow::load_checkpoint(path("model.ckpt"), wrong_input),
               winnow::IncompatibilityError);

  // Matching meta loads fine.
  EXPECT_NO_THROW((void)winnow::load_checkpoint(path("model.ckpt"), g.meta));
}

TEST_F(CheckpointTest, NonstandardGeometryRebuildsFromEmbeddedLayers) {
  // Hand-build a graph that no stock constructor would produce; the
  // checkpoint must carry enough structure to restore it.
  ModelGraph g;
  winnow::LayerSpec conv;
  conv.id = "c";
  conv.kind = winnow::LayerKind::kConv;
  conv.f = 3;
  conv.c = 2;
  conv.k = 5;
  conv.stride = 2;
  conv.pad = 2;
  g.add_layer(conv);
  winnow::LayerSpec gap;
  gap.id = "gap";
  gap.kind = winnow::LayerKind::kGap;
  gap.inputs = {"c"};
  g.add_layer(gap);
  winnow::LayerSpec fc;
  fc.id = "fc";
  fc.kind = winnow::LayerKind::kLinear;
  fc.f = 2;
  fc.c = 3;
  fc.inputs = {"gap"};
  g.add_layer(fc);
  Rng rng(23);
  g.add_param("c.weight", {3, 2, 5, 5});
  g.set_param("c.weight", Tensor::randn({3, 2, 5, 5}, rng, 0.2));
  g.add_param("fc.weight", {2, 3});
  g.set_param("fc.weight", Tensor::randn({2, 3}, rng, 0.2));
  g.add_param("fc.bias", {2});
  g.meta.arch = "custom";
  g.meta.in_channels = 2;
  g.meta.in_h = 10;
  g.meta.in_w = 10;
  g.meta.num_classes = 2;
  g.finalize();

  winnow::save_checkpoint(g, path("custom.ckpt"));
  ModelGraph back = winnow::load_checkpoint(path("custom.ckpt"));
  ASSERT_EQ(back.layers().size(), 3u);
  EXPECT_EQ(back.layer("c").k, 5);
  EXPECT_EQ(back.layer("c").stride, 2);
  EXPECT_TRUE(tensors_bitwise_equal(g, back));

  Rng in_rng(24);
  Tensor x = Tensor::randn({1, 2, 10, 10}, in_rng);
  winnow::NoGradGuard guard;
  Tensor a = g.forward(x, ops::BnMode::kEval);
  Tensor b = back.forward(x, ops::BnMode::kEval);
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(),
                        a.data().size() * sizeof(float)),
            0);
}

}  // namespace
