// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pmamba/core/gradcheck.hpp"
#include "pmamba/net/checkpoint.hpp"
#include "pmamba/net/model.hpp"

using namespace pmamba;
using namespace pmamba::net;

namespace {

template <class T>
Tensor<T> rand_t(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng r(seed);
  return tensor_fill<T>(s, FillMode::uniform, &r, lo, hi);
}

ModelConfig tiny_config(Variant v, Index size = 32) {
  ModelConfig c;
  c.encoder.stem_channels = 4;
  c.encoder.stage_channels = {4, 4, 6, 6};
  c.input_size = size;
  c.num_classes = 4;
  c.d_dec = 4;
  c.d_state = 2;
  c.variant = v;
  return c;
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pmamba_test_" + name);
}

// Give every Mamba output projection non-zero weights so the scan path
// carries gradient (it is zero at init by design).
template <class T>
void wake_mamba(Model<T>& m, std::uint64_t seed) {
  Rng r(seed);
  for (auto& p : m.params().params())
    if (p.name.find(".mamba.w_out.") != std::string::npos)
      for (T& v : p.value.data()) v = static_cast<T>(r.uniform(-0.2, 0.2));
}

}  // namespace

TEST(Encoder, ShapesAcrossInputSizes) {
  Encoder<float> enc(EncoderConfig{});
  ForwardCtx eval{StatsMode::eval, nullptr};
  for (Index h : {32, 64, 128}) {
    auto out = enc(Tensorf::zeros({3, h, h}), eval);
    EXPECT_EQ(out.low.tensor.shape(), (Shape{32, h / 4, h / 4})) << h;
    EXPECT_EQ(out.high.tensor.shape(), (Shape{64, h / 16, h / 16})) << h;
    EXPECT_EQ(out.low.stride, 4);
    EXPECT_EQ(out.high.stride, 16);
  }
  auto out = enc(Tensorf::zeros({3, 64, 64}), eval);
  EXPECT_EQ(out.low.height(), 16);
  EXPECT_EQ(out.high.height(), 4);
  EXPECT_THROW(enc(Tensorf::zeros({3, 40, 40}), eval), ShapeError);
  EXPECT_THROW(enc(Tensorf::zeros({1, 32, 32}), eval), ShapeError);
}

TEST(Encoder, ConfigValidation) {
  EncoderConfig c;
  c.stage_channels = {32, 16, 64, 64};
  EXPECT_THROW(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.low_level_stage = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Encoder, ResidualBlockGradCheck) {
  for (Index stride : {1, 2}) {
    ResidualBlock<double> blk(3, stride == 1 ? 3 : 4, stride);
    Initializer ini(1);
    blk.init(ini, "blk");
    ParamSet<double> ps;
    blk.collect(ps, "blk", ParamGroup::encoder);
    auto x = rand_t<double>({2, 3, 6, 6}, 2);
    auto w = rand_t<double>({2, stride == 1 ? 3 : 4, 6 / stride, 6 / stride}, 3);
    std::vector<Tensord> inputs{x};
    for (auto& p : ps.params()) inputs.push_back(p.value);
    ForwardCtx train{StatsMode::train, nullptr};
    auto res = gradcheck<double>("residual", inputs, [&] { return sum(mul(blk(x, train), w)); }, 30);
    EXPECT_TRUE(res.ok()) << "stride " << stride << ": " << res.max_rel_err;
  }
}

TEST(Model, VariantMatrixForwardsOnDeskInput) {
  ForwardCtx eval{StatsMode::eval, nullptr};
  for (Variant v : kAllVariants) {
    ModelConfig cfg;
    cfg.variant = v;
    auto m = model_init<float>(cfg, 1);
    auto logits = (*m)(rand_t<float>({3, 64, 64}, 2), eval);
    EXPECT_EQ(logits.shape(), (Shape{4, 64, 64})) << variant_name(v);
    for (float x : logits.data()) ASSERT_TRUE(std::isfinite(x));
    auto batched = (*m)(rand_t<float>({2, 3, 64, 64}, 3), eval);
    EXPECT_EQ(batched.shape(), (Shape{2, 4, 64, 64}));
  }
  EXPECT_EQ(parse_variant("dspp_pfm"), Variant::dspp_pfm);
  EXPECT_THROW(parse_variant("resnet"), ConfigError);
}

TEST(Model, EvalDeterminismAndInputSizeContract) {
  auto m = model_init<float>(ModelConfig{}, 4);
  wake_mamba(*m, 5);
  ForwardCtx eval{StatsMode::eval, nullptr};
  auto x = rand_t<float>({3, 64, 64}, 6);
  auto a = (*m)(x, eval);
  auto b = (*m)(x, eval);
  for (Index i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);
  EXPECT_THROW((*m)(Tensorf::zeros({3, 32, 32}), eval), ShapeError);
  ModelConfig bad;
  bad.input_size = 40;
  EXPECT_THROW(Model<float>{bad}, ConfigError);
}

TEST(Model, InitIsDeterministicPerSeed) {
  auto a = model_init<float>(ModelConfig{}, 11);
  auto b = model_init<float>(ModelConfig{}, 11);
  auto c = model_init<float>(ModelConfig{}, 12);
  const auto& pa = a->params().params();
  const auto& pb = b->params().params();
  const auto& pc = c->params().params();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].name, pb[i].name);
    for (Index j = 0; j < pa[i].value.numel(); ++j) {
      ASSERT_EQ(pa[i].value[j], pb[i].value[j]) << pa[i].name;
      if (pa[i].value[j] != pc[i].value[j]) any_diff = true;
    }
  }
  EXPECT_TRUE(any_diff);

  // Spot-check the init contract on a few named tensors.
  const auto* stem = a->params().find("encoder.stem.conv.weight");
  ASSERT_NE(stem, nullptr);
  const double bound = std::sqrt(1.0 / 27.0);
  for (float v : stem->value.data()) EXPECT_LE(std::abs(v), bound);
  for (float v : a->params().find("encoder.stem.bn.gamma")->value.data()) EXPECT_EQ(v, 1.0f);
  for (float v : a->params().find("encoder.stem.bn.beta")->value.data()) EXPECT_EQ(v, 0.0f);
  for (float v : a->params().find("decoder.pfm.mamba.w_out.weight")->value.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Model, DeskParameterCountByEnumeration) {
  // Hand enumeration of the desk preset (64x64 input, high side 4).
  auto conv = [](Index cin, Index cout, Index k, bool bias) { return cin * cout * k * k + (bias ? cout : 0); };
  auto bn = [](Index c) { return 2 * c; };
  auto resblock = [&](Index cin, Index cout, bool proj) {
    return conv(cin, cout, 3, false) + bn(cout) + conv(cout, cout, 3, false) + bn(cout) +
           (proj ? conv(cin, cout, 1, false) + bn(cout) : 0);
  };
  const Index encoder = conv(3, 16, 3, false) + bn(16) + resblock(16, 16, false) + resblock(16, 32, true) +
                        resblock(32, 64, true) + resblock(64, 64, true);
  const Index dspp = 3 * conv(64, 64, 1, true);  // scales {1, 2, 3}
  mamba::MambaBlockConfig bc;
  bc.d_model = 256;
  bc.expand = 1;
  bc.d_state = 8;
  bc.mode = mamba::ScanMode::cross2d(4);
  const Index pfm = mamba::block_param_count(bc) + conv(256, 64, 1, false) + bn(64) + conv(64, 256, 1, true) +
                    conv(256, 64, 1, true);
  const Index fuse = conv(32, 64, 1, true) + conv(64, 64, 3, false) + bn(64);
  const std::map<Variant, Index> expected{
      {Variant::baseline, encoder + conv(64, 4, 1, true)},
      {Variant::dspp, encoder + dspp + conv(256, 4, 1, true)},
      {Variant::dspp_pfm, encoder + dspp + pfm + conv(64, 4, 1, true)},
      {Variant::full, encoder + dspp + pfm + fuse + conv(64, 4, 1, true)},
  };
  for (auto [v, n] : expected) {
    ModelConfig cfg;
    cfg.variant = v;
    Model<float> m(cfg);
    EXPECT_EQ(m.params().scalar_count(), n) << variant_name(v);
  }
  EXPECT_EQ(expected.at(Variant::full), 745492);
}

TEST(Model, BaselineOwnsNoDecoderStages) {
  auto m = model_init<double>(tiny_config(Variant::baseline), 1);
  for (const auto& p : m->params().params()) {
    EXPECT_EQ(p.name.rfind("decoder.", 0), std::string::npos) << p.name;
  }
  ForwardCtx train{StatsMode::train, nullptr};
  backward(sum((*m)(rand_t<double>({2, 3, 32, 32}, 2), train)));
  for (const auto& p : m->params().params()) EXPECT_TRUE(p.value.has_grad()) << p.name;

  // A full model fed the same image: every decoder parameter is reached,
  // so the baseline's lack of them is structural, not a dead path.
  auto full = model_init<double>(tiny_config(Variant::full), 1);
  wake_mamba(*full, 3);
  Rng drop(4);
  ForwardCtx ftrain{StatsMode::train, &drop};
  backward(sum((*full)(rand_t<double>({2, 3, 32, 32}, 2), ftrain)));
  for (const auto& p : full->params().params()) {
    if (p.name.rfind("decoder.", 0) == 0) {
      EXPECT_TRUE(p.value.has_grad()) << p.name;
    }
  }
}

TEST(Model, EveryParameterGetsNonzeroGradInFullVariant) {
  auto m = model_init<double>(tiny_config(Variant::full), 7);
  wake_mamba(*m, 8);
  Rng drop(9);
  ForwardCtx train{StatsMode::train, &drop};
  auto w = rand_t<double>({2, 4, 32, 32}, 10);
  backward(sum(mul((*m)(rand_t<double>({2, 3, 32, 32}, 11), train), w)));
  std::vector<std::string> dead;
  for (const auto& p : m->params().params()) {
    bool nonzero = false;
    if (p.value.has_grad())
      for (double g : p.value.grad()) nonzero = nonzero || g != 0.0;
    if (!nonzero) dead.push_back(p.name);
  }
  EXPECT_TRUE(dead.empty()) << [&] {
    std::string s;
    for (auto& d : dead) s += d + " ";
    return s;
  }();
}

TEST(Model, EndToEndGradCheckTinyDouble) {
  auto m = model_init<double>(tiny_config(Variant::full), 21);
  // Evaluate away from init: with w_out = 0 and step sizes near 0.01 the scan
  // parameters get gradients around 1e-9, which only tests the noise floor.
  Rng r(22);
  for (auto& p : m->params().params()) {
    if (p.name.find(".mamba.w_out.") != std::string::npos)
      for (double& v : p.value.data()) v = r.uniform(-1.0, 1.0);
    if (p.name.find(".dt_bias") != std::string::npos)
      for (double& v : p.value.data()) v = r.uniform(0.0, 1.0);
  }
  auto x = rand_t<double>({2, 3, 32, 32}, 23);
  auto w = rand_t<double>({2, 4, 32, 32}, 24);
  std::vector<Tensord> inputs;
  for (auto& p : m->params().params()) inputs.push_back(p.value);
  ASSERT_GE(inputs.size(), 20u);
  auto res = gradcheck<double>("model", inputs, [&] {
    Rng drop(25);  // identical dropout masks on every evaluation
    ForwardCtx train{StatsMode::train, &drop};
    return sum(mul((*m)(x, train), w));
  }, 2, 26, kGradStep, 4);  // ReLU kinks: see gradcheck refinements
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
  EXPECT_GE(res.checked, 20);
}

TEST(Checkpoint, GoldenFileBytes) {
  Checkpoint<float> ck;
  ck.config_text = "[model]\nvariant=full\n";
  ck.meta = {3, 120, 0.5, 2, 7, 1, 42};
  ck.records.push_back({"a.weight", {2, 3}, {0.5f, 1.0f, 1.5f, 2.0f, 2.5f, 3.0f}});
  ck.records.push_back({"b", {1}, {-2.25f}});
  const auto golden = read_bytes(std::filesystem::path(PMAMBA_TEST_DATA_DIR) / "golden_checkpoint.pymb");
  ASSERT_FALSE(golden.empty());
  EXPECT_EQ(checkpoint_bytes(ck), golden);

  // Spot-check the leading layout by hand.
  ASSERT_GE(golden.size(), 16u);
  EXPECT_EQ(std::string(golden.data(), 4), "PYMB");
  EXPECT_EQ(golden[4], 1);
  EXPECT_EQ(golden[5], 0);
  EXPECT_EQ(static_cast<unsigned char>(golden[8]), 134);  // u64 text length, low byte

  auto back = checkpoint_parse<float>(golden);
  EXPECT_EQ(back.config_text, ck.config_text);
  EXPECT_EQ(back.meta.step, 120u);
  EXPECT_EQ(back.meta.rng_counter, 42u);
  EXPECT_EQ(back.meta.best_metric, 0.5);
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back.records[0].values, ck.records[0].values);
  EXPECT_EQ(back.records[1].shape, (Shape{1}));
  EXPECT_THROW(checkpoint_parse<double>(golden), FormatError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto m = model_init<float>(ModelConfig{}, 3);
  Checkpoint<float> ck;
  ck.config_text = "[model]\nvariant=full\n";
  ck.meta.best_metric = 0.1 + 0.2;  // needs all 17 digits
  ck.records = snapshot(m->params());
  const auto p1 = temp_path("ck1.pymb"), p2 = temp_path("ck2.pymb");
  checkpoint_save(p1, ck);
  auto loaded = checkpoint_load<float>(p1);
  EXPECT_EQ(loaded.meta.best_metric, 0.1 + 0.2);
  checkpoint_save(p2, loaded);
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));

  auto other = model_init<float>(ModelConfig{}, 99);
  restore(other->params(), loaded);
  const auto& a = m->params().params();
  const auto& b = other->params().params();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (Index j = 0; j < a[i].value.numel(); ++j) ASSERT_EQ(a[i].value[j], b[i].value[j]) << a[i].name;
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Checkpoint, CorruptionIsDetectedBeforeAnythingIsApplied) {
  auto m = model_init<float>(tiny_config(Variant::full), 3);
  Checkpoint<float> ck;
  ck.records = snapshot(m->params());
  const auto bytes = checkpoint_bytes(ck);

  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<char> trunc(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(checkpoint_parse<float>(trunc), IntegrityError) << cut;
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(checkpoint_parse<float>(flipped), IntegrityError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(checkpoint_parse<float>(bad_magic), IntegrityError);

  // A future version with a valid CRC is a version error, not corruption.
  auto future = bytes;
  future[4] = 2;
  const std::uint32_t crc = net::detail::crc32_of(future.data() + 4, future.size() - 8);
  std::memcpy(future.data() + future.size() - 4, &crc, 4);
  EXPECT_THROW(checkpoint_parse<float>(future), VersionError);

  // The file on disk is untouched by a failed load and the model keeps its state.
  const auto path = temp_path("trunc.pymb");
  {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
  }
  const float before = m->params().params().front().value[0];
  EXPECT_THROW(restore(m->params(), checkpoint_load<float>(path)), IntegrityError);
  EXPECT_EQ(m->params().params().front().value[0], before);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RestoreValidatesAllRecordsFirst) {
  auto m = model_init<float>(tiny_config(Variant::full), 3);
  auto donor = model_init<float>(tiny_config(Variant::full), 4);
  Checkpoint<float> ck;
  ck.records = snapshot(donor->params());
  ck.records.back().shape = {static_cast<Index>(ck.records.back().values.size()), 1};
  const auto before = snapshot(m->params());
  EXPECT_THROW(restore(m->params(), ck), ShapeError);
  const auto after = snapshot(m->params());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].values, after[i].values) << before[i].name;

  ck.records.pop_back();
  EXPECT_THROW(restore(m->params(), ck), IntegrityError);
}
