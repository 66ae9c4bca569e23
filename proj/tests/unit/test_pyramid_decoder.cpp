// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "pmamba/core/gradcheck.hpp"
#include "pmamba/decoder/head.hpp"
#include "pmamba/decoder/pfm.hpp"

using namespace pmamba;
using namespace pmamba::decoder;

namespace {

template <class T>
Tensor<T> rand_t(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng r(seed);
  return tensor_fill<T>(s, FillMode::uniform, &r, lo, hi);
}

template <class T>
void set_identity(Conv2dLayer<T>& conv) {
  const Index c = conv.weight.dim(0);
  for (T& v : conv.weight.data()) v = T{0};
  for (Index i = 0; i < c; ++i) conv.weight[i * c + i] = T{1};
  for (T& v : conv.bias.data()) v = T{0};
}

}  // namespace

TEST(DsppScales, EnumeratedSequences) {
  EXPECT_EQ(dspp_scales(32), (std::vector<Index>{1, 5, 9, 13, 17, 21, 25, 29}));
  EXPECT_EQ(dspp_scales(8), (std::vector<Index>{1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(dspp_scales(2), (std::vector<Index>{1}));
  EXPECT_EQ(dspp_scales(4), (std::vector<Index>{1, 2, 3}));
  EXPECT_EQ(dspp_scales(16), (std::vector<Index>{1, 3, 5, 7, 9, 11, 13, 15}));
  EXPECT_THROW(dspp_scales(1), ConfigError);
  EXPECT_EQ(dspp_scales(32), dspp_scales(32));
}

TEST(DsppScales, InvariantsAndChannelAccounting) {
  for (Index n : {2, 4, 8, 16, 32}) {
    const auto s = dspp_scales(n);
    ASSERT_FALSE(s.empty());
    EXPECT_EQ(s.front(), 1);
    EXPECT_LE(s.back(), n - 1);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    PyramidPooling<float> pp(PoolingConfig::dense(3, n));
    auto y = pp(Tensorf::zeros({3, n, n}));
    EXPECT_EQ(y.dim(0), static_cast<Index>(s.size() + 1) * 3) << n;
  }
  EXPECT_EQ(PoolingConfig::dense(64, 32).out_channels(), 9 * 64);
}

TEST(Dspp, ConstantInputWithIdentityBranchesIsConstant) {
  const Index n = 8, c = 3;
  PyramidPooling<double> pp(PoolingConfig::dense(c, n));
  for (auto& b : pp.branches()) set_identity(b);
  auto x = Tensord::full({c, n, n}, 0.37);
  auto y = pp(x);
  for (double v : y.data()) EXPECT_EQ(v, 0.37);
}

TEST(Dspp, RawSliceIsBitEqual) {
  PyramidPooling<float> pp(PoolingConfig::dense(4, 8));
  pp.init(Initializer(1), "dspp");
  auto x = rand_t<float>({2, 4, 8, 8}, 2);
  auto y = pp(x);
  const Index cout = pp.config().out_channels();
  for (Index b = 0; b < 2; ++b)
    for (Index i = 0; i < 4 * 64; ++i) EXPECT_EQ(y[b * cout * 64 + i], x[b * 4 * 64 + i]);
  EXPECT_THROW(pp(Tensorf::zeros({4, 6, 6})), ShapeError);
}

TEST(Spp, ClassicScalesFilteredToSide) {
  EXPECT_EQ(spp_scales(8), (std::vector<Index>{1, 2, 3, 6}));
  EXPECT_EQ(spp_scales(4), (std::vector<Index>{1, 2, 3}));
  PyramidPooling<float> spp(PoolingConfig::classic(8, 8));
  EXPECT_EQ(spp(Tensorf::zeros({8, 8, 8})).dim(0), 8 + 4 * 2);
}

TEST(Pfm, ShapeAndEvalDeterminism) {
  for (Index n : {4, 8}) {
    PfmConfig cfg;
    cfg.ms_channels = 6;
    cfg.side = n;
    cfg.d_dec = 5;
    cfg.d_state = 2;
    PyramidFusionMamba<float> pfm(cfg);
    pfm.init(Initializer(3), "pfm");
    auto x = rand_t<float>({6, n, n}, 4);
    ForwardCtx eval{StatsMode::eval, nullptr};
    auto y1 = pfm(x, eval);
    auto y2 = pfm(x, eval);
    EXPECT_EQ(y1.shape(), (Shape{5, n, n}));
    for (Index i = 0; i < y1.numel(); ++i) EXPECT_EQ(y1[i], y2[i]);
  }
}

TEST(Pfm, EndToEndGradCheckWithDspp) {
  const Index c = 4, n = 4;
  PyramidPooling<double> pp(PoolingConfig::dense(c, n));
  PfmConfig cfg;
  cfg.ms_channels = pp.config().out_channels();
  cfg.side = n;
  cfg.d_dec = 4;
  cfg.d_state = 2;
  PyramidFusionMamba<double> pfm(cfg);
  Initializer ini(5);
  pp.init(ini, "dspp");
  pfm.init(ini, "pfm");
  ParamSet<double> ps;
  pp.collect(ps, "dspp", ParamGroup::decoder);
  pfm.collect(ps, "pfm", ParamGroup::decoder);
  // Non-zero output projection so the scan path carries gradient.
  Rng r(6);
  for (double& v : pfm.block().w_out().weight.data()) v = r.uniform(-0.3, 0.3);
  auto x = rand_t<double>({2, c, n, n}, 7);
  auto w = rand_t<double>({2, 4, n, n}, 8);
  std::vector<Tensord> inputs{x};
  for (auto& p : ps.params()) inputs.push_back(p.value);
  auto res = gradcheck<double>("dspp+pfm", inputs, [&] {
    Rng drop(9);  // fixed masks on every evaluation
    ForwardCtx train{StatsMode::train, &drop};
    return sum(mul(pfm(pp(x), train), w));
  }, 40);
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
  EXPECT_GT(res.checked, 200);
}

TEST(Pfm, LiteralDropoutFlagOrphansGeluBranch) {
  PfmConfig cfg;
  cfg.ms_channels = 4;
  cfg.side = 2;
  cfg.d_dec = 3;
  cfg.d_state = 2;
  cfg.literal_dropout_on_conv = true;
  PyramidFusionMamba<double> pfm(cfg);
  pfm.init(Initializer(1), "pfm");
  ParamSet<double> ps;
  pfm.collect(ps, "pfm", ParamGroup::decoder);
  Rng drop(2);
  ForwardCtx train{StatsMode::train, &drop};
  backward(sum(pfm(rand_t<double>({4, 2, 2}, 3), train)));
  const auto* fc1 = ps.find("pfm.ffn.fc1.weight");
  ASSERT_NE(fc1, nullptr);
  EXPECT_FALSE(fc1->value.has_grad());
  EXPECT_TRUE(ps.find("pfm.ffn.fc2.weight")->value.has_grad());
}

TEST(Pfm, TrainingNeedsDropoutRng) {
  PfmConfig cfg;
  cfg.ms_channels = 4;
  cfg.side = 2;
  cfg.d_dec = 3;
  PyramidFusionMamba<float> pfm(cfg);
  ForwardCtx train{StatsMode::train, nullptr};
  EXPECT_THROW(pfm(Tensorf::zeros({4, 2, 2}), train), UsageError);
}

TEST(Fusion, ZeroProjectionIsPureRefinedUpsample) {
  LowLevelFusion<double> fuse(3, 5);
  fuse.init(Initializer(1), "fuse");
  for (double& v : fuse.projection().weight.data()) v = 0;
  ForwardCtx eval{StatsMode::eval, nullptr};
  FeatureMap<double> dec{rand_t<double>({3, 2, 2}, 2), 16};
  FeatureMap<double> low{rand_t<double>({5, 8, 8}, 3), 4};
  auto out = fuse(dec, low, eval);
  EXPECT_EQ(out.stride, 4);
  EXPECT_EQ(out.tensor.shape(), (Shape{3, 8, 8}));

  LowLevelFusion<double> ref(3, 5);
  ref.init(Initializer(1), "fuse");
  for (double& v : ref.projection().weight.data()) v = 0;
  // With zero weights and bias the low branch contributes exactly nothing.
  FeatureMap<double> other_low{rand_t<double>({5, 8, 8}, 99), 4};
  auto out2 = ref(dec, other_low, eval);
  for (Index i = 0; i < out.tensor.numel(); ++i) EXPECT_EQ(out.tensor[i], out2.tensor[i]);
}

TEST(Fusion, StrideOrderingAndConcatVariant) {
  LowLevelFusion<float> fuse(3, 5);
  ForwardCtx eval{StatsMode::eval, nullptr};
  FeatureMap<float> dec{Tensorf::zeros({3, 2, 2}), 4};
  FeatureMap<float> low{Tensorf::zeros({5, 8, 8}), 4};
  EXPECT_THROW(fuse(dec, low, eval), ConfigError);

  LowLevelFusion<double> cat(3, 5, FusionKind::concat);
  cat.init(Initializer(2), "f");
  ParamSet<double> ps;
  cat.collect(ps, "f", ParamGroup::decoder);
  EXPECT_EQ(ps.find("f.proj.weight"), nullptr);
  FeatureMap<double> d{rand_t<double>({3, 2, 2}, 4), 16};
  FeatureMap<double> l{rand_t<double>({5, 8, 8}, 5), 4};
  EXPECT_EQ(cat(d, l, eval).tensor.shape(), (Shape{3, 8, 8}));
}

TEST(SegHead, ShapeConstantLogitsAndFuzz) {
  SegHead<float> head(6, 4);
  FeatureMap<float> f{Tensorf::zeros({6, 4, 4}), 16};
  EXPECT_EQ(head(f, 64, 64).shape(), (Shape{4, 64, 64}));

  for (float& v : head.conv().weight.data()) v = 0;
  const float b[] = {0.1f, 0.7f, -0.2f, 0.3f};
  for (Index k = 0; k < 4; ++k) head.conv().bias[k] = b[k];
  f.tensor = rand_t<float>({6, 4, 4}, 1);
  auto logits = head(f, 16, 16);
  for (Index p = 0; p < 256; ++p) {
    Index best = 0;
    for (Index k = 1; k < 4; ++k)
      if (logits[k * 256 + p] > logits[best * 256 + p]) best = k;
    EXPECT_EQ(best, 1);
  }

  SegHead<float> fuzz(6, 4);
  fuzz.init(Initializer(2), "head");
  for (int draw = 0; draw < 100; ++draw) {
    f.tensor = rand_t<float>({6, 4, 4}, 100 + static_cast<std::uint64_t>(draw), -10.0, 10.0);
    for (float v : fuzz(f, 64, 64).data()) ASSERT_TRUE(std::isfinite(v));
  }
  EXPECT_THROW(SegHead<float>(6, 1), ConfigError);
}
