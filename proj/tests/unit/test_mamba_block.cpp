// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "pmamba/core/gradcheck.hpp"
#include "pmamba/mamba/block.hpp"

using namespace pmamba;
using namespace pmamba::mamba;

namespace {

template <class T>
Tensor<T> rand_t(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng r(seed);
  return tensor_fill<T>(s, FillMode::uniform, &r, lo, hi);
}

MambaBlockConfig cfg_of(Index dm, int expand, Index s, ScanMode mode) {
  MambaBlockConfig c;
  c.d_model = dm;
  c.expand = expand;
  c.d_state = s;
  c.mode = mode;
  return c;
}

template <class T>
void randomize_out(MambaBlock<T>& b, std::uint64_t seed) {
  Rng r(seed);
  for (T& v : b.w_out().weight.data()) v = static_cast<T>(r.uniform(-0.5, 0.5));
}

}  // namespace

TEST(MambaBlock, ZeroOutputProjectionIsIdentity) {
  for (auto mode : {ScanMode::seq1d(), ScanMode::cross2d(3)}) {
    MambaBlock<float> b(cfg_of(5, 2, 4, mode));
    b.init(Initializer(1), "blk");
    auto zero = Tensorf::zeros({9, 5});
    auto y0 = b(zero);
    for (Index i = 0; i < zero.numel(); ++i) EXPECT_EQ(y0[i], 0.0f);
    auto x = rand_t<float>({2, 9, 5}, 2);
    auto y = b(x);
    for (Index i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
  }
}

TEST(MambaBlock, ShapeContract) {
  for (Index side : {2, 7, 16}) {
    const Index L = side * side;
    MambaBlock<float> c2(cfg_of(4, 1, 2, ScanMode::cross2d(side)));
    c2.init(Initializer(3), "b");
    randomize_out(c2, 4);
    EXPECT_EQ(c2(rand_t<float>({L, 4}, 5)).shape(), (Shape{L, 4}));
    MambaBlock<float> c1(cfg_of(4, 1, 2, ScanMode::seq1d()));
    c1.init(Initializer(3), "b");
    EXPECT_EQ(c1(rand_t<float>({L, 4}, 6)).shape(), (Shape{L, 4}));
  }
}

TEST(MambaBlock, Cross2dRejectsWrongLength) {
  MambaBlock<float> b(cfg_of(4, 1, 2, ScanMode::cross2d(3)));
  EXPECT_THROW(b(Tensorf::zeros({8, 4})), ShapeError);
  EXPECT_THROW(b(Tensorf::zeros({9, 5})), ShapeError);
}

TEST(MambaBlock, ConfigValidation) {
  EXPECT_THROW(MambaBlock<float>(cfg_of(4, 3, 2, ScanMode::seq1d())), ConfigError);
  EXPECT_THROW(MambaBlock<float>(cfg_of(4, 1, 2, ScanMode{ScanModeKind::cross2d, 0})), ConfigError);
}

TEST(MambaBlock, GradCheckCross2d) {
  MambaBlock<double> b(cfg_of(6, 1, 3, ScanMode::cross2d(3)));
  b.init(Initializer(7), "blk");
  randomize_out(b, 8);
  ParamSet<double> ps;
  b.collect(ps, "blk", ParamGroup::decoder);
  auto x = rand_t<double>({9, 6}, 9);
  auto w = rand_t<double>({9, 6}, 10);
  std::vector<Tensord> inputs{x};
  for (auto& p : ps.params()) inputs.push_back(p.value);
  auto res = gradcheck<double>("mamba cross2d", inputs, [&] { return sum(mul(b(x), w)); });
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
  EXPECT_GT(res.checked, 100);
}

TEST(MambaBlock, GradCheckSeq1dBatched) {
  MambaBlock<double> b(cfg_of(3, 2, 2, ScanMode::seq1d()));
  b.init(Initializer(11), "blk");
  randomize_out(b, 12);
  ParamSet<double> ps;
  b.collect(ps, "blk", ParamGroup::decoder);
  auto x = rand_t<double>({2, 5, 3}, 13);
  auto w = rand_t<double>({2, 5, 3}, 14);
  std::vector<Tensord> inputs{x};
  for (auto& p : ps.params()) inputs.push_back(p.value);
  auto res = gradcheck<double>("mamba seq1d", inputs, [&] { return sum(mul(b(x), w)); });
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
}

TEST(MambaBlock, ParamCountEnumeration) {
  const auto cfg = cfg_of(4, 1, 2, ScanMode::seq1d());
  // pre_norm 2*4, w_in 4*8, conv 4*4 + 4, S6 (a_log 8, w_delta 16, dt_bias 4,
  // w_b 8, w_c 8, d_skip 4), w_out 4*4.
  const Index hand = 8 + 32 + 16 + 4 + (8 + 16 + 4 + 8 + 8 + 4) + 16;
  EXPECT_EQ(block_param_count(cfg), hand);
  EXPECT_EQ(block_param_count(cfg), block_param_count(cfg));
  MambaBlock<float> b(cfg);
  ParamSet<float> ps;
  b.collect(ps, "m", ParamGroup::decoder);
  EXPECT_EQ(ps.scalar_count(), hand);

  auto wide = cfg;
  wide.expand = 2;
  EXPECT_GT(block_param_count(wide), block_param_count(cfg));
  for (auto c : {cfg_of(6, 2, 3, ScanMode::cross2d(4)), wide}) {
    MambaBlock<float> m(c);
    ParamSet<float> q;
    m.collect(q, "m", ParamGroup::decoder);
    EXPECT_EQ(q.scalar_count(), block_param_count(c));
  }
}

TEST(MambaBlock, IdentityScanMergeEqualsRowForwardPath) {
  auto cfg = cfg_of(4, 1, 2, ScanMode::cross2d(4));
  cfg.identity_scan = true;
  MambaBlock<double> b(cfg);
  b.init(Initializer(21), "blk");
  randomize_out(b, 22);
  ParamSet<double> ps;
  b.collect(ps, "blk", ParamGroup::decoder);
  auto x = rand_t<double>({16, 4}, 23);
  auto y = b(x);

  // Independent reconstruction of the gated-conv path on the row-major order.
  const auto get = [&](const std::string& n) { return ps.find("blk." + n)->value; };
  auto u = layer_norm(x, get("pre_norm.gamma"), get("pre_norm.beta"));
  auto z = matmul(u, get("w_in.weight"));
  auto a = Tensord::empty({16, 4}), g = Tensord::empty({16, 4});
  for (Index t = 0; t < 16; ++t)
    for (Index j = 0; j < 4; ++j) {
      a[t * 4 + j] = z[t * 8 + j];
      g[t * 4 + j] = z[t * 8 + 4 + j];
    }
  auto map = Tensord::empty({4, 4, 4});
  for (Index t = 0; t < 16; ++t)
    for (Index j = 0; j < 4; ++j) map[j * 16 + t] = a[t * 4 + j];
  auto conv = silu(conv2d(map, get("conv.weight"), get("conv.bias"), Conv2dOptions{1, 1, 4}));
  auto gate = silu(g);
  auto wout = get("w_out.weight");
  for (Index t = 0; t < 16; ++t)
    for (Index o = 0; o < 4; ++o) {
      double acc = x[t * 4 + o];
      for (Index j = 0; j < 4; ++j) acc += conv[j * 16 + t] * gate[t * 4 + j] * wout[j * 4 + o];
      EXPECT_NEAR(y[t * 4 + o], acc, 1e-12);
    }
}

TEST(MambaBlock, SharedRoutesAreRotationConsistent) {
  auto cfg = cfg_of(3, 1, 2, ScanMode::cross2d(4));
  cfg.shared_routes = true;
  MambaBlock<double> b(cfg);
  b.init(Initializer(31), "blk");
  randomize_out(b, 32);
  // A 180-degree symmetric depthwise kernel keeps the local conv equivariant.
  auto& w = b.conv_weight();
  for (Index c = 0; c < 3; ++c)
    for (Index k = 0; k < 9; ++k) w[c * 9 + k] = w[c * 9 + (8 - k < k ? 8 - k : k)];
  auto x = rand_t<double>({16, 3}, 33);
  auto rot = Tensord::empty({16, 3});
  for (Index t = 0; t < 16; ++t)
    for (Index c = 0; c < 3; ++c) rot[(15 - t) * 3 + c] = x[t * 3 + c];
  auto y = b(x);
  auto yr = b(rot);
  for (Index t = 0; t < 16; ++t)
    for (Index c = 0; c < 3; ++c) EXPECT_NEAR(yr[(15 - t) * 3 + c], y[t * 3 + c], 1e-12);
}

TEST(MambaBlock, BatchedEqualsPerItem) {
  MambaBlock<double> b(cfg_of(4, 1, 2, ScanMode::cross2d(3)));
  b.init(Initializer(41), "blk");
  randomize_out(b, 42);
  auto x = rand_t<double>({2, 9, 4}, 43);
  auto y = b(x);
  for (Index n = 0; n < 2; ++n) {
    auto item = Tensord::empty({9, 4});
    for (Index i = 0; i < 36; ++i) item[i] = x[n * 36 + i];
    auto yi = b(item);
    for (Index i = 0; i < 36; ++i) EXPECT_NEAR(y[n * 36 + i], yi[i], 1e-13);
  }
}
