#include <doctest.h>

#include <cmath>

#include "eeggsl/encoder.hpp"
#include "helpers.hpp"

using namespace eeggsl;
using testutil::randn;

namespace {

EncoderConfig toy_config() {
  EncoderConfig c;
  c.d_m = 8;
  c.n_blocks = 2;
  c.hidden = 4;
  c.conv_kernel = 3;
  c.slconv_scales = 4;
  c.slconv_base_len = 16;
  c.pool_stride = 4;
  return c;
}

}  // namespace

TEST_CASE("long kernel construction") {
  EncoderConfig c;
  c.slconv_base_len = 4;
  SUBCASE("hand-built upsample and decay") {
    c.slconv_scales = 2;
    c.decay = 0.5;
    const std::vector<float> ones(8, 1.0f);
    const auto raw = build_slconv_kernel(c, ones, 12, false);
    const std::vector<float> expected{1, 1, 1, 1, .5, .5, .5, .5, .5, .5, .5, .5};
    CHECK(raw == expected);
    const auto unit = build_slconv_kernel(c, ones, 12, true);
    const double norm = std::sqrt(4.0 + 8 * 0.25);
    for (std::size_t i = 0; i < 12; ++i) CHECK(unit[i] == doctest::Approx(expected[i] / norm));
  }
  SUBCASE("single scale is the normalized sub-kernel") {
    c.slconv_scales = 1;
    const std::vector<float> w{3, 0, 4, 0};
    const auto k = build_slconv_kernel(c, w, 4);
    CHECK(k == std::vector<float>{0.6f, 0.0f, 0.8f, 0.0f});
  }
  SUBCASE("zero decay annihilates the tail") {
    c.slconv_scales = 3;
    c.decay = 0.0;
    std::mt19937_64 rng(1);
    std::vector<float> w(12);
    for (auto& v : w) v = static_cast<float>(standard_normal(rng));
    const auto k = build_slconv_kernel(c, w, 28);
    CHECK(k.size() == 28);
    for (std::size_t i = 4; i < 28; ++i) CHECK(k[i] == 0.0f);
  }
  SUBCASE("truncation and errors") {
    c.slconv_scales = 3;
    CHECK(build_slconv_kernel(c, std::vector<float>(12, 1.0f), 10).size() == 10);
    CHECK_THROWS_AS(build_slconv_kernel(c, std::vector<float>(5, 1.0f), 10), Error);
    c.slconv_base_len = 0;
    CHECK_THROWS_AS(build_slconv_kernel(c, {}, 10), Error);
  }
}

TEST_CASE("differentiable kernel matches the reference builder and its gradient") {
  auto c = toy_config();
  std::mt19937_64 rng(2);
  Tensor w = randn({2, c.slconv_scales, c.slconv_base_len}, rng);
  Tensor skip = randn({2}, rng);
  Tensor k = slconv_kernel(c, w, skip, 100);
  for (std::size_t h = 0; h < 2; ++h) {
    auto ref = build_slconv_kernel(c, std::span<const float>(w.data().data() + h * 64, 64), 100);
    ref[0] += skip.data()[h];
    for (std::size_t p = 0; p < 100; ++p) CHECK(k.data()[h * 100 + p] == doctest::Approx(ref[p]).epsilon(1e-6));
  }
  const auto r = grad_check([&](const Tensor& x) { return testutil::probe(slconv_kernel(c, x, skip, 100)); }, w);
  CHECK(r.max_rel_error < 1e-3);
  const auto rs = grad_check([&](const Tensor& x) { return testutil::probe(slconv_kernel(c, w, x, 100)); }, skip);
  CHECK(rs.max_rel_error < 1e-3);
}

TEST_CASE("config validation") {
  auto c = toy_config();
  CHECK_NOTHROW(c.validate(128));
  CHECK(c.kernel_coverage() == 16 * 15);
  CHECK_THROWS_AS(c.validate(512), Error);  // coverage 240 < 512
  c.d_m = 0;
  CHECK_THROWS_AS(c.validate(128), Error);
  EncoderConfig d;
  CHECK(d.kernel_coverage() >= 1024);
}

TEST_CASE("encoder output shape and electrode equivariance") {
  auto c = toy_config();
  std::mt19937_64 rng(3);
  Encoder enc(c, rng);
  Tensor x = randn({2, 4, 128}, rng);
  Tensor y = enc.forward(x, false);
  REQUIRE(y.shape() == Shape{2, 4, 8});

  const std::size_t perm[4] = {2, 0, 3, 1};
  Tensor xp({2, 4, 128});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t e = 0; e < 4; ++e)
      for (std::size_t t = 0; t < 128; ++t) xp.data()[(b * 4 + e) * 128 + t] = x.data()[(b * 4 + perm[e]) * 128 + t];
  Tensor yp = enc.forward(xp, false);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t e = 0; e < 4; ++e)
      for (std::size_t d = 0; d < 8; ++d) CHECK(yp.data()[(b * 4 + e) * 8 + d] == y.data()[(b * 4 + perm[e]) * 8 + d]);

  // Shape does not depend on L.
  CHECK(enc.forward(randn({1, 4, 200}, rng), false).shape() == Shape{1, 4, 8});
}

TEST_CASE("zero window yields the same embedding on every electrode") {
  auto c = toy_config();
  std::mt19937_64 rng(4);
  Encoder enc(c, rng);
  Tensor y = enc.forward(Tensor({1, 4, 128}, 0.0f), false);
  for (std::size_t e = 1; e < 4; ++e)
    for (std::size_t d = 0; d < 8; ++d) CHECK(y.data()[e * 8 + d] == y.data()[d]);
}

TEST_CASE("hidden activations are causal") {
  auto c = toy_config();
  std::mt19937_64 rng(5);
  Encoder enc(c, rng);
  Tensor x = randn({1, 2, 128}, rng);
  Tensor cut = x.clone();
  const std::size_t t0 = 70;
  for (std::size_t e = 0; e < 2; ++e)
    for (std::size_t t = t0 + 1; t < 128; ++t) cut.data()[e * 128 + t] = 0.0f;
  for (std::size_t blk = 0; blk < 2; ++blk) {
    Tensor a = enc.block_activations(x, blk, false);
    Tensor b = enc.block_activations(cut, blk, false);
    for (std::size_t n = 0; n < a.dim(0) * a.dim(1); ++n)
      for (std::size_t t = 0; t <= t0; ++t) CHECK(a.data()[n * 128 + t] == b.data()[n * 128 + t]);
  }
}

TEST_CASE("encoder gradients match finite differences") {
  auto c = toy_config();
  std::mt19937_64 rng(6);
  Encoder enc(c, rng);
  Tensor x = randn({2, 4, 128}, rng);
  for (const auto& [name, p] : enc.parameters()) {
    if (name != "encoder.block1.slconv.weights" && name != "encoder.block0.conv.weight") continue;
    const auto r = grad_check([&] { return testutil::probe(enc.forward(x, false)); }, p);
    INFO(name << " worst " << r.worst_index << " analytic " << r.analytic << " numeric " << r.numeric);
    // A first-layer weight moves every pooled activation, so max-pool
    // argmax flips inside the stencil bound it by the end-to-end tolerance.
    CHECK(r.max_rel_error < (name == "encoder.block0.conv.weight" ? 1e-2 : 1e-3));
  }
}

TEST_CASE("non-finite input aborts with the layer name") {
  auto c = toy_config();
  std::mt19937_64 rng(7);
  Encoder enc(c, rng);
  Tensor x = randn({1, 2, 128}, rng);
  x.data()[5] = std::numeric_limits<float>::infinity();
  try {
    enc.forward(x, false);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NumericFailure);
    CHECK(std::string(e.what()).find("encoder.block0") != std::string::npos);
  }
}

TEST_CASE("frozen parameters stop requiring gradients") {
  std::mt19937_64 rng(8);
  Encoder enc(toy_config(), rng);
  enc.set_trainable(false);
  for (const auto& [name, p] : enc.parameters()) CHECK_FALSE(p.requires_grad());
  CHECK(enc.buffers().size() == 4);
}
