#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "eeggsl/augment.hpp"

using namespace eeggsl;

namespace {

Window make_window(std::size_t C, std::size_t L, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Window w;
  w.subject_id = "PD3";
  w.label = Label::PD;
  w.window_index = 7;
  w.channels = C;
  w.length = L;
  w.samples.resize(C * L);
  for (auto& v : w.samples) v = static_cast<float>(standard_normal(rng));
  return w;
}

void check_metadata(const Window& a, const Window& b) {
  CHECK(a.subject_id == b.subject_id);
  CHECK(a.label == b.label);
  CHECK(a.window_index == b.window_index);
  CHECK(a.channels == b.channels);
  CHECK(a.length == b.length);
  CHECK(a.samples.size() == b.samples.size());
}

}  // namespace

TEST_CASE("zero-width policy is the identity") {
  const auto w = make_window(4, 64, 1);
  std::mt19937_64 rng(2);
  auto p = AugmentPolicy::zero_width();
  for (int i = 0; i < 20; ++i) {
    const auto [a, b] = sample_pair(w, p, rng);
    CHECK(a.samples == w.samples);
    CHECK(b.samples == w.samples);
  }
}

TEST_CASE("all augmentations disabled warns and returns the input") {
  const auto w = make_window(4, 64, 1);
  std::mt19937_64 rng(3);
  AugmentPolicy p;
  p.enable_noise = p.enable_mask = p.enable_time_flip = p.enable_channel_flip = p.enable_dc_shift = false;
  WarningCapture capture;
  CHECK(sample_view(w, p, rng).samples == w.samples);
  CHECK(capture.contains("disabled"));
}

TEST_CASE("mask zeroes one contiguous segment on every channel") {
  auto w = make_window(3, 64, 4);
  mask_segment(w, 10, static_cast<std::size_t>(std::llround(0.25 * 64)));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 64; ++t) {
      const bool inside = t >= 10 && t < 26;
      CHECK((w.at(c, t) == 0.0f) == inside);
    }
  CHECK_THROWS_AS(mask_segment(w, 60, 8), Error);
}

TEST_CASE("flips are involutions and channel flip permutes channels") {
  const auto w = make_window(5, 32, 5);
  auto t = w;
  flip_time(t);
  CHECK(t.at(2, 0) == w.at(2, 31));
  flip_time(t);
  CHECK(t.samples == w.samples);

  auto c = w;
  flip_channels(c);
  std::vector<std::vector<float>> before, after;
  for (std::size_t ch = 0; ch < 5; ++ch) {
    before.emplace_back(w.samples.begin() + ch * 32, w.samples.begin() + (ch + 1) * 32);
    after.emplace_back(c.samples.begin() + ch * 32, c.samples.begin() + (ch + 1) * 32);
  }
  CHECK(after[0] == before[4]);
  std::sort(before.begin(), before.end());
  std::sort(after.begin(), after.end());
  CHECK(before == after);
}

TEST_CASE("dc shift moves each channel mean by the shift only") {
  const auto w = make_window(3, 40, 6);
  auto s = w;
  const std::vector<double> shifts{0.5, -0.25, 0.0};
  dc_shift(s, shifts);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 40; ++t) CHECK(s.at(c, t) - w.at(c, t) == doctest::Approx(shifts[c]).epsilon(1e-6));
  CHECK_THROWS_AS(dc_shift(s, {1.0}), Error);
}

TEST_CASE("sampled views preserve metadata and are reproducible") {
  const auto w = make_window(4, 64, 7);
  AugmentPolicy p;
  std::mt19937_64 r1(8), r2(8);
  for (int i = 0; i < 30; ++i) {
    const auto [a, b] = sample_pair(w, p, r1);
    const auto [c, d] = sample_pair(w, p, r2);
    check_metadata(a, w);
    check_metadata(b, w);
    CHECK(a.samples == c.samples);
    CHECK(b.samples == d.samples);
  }
}

TEST_CASE("noise-only views differ from each other") {
  const auto w = make_window(4, 64, 9);
  AugmentPolicy p;
  p.enable_mask = p.enable_time_flip = p.enable_channel_flip = p.enable_dc_shift = false;
  p.compose_count = 1;
  std::mt19937_64 rng(10);
  const auto [a, b] = sample_pair(w, p, rng);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) diff = std::max(diff, std::abs(double(a.samples[i]) - b.samples[i]));
  CHECK(diff > 0.0);
}

TEST_CASE("augmentation streams depend on window identity, not call order") {
  const auto w = make_window(2, 16, 11);
  auto other = w;
  other.window_index = 8;
  auto a = augment_rng(5, w, 3);
  auto b = augment_rng(5, w, 3);
  auto c = augment_rng(5, other, 3);
  const auto x = a();
  CHECK(x == b());
  CHECK(x != c());
}

TEST_CASE("policy validation") {
  AugmentPolicy p;
  p.mask_fraction_max = 1.0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = AugmentPolicy{};
  p.noise_sigma_max = -0.1;
  CHECK_THROWS_AS(p.validate(), Error);
  p = AugmentPolicy{};
  p.flip_probability = 1.5;
  CHECK_THROWS_AS(p.validate(), Error);
}
