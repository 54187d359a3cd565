#include "eeggsl/augment.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace eeggsl {

using nlohmann::json;

AugmentPolicy AugmentPolicy::zero_width() {
  AugmentPolicy p;
  p.noise_sigma_max = 0.0;
  p.mask_fraction_max = 0.0;
  p.dc_shift_max = 0.0;
  p.flip_probability = 0.0;
  return p;
}

void AugmentPolicy::validate() const {
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!finite_nonneg(noise_sigma_max) || !finite_nonneg(dc_shift_max) || !finite_nonneg(mask_fraction_max)) {
    fail(ErrorCode::InvalidArgument, "augment policy: ranges must be finite and non-negative");
  }
  if (mask_fraction_max >= 1.0) fail(ErrorCode::InvalidArgument, "augment policy: mask fraction must be < 1");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "augment policy: flip probability must be in [0, 1]");
  }
}

void to_json(json& j, const AugmentPolicy& p) {
  j = json{{"noise_sigma_max", p.noise_sigma_max},
           {"mask_fraction_max", p.mask_fraction_max},
           {"dc_shift_max", p.dc_shift_max},
           {"flip_probability", p.flip_probability},
           {"enable_noise", p.enable_noise},
           {"enable_mask", p.enable_mask},
           {"enable_time_flip", p.enable_time_flip},
           {"enable_channel_flip", p.enable_channel_flip},
           {"enable_dc_shift", p.enable_dc_shift},
           {"compose_count", p.compose_count}};
}

void from_json(const json& j, AugmentPolicy& p) {
  AugmentPolicy d;
  p.noise_sigma_max = j.value("noise_sigma_max", d.noise_sigma_max);
  p.mask_fraction_max = j.value("mask_fraction_max", d.mask_fraction_max);
  p.dc_shift_max = j.value("dc_shift_max", d.dc_shift_max);
  p.flip_probability = j.value("flip_probability", d.flip_probability);
  p.enable_noise = j.value("enable_noise", d.enable_noise);
  p.enable_mask = j.value("enable_mask", d.enable_mask);
  p.enable_time_flip = j.value("enable_time_flip", d.enable_time_flip);
  p.enable_channel_flip = j.value("enable_channel_flip", d.enable_channel_flip);
  p.enable_dc_shift = j.value("enable_dc_shift", d.enable_dc_shift);
  p.compose_count = j.value("compose_count", d.compose_count);
  p.validate();
}

namespace {

double window_std(const Window& w) {
  double s = 0.0;
  for (float v : w.samples) s += v;
  const double m = s / static_cast<double>(w.samples.size());
  double ss = 0.0;
  for (float v : w.samples) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(w.samples.size()));
}

}  // namespace

void add_gaussian_noise(Window& w, double sigma, std::mt19937_64& rng) {
  for (auto& v : w.samples) v = static_cast<float>(v + sigma * standard_normal(rng));
}

void mask_segment(Window& w, std::size_t start, std::size_t count) {
  if (start + count > w.length) fail(ErrorCode::InvalidArgument, "mask_segment: segment exceeds window");
  for (std::size_t c = 0; c < w.channels; ++c)
    std::fill_n(w.samples.begin() + static_cast<std::ptrdiff_t>(c * w.length + start), count, 0.0f);
}

void flip_time(Window& w) {
  for (std::size_t c = 0; c < w.channels; ++c) {
    auto first = w.samples.begin() + static_cast<std::ptrdiff_t>(c * w.length);
    std::reverse(first, first + static_cast<std::ptrdiff_t>(w.length));
  }
}

void flip_channels(Window& w) {
  for (std::size_t c = 0; c < w.channels / 2; ++c) {
    auto a = w.samples.begin() + static_cast<std::ptrdiff_t>(c * w.length);
    auto b = w.samples.begin() + static_cast<std::ptrdiff_t>((w.channels - 1 - c) * w.length);
    std::swap_ranges(a, a + static_cast<std::ptrdiff_t>(w.length), b);
  }
}

void dc_shift(Window& w, const std::vector<double>& shifts) {
  if (shifts.size() != w.channels) fail(ErrorCode::InvalidArgument, "dc_shift: one shift per channel required");
  for (std::size_t c = 0; c < w.channels; ++c)
    for (std::size_t t = 0; t < w.length; ++t) w.at(c, t) = static_cast<float>(w.at(c, t) + shifts[c]);
}

Window sample_view(const Window& w, const AugmentPolicy& policy, std::mt19937_64& rng) {
  std::vector<Augmentation> enabled;
  if (policy.enable_noise) enabled.push_back(Augmentation::Noise);
  if (policy.enable_mask) enabled.push_back(Augmentation::Mask);
  if (policy.enable_time_flip) enabled.push_back(Augmentation::TimeFlip);
  if (policy.enable_channel_flip) enabled.push_back(Augmentation::ChannelFlip);
  if (policy.enable_dc_shift) enabled.push_back(Augmentation::DcShift);
  Window out = w;
  if (enabled.empty()) {
    warn("augment: every augmentation is disabled; returning the identity view");
    return out;
  }
  const double scale = window_std(w);
  const std::size_t picks = std::min(policy.compose_count, enabled.size());
  // Partial Fisher-Yates.
  for (std::size_t k = 0; k < picks; ++k) {
    const std::size_t r = k + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(enabled.size() - k));
    std::swap(enabled[k], enabled[std::min(r, enabled.size() - 1)]);
    switch (enabled[k]) {
      case Augmentation::Noise: {
        const double sigma = uniform01(rng) * policy.noise_sigma_max * scale;
        if (sigma > 0.0) add_gaussian_noise(out, sigma, rng);
        break;
      }
      case Augmentation::Mask: {
        const double fraction = uniform01(rng) * policy.mask_fraction_max;
        const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(w.length)));
        const std::size_t start =
            static_cast<std::size_t>(uniform01(rng) * static_cast<double>(w.length - count + 1));
        if (count > 0) mask_segment(out, std::min(start, w.length - count), count);
        break;
      }
      case Augmentation::TimeFlip:
        if (uniform01(rng) < policy.flip_probability) flip_time(out);
        break;
      case Augmentation::ChannelFlip:
        if (uniform01(rng) < policy.flip_probability) flip_channels(out);
        break;
      case Augmentation::DcShift: {
        std::vector<double> shifts(w.channels);
        for (auto& s : shifts) s = (2.0 * uniform01(rng) - 1.0) * policy.dc_shift_max * scale;
        if (policy.dc_shift_max > 0.0) dc_shift(out, shifts);
        break;
      }
    }
  }
  return out;
}

std::pair<Window, Window> sample_pair(const Window& w, const AugmentPolicy& policy, std::mt19937_64& rng) {
  Window a = sample_view(w, policy, rng);
  Window b = sample_view(w, policy, rng);
  return {std::move(a), std::move(b)};
}

std::mt19937_64 augment_rng(std::uint64_t run_seed, const Window& w, std::uint64_t epoch) {
  return std::mt19937_64(derive_seed(run_seed, stable_hash(w.subject_id), w.window_index, epoch));
}

}  // namespace eeggsl
