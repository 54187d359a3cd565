#pragma once

#include <cstdint>
#include <random>
#include <utility>

#include <nlohmann/json_fwd.hpp>

#include "eeggsl/signal.hpp"

namespace eeggsl {

/// Magnitudes are in units of the window's standard deviation.
struct AugmentPolicy {
  double noise_sigma_max = 0.2;
  double mask_fraction_max = 0.25;
  double dc_shift_max = 0.1;
  double flip_probability = 0.5;
  bool enable_noise = true;
  bool enable_mask = true;
  bool enable_time_flip = true;
  bool enable_channel_flip = true;
  bool enable_dc_shift = true;
  std::size_t compose_count = 2;

  /// Every range collapsed to zero: sample_view becomes the identity.
  static AugmentPolicy zero_width();
  void validate() const;
};
void to_json(nlohmann::json& j, const AugmentPolicy& p);
void from_json(const nlohmann::json& j, AugmentPolicy& p);

enum class Augmentation { Noise, Mask, TimeFlip, ChannelFlip, DcShift };

// Individual augmentations, exposed for tests.
void add_gaussian_noise(Window& w, double sigma, std::mt19937_64& rng);
/// Zeroes samples [start, start + count) on every channel.
void mask_segment(Window& w, std::size_t start, std::size_t count);
void flip_time(Window& w);
void flip_channels(Window& w);
/// Adds shifts[c] to channel c.
void dc_shift(Window& w, const std::vector<double>& shifts);

/// Applies `compose_count` augmentations drawn without replacement from the
/// enabled set, each with parameters drawn from its range.
Window sample_view(const Window& w, const AugmentPolicy& policy, std::mt19937_64& rng);
std::pair<Window, Window> sample_pair(const Window& w, const AugmentPolicy& policy, std::mt19937_64& rng);

/// Stream for one window's views, independent of scheduling order.
std::mt19937_64 augment_rng(std::uint64_t run_seed, const Window& w, std::uint64_t epoch);

}  // namespace eeggsl
