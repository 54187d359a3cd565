#pragma once

#include <random>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "eeggsl/signal.hpp"
#include "eeggsl/tensor.hpp"

namespace eeggsl {

struct EncoderConfig {
  std::size_t d_m = 64;
  std::size_t n_blocks = 2;
  std::size_t hidden = 32;
  std::size_t conv_kernel = 5;
  std::size_t slconv_scales = 6;
  std::size_t slconv_base_len = 32;
  double decay = 0.5;
  std::size_t pool_stride = 4;
  std::size_t final_kernel = 3;

  /// base_len * (2^scales - 1): the span of the concatenated sub-kernels.
  std::size_t kernel_coverage() const;
  /// Throws unless the config is usable for windows of `length` samples.
  void validate(std::size_t length) const;
};
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Multi-scale long kernel: scale s repeats each of the `slconv_base_len`
/// weights 2^s times and multiplies by decay^s; scales are concatenated,
/// truncated to `length` and (optionally) L2-normalized.
/// `subkernels` holds scales x base_len weights for one hidden channel.
std::vector<float> build_slconv_kernel(const EncoderConfig& cfg, std::span<const float> subkernels,
                                       std::size_t length, bool normalize = true);

/// Differentiable form of build_slconv_kernel over all hidden channels:
/// weights (hidden, scales, base_len), skip (hidden) -> (hidden, length).
/// The skip term is added to tap 0 after normalization.
Tensor slconv_kernel(const EncoderConfig& cfg, const Tensor& weights, const Tensor& skip, std::size_t length);

/// LongConv temporal encoder applied to each electrode independently with
/// shared weights. Input (B, C, L) -> per-electrode embeddings (B, C, d_m).
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  Tensor forward(const Tensor& windows, bool training);
  /// Hidden activations (B*C, hidden, L) after block `block`'s SLConv.
  Tensor block_activations(const Tensor& windows, std::size_t block, bool training);

  const EncoderConfig& config() const { return cfg_; }
  /// Trainable tensors keyed by layer path ("encoder.block0.conv.weight", ...).
  NamedTensors parameters() const;
  /// Batch-norm running statistics.
  NamedTensors buffers() const;
  void set_trainable(bool on);

 private:
  struct Block {
    Tensor conv_w, conv_b, bn_gamma, bn_beta, bn_mean, bn_var, sl_weights, sl_skip;
  };
  Tensor run(const Tensor& windows, bool training, std::size_t stop_after_block);

  EncoderConfig cfg_;
  std::vector<Block> blocks_;
  Tensor final_w_, final_b_;
};

/// Stacks windows into a (B, C, L) tensor.
Tensor stack_windows(const std::vector<const Window*>& windows);

}  // namespace eeggsl
