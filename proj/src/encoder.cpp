#include "eeggsl/encoder.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace eeggsl {

using nlohmann::json;

std::size_t EncoderConfig::kernel_coverage() const {
  if (slconv_scales >= 40) return std::numeric_limits<std::size_t>::max();
  return slconv_base_len * ((std::size_t{1} << slconv_scales) - 1);
}

void EncoderConfig::validate(std::size_t length) const {
  if (d_m == 0 || hidden == 0 || n_blocks == 0 || conv_kernel == 0 || final_kernel == 0 || pool_stride == 0) {
    fail(ErrorCode::InvalidArgument, "encoder config: sizes must be >= 1");
  }
  if (slconv_base_len == 0) fail(ErrorCode::InvalidArgument, "encoder config: slconv base length must be >= 1");
  if (slconv_scales == 0) fail(ErrorCode::InvalidArgument, "encoder config: need at least one kernel scale");
  if (!(decay >= 0.0) || !std::isfinite(decay)) fail(ErrorCode::InvalidArgument, "encoder config: decay must be >= 0");
  if (length < pool_stride) {
    fail(ErrorCode::InvalidArgument, "encoder: window of " + std::to_string(length) +
                                         " samples is shorter than the pool stride " + std::to_string(pool_stride));
  }
  if (kernel_coverage() < length) {
    fail(ErrorCode::InvalidArgument, "encoder config: long-kernel coverage " + std::to_string(kernel_coverage()) +
                                         " does not span the window length " + std::to_string(length));
  }
}

void to_json(json& j, const EncoderConfig& c) {
  j = json{{"d_m", c.d_m},
           {"n_blocks", c.n_blocks},
           {"hidden", c.hidden},
           {"conv_kernel", c.conv_kernel},
           {"slconv_scales", c.slconv_scales},
           {"slconv_base_len", c.slconv_base_len},
           {"decay", c.decay},
           {"pool_stride", c.pool_stride},
           {"final_kernel", c.final_kernel}};
}

void from_json(const json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.d_m = j.value("d_m", d.d_m);
  c.n_blocks = j.value("n_blocks", d.n_blocks);
  c.hidden = j.value("hidden", d.hidden);
  c.conv_kernel = j.value("conv_kernel", d.conv_kernel);
  c.slconv_scales = j.value("slconv_scales", d.slconv_scales);
  c.slconv_base_len = j.value("slconv_base_len", d.slconv_base_len);
  c.decay = j.value("decay", d.decay);
  c.pool_stride = j.value("pool_stride", d.pool_stride);
  c.final_kernel = j.value("final_kernel", d.final_kernel);
}

namespace {

// Position p of the concatenated kernel maps to (scale, weight index, gain).
struct Tap {
  std::size_t scale;
  std::size_t index;
  double gain;
};

std::vector<Tap> kernel_taps(const EncoderConfig& cfg, std::size_t length) {
  if (cfg.slconv_base_len == 0) fail(ErrorCode::InvalidArgument, "slconv kernel: base length must be >= 1");
  std::vector<Tap> taps;
  taps.reserve(length);
  double gain = 1.0;
  for (std::size_t s = 0; s < cfg.slconv_scales && taps.size() < length; ++s) {
    const std::size_t span = cfg.slconv_base_len << s;
    for (std::size_t i = 0; i < span && taps.size() < length; ++i) taps.push_back({s, i >> s, gain});
    gain *= cfg.decay;
  }
  return taps;
}

}  // namespace

std::vector<float> build_slconv_kernel(const EncoderConfig& cfg, std::span<const float> subkernels,
                                       std::size_t length, bool normalize) {
  if (subkernels.size() != cfg.slconv_scales * cfg.slconv_base_len) {
    fail(ErrorCode::ShapeMismatch, "build_slconv_kernel: expected " +
                                       std::to_string(cfg.slconv_scales * cfg.slconv_base_len) + " weights, got " +
                                       std::to_string(subkernels.size()));
  }
  const auto taps = kernel_taps(cfg, length);
  std::vector<double> raw(taps.size());
  double ss = 0.0;
  for (std::size_t p = 0; p < taps.size(); ++p) {
    raw[p] = taps[p].gain * subkernels[taps[p].scale * cfg.slconv_base_len + taps[p].index];
    ss += raw[p] * raw[p];
  }
  const double inv = normalize && ss > 0.0 ? 1.0 / std::sqrt(ss) : 1.0;
  std::vector<float> out(taps.size());
  for (std::size_t p = 0; p < taps.size(); ++p) out[p] = static_cast<float>(raw[p] * inv);
  return out;
}

Tensor slconv_kernel(const EncoderConfig& cfg, const Tensor& weights, const Tensor& skip, std::size_t length) {
  const std::size_t H = weights.dim(0);
  if (weights.rank() != 3 || weights.dim(1) != cfg.slconv_scales || weights.dim(2) != cfg.slconv_base_len ||
      skip.rank() != 1 || skip.dim(0) != H) {
    fail(ErrorCode::ShapeMismatch, "slconv_kernel: weights " + shape_str(weights.shape()) + " / skip " +
                                       shape_str(skip.shape()) + " do not match the config");
  }
  const auto taps = kernel_taps(cfg, length);
  const std::size_t K = taps.size();
  const std::size_t per = cfg.slconv_scales * cfg.slconv_base_len;
  std::vector<double> norms(H);
  Tensor out({H, K});
  auto w = weights.data();
  auto o = out.data();
  for (std::size_t c = 0; c < H; ++c) {
    double ss = 0.0;
    for (std::size_t p = 0; p < K; ++p) {
      const double r = taps[p].gain * w[c * per + taps[p].scale * cfg.slconv_base_len + taps[p].index];
      o[c * K + p] = static_cast<float>(r);
      ss += r * r;
    }
    norms[c] = std::sqrt(ss);
    const double inv = norms[c] > 0.0 ? 1.0 / norms[c] : 0.0;
    for (std::size_t p = 0; p < K; ++p) o[c * K + p] = static_cast<float>(o[c * K + p] * inv);
    o[c * K] += skip.data()[c];
  }
  // Normalized kernel without the skip, needed by the adjoint.
  std::vector<float> unit(o.begin(), o.end());
  for (std::size_t c = 0; c < H; ++c) unit[c * K] -= skip.data()[c];
  return ops::record_custom(out, {weights, skip},
                            [weights, skip, taps, norms, unit = std::move(unit), H, K, per,
                             base = cfg.slconv_base_len](std::span<const float> g) mutable {
                              if (skip.requires_grad()) {
                                auto gs = skip.grad();
                                for (std::size_t c = 0; c < H; ++c) gs[c] += g[c * K];
                              }
                              if (!weights.requires_grad()) return;
                              auto gw = weights.grad();
                              for (std::size_t c = 0; c < H; ++c) {
                                if (norms[c] == 0.0) continue;
                                double dot = 0.0;
                                for (std::size_t p = 0; p < K; ++p) dot += static_cast<double>(g[c * K + p]) * unit[c * K + p];
                                for (std::size_t p = 0; p < K; ++p) {
                                  const double graw = (g[c * K + p] - unit[c * K + p] * dot) / norms[c];
                                  gw[c * per + taps[p].scale * base + taps[p].index] +=
                                      static_cast<float>(graw * taps[p].gain);
                                }
                              }
                            });
}

namespace {

void require_finite(const Tensor& t, const std::string& layer) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) fail(ErrorCode::NumericFailure, "encoder: non-finite activation in " + layer);
  }
}

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  return t;
}

}  // namespace

Encoder::Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  std::size_t in = 1;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    Block blk;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * cfg.conv_kernel));
    blk.conv_w = uniform_tensor({cfg.hidden, in, cfg.conv_kernel}, bound, rng);
    blk.conv_b = uniform_tensor({cfg.hidden}, bound, rng);
    blk.bn_gamma = Tensor({cfg.hidden}, 1.0f);
    blk.bn_beta = Tensor({cfg.hidden}, 0.0f);
    blk.bn_mean = Tensor({cfg.hidden}, 0.0f);
    blk.bn_var = Tensor({cfg.hidden}, 1.0f);
    blk.sl_weights = Tensor({cfg.hidden, cfg.slconv_scales, cfg.slconv_base_len});
    for (auto& v : blk.sl_weights.data()) v = static_cast<float>(standard_normal(rng));
    blk.sl_skip = Tensor({cfg.hidden}, 1.0f);
    blocks_.push_back(std::move(blk));
    in = cfg.hidden;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden * cfg.final_kernel));
  final_w_ = uniform_tensor({cfg.d_m, cfg.hidden, cfg.final_kernel}, bound, rng);
  final_b_ = uniform_tensor({cfg.d_m}, bound, rng);
  set_trainable(true);
}

NamedTensors Encoder::parameters() const {
  NamedTensors out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "encoder.block" + std::to_string(b) + ".";
    const auto& blk = blocks_[b];
    out.emplace_back(p + "conv.weight", blk.conv_w);
    out.emplace_back(p + "conv.bias", blk.conv_b);
    out.emplace_back(p + "bn.gamma", blk.bn_gamma);
    out.emplace_back(p + "bn.beta", blk.bn_beta);
    out.emplace_back(p + "slconv.weights", blk.sl_weights);
    out.emplace_back(p + "slconv.skip", blk.sl_skip);
  }
  out.emplace_back("encoder.final.weight", final_w_);
  out.emplace_back("encoder.final.bias", final_b_);
  return out;
}

NamedTensors Encoder::buffers() const {
  NamedTensors out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "encoder.block" + std::to_string(b) + ".";
    out.emplace_back(p + "bn.running_mean", blocks_[b].bn_mean);
    out.emplace_back(p + "bn.running_var", blocks_[b].bn_var);
  }
  return out;
}

void Encoder::set_trainable(bool on) {
  for (auto& [name, t] : parameters()) t.set_requires_grad(on);
}

Tensor Encoder::run(const Tensor& windows, bool training, std::size_t stop_after_block) {
  if (windows.rank() != 3) {
    fail(ErrorCode::ShapeMismatch, "encoder: expected windows (B, C, L), got " + shape_str(windows.shape()));
  }
  const std::size_t B = windows.dim(0), C = windows.dim(1), L = windows.dim(2);
  cfg_.validate(L);
  Tensor h = ops::reshape(windows, {B * C, 1, L});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    auto& blk = blocks_[b];
    h = ops::conv1d(h, blk.conv_w, blk.conv_b, 1, cfg_.conv_kernel - 1, 0);
    h = ops::batch_norm(h, blk.bn_gamma, blk.bn_beta, blk.bn_mean, blk.bn_var, training);
    h = ops::gelu(h);
    h = ops::causal_long_conv(h, slconv_kernel(cfg_, blk.sl_weights, blk.sl_skip, L));
    require_finite(h, "encoder.block" + std::to_string(b));
    if (b == stop_after_block) return h;
  }
  h = ops::max_pool1d(h, cfg_.pool_stride, cfg_.pool_stride);
  h = ops::conv1d(h, final_w_, final_b_, 1, cfg_.final_kernel - 1, 0);
  h = ops::mean(h, 2);
  require_finite(h, "encoder.final");
  return ops::reshape(h, {B, C, cfg_.d_m});
}

Tensor Encoder::forward(const Tensor& windows, bool training) {
  return run(windows, training, std::numeric_limits<std::size_t>::max());
}

Tensor Encoder::block_activations(const Tensor& windows, std::size_t block, bool training) {
  if (block >= blocks_.size()) fail(ErrorCode::InvalidArgument, "encoder: no block " + std::to_string(block));
  return run(windows, training, block);
}

Tensor stack_windows(const std::vector<const Window*>& windows) {
  if (windows.empty()) fail(ErrorCode::InvalidArgument, "stack_windows: empty batch");
  const std::size_t C = windows.front()->channels, L = windows.front()->length;
  std::vector<float> flat;
  flat.reserve(windows.size() * C * L);
  for (const Window* w : windows) {
    if (w->channels != C || w->length != L) {
      fail(ErrorCode::ShapeMismatch, "stack_windows: window of subject " + w->subject_id + " has a different shape");
    }
    flat.insert(flat.end(), w->samples.begin(), w->samples.end());
  }
  return Tensor({windows.size(), C, L}, std::move(flat));
}

}  // namespace eeggsl
