#pragma once

#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "eeggsl/encoder.hpp"
#include "eeggsl/graph.hpp"

namespace eeggsl {

enum class Ablation { EncoderOnly, StaticPcc, MhgslScratch, ClFreeze, ClFinetune };

std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);
/// Display label used in report rows.
std::string ablation_label(Ablation a);
bool has_mhgsl(Ablation a);
bool uses_graph(Ablation a);
bool uses_pretraining(Ablation a);

struct ModelConfig {
  EncoderConfig encoder;
  GSLConfig gsl;
  Ablation ablation = Ablation::MhgslScratch;
  /// Start every head with W_k = W_q.
  bool tied_init = false;
};

/// Absolute Pearson correlation between channels of every window:
/// (B, C, L) -> (B, C, C), unit diagonal, zero for constant channels.
Tensor pcc_adjacency(const Tensor& windows);

/// Copies values from `src` into same-named tensors of `dst`. Throws on a
/// shape mismatch; names absent from `src` are left untouched when
/// `allow_missing`, otherwise rejected.
void copy_named(const NamedTensors& dst, const NamedTensors& src, bool allow_missing = false);

/// Encoder + graph learner + Chebyshev branch per head + fusion head. The
/// forward pass is split so explanation code can differentiate with respect
/// to the adjacency matrices directly.
class Model {
 public:
  struct Output {
    Tensor embeddings;               // (B, C, d_m)
    std::vector<HeadGraphs> heads;   // learned graphs, empty without MH-GSL
    std::vector<Tensor> adjacency;   // one (B, C, C) per branch
    Tensor logits;                   // (B, 2)
  };

  Model() = default;
  Model(const ModelConfig& cfg, std::mt19937_64& rng);

  Output forward(const Tensor& windows, bool training, std::mt19937_64& rng);
  Tensor embed(const Tensor& windows, bool training);
  /// Logits given embeddings and one adjacency per branch.
  Tensor classify(const Tensor& embeddings, const std::vector<Tensor>& adjacency, bool training,
                  std::mt19937_64& rng);

  const ModelConfig& config() const { return cfg_; }
  Encoder& encoder() { return encoder_; }
  /// Every parameter, encoder included.
  NamedTensors parameters() const;
  /// Parameters updated by the optimizer (encoder excluded when frozen).
  NamedTensors trainable() const;
  NamedTensors buffers() const;
  /// Parameters and buffers; what a checkpoint stores.
  NamedTensors state() const;

 private:
  NamedTensors head_parameters() const;

  ModelConfig cfg_;
  Encoder encoder_;
  std::vector<Tensor> wq_, wk_;
  std::vector<std::vector<Tensor>> thetas_;
  Tensor fuse_w_, fuse_b_, out_w_, out_b_;
};

}  // namespace eeggsl
