#pragma once

#include <random>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "eeggsl/tensor.hpp"

namespace eeggsl {

struct GSLConfig {
  std::size_t heads = 2;
  std::size_t d_k = 0;  // 0: d_m / heads
  std::size_t cheb_k = 5;
  double dropout = 0.2;

  std::size_t key_dim(std::size_t d_m) const;
  void validate(std::size_t d_m) const;
};
void to_json(nlohmann::json& j, const GSLConfig& c);
void from_json(const nlohmann::json& j, GSLConfig& c);

struct HeadGraphs {
  Tensor q;    // (B, C, d_k)
  Tensor k;    // (B, C, d_k)
  Tensor adj;  // (B, C, C), rows sum to 1
};

/// One attention head: A = softmax(X Wq (X Wk)^T / sqrt(d_k)) row-wise.
/// x (B, C, d_m), wq/wk (d_m, d_k).
HeadGraphs attention_graph(const Tensor& x, const Tensor& wq, const Tensor& wk);
std::vector<HeadGraphs> mhgsl(const Tensor& x, const std::vector<Tensor>& wq, const std::vector<Tensor>& wk);

/// Normalized Laplacian of the symmetrized adjacency, shifted by -I with
/// lambda_max = 2: -D^{-1/2} ((A + A^T) / 2) D^{-1/2}. A (B, C, C) or (C, C).
/// Rejects any zero row sum.
Tensor scaled_laplacian(const Tensor& adj);

/// sum_k T_k(L) X Theta_k, T_0 = I, T_1 = L, T_k = 2 L T_{k-1} - T_{k-2}.
/// x (B, C, d), lap (B, C, C), thetas: cheb_k tensors (d, d).
Tensor cheb_conv(const Tensor& x, const Tensor& lap, const std::vector<Tensor>& thetas);

/// Concatenate head outputs on the feature axis, project to d_m, add the
/// residual embedding, mean over electrodes, then linear to logits.
/// Returns (B, classes) logits; `pooled` receives the (B, d_m) vector.
Tensor fuse_and_classify(const Tensor& embeddings, const std::vector<Tensor>& head_outputs, const Tensor& fuse_w,
                         const Tensor& fuse_b, const Tensor& out_w, const Tensor& out_b, Tensor* pooled = nullptr);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialized (rows, cols) matrix.
Tensor init_linear(std::size_t rows, std::size_t cols, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace eeggsl
