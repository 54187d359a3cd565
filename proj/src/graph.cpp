#include "eeggsl/graph.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace eeggsl {

using nlohmann::json;

std::size_t GSLConfig::key_dim(std::size_t d_m) const {
  if (d_k > 0) return d_k;
  return heads == 0 ? 0 : std::max<std::size_t>(1, d_m / heads);
}

void GSLConfig::validate(std::size_t d_m) const {
  if (heads == 0) fail(ErrorCode::InvalidArgument, "gsl config: need at least one head");
  if (key_dim(d_m) == 0) fail(ErrorCode::InvalidArgument, "gsl config: key dimension must be >= 1");
  if (cheb_k == 0) fail(ErrorCode::InvalidArgument, "gsl config: Chebyshev order must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorCode::InvalidArgument, "gsl config: dropout must be in [0, 1)");
}

void to_json(json& j, const GSLConfig& c) {
  j = json{{"heads", c.heads}, {"d_k", c.d_k}, {"cheb_k", c.cheb_k}, {"dropout", c.dropout}};
}

void from_json(const json& j, GSLConfig& c) {
  GSLConfig d;
  c.heads = j.value("heads", d.heads);
  c.d_k = j.value("d_k", d.d_k);
  c.cheb_k = j.value("cheb_k", d.cheb_k);
  c.dropout = j.value("dropout", d.dropout);
}

HeadGraphs attention_graph(const Tensor& x, const Tensor& wq, const Tensor& wk) {
  if (x.rank() != 3) fail(ErrorCode::ShapeMismatch, "mhgsl: embeddings must be (B, C, d_m), got " + shape_str(x.shape()));
  if (wq.rank() != 2 || wk.shape() != wq.shape()) {
    fail(ErrorCode::ShapeMismatch, "mhgsl: query/key weights disagree: " + shape_str(wq.shape()) + " vs " +
                                       shape_str(wk.shape()));
  }
  HeadGraphs g;
  g.q = ops::matmul(x, wq);
  g.k = ops::matmul(x, wk);
  const float inv = 1.0f / std::sqrt(static_cast<float>(wq.dim(1)));
  g.adj = ops::softmax_rows(ops::scale(ops::bmm(g.q, ops::transpose(g.k)), inv));
  return g;
}

std::vector<HeadGraphs> mhgsl(const Tensor& x, const std::vector<Tensor>& wq, const std::vector<Tensor>& wk) {
  if (wq.empty() || wq.size() != wk.size()) fail(ErrorCode::InvalidArgument, "mhgsl: need matching query/key heads");
  std::vector<HeadGraphs> out;
  out.reserve(wq.size());
  for (std::size_t h = 0; h < wq.size(); ++h) out.push_back(attention_graph(x, wq[h], wk[h]));
  return out;
}

Tensor scaled_laplacian(const Tensor& adj) {
  const bool batched = adj.rank() == 3;
  if (!(adj.rank() == 2 || batched) || adj.dim(adj.rank() - 1) != adj.dim(adj.rank() - 2)) {
    fail(ErrorCode::ShapeMismatch, "scaled_laplacian: expected square matrices, got " + shape_str(adj.shape()));
  }
  const std::size_t C = adj.dim(adj.rank() - 1);
  const std::size_t B = batched ? adj.dim(0) : 1;
  Tensor out(adj.shape());
  std::vector<double> r(B * C);
  auto a = adj.data();
  auto o = out.data();
  for (std::size_t b = 0; b < B; ++b) {
    const float* A = a.data() + b * C * C;
    double* rb = r.data() + b * C;
    for (std::size_t i = 0; i < C; ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < C; ++j) d += 0.5 * (static_cast<double>(A[i * C + j]) + A[j * C + i]);
      if (!(d > 0.0)) {
        fail(ErrorCode::NumericFailure, "scaled_laplacian: node " + std::to_string(i) + " has zero degree");
      }
      rb[i] = 1.0 / std::sqrt(d);
    }
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t j = 0; j < C; ++j) {
        const double s = 0.5 * (static_cast<double>(A[i * C + j]) + A[j * C + i]);
        o[b * C * C + i * C + j] = static_cast<float>(-s * rb[i] * rb[j]);
      }
  }
  return ops::record_custom(out, {adj}, [adj, r = std::move(r), B, C](std::span<const float> g) mutable {
    auto a = adj.data();
    auto ga = adj.grad();
    std::vector<double> ds(C * C), dr(C);
    for (std::size_t b = 0; b < B; ++b) {
      const float* A = a.data() + b * C * C;
      const float* G = g.data() + b * C * C;
      const double* rb = r.data() + b * C;
      auto sym = [&](std::size_t i, std::size_t j) { return 0.5 * (static_cast<double>(A[i * C + j]) + A[j * C + i]); };
      std::fill(dr.begin(), dr.end(), 0.0);
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j) {
          const double gn = -static_cast<double>(G[i * C + j]);
          ds[i * C + j] = gn * rb[i] * rb[j];
          dr[i] += gn * sym(i, j) * rb[j];
          dr[j] += gn * sym(i, j) * rb[i];
        }
      // d_i = sum_j S_ij and r_i = d_i^{-1/2}.
      for (std::size_t i = 0; i < C; ++i) {
        const double dd = -0.5 * dr[i] * rb[i] * rb[i] * rb[i];
        for (std::size_t j = 0; j < C; ++j) ds[i * C + j] += dd;
      }
      float* GA = ga.data() + b * C * C;
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j) GA[i * C + j] += static_cast<float>(0.5 * (ds[i * C + j] + ds[j * C + i]));
    }
  });
}

Tensor cheb_conv(const Tensor& x, const Tensor& lap, const std::vector<Tensor>& thetas) {
  if (thetas.empty()) fail(ErrorCode::InvalidArgument, "cheb_conv: Chebyshev order must be >= 1");
  if (x.rank() != 3 || lap.rank() != 3 || lap.dim(0) != x.dim(0) || lap.dim(1) != x.dim(1) ||
      lap.dim(2) != x.dim(1)) {
    fail(ErrorCode::ShapeMismatch,
         "cheb_conv: features " + shape_str(x.shape()) + " vs Laplacian " + shape_str(lap.shape()));
  }
  Tensor prev = x;
  Tensor out = ops::matmul(x, thetas[0]);
  if (thetas.size() == 1) return out;
  Tensor cur = ops::bmm(lap, x);
  out = ops::add(out, ops::matmul(cur, thetas[1]));
  for (std::size_t k = 2; k < thetas.size(); ++k) {
    Tensor next = ops::sub(ops::scale(ops::bmm(lap, cur), 2.0f), prev);
    out = ops::add(out, ops::matmul(next, thetas[k]));
    prev = cur;
    cur = next;
  }
  return out;
}

Tensor fuse_and_classify(const Tensor& embeddings, const std::vector<Tensor>& head_outputs, const Tensor& fuse_w,
                         const Tensor& fuse_b, const Tensor& out_w, const Tensor& out_b, Tensor* pooled) {
  if (head_outputs.empty()) fail(ErrorCode::InvalidArgument, "fuse_and_classify: no head outputs");
  for (const auto& h : head_outputs) {
    if (h.shape() != embeddings.shape()) {
      fail(ErrorCode::ShapeMismatch, "fuse_and_classify: head output " + shape_str(h.shape()) +
                                         " does not match embeddings " + shape_str(embeddings.shape()));
    }
  }
  Tensor cat = head_outputs.size() == 1 ? head_outputs[0] : ops::concat(head_outputs, 2);
  Tensor fused = ops::add(ops::add_bias(ops::matmul(cat, fuse_w), fuse_b), embeddings);
  Tensor pool = ops::mean(fused, 1);
  if (pooled) *pooled = pool;
  return ops::add_bias(ops::matmul(pool, out_w), out_b);
}

Tensor init_linear(std::size_t rows, std::size_t cols, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t({rows, cols});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  return t;
}

}  // namespace eeggsl
