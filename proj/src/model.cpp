#include "eeggsl/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

namespace eeggsl {

namespace {

struct AblationInfo {
  Ablation value;
  const char* name;
  const char* label;
};

constexpr AblationInfo kAblations[] = {
    {Ablation::EncoderOnly, "encoder_only", "LongConv Encoder"},
    {Ablation::StaticPcc, "static_pcc", "Full Model w/o MH-GSL"},
    {Ablation::MhgslScratch, "mhgsl_scratch", "Full Model with MH-GSL"},
    {Ablation::ClFreeze, "cl_freeze", "CL-Encoder + Freeze"},
    {Ablation::ClFinetune, "cl_finetune", "CL-Encoder + Finetune"},
};

const AblationInfo& info(Ablation a) {
  for (const auto& i : kAblations)
    if (i.value == a) return i;
  fail(ErrorCode::InvalidArgument, "unknown ablation");
}

}  // namespace

std::string ablation_name(Ablation a) { return info(a).name; }
std::string ablation_label(Ablation a) { return info(a).label; }

Ablation parse_ablation(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  std::replace(s.begin(), s.end(), '-', '_');
  for (const auto& i : kAblations)
    if (s == i.name) return i.value;
  fail(ErrorCode::InvalidArgument, "unknown ablation '" + name +
                                       "' (expected encoder_only, static_pcc, mhgsl_scratch, cl_freeze or cl_finetune)");
}

bool has_mhgsl(Ablation a) { return a != Ablation::EncoderOnly && a != Ablation::StaticPcc; }
bool uses_graph(Ablation a) { return a != Ablation::EncoderOnly; }
bool uses_pretraining(Ablation a) { return a == Ablation::ClFreeze || a == Ablation::ClFinetune; }

Tensor pcc_adjacency(const Tensor& windows) {
  if (windows.rank() != 3) fail(ErrorCode::ShapeMismatch, "pcc_adjacency: expected (B, C, L)");
  const std::size_t B = windows.dim(0), C = windows.dim(1), L = windows.dim(2);
  Tensor out({B, C, C});
  auto x = windows.data();
  auto o = out.data();
  std::vector<double> centered(C * L), norm(C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const float* row = x.data() + (b * C + c) * L;
      double m = 0.0;
      for (std::size_t t = 0; t < L; ++t) m += row[t];
      m /= static_cast<double>(L);
      double ss = 0.0;
      for (std::size_t t = 0; t < L; ++t) {
        centered[c * L + t] = row[t] - m;
        ss += centered[c * L + t] * centered[c * L + t];
      }
      norm[c] = std::sqrt(ss);
    }
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t j = 0; j < C; ++j) {
        double v = 0.0;
        if (i == j) {
          v = 1.0;
        } else if (norm[i] > 0.0 && norm[j] > 0.0) {
          double dot = 0.0;
          for (std::size_t t = 0; t < L; ++t) dot += centered[i * L + t] * centered[j * L + t];
          v = std::abs(dot / (norm[i] * norm[j]));
        }
        o[(b * C + i) * C + j] = static_cast<float>(v);
      }
  }
  return out;
}

void copy_named(const NamedTensors& dst, const NamedTensors& src, bool allow_missing) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : src) by_name[name] = &t;
  for (const auto& [name, t] : dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (allow_missing) continue;
      fail(ErrorCode::Parse, "missing tensor '" + name + "'");
    }
    if (it->second->shape() != t.shape()) {
      fail(ErrorCode::ShapeMismatch, "tensor '" + name + "' has shape " + shape_str(it->second->shape()) +
                                         ", expected " + shape_str(t.shape()));
    }
    auto d = Tensor(t).data();
    auto s = it->second->data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

Model::Model(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), encoder_(cfg.encoder, rng) {
  const std::size_t d = cfg.encoder.d_m;
  if (uses_graph(cfg.ablation)) {
    cfg.gsl.validate(d);
    const std::size_t branches = has_mhgsl(cfg.ablation) ? cfg.gsl.heads : 1;
    const std::size_t dk = cfg.gsl.key_dim(d);
    for (std::size_t h = 0; h < branches; ++h) {
      if (has_mhgsl(cfg.ablation)) {
        wq_.push_back(init_linear(d, dk, d, rng));
        wk_.push_back(cfg.tied_init ? wq_.back().clone() : init_linear(d, dk, d, rng));
      }
      std::vector<Tensor> th;
      for (std::size_t k = 0; k < cfg.gsl.cheb_k; ++k) th.push_back(init_linear(d, d, d * cfg.gsl.cheb_k, rng));
      thetas_.push_back(std::move(th));
    }
    fuse_w_ = init_linear(branches * d, d, branches * d, rng);
    fuse_b_ = Tensor({d}, 0.0f);
  }
  out_w_ = init_linear(d, 2, d, rng);
  out_b_ = Tensor({2}, 0.0f);
  for (auto& [name, t] : head_parameters()) Tensor(t).set_requires_grad(true);
  encoder_.set_trainable(cfg.ablation != Ablation::ClFreeze);
}

NamedTensors Model::head_parameters() const {
  NamedTensors out;
  for (std::size_t h = 0; h < wq_.size(); ++h) {
    out.emplace_back("gsl.head" + std::to_string(h) + ".wq", wq_[h]);
    out.emplace_back("gsl.head" + std::to_string(h) + ".wk", wk_[h]);
  }
  for (std::size_t h = 0; h < thetas_.size(); ++h)
    for (std::size_t k = 0; k < thetas_[h].size(); ++k)
      out.emplace_back("cheb.head" + std::to_string(h) + ".theta" + std::to_string(k), thetas_[h][k]);
  if (fuse_w_.defined()) {
    out.emplace_back("fuse.weight", fuse_w_);
    out.emplace_back("fuse.bias", fuse_b_);
  }
  out.emplace_back("out.weight", out_w_);
  out.emplace_back("out.bias", out_b_);
  return out;
}

NamedTensors Model::parameters() const {
  NamedTensors out = encoder_.parameters();
  for (auto& p : head_parameters()) out.push_back(std::move(p));
  return out;
}

NamedTensors Model::trainable() const {
  return cfg_.ablation == Ablation::ClFreeze ? head_parameters() : parameters();
}

NamedTensors Model::buffers() const { return encoder_.buffers(); }

NamedTensors Model::state() const {
  NamedTensors out = parameters();
  for (auto& b : buffers()) out.push_back(std::move(b));
  return out;
}

Tensor Model::embed(const Tensor& windows, bool training) {
  // A frozen encoder also keeps its batch-norm statistics fixed.
  return encoder_.forward(windows, training && cfg_.ablation != Ablation::ClFreeze);
}

Tensor Model::classify(const Tensor& embeddings, const std::vector<Tensor>& adjacency, bool training,
                       std::mt19937_64& rng) {
  if (!uses_graph(cfg_.ablation)) return ops::add_bias(ops::matmul(ops::mean(embeddings, 1), out_w_), out_b_);
  if (adjacency.size() != thetas_.size()) {
    fail(ErrorCode::InvalidArgument, "model: expected " + std::to_string(thetas_.size()) + " adjacency matrices, got " +
                                         std::to_string(adjacency.size()));
  }
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < thetas_.size(); ++h) {
    Tensor y = cheb_conv(embeddings, scaled_laplacian(adjacency[h]), thetas_[h]);
    outs.push_back(ops::dropout(y, static_cast<float>(cfg_.gsl.dropout), training, rng));
  }
  return fuse_and_classify(embeddings, outs, fuse_w_, fuse_b_, out_w_, out_b_);
}

Model::Output Model::forward(const Tensor& windows, bool training, std::mt19937_64& rng) {
  Output out;
  out.embeddings = embed(windows, training);
  if (has_mhgsl(cfg_.ablation)) {
    out.heads = mhgsl(out.embeddings, wq_, wk_);
    for (const auto& h : out.heads) out.adjacency.push_back(h.adj);
  } else if (cfg_.ablation == Ablation::StaticPcc) {
    out.adjacency.push_back(pcc_adjacency(windows));
  }
  out.logits = classify(out.embeddings, out.adjacency, training, rng);
  return out;
}

}  // namespace eeggsl
