#include "eeggsl/explain.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace eeggsl {

Matrix to_matrix(const Tensor& t, std::size_t b) {
  if (t.rank() == 2 && t.dim(0) == t.dim(1) && b == 0) {
    Matrix m(t.dim(0), t.dim(1));
    m.values = t.values();
    return m;
  }
  if (t.rank() != 3 || t.dim(1) != t.dim(2) || b >= t.dim(0)) {
    fail(ErrorCode::ShapeMismatch, "to_matrix: expected (B, C, C) or (C, C), got " + shape_str(t.shape()));
  }
  const std::size_t n = t.dim(1);
  Matrix m(n, n);
  const auto& v = t.values();
  std::copy(v.begin() + static_cast<std::ptrdiff_t>(b * n * n), v.begin() + static_cast<std::ptrdiff_t>((b + 1) * n * n),
            m.values.begin());
  return m;
}

std::vector<HeadGradients> head_gradients(Model& model, const std::vector<const Window*>& windows,
                                          const std::vector<int>& targets, std::size_t batch_size) {
  if (!has_mhgsl(model.config().ablation)) {
    fail(ErrorCode::Unsupported,
         "head_gradients: the " + ablation_name(model.config().ablation) + " model has no learned graph heads");
  }
  if (targets.size() != windows.size()) fail(ErrorCode::InvalidArgument, "head_gradients: one target per window");
  if (batch_size == 0) fail(ErrorCode::InvalidArgument, "head_gradients: batch size must be > 0");
  std::mt19937_64 unused(0);
  std::vector<HeadGradients> out;
  for (std::size_t b0 = 0; b0 < windows.size(); b0 += batch_size) {
    const std::size_t b1 = std::min(windows.size(), b0 + batch_size);
    const std::vector<const Window*> batch(windows.begin() + b0, windows.begin() + b1);
    Model::Output fwd;
    {
      NoGradGuard no_grad;
      fwd = model.forward(stack_windows(batch), false, unused);
    }
    std::vector<Tensor> leaves;
    for (const auto& a : fwd.adjacency) leaves.push_back(a.clone().set_requires_grad(true));
    Tensor logits = model.classify(fwd.embeddings, leaves, false, unused);
    const std::size_t n = b1 - b0;
    Tensor pick({n, 2}, 0.0f);
    std::vector<int> chosen(n), predicted(n);
    for (std::size_t i = 0; i < n; ++i) {
      predicted[i] = logits.data()[2 * i + 1] > logits.data()[2 * i] ? 1 : 0;
      const int t = targets[b0 + i];
      if (t != -1 && t != 0 && t != 1) fail(ErrorCode::InvalidArgument, "head_gradients: target must be 0, 1 or -1");
      chosen[i] = t == -1 ? predicted[i] : t;
      pick.data()[2 * i + static_cast<std::size_t>(chosen[i])] = 1.0f;
    }
    backward(ops::sum(ops::mul(logits, pick)));
    for (const auto& [name, p] : model.parameters()) Tensor(p).zero_grad();
    for (std::size_t i = 0; i < n; ++i) {
      HeadGradients g;
      g.target_class = chosen[i];
      g.predicted_class = predicted[i];
      for (const auto& leaf : leaves) {
        g.adjacency.push_back(to_matrix(leaf, i));
        Matrix grad(leaf.dim(1), leaf.dim(2));
        if (leaf.has_grad()) {
          const std::size_t cc = grad.values.size();
          std::copy(leaf.grad().begin() + static_cast<std::ptrdiff_t>(i * cc),
                    leaf.grad().begin() + static_cast<std::ptrdiff_t>((i + 1) * cc), grad.values.begin());
        }
        g.gradients.push_back(std::move(grad));
      }
      out.push_back(std::move(g));
    }
  }
  return out;
}

HeadGradients head_gradients(Model& model, const Window& window, int target_class) {
  return head_gradients(model, {&window}, {target_class}, 1).front();
}

Matrix clamp_and_normalize(const Matrix& raw, bool* degenerate) {
  const double count = static_cast<double>(raw.values.size());
  if (raw.values.empty()) fail(ErrorCode::InvalidArgument, "clamp_and_normalize: empty matrix");
  double mean = 0.0;
  for (float v : raw.values) mean += v;
  mean /= count;
  double var = 0.0;
  for (float v : raw.values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / count);
  const double lo_bound = mean - 2.0 * sd, hi_bound = mean + 2.0 * sd;
  std::vector<double> clamped(raw.values.size());
  for (std::size_t k = 0; k < clamped.size(); ++k) clamped[k] = std::clamp<double>(raw.values[k], lo_bound, hi_bound);
  const auto [mn, mx] = std::minmax_element(clamped.begin(), clamped.end());
  Matrix out(raw.rows, raw.cols);
  const double range = *mx - *mn;
  const bool flat = !(range > 0.0);
  if (degenerate) *degenerate = flat;
  if (flat) return out;
  for (std::size_t k = 0; k < clamped.size(); ++k) out.values[k] = static_cast<float>((clamped[k] - *mn) / range);
  return out;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (float v : m.values) s += double(v) * v;
  return std::sqrt(s);
}

namespace {

void check_heads(const std::vector<Matrix>& heads) {
  if (heads.empty()) fail(ErrorCode::InvalidArgument, "explain: need at least one head");
  for (const auto& h : heads) {
    if (h.rows != h.cols || h.rows != heads.front().rows) fail(ErrorCode::ShapeMismatch, "explain: head shapes differ");
  }
}

Matrix weighted_mean(const std::vector<Matrix>& heads, const std::vector<double>& weights) {
  const std::size_t n = heads.front().rows;
  std::vector<double> acc(n * n, 0.0);
  for (std::size_t h = 0; h < heads.size(); ++h)
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += weights[h] * heads[h].values[k];
  Matrix out(n, n);
  for (std::size_t k = 0; k < acc.size(); ++k) out.values[k] = static_cast<float>(acc[k] / static_cast<double>(heads.size()));
  return out;
}

}  // namespace

Explanation explain(const std::vector<Matrix>& heads, const std::vector<Matrix>& grads) {
  check_heads(heads);
  if (grads.size() != heads.size()) fail(ErrorCode::InvalidArgument, "explain: one gradient per head");
  Explanation e;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    if (grads[h].rows != heads[h].rows || grads[h].cols != heads[h].cols) {
      fail(ErrorCode::ShapeMismatch, "explain: gradient " + std::to_string(h) + " does not match its head");
    }
    e.head_grad_norms.push_back(frobenius_norm(grads[h]));
  }
  e.adjacency = clamp_and_normalize(weighted_mean(heads, e.head_grad_norms), &e.degenerate);
  return e;
}

Explanation explain(const HeadGradients& g) {
  Explanation e = explain(g.adjacency, g.gradients);
  e.target_class = g.target_class;
  return e;
}

Matrix mean_attention_baseline(const std::vector<Matrix>& heads) {
  check_heads(heads);
  return clamp_and_normalize(weighted_mean(heads, std::vector<double>(heads.size(), 1.0)));
}

GroupExplanation group_mean(const std::vector<Explanation>& members, Label group) {
  if (members.empty()) fail(ErrorCode::InvalidArgument, "group_mean: empty group");
  const std::size_t n = members.front().adjacency.rows;
  std::vector<double> acc(n * n, 0.0);
  for (const auto& m : members) {
    if (m.adjacency.rows != n || m.adjacency.cols != n) fail(ErrorCode::ShapeMismatch, "group_mean: sizes differ");
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += m.adjacency.values[k];
  }
  GroupExplanation g;
  g.group = group;
  g.n_samples = members.size();
  g.adjacency = Matrix(n, n);
  for (std::size_t k = 0; k < acc.size(); ++k) g.adjacency.values[k] = static_cast<float>(acc[k] / static_cast<double>(members.size()));
  return g;
}

void write_matrix_csv(const std::string& path, const Matrix& m, const std::vector<std::string>& channel_names) {
  if (channel_names.size() != m.rows) fail(ErrorCode::InvalidArgument, "write_matrix_csv: one name per channel");
  std::ostringstream out;
  out << "channel";
  for (const auto& name : channel_names) out << ',' << name;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < m.rows; ++i) {
    out << channel_names[i];
    for (std::size_t j = 0; j < m.cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(m(i, j)));
      out << ',' << buf;
    }
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

Matrix read_matrix_csv(const std::string& path, std::vector<std::string>* channel_names) {
  std::istringstream in(read_file(path));
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    return cells;
  };
  if (!std::getline(in, line)) fail(ErrorCode::Parse, path + ": empty matrix file");
  auto header = split(line);
  if (header.size() < 2) fail(ErrorCode::Parse, path + ": header has no channels");
  const std::size_t n = header.size() - 1;
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) fail(ErrorCode::Parse, path + ": expected " + std::to_string(n) + " rows");
    const auto cells = split(line);
    if (cells.size() != n + 1) fail(ErrorCode::Parse, path + ": row " + std::to_string(i) + " has the wrong width");
    for (std::size_t j = 0; j < n; ++j) {
      try {
        m(i, j) = std::stof(cells[j + 1]);
      } catch (const std::exception&) {
        fail(ErrorCode::Parse, path + ": bad number '" + cells[j + 1] + "'");
      }
    }
  }
  if (channel_names) channel_names->assign(header.begin() + 1, header.end());
  return m;
}

void write_matrix_pgm(const std::string& path, const Matrix& m, std::size_t cell) {
  if (cell == 0) fail(ErrorCode::InvalidArgument, "write_matrix_pgm: cell size must be > 0");
  const std::size_t w = m.cols * cell, h = m.rows * cell;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = std::clamp(static_cast<double>(m(y / cell, x / cell)), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  write_file_atomic(path, out);
}

Matrix symmetrize(const Matrix& m) {
  if (m.rows != m.cols) fail(ErrorCode::ShapeMismatch, "symmetrize: matrix is not square");
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = 0.5f * (m(i, j) + m(j, i));
  return out;
}

double offdiagonal_median(const Matrix& m) {
  std::vector<double> v;
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j)
      if (i != j) v.push_back(m(i, j));
  if (v.empty()) fail(ErrorCode::InvalidArgument, "offdiagonal_median: no off-diagonal entries");
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace eeggsl
