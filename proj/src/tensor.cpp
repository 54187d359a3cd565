#include "eeggsl/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace eeggsl {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    fail(ErrorCode::ShapeMismatch, "tensor: shape " + shape_str(shape) + " needs " +
                                       std::to_string(shape_numel(shape)) + " values, got " +
                                       std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

float Tensor::item() const {
  if (numel() != 1) fail(ErrorCode::ShapeMismatch, "item: tensor " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::span<float> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data);
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

// --- tape -------------------------------------------------------------------

namespace {
thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;
}  // namespace

Tape& active_tape() { return g_tape; }
bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    fail(ErrorCode::ShapeMismatch,
         "backward: loss must be a scalar, got shape " + (loss.defined() ? shape_str(loss.shape()) : "()"));
  }
  if (!loss.requires_grad()) {
    fail(ErrorCode::InvalidArgument, "backward: loss is not on the tape (no input requires grad)");
  }
  auto* impl = loss.impl();
  impl->grad.assign(1, 1.0f);
  std::vector<Adjoint> ops;
  ops.swap(ops_);
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) (*it)();
}

void backward(const Tensor& loss) { active_tape().backward(loss); }

// --- grad check --------------------------------------------------------------

GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor param, double h, double floor) {
  if (!(h > 0.0)) fail(ErrorCode::InvalidArgument, "grad_check: step must be positive");
  active_tape().clear();
  const bool was_tracked = param.requires_grad();
  param.set_requires_grad(true);
  param.zero_grad();
  Tensor y = f();
  if (y.numel() != 1) fail(ErrorCode::ShapeMismatch, "grad_check: f must be scalar-valued");
  if (!std::isfinite(y.item())) fail(ErrorCode::NumericFailure, "grad_check: f(x) is not finite");
  backward(y);
  std::vector<float> analytic(param.grad().begin(), param.grad().end());
  param.zero_grad();

  GradCheckResult result;
  auto data = param.data();
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float saved = data[i];
    const float xp = static_cast<float>(saved + h);
    const float xm = static_cast<float>(saved - h);
    data[i] = xp;
    const double fp = f().item();
    data[i] = xm;
    const double fm = f().item();
    data[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail(ErrorCode::NumericFailure, "grad_check: non-finite value at coordinate " + std::to_string(i));
    }
    const double numeric = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
    const double a = analytic[i];
    if (!std::isfinite(a)) {
      fail(ErrorCode::NumericFailure, "grad_check: non-finite analytic gradient at coordinate " + std::to_string(i));
    }
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (i == 0 || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = i;
      result.analytic = a;
      result.numeric = numeric;
    }
  }
  param.set_requires_grad(was_tracked);
  return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h, double floor) {
  return grad_check([&] { return f(x); }, x, h, floor);
}

// --- serialization -----------------------------------------------------------

void write_tensor(std::ostream& out, const Tensor& t, const std::string& name) {
  nlohmann::json header;
  header["shape"] = t.shape();
  header["name"] = name;
  out << header.dump() << '\n';
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  } else {
    for (float v : t.data()) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                   static_cast<char>((bits >> 16) & 0xff), static_cast<char>(bits >> 24)};
      out.write(b, 4);
    }
  }
  if (!out) fail(ErrorCode::Io, "write_tensor: stream failure writing '" + name + "'");
}

bool read_tensor(std::istream& in, Tensor& t, std::string& name) {
  std::string line;
  if (!std::getline(in, line)) return false;
  if (line.empty()) return false;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("read_tensor: bad header: ") + e.what());
  }
  if (!header.contains("shape") || !header["shape"].is_array()) {
    fail(ErrorCode::Parse, "read_tensor: header lacks a shape array");
  }
  Shape shape = header["shape"].get<Shape>();
  name = header.value("name", "");
  std::vector<float> data(shape_numel(shape));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != data.size() * sizeof(float)) {
    fail(ErrorCode::Parse, "read_tensor: truncated payload for '" + name + "'");
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : data) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = ((bits & 0xff) << 24) | ((bits & 0xff00) << 8) | ((bits >> 8) & 0xff00) | (bits >> 24);
      v = std::bit_cast<float>(bits);
    }
  }
  t = Tensor(std::move(shape), std::move(data));
  return true;
}

void save_tensor(const std::string& path, const Tensor& t, const std::string& name) {
  std::ostringstream out(std::ios::binary);
  write_tensor(out, t, name);
  write_file_atomic(path, out.str());
}

Tensor load_tensor(const std::string& path, std::string* name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open tensor file " + path);
  Tensor t;
  std::string n;
  if (!read_tensor(in, t, n)) fail(ErrorCode::Parse, "empty tensor file " + path);
  if (name) *name = n;
  return t;
}

// --- ops ----------------------------------------------------------------------

namespace ops {
namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::ShapeMismatch,
         std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) +
                                       ", got shape " + shape_str(a.shape()));
  }
}

}  // namespace

Tensor record_custom(Tensor out, const std::vector<Tensor>& inputs,
                     std::function<void(std::span<const float>)> adjoint) {
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  out.impl()->requires_grad = true;
  std::shared_ptr<TensorImpl> outp = out.handle();
  active_tape().record([outp, adjoint = std::move(adjoint)]() {
    if (outp->grad.empty()) return;
    adjoint(outp->grad);
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return record_custom(out, {a, b}, [a, b](std::span<const float> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  return record_custom(out, {a, b}, [a, b](std::span<const float> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return record_custom(out, {a, b}, [a, b](std::span<const float> g) mutable {
    auto x = a.data();
    auto y = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * s;
  return record_custom(out, {a}, [a, s](std::span<const float> g) mutable {
    auto ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, float s) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + s;
  return record_custom(out, {a}, [a](std::span<const float> g) mutable {
    auto ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    fail(ErrorCode::ShapeMismatch,
         "add_bias: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
  }
  const std::size_t n = bias.dim(0);
  Tensor out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  auto bv = bias.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] + bv[i % n];
  return record_custom(out, {x, bias}, [x, bias, n](std::span<const float> g) mutable {
    if (x.requires_grad()) {
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      std::vector<double> acc(n, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i % n] += g[i];
      auto gb = bias.grad();
      for (std::size_t j = 0; j < n; ++j) gb[j] += static_cast<float>(acc[j]);
    }
  });
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double z = v[i];
    o[i] = static_cast<float>(0.5 * z * (1.0 + std::erf(z * M_SQRT1_2)));
  }
  return record_custom(out, {x}, [x](std::span<const float> g) mutable {
    auto v = x.data();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = v[i];
      const double cdf = 0.5 * (1.0 + std::erf(z * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * z * z) * 0.3989422804014327;
      gx[i] += static_cast<float>(g[i] * (cdf + z * pdf));
    }
  });
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] > 0.0f ? v[i] : 0.0f;
  return record_custom(out, {x}, [x](std::span<const float> g) mutable {
    auto v = x.data();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (v[i] > 0.0f) gx[i] += g[i];
  });
}

Tensor exp(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(v[i]);
  return record_custom(out, {x}, [x, out](std::span<const float> g) mutable {
    auto y = out.data();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
  });
}

Tensor log(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(v[i]);
  return record_custom(out, {x}, [x](std::span<const float> g) mutable {
    auto v = x.data();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / v[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    fail(ErrorCode::ShapeMismatch,
         "matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0);
  const std::size_t m = b.dim(1);
  const std::size_t rows = a.numel() / k;
  Shape oshape = a.shape();
  oshape.back() = m;
  Tensor out(oshape);
  auto av = a.data();
  auto bv = b.data();
  auto o = out.data();
  std::vector<float> bt(k * m);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = bv[p * m + j];
  for (std::size_t r = 0; r < rows; ++r) {
    const float* arow = av.data() + r * k;
    for (std::size_t j = 0; j < m; ++j) {
      const float* bcol = bt.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * bcol[p];
      o[r * m + j] = static_cast<float>(acc);
    }
  }
  return record_custom(out, {a, b}, [a, b, rows, k, m](std::span<const float> g) mutable {
    auto av = a.data();
    auto bv = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const float* grow = g.data() + r * m;
        for (std::size_t p = 0; p < k; ++p) {
          const float* brow = bv.data() + p * m;
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += static_cast<double>(grow[j]) * brow[j];
          ga[r * k + p] += static_cast<float>(acc);
        }
      }
    }
    if (b.requires_grad()) {
      std::vector<double> acc(k * m, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const float* arow = av.data() + r * k;
        const float* grow = g.data() + r * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double ap = arow[p];
          double* accrow = acc.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) accrow[j] += ap * grow[j];
        }
      }
      auto gb = b.grad();
      for (std::size_t i = 0; i < acc.size(); ++i) gb[i] += static_cast<float>(acc[i]);
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    fail(ErrorCode::ShapeMismatch, "bmm: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t B = a.dim(0), n = a.dim(1), k = a.dim(2), m = b.dim(2);
  Tensor out({B, n, m});
  auto av = a.data();
  auto bv = b.data();
  auto o = out.data();
  for (std::size_t bi = 0; bi < B; ++bi) {
    const float* A = av.data() + bi * n * k;
    const float* Bm = bv.data() + bi * k * m;
    float* O = o.data() + bi * n * m;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(A[i * k + p]) * Bm[p * m + j];
        O[i * m + j] = static_cast<float>(acc);
      }
  }
  return record_custom(out, {a, b}, [a, b, B, n, k, m](std::span<const float> g) mutable {
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t bi = 0; bi < B; ++bi) {
      const float* A = av.data() + bi * n * k;
      const float* Bm = bv.data() + bi * k * m;
      const float* G = g.data() + bi * n * m;
      if (a.requires_grad()) {
        float* GA = a.grad().data() + bi * n * k;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += static_cast<double>(G[i * m + j]) * Bm[p * m + j];
            GA[i * k + p] += static_cast<float>(acc);
          }
      }
      if (b.requires_grad()) {
        float* GB = b.grad().data() + bi * k * m;
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(A[i * k + p]) * G[i * m + j];
            GB[p * m + j] += static_cast<float>(acc);
          }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) fail(ErrorCode::ShapeMismatch, "transpose: need rank >= 2, got " + shape_str(a.shape()));
  const std::size_t r = a.shape()[a.rank() - 2];
  const std::size_t c = a.shape().back();
  const std::size_t batch = a.numel() / (r * c);
  Shape oshape = a.shape();
  std::swap(oshape[oshape.size() - 1], oshape[oshape.size() - 2]);
  Tensor out(oshape);
  auto x = a.data();
  auto o = out.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) o[b * r * c + j * r + i] = x[b * r * c + i * c + j];
  return record_custom(out, {a}, [a, r, c, batch](std::span<const float> g) mutable {
    auto ga = a.grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[b * r * c + i * c + j] += g[b * r * c + j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    fail(ErrorCode::ShapeMismatch, "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()));
  return record_custom(out, {a}, [a](std::span<const float> g) mutable {
    auto ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() == 0) fail(ErrorCode::ShapeMismatch, "softmax_rows: empty shape");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor out(x.shape());
  auto v = x.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = v.data() + r * n;
    float* y = o.data() + r * n;
    const float mx = *std::max_element(in, in + n);
    double total = 0.0;
    std::vector<double> e(n);
    for (std::size_t j = 0; j < n; ++j) {
      e[j] = std::exp(static_cast<double>(in[j]) - mx);
      total += e[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] = static_cast<float>(e[j] / total);
  }
  return record_custom(out, {x}, [x, out, n, rows](std::span<const float> g) mutable {
    auto y = out.data();
    auto gx = x.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[r * n + j]) * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        gx[r * n + j] += static_cast<float>(y[r * n + j] * (g[r * n + j] - dot));
    }
  });
}

Tensor l2_normalize(const Tensor& x, float eps) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor out(x.shape());
  std::vector<double> norms(rows);
  auto v = x.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += static_cast<double>(v[r * n + j]) * v[r * n + j];
    norms[r] = std::sqrt(ss);
    const double d = norms[r] + eps;
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = static_cast<float>(v[r * n + j] / d);
  }
  return record_custom(out, {x}, [x, norms, n, rows, eps](std::span<const float> g) mutable {
    auto v = x.data();
    auto gx = x.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double nr = norms[r];
      const double d = nr + eps;
      double gdotx = 0.0;
      for (std::size_t j = 0; j < n; ++j) gdotx += static_cast<double>(g[r * n + j]) * v[r * n + j];
      const double coef = nr > 0.0 ? gdotx / (nr * d * d) : 0.0;
      for (std::size_t j = 0; j < n; ++j)
        gx[r * n + j] += static_cast<float>(g[r * n + j] / d - coef * v[r * n + j]);
    }
  });
}

Tensor fill_diagonal(const Tensor& x, float value) {
  if (x.rank() < 2 || x.shape().back() != x.shape()[x.rank() - 2]) {
    fail(ErrorCode::ShapeMismatch, "fill_diagonal: need trailing square blocks, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape().back();
  const std::size_t batch = x.numel() / (n * n);
  Tensor out(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
  auto o = out.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i) o[b * n * n + i * n + i] = value;
  return record_custom(out, {x}, [x, n, batch](std::span<const float> g) mutable {
    auto gx = x.grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i != j) gx[b * n * n + i * n + j] += g[b * n * n + i * n + j];
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  return record_custom(out, {x}, [x](std::span<const float> g) mutable {
    auto gx = x.grad();
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    fail(ErrorCode::ShapeMismatch, "mean: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  }
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape oshape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) oshape.push_back(s[i]);
  if (oshape.empty()) oshape.push_back(1);
  Tensor out(oshape);
  auto v = x.data();
  auto o = out.data();
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t c = 0; c < inner; ++c) {
      double acc = 0.0;
      for (std::size_t l = 0; l < len; ++l) acc += v[(a * len + l) * inner + c];
      o[a * inner + c] = static_cast<float>(acc / static_cast<double>(len));
    }
  return record_custom(out, {x}, [x, outer, inner, len](std::span<const float> g) mutable {
    auto gx = x.grad();
    const float inv = 1.0f / static_cast<float>(len);
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t c = 0; c < inner; ++c) gx[(a * len + l) * inner + c] += g[a * inner + c] * inv;
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::InvalidArgument, "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) fail(ErrorCode::ShapeMismatch, "concat: axis out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) fail(ErrorCode::ShapeMismatch, "concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape oshape = s0;
  oshape[axis] = total;
  Tensor out(oshape);
  auto o = out.data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    auto v = p.data();
    for (std::size_t a = 0; a < outer; ++a)
      std::copy_n(v.data() + a * len * inner, len * inner, o.data() + (a * total + offset) * inner);
    offset += len;
  }
  return record_custom(out, parts, [parts, outer, inner, total, axis](std::span<const float> g) mutable {
    std::size_t offset = 0;
    for (auto& p : parts) {
      const std::size_t len = p.dim(axis);
      if (p.requires_grad()) {
        auto gp = p.grad();
        for (std::size_t a = 0; a < outer; ++a)
          for (std::size_t i = 0; i < len * inner; ++i)
            gp[a * len * inner + i] += g[(a * total + offset) * inner + i];
      }
      offset += len;
    }
  });
}

Tensor select(const Tensor& x, std::size_t flat_index) {
  if (flat_index >= x.numel()) {
    fail(ErrorCode::ShapeMismatch, "select: index " + std::to_string(flat_index) + " out of range for " +
                                       shape_str(x.shape()));
  }
  Tensor out = Tensor::scalar(x.data()[flat_index]);
  return record_custom(out, {x}, [x, flat_index](std::span<const float> g) mutable {
    x.grad()[flat_index] += g[0];
  });
}

namespace {

// Dot product over eight independent float lanes (vectorizable without
// reassociation flags), folded in double.
double dot_lanes(const float* a, const float* b, std::size_t n) {
  float lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
  double s = 0.0;
  for (float v : lane) s += v;
  for (; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad_left, std::size_t pad_right, std::size_t groups) {
  require_rank(x, 3, "conv1d");
  require_rank(w, 3, "conv1d");
  const std::size_t N = x.dim(0), Cin = x.dim(1), L = x.dim(2);
  const std::size_t Cout = w.dim(0), Cg = w.dim(1), K = w.dim(2);
  if (groups == 0 || stride == 0 || Cin % groups != 0 || Cout % groups != 0 || Cg != Cin / groups) {
    fail(ErrorCode::ShapeMismatch, "conv1d: input " + shape_str(x.shape()) + " incompatible with weight " +
                                       shape_str(w.shape()) + " (groups " + std::to_string(groups) + ")");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout)) {
    fail(ErrorCode::ShapeMismatch, "conv1d: bias " + shape_str(bias.shape()) + " does not match " +
                                       std::to_string(Cout) + " output channels");
  }
  if (L + pad_left + pad_right < K) {
    fail(ErrorCode::ShapeMismatch, "conv1d: padded input " + shape_str(x.shape()) + " shorter than kernel " +
                                       shape_str(w.shape()));
  }
  const std::size_t Lout = (L + pad_left + pad_right - K) / stride + 1;
  const std::size_t Og = Cout / groups;
  Tensor out({N, Cout, Lout});
  auto xv = x.data();
  auto wv = w.data();
  auto o = out.data();
  std::vector<double> acc(Lout);
  // Valid output range for tap k: t*stride + k - pad_left in [0, L).
  auto t_range = [=](std::size_t k, std::size_t& t0, std::size_t& t1) {
    const long off = static_cast<long>(k) - static_cast<long>(pad_left);
    long lo = off >= 0 ? 0 : (-off + static_cast<long>(stride) - 1) / static_cast<long>(stride);
    long hi = (static_cast<long>(L) - 1 - off);
    hi = hi < 0 ? -1 : hi / static_cast<long>(stride);
    hi = std::min<long>(hi, static_cast<long>(Lout) - 1);
    t0 = static_cast<std::size_t>(lo);
    t1 = hi < lo ? t0 : static_cast<std::size_t>(hi + 1);
  };
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oc = 0; oc < Cout; ++oc) {
      const std::size_t grp = oc / Og;
      std::fill(acc.begin(), acc.end(), bias.defined() ? static_cast<double>(bias.data()[oc]) : 0.0);
      for (std::size_t ci = 0; ci < Cg; ++ci) {
        const float* xin = xv.data() + (n * Cin + grp * Cg + ci) * L;
        const float* wk = wv.data() + (oc * Cg + ci) * K;
        for (std::size_t k = 0; k < K; ++k) {
          std::size_t t0, t1;
          t_range(k, t0, t1);
          const double wkv = wk[k];
          const long off = static_cast<long>(k) - static_cast<long>(pad_left);
          if (stride == 1) {
            const float* src = xin + off;
            for (std::size_t t = t0; t < t1; ++t) acc[t] += wkv * src[t];
          } else {
            for (std::size_t t = t0; t < t1; ++t) acc[t] += wkv * xin[static_cast<long>(t * stride) + off];
          }
        }
      }
      float* orow = o.data() + (n * Cout + oc) * Lout;
      for (std::size_t t = 0; t < Lout; ++t) orow[t] = static_cast<float>(acc[t]);
    }
  return record_custom(out, {x, w, bias}, [=](std::span<const float> g) mutable {
    auto xv = x.data();
    auto wv = w.data();
    std::vector<double> gx_acc(x.requires_grad() ? N * Cin * L : 0, 0.0);
    std::vector<double> gw_acc(w.requires_grad() ? Cout * Cg * K : 0, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t oc = 0; oc < Cout; ++oc) {
        const std::size_t grp = oc / Og;
        const float* grow = g.data() + (n * Cout + oc) * Lout;
        for (std::size_t ci = 0; ci < Cg; ++ci) {
          const std::size_t xrow = (n * Cin + grp * Cg + ci) * L;
          const float* xin = xv.data() + xrow;
          for (std::size_t k = 0; k < K; ++k) {
            std::size_t t0, t1;
            t_range(k, t0, t1);
            const long off = static_cast<long>(k) - static_cast<long>(pad_left);
            if (!gx_acc.empty()) {
              const double wkv = wv[(oc * Cg + ci) * K + k];
              double* gxr = gx_acc.data() + xrow;
              if (stride == 1) {
                double* dst = gxr + off;
                for (std::size_t t = t0; t < t1; ++t) dst[t] += wkv * grow[t];
              } else {
                for (std::size_t t = t0; t < t1; ++t) gxr[static_cast<long>(t * stride) + off] += wkv * grow[t];
              }
            }
            if (!gw_acc.empty()) {
              double s = 0.0;
              if (stride == 1) {
                s = dot_lanes(grow + t0, xin + off + static_cast<long>(t0), t1 - t0);
              } else {
                for (std::size_t t = t0; t < t1; ++t) s += static_cast<double>(grow[t]) * xin[static_cast<long>(t * stride) + off];
              }
              gw_acc[(oc * Cg + ci) * K + k] += s;
            }
          }
        }
      }
    if (!gx_acc.empty()) {
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx_acc.size(); ++i) gx[i] += static_cast<float>(gx_acc[i]);
    }
    if (!gw_acc.empty()) {
      auto gw = w.grad();
      for (std::size_t i = 0; i < gw_acc.size(); ++i) gw[i] += static_cast<float>(gw_acc[i]);
    }
    if (bias.defined() && bias.requires_grad()) {
      auto gb = bias.grad();
      for (std::size_t oc = 0; oc < Cout; ++oc) {
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t t = 0; t < Lout; ++t) s += g[(n * Cout + oc) * Lout + t];
        gb[oc] += static_cast<float>(s);
      }
    }
  });
}

Tensor causal_long_conv(const Tensor& x, const Tensor& h) {
  require_rank(x, 3, "causal_long_conv");
  require_rank(h, 2, "causal_long_conv");
  const std::size_t N = x.dim(0), C = x.dim(1), L = x.dim(2), K = h.dim(1);
  if (h.dim(0) != C) {
    fail(ErrorCode::ShapeMismatch,
         "causal_long_conv: shape mismatch " + shape_str(x.shape()) + " vs kernel " + shape_str(h.shape()));
  }
  const std::size_t taps = std::min(K, L);
  Tensor out({N, C, L});
  auto xv = x.data();
  auto hv = h.data();
  auto o = out.data();
  // Shifted-slice axpy sweeps; float rows keep the inner loops vectorizable.
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const float* xin = xv.data() + (n * C + c) * L;
      const float* hk = hv.data() + c * K;
      float* orow = o.data() + (n * C + c) * L;
      for (std::size_t tau = 0; tau < taps; ++tau) {
        const float w = hk[tau];
        if (w == 0.0f) continue;
        float* a = orow + tau;
        const std::size_t len = L - tau;
        for (std::size_t t = 0; t < len; ++t) a[t] += w * xin[t];
      }
    }
  return record_custom(out, {x, h}, [x, h, N, C, L, K, taps](std::span<const float> g) mutable {
    auto xv = x.data();
    auto hv = h.data();
    std::span<float> gxall = x.requires_grad() ? x.grad() : std::span<float>{};
    std::vector<double> gh_acc(h.requires_grad() ? C * K : 0, 0.0);
    std::vector<float> ghrow(taps);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const float* grow = g.data() + (n * C + c) * L;
        const float* xin = xv.data() + (n * C + c) * L;
        const float* hk = hv.data() + c * K;
        if (!gxall.empty()) {
          float* gx = gxall.data() + (n * C + c) * L;
          for (std::size_t tau = 0; tau < taps; ++tau) {
            const float w = hk[tau];
            if (w == 0.0f) continue;
            const float* gs = grow + tau;
            const std::size_t len = L - tau;
            for (std::size_t s = 0; s < len; ++s) gx[s] += w * gs[s];
          }
        }
        if (!gh_acc.empty()) {
          // gh[tau] = sum_s x[s] g[s + tau], swept over s.
          std::fill(ghrow.begin(), ghrow.end(), 0.0f);
          for (std::size_t s = 0; s < L; ++s) {
            const float xs = xin[s];
            if (xs == 0.0f) continue;
            const float* gs = grow + s;
            const std::size_t len = std::min(taps, L - s);
            for (std::size_t tau = 0; tau < len; ++tau) ghrow[tau] += xs * gs[tau];
          }
          for (std::size_t tau = 0; tau < taps; ++tau) gh_acc[c * K + tau] += ghrow[tau];
        }
      }
    if (!gh_acc.empty()) {
      auto gh = h.grad();
      for (std::size_t i = 0; i < gh_acc.size(); ++i) gh[i] += static_cast<float>(gh_acc[i]);
    }
  });
}

Tensor max_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 3, "max_pool1d");
  const std::size_t N = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (kernel == 0 || stride == 0 || L < kernel) {
    fail(ErrorCode::ShapeMismatch, "max_pool1d: input " + shape_str(x.shape()) + " too short for kernel " +
                                       std::to_string(kernel));
  }
  const std::size_t Lout = (L - kernel) / stride + 1;
  Tensor out({N, C, Lout});
  std::vector<std::size_t> argmax(N * C * Lout);
  auto v = x.data();
  auto o = out.data();
  for (std::size_t r = 0; r < N * C; ++r)
    for (std::size_t t = 0; t < Lout; ++t) {
      std::size_t best = r * L + t * stride;
      for (std::size_t k = 1; k < kernel; ++k) {
        const std::size_t idx = r * L + t * stride + k;
        if (v[idx] > v[best]) best = idx;
      }
      argmax[r * Lout + t] = best;
      o[r * Lout + t] = v[best];
    }
  return record_custom(out, {x}, [x, argmax = std::move(argmax)](std::span<const float> g) mutable {
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, float momentum, float eps) {
  if (x.rank() != 2 && x.rank() != 3) {
    fail(ErrorCode::ShapeMismatch, "batch_norm: expected (N, C) or (N, C, L), got " + shape_str(x.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), L = x.rank() == 3 ? x.dim(2) : 1;
  for (const Tensor* p : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
    if (p->rank() != 1 || p->dim(0) != C) {
      fail(ErrorCode::ShapeMismatch,
           "batch_norm: parameter " + shape_str(p->shape()) + " does not match input " + shape_str(x.shape()));
    }
  }
  const std::size_t count = N * L;
  if (training && count < 2) {
    fail(ErrorCode::ShapeMismatch, "batch_norm: training mode needs more than one value per channel, got " +
                                       shape_str(x.shape()));
  }
  auto v = x.data();
  std::vector<double> mu(C), inv_std(C);
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t t = 0; t < L; ++t) s += v[(n * C + c) * L + t];
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t t = 0; t < L; ++t) {
          const double d = v[(n * C + c) * L + t] - m;
          ss += d * d;
        }
      const double var = ss / static_cast<double>(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      auto rm = running_mean.data();
      auto rv = running_var.data();
      rm[c] = static_cast<float>((1.0 - momentum) * rm[c] + momentum * m);
      rv[c] = static_cast<float>((1.0 - momentum) * rv[c] +
                                 momentum * ss / static_cast<double>(count - 1));
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = running_mean.data()[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) + eps);
    }
  }
  Tensor out(x.shape());
  auto o = out.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t i = (n * C + c) * L + t;
        o[i] = static_cast<float>(gv[c] * (v[i] - mu[c]) * inv_std[c] + bv[c]);
      }
  return record_custom(out, {x, gamma, beta}, [=](std::span<const float> g) mutable {
    auto v = x.data();
    auto gv = gamma.data();
    for (std::size_t c = 0; c < C; ++c) {
      double sg = 0.0, sgx = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t t = 0; t < L; ++t) {
          const std::size_t i = (n * C + c) * L + t;
          const double xhat = (v[i] - mu[c]) * inv_std[c];
          sg += g[i];
          sgx += g[i] * xhat;
        }
      if (gamma.requires_grad()) gamma.grad()[c] += static_cast<float>(sgx);
      if (beta.requires_grad()) beta.grad()[c] += static_cast<float>(sg);
      if (x.requires_grad()) {
        auto gx = x.grad();
        const double k = gv[c] * inv_std[c];
        const double mg = sg / static_cast<double>(count);
        const double mgx = sgx / static_cast<double>(count);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t t = 0; t < L; ++t) {
            const std::size_t i = (n * C + c) * L + t;
            if (training) {
              const double xhat = (v[i] - mu[c]) * inv_std[c];
              gx[i] += static_cast<float>(k * (g[i] - mg - xhat * mgx));
            } else {
              gx[i] += static_cast<float>(k * g[i]);
            }
          }
      }
    }
  });
}

Tensor dropout(const Tensor& x, float rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0f || rate >= 1.0f) fail(ErrorCode::InvalidArgument, "dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0f) return x;
  const float keep_scale = 1.0f / (1.0f - rate);
  std::vector<float> mask(x.numel());
  for (auto& m : mask) m = uniform01(rng) >= rate ? keep_scale : 0.0f;
  Tensor out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * mask[i];
  return record_custom(out, {x}, [x, mask = std::move(mask)](std::span<const float> g) mutable {
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (targets.size() != N) {
    fail(ErrorCode::ShapeMismatch, "cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                                       shape_str(logits.shape()));
  }
  auto z = logits.data();
  std::vector<double> probs(N * K);
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= K) {
      fail(ErrorCode::InvalidArgument, "cross_entropy: target " + std::to_string(targets[i]) + " out of range");
    }
    const float* row = z.data() + i * K;
    const double mx = *std::max_element(row, row + K);
    double total = 0.0;
    for (std::size_t j = 0; j < K; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < K; ++j) probs[i * K + j] = std::exp(row[j] - lse);
    loss += lse - row[targets[i]];
  }
  Tensor out = Tensor::scalar(static_cast<float>(loss / static_cast<double>(N)));
  return record_custom(out, {logits}, [logits, targets, probs = std::move(probs), N, K](std::span<const float> g) mutable {
    auto gz = logits.grad();
    const double s = g[0] / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < K; ++j) {
        const double onehot = static_cast<std::size_t>(targets[i]) == j ? 1.0 : 0.0;
        gz[i * K + j] += static_cast<float>(s * (probs[i * K + j] - onehot));
      }
  });
}

}  // namespace ops
}  // namespace eeggsl
