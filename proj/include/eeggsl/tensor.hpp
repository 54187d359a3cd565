#pragma once

// Dense float32 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage. Every op that
// sees an input with requires_grad (while recording is enabled) appends its
// adjoint to the calling thread's Tape. `backward` replays the tape in reverse
// and then clears it. Tapes are thread-local and never shared.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eeggsl/common.hpp"

namespace eeggsl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty when absent
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  const std::vector<float>& values() const { return impl_->data; }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; allocated (zeroed) on first access. Tensors are
  /// handles, so this is shallow-const.
  std::span<float> grad() const;
  void zero_grad();

  /// Deep copy, detached from any tape.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

class Tape {
 public:
  using Adjoint = std::function<void()>;

  void record(Adjoint adjoint) { ops_.push_back(std::move(adjoint)); }
  /// Seeds d(loss)/d(loss) = 1 and runs every recorded adjoint in reverse
  /// order, exactly once. The tape is empty afterwards.
  void backward(const Tensor& loss);
  void clear() { ops_.clear(); }
  std::size_t size() const { return ops_.size(); }

 private:
  std::vector<Adjoint> ops_;
};

/// The calling thread's tape.
Tape& active_tape();
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

void backward(const Tensor& loss);

/// Maximum over coordinates of |analytic - central difference| /
/// max(|analytic|, |central difference|, floor). The floor keeps float32
/// rounding in near-zero gradients from reading as large relative errors.
/// The difference quotient is formed in double.
/// Throws NumericFailure when f produces a non-finite value.
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double h = 1e-3, double floor = 1.0);
/// Same check for a tensor captured inside `f` (a model parameter, say);
/// `param` is perturbed in place and restored.
GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor param, double h = 1e-3, double floor = 1.0);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Serialization: one JSON header line {"shape":[...],"name":"..."} followed by
// the little-endian float32 payload.
void write_tensor(std::ostream& out, const Tensor& t, const std::string& name);
/// Returns false on clean end-of-stream.
bool read_tensor(std::istream& in, Tensor& t, std::string& name);
void save_tensor(const std::string& path, const Tensor& t, const std::string& name);
Tensor load_tensor(const std::string& path, std::string* name = nullptr);

namespace ops {

// Elementwise (shapes must match exactly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
/// x (..., n) + bias (n)
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// a (..., n, k) x b (k, m) -> (..., n, m)
Tensor matmul(const Tensor& a, const Tensor& b);
/// a (B, n, k) x b (B, k, m) -> (B, n, m)
Tensor bmm(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Softmax over the last axis.
Tensor softmax_rows(const Tensor& x);
/// Divides each last-axis row by its L2 norm (plus eps).
Tensor l2_normalize(const Tensor& x, float eps = 1e-8f);
/// Sets the diagonal of every trailing (n, n) block to `value`; no gradient
/// flows to the diagonal.
Tensor fill_diagonal(const Tensor& x, float value);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Single element by flat index, as a scalar tensor.
Tensor select(const Tensor& x, std::size_t flat_index);

/// Cross-correlation. x (N, Cin, L), w (Cout, Cin/groups, K), bias (Cout) or
/// undefined. Output length floor((L + pad_left + pad_right - K) / stride) + 1.
/// Direct evaluation, O(N * Cout * Cin/groups * K * L_out).
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad_left, std::size_t pad_right, std::size_t groups = 1);

/// Depthwise causal convolution with one long kernel per channel:
/// y[n,c,t] = sum_{tau <= t, tau < K} h[c,tau] * x[n,c,t-tau].
/// x (N, C, L), h (C, K). Direct evaluation, O(N * C * L * min(K, L)).
Tensor causal_long_conv(const Tensor& x, const Tensor& h);

/// x (N, C, L) -> (N, C, floor((L - kernel) / stride) + 1)
Tensor max_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride);

/// Per-channel batch normalization over (N, L) for x (N, C, L) or over N for
/// x (N, C). Training mode uses batch statistics and updates the running
/// buffers in place; eval mode is the fixed affine map of the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  float momentum = 0.1f, float eps = 1e-5f);

/// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, float rate, bool training, std::mt19937_64& rng);

/// Mean cross-entropy of logits (N, K) against integer targets.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

/// Records a custom op on the active tape: `adjoint` receives the output
/// gradient and must accumulate into the inputs' grads. Recording is skipped
/// unless some input requires grad and recording is enabled. Returns `out`.
Tensor record_custom(Tensor out, const std::vector<Tensor>& inputs,
                     std::function<void(std::span<const float> gout)> adjoint);

}  // namespace ops
}  // namespace eeggsl
