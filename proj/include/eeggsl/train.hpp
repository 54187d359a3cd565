#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eeggsl/augment.hpp"
#include "eeggsl/model.hpp"

namespace eeggsl {

struct TrainConfig {
  // Supervised stage.
  double lr = 1e-4;
  std::size_t batch_size = 8;
  std::size_t epochs = 60;
  /// Empty: 50% and 75% of `epochs`.
  std::vector<std::size_t> lr_milestones;
  double gamma = 0.1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Contrastive stage.
  double pretrain_lr = 1e-4;
  std::size_t pretrain_batch_size = 100;
  std::size_t pretrain_epochs = 160;
  std::vector<std::size_t> pretrain_milestones;
  double temperature = 0.005;
  std::size_t projector_dim = 128;
  std::size_t eval_batch_size = 64;

  std::vector<std::size_t> milestones() const;
  std::vector<std::size_t> pretrain_milestone_epochs() const;
  void validate() const;
};
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// NT-Xent over 2N rows where rows i and i + N are views of one source.
/// Rows are L2-normalized inside. Rejects N < 2.
Tensor info_nce(const Tensor& z, double temperature);

/// initial_lr * gamma^(number of milestones <= epoch).
double multistep_lr(std::size_t epoch, double initial_lr, const std::vector<std::size_t>& milestones, double gamma);

struct AdamWParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  std::vector<std::vector<float>> m, v;
  std::uint64_t step = 0;
};

/// One AdamW update with decoupled decay:
/// p -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * p.
/// Parameters without a gradient buffer are treated as having zero gradient.
void adamw_step(const std::vector<Tensor>& params, AdamWState& state, const AdamWParams& hp);

/// Optimizer bound to a fixed, named parameter list.
class AdamW {
 public:
  AdamW() = default;
  AdamW(NamedTensors params, AdamWParams hp);
  void step(double lr);
  void zero_grad();
  const AdamWParams& hyper() const { return hp_; }
  const AdamWState& state() const { return state_; }
  /// Moments as named tensors ("adam.m.<param>", "adam.v.<param>").
  NamedTensors state_tensors() const;
  void load_state(const NamedTensors& tensors, std::uint64_t step);

 private:
  NamedTensors params_;
  std::vector<Tensor> list_;
  AdamWParams hp_;
  AdamWState state_;
};

/// Subjects that appeared in any batch, recorded as batches are assembled.
struct BatchLog {
  std::set<std::string> pretrain_subjects;
  std::set<std::string> train_subjects;
  std::set<std::string> val_subjects;
  std::size_t pretrain_batches = 0;
  std::size_t train_batches = 0;
};
void to_json(nlohmann::json& j, const BatchLog& b);
void from_json(const nlohmann::json& j, BatchLog& b);

/// JSON header line followed by named tensor records.
struct Checkpoint {
  nlohmann::json meta;
  NamedTensors tensors;
};
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string rng_state(const std::mt19937_64& rng);
std::mt19937_64 rng_from_state(const std::string& state);

struct RunOptions {
  /// Written after every epoch; with `resume`, an existing file is continued.
  std::string checkpoint_path;
  bool resume = false;
  /// Stops (as if interrupted) after this many epochs in total.
  std::size_t stop_after = std::numeric_limits<std::size_t>::max();
  /// One JSON line per epoch.
  std::string log_path;
  BatchLog* batches = nullptr;
};

/// d_m -> d_m (GELU) -> projector_dim.
struct Projector {
  Tensor w1, b1, w2, b2;
  Projector() = default;
  Projector(std::size_t d_m, std::size_t out, std::mt19937_64& rng);
  Tensor forward(const Tensor& pooled) const;
  NamedTensors parameters() const;
};

struct PretrainResult {
  std::vector<double> epoch_losses;
  bool completed = false;
};

/// Contrastive pretraining of `encoder` on `windows` (training subjects of one
/// fold). The projector is discarded at the end.
PretrainResult pretrain(Encoder& encoder, const std::vector<const Window*>& windows, const AugmentPolicy& policy,
                        const TrainConfig& cfg, std::uint64_t seed, const RunOptions& opts = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};
void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

struct FoldData {
  std::vector<const Window*> train;
  std::vector<const Window*> val;
};

struct SupervisedResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool completed = false;
};

/// Cross-entropy training with AdamW and the MultiStep schedule. The model is
/// left holding the parameters of the epoch with the lowest validation loss.
SupervisedResult train_supervised(Model& model, const FoldData& data, const TrainConfig& cfg, std::uint64_t seed,
                                  const RunOptions& opts = {});

/// PD-class probabilities and argmax predictions in eval mode.
struct Predictions {
  std::vector<double> pd_probability;
  std::vector<int> predicted;
};
Predictions predict(Model& model, const std::vector<const Window*>& windows, std::size_t batch_size = 64);

/// Mean cross-entropy and accuracy in eval mode.
std::pair<double, double> evaluate_loss(Model& model, const std::vector<const Window*>& windows,
                                        std::size_t batch_size = 64);

}  // namespace eeggsl
