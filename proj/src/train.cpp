#include "eeggsl/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace eeggsl {

using nlohmann::json;

// --- config ------------------------------------------------------------------

namespace {

std::vector<std::size_t> default_milestones(std::size_t epochs) {
  std::vector<std::size_t> m{epochs / 2, (3 * epochs) / 4};
  m.erase(std::remove(m.begin(), m.end(), std::size_t{0}), m.end());
  m.erase(std::unique(m.begin(), m.end()), m.end());
  return m;
}

}  // namespace

std::vector<std::size_t> TrainConfig::milestones() const {
  return lr_milestones.empty() ? default_milestones(epochs) : lr_milestones;
}

std::vector<std::size_t> TrainConfig::pretrain_milestone_epochs() const {
  return pretrain_milestones.empty() ? default_milestones(pretrain_epochs) : pretrain_milestones;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(pretrain_lr > 0.0)) fail(ErrorCode::InvalidArgument, "train config: learning rate must be > 0");
  if (batch_size < 1) fail(ErrorCode::InvalidArgument, "train config: batch size must be >= 1");
  if (pretrain_batch_size < 2) {
    fail(ErrorCode::InvalidArgument, "train config: contrastive batch size must be >= 2 to provide negatives");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) fail(ErrorCode::InvalidArgument, "train config: gamma must be in (0, 1]");
  if (!(temperature > 0.0)) fail(ErrorCode::InvalidArgument, "train config: temperature must be > 0");
  if (!(weight_decay >= 0.0)) fail(ErrorCode::InvalidArgument, "train config: weight decay must be >= 0");
  for (const auto* m : {&lr_milestones, &pretrain_milestones}) {
    if (!std::is_sorted(m->begin(), m->end())) {
      fail(ErrorCode::InvalidArgument, "train config: milestones must be sorted ascending");
    }
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr", c.lr},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"lr_milestones", c.lr_milestones},
           {"gamma", c.gamma},
           {"weight_decay", c.weight_decay},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},
           {"pretrain_lr", c.pretrain_lr},
           {"pretrain_batch_size", c.pretrain_batch_size},
           {"pretrain_epochs", c.pretrain_epochs},
           {"pretrain_milestones", c.pretrain_milestones},
           {"temperature", c.temperature},
           {"projector_dim", c.projector_dim},
           {"eval_batch_size", c.eval_batch_size}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.lr_milestones = j.value("lr_milestones", d.lr_milestones);
  c.gamma = j.value("gamma", d.gamma);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.pretrain_lr = j.value("pretrain_lr", d.pretrain_lr);
  c.pretrain_batch_size = j.value("pretrain_batch_size", d.pretrain_batch_size);
  c.pretrain_epochs = j.value("pretrain_epochs", d.pretrain_epochs);
  c.pretrain_milestones = j.value("pretrain_milestones", d.pretrain_milestones);
  c.temperature = j.value("temperature", d.temperature);
  c.projector_dim = j.value("projector_dim", d.projector_dim);
  c.eval_batch_size = j.value("eval_batch_size", d.eval_batch_size);
  c.validate();
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"encoder", c.encoder}, {"gsl", c.gsl}, {"ablation", ablation_name(c.ablation)}, {"tied_init", c.tied_init}};
}

void from_json(const json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
  if (j.contains("gsl")) c.gsl = j.at("gsl").get<GSLConfig>();
  if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
  c.tied_init = j.value("tied_init", false);
}

// --- losses and schedules ----------------------------------------------------

Tensor info_nce(const Tensor& z, double temperature) {
  if (z.rank() != 2 || z.dim(0) % 2 != 0) {
    fail(ErrorCode::ShapeMismatch, "info_nce: expected (2N, d) paired rows, got " + shape_str(z.shape()));
  }
  const std::size_t n = z.dim(0) / 2;
  if (n < 2) fail(ErrorCode::InvalidArgument, "info_nce: need N >= 2 pairs so that negatives exist");
  if (!(temperature > 0.0)) fail(ErrorCode::InvalidArgument, "info_nce: temperature must be > 0");
  Tensor u = ops::l2_normalize(z);
  Tensor sim = ops::scale(ops::matmul(u, ops::transpose(u)), static_cast<float>(1.0 / temperature));
  sim = ops::fill_diagonal(sim, -1e9f);
  std::vector<int> targets(2 * n);
  for (std::size_t i = 0; i < 2 * n; ++i) targets[i] = static_cast<int>((i + n) % (2 * n));
  return ops::cross_entropy(sim, targets);
}

double multistep_lr(std::size_t epoch, double initial_lr, const std::vector<std::size_t>& milestones, double gamma) {
  double lr = initial_lr;
  for (std::size_t m : milestones)
    if (m <= epoch) lr *= gamma;
  return lr;
}

// --- AdamW --------------------------------------------------------------------

void adamw_step(const std::vector<Tensor>& params, AdamWState& state, const AdamWParams& hp) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0f);
      state.v[i].assign(params[i].numel(), 0.0f);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto data = p.data();
    const bool has = p.has_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = has ? p.grad()[k] : 0.0;
      const double mk = hp.beta1 * m[k] + (1.0 - hp.beta1) * g;
      const double vk = hp.beta2 * v[k] + (1.0 - hp.beta2) * g * g;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double x = data[k];
      const double update = (mk / bc1) / (std::sqrt(vk / bc2) + hp.eps);
      data[k] = static_cast<float>(x - hp.lr * update - hp.lr * hp.weight_decay * x);
    }
  }
}

AdamW::AdamW(NamedTensors params, AdamWParams hp) : params_(std::move(params)), hp_(hp) {
  for (const auto& [name, t] : params_) list_.push_back(t);
}

void AdamW::step(double lr) {
  AdamWParams hp = hp_;
  hp.lr = lr;
  adamw_step(list_, state_, hp);
}

void AdamW::zero_grad() {
  for (auto& t : list_) t.zero_grad();
}

NamedTensors AdamW::state_tensors() const {
  NamedTensors out;
  if (state_.m.size() != params_.size()) return out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("adam.m." + params_[i].first, Tensor(params_[i].second.shape(), state_.m[i]));
    out.emplace_back("adam.v." + params_[i].first, Tensor(params_[i].second.shape(), state_.v[i]));
  }
  return out;
}

void AdamW::load_state(const NamedTensors& tensors, std::uint64_t step) {
  state_ = AdamWState{};
  state_.step = step;
  if (step == 0) return;
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  for (const auto& [name, p] : params_) {
    auto m = by_name.find("adam.m." + name);
    auto v = by_name.find("adam.v." + name);
    if (m == by_name.end() || v == by_name.end()) fail(ErrorCode::Parse, "checkpoint: missing optimizer state for " + name);
    if (m->second->numel() != p.numel() || v->second->numel() != p.numel()) {
      fail(ErrorCode::ShapeMismatch, "checkpoint: optimizer state for " + name + " has the wrong size");
    }
    state_.m.push_back(m->second->values());
    state_.v.push_back(v->second->values());
  }
}

// --- checkpoints ----------------------------------------------------------------

void to_json(json& j, const BatchLog& b) {
  j = json{{"pretrain_subjects", b.pretrain_subjects},
           {"train_subjects", b.train_subjects},
           {"val_subjects", b.val_subjects},
           {"pretrain_batches", b.pretrain_batches},
           {"train_batches", b.train_batches}};
}

void from_json(const json& j, BatchLog& b) {
  b.pretrain_subjects = j.value("pretrain_subjects", std::set<std::string>{});
  b.train_subjects = j.value("train_subjects", std::set<std::string>{});
  b.val_subjects = j.value("val_subjects", std::set<std::string>{});
  b.pretrain_batches = j.value("pretrain_batches", std::size_t{0});
  b.train_batches = j.value("train_batches", std::size_t{0});
}

void to_json(json& j, const EpochRecord& r) {
  j = json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"val_acc", r.val_acc}, {"lr", r.lr}};
}

void from_json(const json& j, EpochRecord& r) {
  r.epoch = j.at("epoch").get<std::size_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_loss = j.at("val_loss").get<double>();
  r.val_acc = j.at("val_acc").get<double>();
  r.lr = j.at("lr").get<double>();
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json meta = ckpt.meta;
  meta["format"] = "eeggsl-checkpoint";
  meta["tensor_count"] = ckpt.tensors.size();
  std::ostringstream out;
  out << meta.dump() << '\n';
  for (const auto& [name, t] : ckpt.tensors) write_tensor(out, t, name);
  write_file_atomic(path, out.str());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "checkpoint: cannot open " + path);
  std::string header;
  std::getline(in, header);
  Checkpoint ckpt;
  try {
    ckpt.meta = json::parse(header);
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, "checkpoint " + path + ": bad header: " + e.what());
  }
  if (ckpt.meta.value("format", "") != "eeggsl-checkpoint") fail(ErrorCode::Parse, "checkpoint " + path + ": not a checkpoint");
  const auto count = ckpt.meta.value("tensor_count", std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    Tensor t;
    std::string name;
    if (!read_tensor(in, t, name)) fail(ErrorCode::Parse, "checkpoint " + path + ": truncated tensor list");
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

std::mt19937_64 rng_from_state(const std::string& state) {
  std::istringstream in(state);
  std::mt19937_64 rng;
  in >> rng;
  if (!in) fail(ErrorCode::Parse, "checkpoint: bad RNG state");
  return rng;
}

namespace {

NamedTensors prefixed(const NamedTensors& src, const std::string& prefix) {
  NamedTensors out;
  for (const auto& [name, t] : src) out.emplace_back(prefix + name, t);
  return out;
}

NamedTensors cloned(const NamedTensors& src) {
  NamedTensors out;
  for (const auto& [name, t] : src) out.emplace_back(name, t.clone());
  return out;
}

void append(NamedTensors& dst, const NamedTensors& src) { dst.insert(dst.end(), src.begin(), src.end()); }

void append_log_line(const std::string& path, const json& line) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  if (!out) fail(ErrorCode::Io, "cannot append to training log " + path);
  out << line.dump() << '\n';
}

// Drops log lines past `epochs`, so a resumed run does not duplicate them.
void truncate_log(const std::string& path, std::size_t epochs) {
  if (path.empty() || !std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  for (std::size_t n = 0; n < epochs && std::getline(in, line); ++n) kept += line + '\n';
  in.close();
  write_file_atomic(path, kept);
}

std::vector<int> labels_of(const std::vector<const Window*>& windows, std::size_t begin, std::size_t end) {
  std::vector<int> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(static_cast<int>(windows[i]->label));
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates from the top, with our own index draw for portability.
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  return order;
}

std::string batch_subjects(const std::vector<const Window*>& batch) {
  std::set<std::string> ids;
  for (const Window* w : batch) ids.insert(w->subject_id);
  std::string out;
  for (const auto& id : ids) out += (out.empty() ? "" : ",") + id;
  return out;
}

}  // namespace

// --- pretraining ---------------------------------------------------------------

Projector::Projector(std::size_t d_m, std::size_t out, std::mt19937_64& rng)
    : w1(init_linear(d_m, d_m, d_m, rng)),
      b1(Tensor({d_m}, 0.0f)),
      w2(init_linear(d_m, out, d_m, rng)),
      b2(Tensor({out}, 0.0f)) {
  for (auto& [name, t] : parameters()) Tensor(t).set_requires_grad(true);
}

Tensor Projector::forward(const Tensor& pooled) const {
  Tensor h = ops::gelu(ops::add_bias(ops::matmul(pooled, w1), b1));
  return ops::add_bias(ops::matmul(h, w2), b2);
}

NamedTensors Projector::parameters() const {
  return {{"projector.w1", w1}, {"projector.b1", b1}, {"projector.w2", w2}, {"projector.b2", b2}};
}

PretrainResult pretrain(Encoder& encoder, const std::vector<const Window*>& windows, const AugmentPolicy& policy,
                        const TrainConfig& cfg, std::uint64_t seed, const RunOptions& opts) {
  cfg.validate();
  policy.validate();
  if (windows.size() < 2) fail(ErrorCode::InvalidArgument, "pretrain: need at least two windows");
  std::mt19937_64 rng(derive_seed(seed, stable_hash("pretrain")));
  Projector proj(encoder.config().d_m, cfg.projector_dim, rng);
  encoder.set_trainable(true);
  NamedTensors params = encoder.parameters();
  append(params, proj.parameters());
  AdamW opt(params, {cfg.pretrain_lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
  const auto milestones = cfg.pretrain_milestone_epochs();

  PretrainResult result;
  std::size_t start = 0;
  BatchLog local_log;
  BatchLog& log = opts.batches ? *opts.batches : local_log;
  auto full_state = [&] {
    NamedTensors s = encoder.parameters();
    append(s, encoder.buffers());
    append(s, proj.parameters());
    return s;
  };

  if (opts.resume && !opts.checkpoint_path.empty() && std::filesystem::exists(opts.checkpoint_path)) {
    const auto ckpt = load_checkpoint(opts.checkpoint_path);
    if (ckpt.meta.value("kind", "") != "pretrain" || ckpt.meta.value("seed", std::uint64_t{0}) != seed) {
      fail(ErrorCode::InvalidArgument, "pretrain: checkpoint " + opts.checkpoint_path + " belongs to another run");
    }
    result.epoch_losses = ckpt.meta.at("epoch_losses").get<std::vector<double>>();
    log = ckpt.meta.at("batches").get<BatchLog>();
    if (ckpt.meta.value("completed", false)) {
      NamedTensors enc = encoder.parameters();
      append(enc, encoder.buffers());
      copy_named(enc, ckpt.tensors);
      result.completed = true;
      return result;
    }
    copy_named(full_state(), ckpt.tensors);
    opt.load_state(ckpt.tensors, ckpt.meta.at("adam_step").get<std::uint64_t>());
    rng = rng_from_state(ckpt.meta.at("rng").get<std::string>());
    start = result.epoch_losses.size();
    truncate_log(opts.log_path, start);
  } else {
    truncate_log(opts.log_path, 0);
  }

  auto save = [&](std::size_t epochs_done, bool completed) {
    if (opts.checkpoint_path.empty()) return;
    Checkpoint ckpt;
    ckpt.meta = json{{"kind", "pretrain"},
                     {"seed", seed},
                     {"epoch", epochs_done},
                     {"completed", completed},
                     {"encoder", encoder.config()},
                     {"train", cfg},
                     {"augment", policy},
                     {"epoch_losses", result.epoch_losses},
                     {"batches", log}};
    if (completed) {
      ckpt.tensors = encoder.parameters();
      append(ckpt.tensors, encoder.buffers());
    } else {
      ckpt.meta["rng"] = rng_state(rng);
      ckpt.meta["adam_step"] = opt.state().step;
      ckpt.tensors = full_state();
      append(ckpt.tensors, opt.state_tensors());
    }
    save_checkpoint(opts.checkpoint_path, ckpt);
  };

  for (std::size_t epoch = start; epoch < cfg.pretrain_epochs; ++epoch) {
    if (epoch >= opts.stop_after) {
      save(epoch, false);
      return result;
    }
    const double lr = multistep_lr(epoch, cfg.pretrain_lr, milestones, cfg.gamma);
    const auto order = shuffled(windows.size(), rng);
    double total = 0.0;
    std::size_t count = 0, batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.pretrain_batch_size, ++batch_index) {
      const std::size_t e = std::min(order.size(), b + cfg.pretrain_batch_size);
      if (e - b < 2) continue;  // a single window has no negatives
      std::vector<Window> first, second;
      std::vector<const Window*> batch;
      for (std::size_t i = b; i < e; ++i) {
        const Window* w = windows[order[i]];
        batch.push_back(w);
        log.pretrain_subjects.insert(w->subject_id);
        auto view_rng = augment_rng(seed, *w, epoch);
        auto [v1, v2] = sample_pair(*w, policy, view_rng);
        first.push_back(std::move(v1));
        second.push_back(std::move(v2));
      }
      ++log.pretrain_batches;
      std::vector<const Window*> views;
      for (const auto& v : first) views.push_back(&v);
      for (const auto& v : second) views.push_back(&v);
      Tensor emb = encoder.forward(stack_windows(views), true);
      Tensor loss = info_nce(proj.forward(ops::mean(emb, 1)), cfg.temperature);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        active_tape().clear();
        fail(ErrorCode::NumericFailure, "pretrain: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                            std::to_string(batch_index) + " (subjects " + batch_subjects(batch) + ")");
      }
      backward(loss);
      opt.step(lr);
      opt.zero_grad();
      total += value * static_cast<double>(e - b);
      count += e - b;
    }
    result.epoch_losses.push_back(count ? total / static_cast<double>(count) : 0.0);
    append_log_line(opts.log_path, json{{"epoch", epoch}, {"loss", result.epoch_losses.back()}, {"lr", lr}});
    save(epoch + 1, false);
  }
  result.completed = true;
  save(cfg.pretrain_epochs, true);
  return result;
}

// --- supervised ----------------------------------------------------------------

std::pair<double, double> evaluate_loss(Model& model, const std::vector<const Window*>& windows,
                                        std::size_t batch_size) {
  if (windows.empty()) return {0.0, 0.0};
  NoGradGuard no_grad;
  std::mt19937_64 unused(0);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < windows.size(); b += batch_size) {
    const std::size_t e = std::min(windows.size(), b + batch_size);
    std::vector<const Window*> batch(windows.begin() + b, windows.begin() + e);
    const auto labels = labels_of(windows, b, e);
    Tensor logits = model.forward(stack_windows(batch), false, unused).logits;
    loss += ops::cross_entropy(logits, labels).item() * static_cast<double>(e - b);
    for (std::size_t i = 0; i < e - b; ++i) {
      const int pred = logits.data()[2 * i + 1] > logits.data()[2 * i] ? 1 : 0;
      if (pred == labels[i]) ++correct;
    }
  }
  return {loss / static_cast<double>(windows.size()), static_cast<double>(correct) / windows.size()};
}

Predictions predict(Model& model, const std::vector<const Window*>& windows, std::size_t batch_size) {
  Predictions out;
  NoGradGuard no_grad;
  std::mt19937_64 unused(0);
  for (std::size_t b = 0; b < windows.size(); b += batch_size) {
    const std::size_t e = std::min(windows.size(), b + batch_size);
    std::vector<const Window*> batch(windows.begin() + b, windows.begin() + e);
    Tensor logits = model.forward(stack_windows(batch), false, unused).logits;
    for (std::size_t i = 0; i < e - b; ++i) {
      const double z0 = logits.data()[2 * i], z1 = logits.data()[2 * i + 1];
      out.pd_probability.push_back(1.0 / (1.0 + std::exp(z0 - z1)));
      out.predicted.push_back(z1 > z0 ? 1 : 0);
    }
  }
  return out;
}

SupervisedResult train_supervised(Model& model, const FoldData& data, const TrainConfig& cfg, std::uint64_t seed,
                                  const RunOptions& opts) {
  cfg.validate();
  if (data.train.empty()) fail(ErrorCode::InvalidArgument, "train: no training windows");
  std::mt19937_64 rng(derive_seed(seed, stable_hash("supervised")));
  AdamW opt(model.trainable(), {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
  const auto milestones = cfg.milestones();

  SupervisedResult result;
  BatchLog local_log;
  BatchLog& log = opts.batches ? *opts.batches : local_log;
  for (const Window* w : data.val) log.val_subjects.insert(w->subject_id);
  NamedTensors best = cloned(model.state());
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t start = 0;

  if (opts.resume && !opts.checkpoint_path.empty() && std::filesystem::exists(opts.checkpoint_path)) {
    const auto ckpt = load_checkpoint(opts.checkpoint_path);
    if (ckpt.meta.value("kind", "") != "supervised" || ckpt.meta.value("seed", std::uint64_t{0}) != seed) {
      fail(ErrorCode::InvalidArgument, "train: checkpoint " + opts.checkpoint_path + " belongs to another run");
    }
    result.history = ckpt.meta.at("history").get<std::vector<EpochRecord>>();
    result.best_epoch = ckpt.meta.at("best_epoch").get<std::size_t>();
    result.best_val_loss = ckpt.meta.at("best_val_loss").get<double>();
    log = ckpt.meta.at("batches").get<BatchLog>();
    if (ckpt.meta.value("completed", false)) {
      copy_named(model.state(), ckpt.tensors);
      result.completed = true;
      return result;
    }
    copy_named(model.state(), ckpt.tensors);
    copy_named(prefixed(best, "best."), ckpt.tensors);
    opt.load_state(ckpt.tensors, ckpt.meta.at("adam_step").get<std::uint64_t>());
    rng = rng_from_state(ckpt.meta.at("rng").get<std::string>());
    start = result.history.size();
    truncate_log(opts.log_path, start);
  } else {
    truncate_log(opts.log_path, 0);
  }

  auto save = [&](bool completed) {
    if (opts.checkpoint_path.empty()) return;
    Checkpoint ckpt;
    ckpt.meta = json{{"kind", "supervised"},
                     {"seed", seed},
                     {"epoch", result.history.size()},
                     {"completed", completed},
                     {"model", model.config()},
                     {"train", cfg},
                     {"history", result.history},
                     {"best_epoch", result.best_epoch},
                     {"best_val_loss", result.best_val_loss},
                     {"batches", log}};
    if (completed) {
      ckpt.tensors = model.state();
    } else {
      ckpt.meta["rng"] = rng_state(rng);
      ckpt.meta["adam_step"] = opt.state().step;
      ckpt.tensors = model.state();
      append(ckpt.tensors, prefixed(best, "best."));
      append(ckpt.tensors, opt.state_tensors());
    }
    save_checkpoint(opts.checkpoint_path, ckpt);
  };

  for (std::size_t epoch = start; epoch < cfg.epochs; ++epoch) {
    if (epoch >= opts.stop_after) {
      save(false);
      return result;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = multistep_lr(epoch, cfg.lr, milestones, cfg.gamma);
    const auto order = shuffled(data.train.size(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::vector<const Window*> batch;
      std::vector<int> labels;
      for (std::size_t i = b; i < e; ++i) {
        const Window* w = data.train[order[i]];
        batch.push_back(w);
        labels.push_back(static_cast<int>(w->label));
        log.train_subjects.insert(w->subject_id);
      }
      ++log.train_batches;
      Tensor loss = ops::cross_entropy(model.forward(stack_windows(batch), true, rng).logits, labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        active_tape().clear();
        fail(ErrorCode::NumericFailure, "train: non-finite loss at epoch " + std::to_string(epoch) + " (subjects " +
                                            batch_subjects(batch) + ")");
      }
      backward(loss);
      opt.step(rec.lr);
      opt.zero_grad();
      total += value * static_cast<double>(e - b);
    }
    rec.train_loss = total / static_cast<double>(order.size());
    if (!data.val.empty()) {
      std::tie(rec.val_loss, rec.val_acc) = evaluate_loss(model, data.val, cfg.eval_batch_size);
    } else {
      rec.val_loss = rec.train_loss;
    }
    result.history.push_back(rec);
    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      best = cloned(model.state());
    }
    append_log_line(opts.log_path, rec);
    save(false);
  }
  copy_named(model.state(), best);
  result.completed = true;
  save(true);
  return result;
}

}  // namespace eeggsl
