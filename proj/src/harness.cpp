#include "eeggsl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace eeggsl {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr Ablation kAllAblations[] = {Ablation::EncoderOnly, Ablation::StaticPcc, Ablation::MhgslScratch,
                                      Ablation::ClFreeze, Ablation::ClFinetune};

const SubjectWindows* find_subject(const WindowCache& cache, const std::string& id) {
  for (const auto& s : cache.subjects) {
    if (s.subject_id == id) return &s;
  }
  return nullptr;
}

std::string window_span(const WindowCache& cache, const std::string& id) {
  const auto* s = find_subject(cache, id);
  if (!s || s->windows.empty()) return "no windows";
  return "windows " + std::to_string(s->windows.front().window_index) + "-" +
         std::to_string(s->windows.back().window_index);
}

void append(NamedTensors& into, const NamedTensors& more) { into.insert(into.end(), more.begin(), more.end()); }

}  // namespace

// --- folds ---------------------------------------------------------------------

std::vector<SubjectInfo> subjects_of(const WindowCache& cache) {
  std::vector<SubjectInfo> out;
  for (const auto& s : cache.subjects) out.push_back({s.subject_id, s.label});
  return out;
}

void to_json(json& j, const FoldPlan& p) {
  j = json{{"mode", split_mode_name(p.mode)},
           {"index", p.index},
           {"test_subject", p.test_subject},
           {"val_subjects", p.val_subjects},
           {"train_subjects", p.train_subjects},
           {"folds", p.folds}};
}

void from_json(const json& j, FoldPlan& p) {
  p.mode = parse_split_mode(j.at("mode").get<std::string>());
  p.index = j.at("index").get<std::size_t>();
  p.test_subject = j.at("test_subject").get<std::string>();
  p.val_subjects = j.at("val_subjects").get<std::vector<std::string>>();
  p.train_subjects = j.at("train_subjects").get<std::vector<std::string>>();
  p.folds = j.at("folds").get<std::size_t>();
}

std::vector<FoldPlan> make_folds(const std::vector<SubjectInfo>& subjects, std::uint64_t seed) {
  std::set<std::string> ids;
  std::size_t n_hc = 0, n_pd = 0;
  for (const auto& s : subjects) {
    if (!ids.insert(s.id).second) fail(ErrorCode::InvalidArgument, "make_folds: duplicate subject id '" + s.id + "'");
    (s.label == Label::PD ? n_pd : n_hc)++;
  }
  if (n_hc < 2 || n_pd < 2) {
    fail(ErrorCode::InvalidArgument, "make_folds: need at least 2 HC and 2 PD subjects (have " + std::to_string(n_hc) +
                                         " HC, " + std::to_string(n_pd) + " PD); a validation pair is impossible");
  }
  std::vector<FoldPlan> plans;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    std::vector<std::size_t> hc, pd;
    for (std::size_t k = 0; k < subjects.size(); ++k) {
      if (k == i) continue;
      (subjects[k].label == Label::PD ? pd : hc).push_back(k);
    }
    std::mt19937_64 rng(derive_seed(seed, stable_hash("folds"), i));
    auto pick = [&](const std::vector<std::size_t>& pool) {
      const auto at = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size()));
      return pool[std::min(at, pool.size() - 1)];
    };
    const std::size_t v_hc = pick(hc);
    const std::size_t v_pd = pick(pd);
    FoldPlan p;
    p.index = i;
    p.test_subject = subjects[i].id;
    p.val_subjects = {subjects[v_hc].id, subjects[v_pd].id};
    for (std::size_t k = 0; k < subjects.size(); ++k) {
      if (k != i && k != v_hc && k != v_pd) p.train_subjects.push_back(subjects[k].id);
    }
    plans.push_back(std::move(p));
  }
  return plans;
}

std::vector<FoldPlan> make_sample_folds(const std::vector<SubjectInfo>& subjects, std::size_t folds) {
  if (folds < 3) fail(ErrorCode::InvalidArgument, "make_sample_folds: need at least 3 folds");
  if (subjects.empty()) fail(ErrorCode::InvalidArgument, "make_sample_folds: no subjects");
  std::vector<FoldPlan> plans;
  for (std::size_t i = 0; i < folds; ++i) {
    FoldPlan p;
    p.mode = SplitMode::SampleWise;
    p.index = i;
    p.folds = folds;
    for (const auto& s : subjects) p.train_subjects.push_back(s.id);
    plans.push_back(std::move(p));
  }
  return plans;
}

std::vector<FoldPlan> plan_folds(const std::vector<SubjectInfo>& subjects, SplitMode mode, std::uint64_t seed) {
  return mode == SplitMode::SubjectWise ? make_folds(subjects, seed) : make_sample_folds(subjects);
}

FoldWindows fold_windows(const WindowCache& cache, const FoldPlan& plan) {
  FoldWindows out;
  auto windows_of = [&](const std::string& id) -> const SubjectWindows& {
    const auto* s = find_subject(cache, id);
    if (!s) fail(ErrorCode::InvalidArgument, "fold " + std::to_string(plan.index) + ": unknown subject '" + id + "'");
    return *s;
  };
  if (plan.mode == SplitMode::SampleWise) {
    if (plan.folds < 3 || plan.index >= plan.folds) {
      fail(ErrorCode::InvalidArgument, "sample-wise fold " + std::to_string(plan.index) + " of " +
                                           std::to_string(plan.folds) + " is invalid");
    }
    for (const auto& id : plan.train_subjects) {
      for (const auto& w : windows_of(id).windows) {
        const std::size_t f = w.window_index % plan.folds;
        if (f == plan.index) out.test.push_back(&w);
        else if (f == (plan.index + 1) % plan.folds) out.val.push_back(&w);
        else out.train.push_back(&w);
      }
    }
  } else {
    for (const auto& w : windows_of(plan.test_subject).windows) out.test.push_back(&w);
    std::set<Label> val_labels;
    for (const auto& id : plan.val_subjects) {
      const auto& s = windows_of(id);
      val_labels.insert(s.label);
      for (const auto& w : s.windows) out.val.push_back(&w);
    }
    if (val_labels.size() != 2) {
      fail(ErrorCode::InvalidArgument,
           "fold " + std::to_string(plan.index) + ": validation set must contain one HC and one PD subject");
    }
    for (const auto& id : plan.train_subjects) {
      for (const auto& w : windows_of(id).windows) out.train.push_back(&w);
    }
  }
  if (out.train.empty() || out.val.empty() || out.test.empty()) {
    fail(ErrorCode::InvalidArgument, "fold " + std::to_string(plan.index) + ": empty train, validation or test set");
  }
  return out;
}

// --- metrics -------------------------------------------------------------------

void to_json(json& j, const Metrics& m) {
  j = json{{"n", m.n},
           {"accuracy", m.accuracy},
           {"precision", m.precision},
           {"recall", m.recall},
           {"f1", m.f1},
           {"auc", m.auc ? json(*m.auc) : json(nullptr)}};
}

void from_json(const json& j, Metrics& m) {
  m.n = j.at("n").get<std::size_t>();
  m.accuracy = j.at("accuracy").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.auc.reset();
  if (!j.at("auc").is_null()) m.auc = j.at("auc").get<double>();
}

std::optional<double> auc_midrank(const std::vector<Prediction>& predictions) {
  std::vector<std::pair<double, int>> items;
  std::size_t n_pos = 0;
  for (const auto& p : predictions) {
    items.emplace_back(p.score, p.truth);
    n_pos += p.truth == 1;
  }
  const std::size_t n_neg = items.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    while (j < items.size() && items[j].first == items[i].first) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (items[k].second == 1) rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

Metrics compute_metrics(const std::vector<Prediction>& predictions) {
  if (predictions.empty()) fail(ErrorCode::InvalidArgument, "metrics: empty prediction list");
  std::size_t conf[2][2] = {{0, 0}, {0, 0}};  // [truth][predicted]
  for (const auto& p : predictions) {
    if ((p.truth != 0 && p.truth != 1) || (p.predicted != 0 && p.predicted != 1)) {
      fail(ErrorCode::InvalidArgument, "metrics: labels must be 0 or 1");
    }
    conf[p.truth][p.predicted]++;
  }
  Metrics m;
  m.n = predictions.size();
  m.accuracy = static_cast<double>(conf[0][0] + conf[1][1]) / static_cast<double>(m.n);
  for (int c = 0; c < 2; ++c) {
    const double tp = static_cast<double>(conf[c][c]);
    const double predicted = static_cast<double>(conf[0][c] + conf[1][c]);
    const double actual = static_cast<double>(conf[c][0] + conf[c][1]);
    const double precision = predicted > 0 ? tp / predicted : 0.0;
    const double recall = actual > 0 ? tp / actual : 0.0;
    const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    m.precision += precision / 2.0;
    m.recall += recall / 2.0;
    m.f1 += f1 / 2.0;
  }
  m.auc = auc_midrank(predictions);
  return m;
}

// --- results -------------------------------------------------------------------

void GroupSum::add(const Matrix& m) {
  if (count == 0) {
    sum = Matrix(m.rows, m.cols);
  } else if (m.rows != sum.rows || m.cols != sum.cols) {
    fail(ErrorCode::ShapeMismatch, "explanation sum: matrix size mismatch");
  }
  for (std::size_t i = 0; i < m.values.size(); ++i) sum.values[i] += m.values[i];
  ++count;
}

Matrix GroupSum::mean() const {
  if (count == 0) fail(ErrorCode::InvalidArgument, "explanation sum: no samples");
  Matrix out = sum;
  for (auto& v : out.values) v /= static_cast<float>(count);
  return out;
}

namespace {

json group_json(const GroupSum& g) {
  return json{{"count", g.count}, {"rows", g.sum.rows}, {"cols", g.sum.cols}, {"values", g.sum.values}};
}

GroupSum group_from_json(const json& j) {
  GroupSum g;
  g.count = j.at("count").get<std::size_t>();
  g.sum.rows = j.at("rows").get<std::size_t>();
  g.sum.cols = j.at("cols").get<std::size_t>();
  g.sum.values = j.at("values").get<std::vector<float>>();
  if (g.sum.values.size() != g.sum.rows * g.sum.cols) fail(ErrorCode::Parse, "explanation sum: size mismatch");
  return g;
}

void merge(GroupSum& into, const GroupSum& from) {
  if (from.count == 0) return;
  if (into.count == 0) {
    into = from;
    return;
  }
  if (into.sum.rows != from.sum.rows || into.sum.cols != from.sum.cols) {
    fail(ErrorCode::ShapeMismatch, "explanation sum: matrix size mismatch");
  }
  for (std::size_t i = 0; i < into.sum.values.size(); ++i) into.sum.values[i] += from.sum.values[i];
  into.count += from.count;
}

}  // namespace

void to_json(json& j, const FoldResult& r) {
  json preds = json::array();
  for (const auto& p : r.predictions) preds.push_back(json{p.score, p.predicted, p.truth});
  j = json{{"config", ablation_name(r.config)},
           {"seed", r.seed},
           {"plan", r.plan},
           {"predictions", preds},
           {"window_subjects", r.window_subjects},
           {"window_indices", r.window_indices},
           {"best_epoch", r.best_epoch},
           {"best_val_loss", r.best_val_loss},
           {"history", r.history},
           {"batches", r.batches},
           {"explain_pd", group_json(r.explain_pd)},
           {"explain_hc", group_json(r.explain_hc)}};
}

void from_json(const json& j, FoldResult& r) {
  r.config = parse_ablation(j.at("config").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.plan = j.at("plan").get<FoldPlan>();
  r.predictions.clear();
  for (const auto& p : j.at("predictions")) {
    r.predictions.push_back({p.at(0).get<double>(), p.at(1).get<int>(), p.at(2).get<int>()});
  }
  r.window_subjects = j.at("window_subjects").get<std::vector<std::string>>();
  r.window_indices = j.at("window_indices").get<std::vector<std::size_t>>();
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.best_val_loss = j.at("best_val_loss").get<double>();
  r.history = j.at("history").get<std::vector<EpochRecord>>();
  r.batches = j.at("batches").get<BatchLog>();
  r.explain_pd = group_from_json(j.at("explain_pd"));
  r.explain_hc = group_from_json(j.at("explain_hc"));
}

void to_json(json& j, const SeedResult& r) {
  j = json{{"config", ablation_name(r.config)},
           {"seed", r.seed},
           {"folds_completed", r.folds_completed},
           {"folds_total", r.folds_total},
           {"metrics", r.pooled},
           {"explained_pd", r.explain_pd.count},
           {"explained_hc", r.explain_hc.count}};
}

std::vector<AggregateRow> aggregate(const std::vector<SeedResult>& seeds, const std::vector<Ablation>& order) {
  auto stat = [](const std::vector<double>& xs) {
    Stat s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
      double ss = 0.0;
      for (double x : xs) ss += (x - s.mean) * (x - s.mean);
      s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
  };
  std::vector<AggregateRow> rows;
  for (Ablation a : order) {
    std::vector<double> acc, auc, f1, prec, rec;
    bool all_auc = true;
    for (const auto& s : seeds) {
      if (s.config != a) continue;
      acc.push_back(100.0 * s.pooled.accuracy);
      f1.push_back(s.pooled.f1);
      prec.push_back(s.pooled.precision);
      rec.push_back(s.pooled.recall);
      if (s.pooled.auc) auc.push_back(*s.pooled.auc);
      else all_auc = false;
    }
    if (acc.empty()) continue;
    AggregateRow row;
    row.config = a;
    row.n_seeds = acc.size();
    row.accuracy_pct = stat(acc);
    if (all_auc) row.auc = stat(auc);
    row.f1 = stat(f1);
    row.precision = stat(prec);
    row.recall = stat(rec);
    rows.push_back(row);
  }
  return rows;
}

// --- audit ---------------------------------------------------------------------

void to_json(json& j, const AuditReport& a) {
  j = json{{"clean", a.clean}, {"violations", a.violations}, {"warnings", a.warnings}};
}

AuditReport leakage_audit(const std::vector<FoldPlan>& plans, const std::vector<BatchLog>& logs,
                          const WindowCache& cache) {
  AuditReport a;
  auto violation = [&](const std::string& msg) { a.violations.push_back(msg); };
  if (cache.normalization != "per_window") {
    violation("normalization statistics were computed '" + cache.normalization +
              "' instead of per window; statistics can carry information across subjects");
  }
  if (!logs.empty() && logs.size() != plans.size()) {
    violation("batch logs (" + std::to_string(logs.size()) + ") do not pair with fold plans (" +
              std::to_string(plans.size()) + ")");
  }
  std::map<std::string, Label> labels;
  for (const auto& s : cache.subjects) labels[s.subject_id] = s.label;

  bool sample_wise = false;
  std::map<std::string, std::size_t> test_count;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const auto& p = plans[i];
    const std::string fold = "fold " + std::to_string(i);
    if (p.mode == SplitMode::SampleWise) {
      sample_wise = true;
      continue;
    }
    auto subject = [&](const std::string& id) { return "subject " + id + " (" + window_span(cache, id) + ")"; };
    test_count[p.test_subject]++;
    if (!labels.count(p.test_subject)) violation(fold + ": test subject '" + p.test_subject + "' is not in the data");
    const std::set<std::string> train(p.train_subjects.begin(), p.train_subjects.end());
    const std::set<std::string> val(p.val_subjects.begin(), p.val_subjects.end());
    if (train.size() != p.train_subjects.size()) violation(fold + ": training list repeats a subject");
    if (train.count(p.test_subject)) violation(fold + ": test " + subject(p.test_subject) + " is in the training set");
    if (val.count(p.test_subject)) violation(fold + ": test " + subject(p.test_subject) + " is in the validation set");
    for (const auto& id : val) {
      if (train.count(id)) violation(fold + ": validation " + subject(id) + " is also in the training set");
    }
    std::set<Label> val_labels;
    for (const auto& id : p.val_subjects) {
      if (labels.count(id)) val_labels.insert(labels[id]);
      else violation(fold + ": validation subject '" + id + "' is not in the data");
    }
    if (p.val_subjects.size() != 2 || val_labels.size() != 2) {
      violation(fold + ": validation set is not exactly one HC and one PD subject");
    }
    for (const auto& [id, label] : labels) {
      if (id != p.test_subject && !train.count(id) && !val.count(id)) {
        violation(fold + ": subject " + id + " is not assigned to any split");
      }
    }
    for (const auto& id : train) {
      if (!labels.count(id)) violation(fold + ": training subject '" + id + "' is not in the data");
    }
    if (i < logs.size()) {
      const auto& log = logs[i];
      for (const auto& id : log.train_subjects) {
        if (id == p.test_subject) violation(fold + ": test " + subject(id) + " appeared in a training batch");
        else if (!train.count(id)) violation(fold + ": " + subject(id) + " appeared in a training batch but is not a training subject");
      }
      for (const auto& id : log.pretrain_subjects) {
        if (id == p.test_subject) violation(fold + ": test " + subject(id) + " appeared in a pretraining batch");
        else if (!train.count(id)) violation(fold + ": " + subject(id) + " appeared in a pretraining batch but is not a training subject");
      }
      for (const auto& id : log.val_subjects) {
        if (id == p.test_subject) violation(fold + ": test " + subject(id) + " appeared in a validation batch");
        else if (!val.count(id)) violation(fold + ": " + subject(id) + " appeared in a validation batch but is not a validation subject");
      }
    }
  }
  if (sample_wise) {
    a.warnings.push_back(
        "sample-wise split: windows of every subject appear in both training and test sets, so results are not "
        "subject-generalizable");
  } else if (!plans.empty()) {
    for (const auto& [id, label] : labels) {
      const auto it = test_count.find(id);
      const std::size_t n = it == test_count.end() ? 0 : it->second;
      if (n != 1) violation("subject " + id + " is the test subject of " + std::to_string(n) + " folds, not exactly one");
    }
  }
  a.clean = a.violations.empty();
  return a;
}

// --- explanations and models ---------------------------------------------------

ExplainSummary explain_correct(Model& model, const std::vector<const Window*>& windows, std::size_t batch_size) {
  if (!has_mhgsl(model.config().ablation)) {
    fail(ErrorCode::Unsupported, "explain: " + ablation_name(model.config().ablation) + " has no learned graphs");
  }
  ExplainSummary out;
  out.windows = windows.size();
  const auto preds = predict(model, windows, batch_size);
  std::vector<const Window*> correct;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (preds.predicted[i] == static_cast<int>(windows[i]->label)) correct.push_back(windows[i]);
  }
  out.correct = correct.size();
  if (correct.empty()) return out;
  const auto grads = head_gradients(model, correct, std::vector<int>(correct.size(), -1), batch_size);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const bool pd = correct[i]->label == Label::PD;
    (pd ? out.pd : out.hc).add(explain(grads[i]).adjacency);
    (pd ? out.pd_baseline : out.hc_baseline).add(mean_attention_baseline(grads[i].adjacency));
  }
  return out;
}

Model load_trained_model(const std::string& checkpoint_path) {
  const auto ckpt = load_checkpoint(checkpoint_path);
  if (ckpt.meta.value("kind", "") != "supervised" || !ckpt.meta.value("completed", false)) {
    fail(ErrorCode::InvalidArgument, "checkpoint " + checkpoint_path + " is not a completed supervised model");
  }
  std::mt19937_64 rng(0);
  Model model(ckpt.meta.at("model").get<ModelConfig>(), rng);
  copy_named(model.state(), ckpt.tensors);
  return model;
}

// --- running -------------------------------------------------------------------

namespace {

struct Pretrained {
  NamedTensors encoder;
  BatchLog log;
  std::vector<double> losses;
};

std::uint64_t job_seed(std::uint64_t seed, std::size_t fold, const std::string& what) {
  return derive_seed(seed, fold, stable_hash(what));
}

Pretrained pretrain_fold(const ExperimentConfig& cfg, const WindowCache& cache, std::uint64_t seed,
                         const FoldPlan& plan, const std::string& dir) {
  const FoldWindows fw = fold_windows(cache, plan);
  std::mt19937_64 rng(job_seed(seed, plan.index, "pretrain-init"));
  Encoder encoder(cfg.encoder, rng);
  Pretrained out;
  RunOptions opts;
  opts.batches = &out.log;
  if (!dir.empty()) {
    fs::create_directories(dir);
    opts.checkpoint_path = (fs::path(dir) / "encoder.ckpt").string();
    opts.log_path = (fs::path(dir) / "pretrain.log.jsonl").string();
    opts.resume = true;
  }
  out.losses = pretrain(encoder, fw.train, cfg.augment, cfg.train, job_seed(seed, plan.index, "pretrain"), opts).epoch_losses;
  out.encoder = encoder.parameters();
  append(out.encoder, encoder.buffers());
  return out;
}

FoldResult train_fold(const ExperimentConfig& cfg, const WindowCache& cache, Ablation config, std::uint64_t seed,
                      const FoldPlan& plan, const std::string& dir, const Pretrained* pre) {
  const FoldWindows fw = fold_windows(cache, plan);
  const std::uint64_t s = job_seed(seed, plan.index, ablation_name(config));
  std::mt19937_64 rng(s);
  Model model(cfg.model(config), rng);
  if (uses_pretraining(config)) {
    if (!pre) fail(ErrorCode::InvalidArgument, "fold: " + ablation_name(config) + " needs a pretrained encoder");
    NamedTensors enc = model.encoder().parameters();
    append(enc, model.encoder().buffers());
    copy_named(enc, pre->encoder);
  }
  FoldResult r;
  r.config = config;
  r.seed = seed;
  r.plan = plan;
  RunOptions opts;
  opts.batches = &r.batches;
  if (!dir.empty()) {
    fs::create_directories(dir);
    opts.checkpoint_path = (fs::path(dir) / "model.ckpt").string();
    opts.log_path = (fs::path(dir) / "train.log.jsonl").string();
    opts.resume = true;
  }
  const auto sup = train_supervised(model, {fw.train, fw.val}, cfg.train, s, opts);
  if (pre) {
    r.batches.pretrain_subjects = pre->log.pretrain_subjects;
    r.batches.pretrain_batches = pre->log.pretrain_batches;
  }
  r.best_epoch = sup.best_epoch;
  r.best_val_loss = sup.best_val_loss;
  r.history = sup.history;

  const auto preds = predict(model, fw.test, cfg.train.eval_batch_size);
  for (std::size_t i = 0; i < fw.test.size(); ++i) {
    r.predictions.push_back({preds.pd_probability[i], preds.predicted[i], static_cast<int>(fw.test[i]->label)});
    r.window_subjects.push_back(fw.test[i]->subject_id);
    r.window_indices.push_back(fw.test[i]->window_index);
  }
  if (has_mhgsl(config) && cfg.harness.explain) {
    auto ex = explain_correct(model, fw.test, cfg.train.eval_batch_size);
    r.explain_pd = std::move(ex.pd);
    r.explain_hc = std::move(ex.hc);
  }
  return r;
}

std::string seed_dir(const std::string& root, const std::string& group, std::uint64_t seed, std::size_t fold) {
  if (root.empty()) return {};
  return (fs::path(root) / group / ("seed" + std::to_string(seed)) / ("fold" + std::to_string(fold))).string();
}

std::string result_path(const std::string& dir) { return (fs::path(dir) / "result.json").string(); }

FoldResult read_result(const std::string& path) { return json::parse(read_file(path)).get<FoldResult>(); }

void run_pool(std::size_t n_jobs, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::max<std::size_t>(1, std::min(workers, n_jobs));
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n_jobs; i = next++) job(i);
  };
  if (workers == 1) {
    loop();
    return;
  }
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(loop);
  for (auto& t : threads) t.join();
}

}  // namespace

std::string pretrain_dir(const std::string& root, std::uint64_t seed, std::size_t fold) {
  return seed_dir(root, "pretrain", seed, fold);
}

std::string job_dir(const std::string& root, Ablation config, std::uint64_t seed, std::size_t fold) {
  return seed_dir(root, "runs/" + ablation_name(config), seed, fold);
}

PretrainOutcome run_pretrain(const ExperimentConfig& cfg, const WindowCache& cache, std::uint64_t seed,
                             const FoldPlan& plan, const std::string& root) {
  cfg.validate();
  auto pre = pretrain_fold(cfg, cache, seed, plan, pretrain_dir(root, seed, plan.index));
  return {std::move(pre.losses), std::move(pre.log)};
}

FoldResult run_fold(const ExperimentConfig& cfg, const WindowCache& cache, Ablation config, std::uint64_t seed,
                    const FoldPlan& plan, const std::string& root) {
  cfg.validate();
  std::optional<Pretrained> pre;
  if (uses_pretraining(config)) pre = pretrain_fold(cfg, cache, seed, plan, pretrain_dir(root, seed, plan.index));
  const std::string dir = job_dir(root, config, seed, plan.index);
  FoldResult r = train_fold(cfg, cache, config, seed, plan, dir, pre ? &*pre : nullptr);
  if (!dir.empty()) write_file_atomic(result_path(dir), json(r).dump() + "\n");
  return r;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const WindowCache& cache,
                                const ExperimentOptions& opts) {
  cfg.validate();
  const auto subjects = subjects_of(cache);
  const auto& seeds = cfg.harness.seeds;
  std::vector<std::vector<FoldPlan>> plans;
  for (auto seed : seeds) plans.push_back(plan_folds(subjects, cfg.harness.split, seed));
  const std::size_t workers = opts.workers > 0 ? opts.workers : cfg.harness.workers;
  std::mutex mu;
  auto progress = [&](const std::string& msg) {
    if (!opts.progress) return;
    std::lock_guard lock(mu);
    opts.progress(msg);
  };
  const std::string root = opts.out_dir;
  if (!root.empty()) {
    fs::create_directories(root);
    write_file_atomic((fs::path(root) / "config.json").string(), json(cfg).dump(2) + "\n");
  }

  struct Job {
    Ablation config;
    std::size_t seed_index, fold;
    std::string dir;
    std::optional<FoldResult> result;
    std::string error;
  };
  std::vector<Job> jobs;
  for (Ablation a : cfg.harness.configs) {
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      for (std::size_t f = 0; f < plans[si].size(); ++f) {
        Job j{a, si, f, job_dir(root, a, seeds[si], f), std::nullopt, {}};
        if (!j.dir.empty() && fs::exists(result_path(j.dir))) {
          try {
            j.result = read_result(result_path(j.dir));
            if (!(j.result->plan == plans[si][f])) j.result.reset();
          } catch (const std::exception&) {
            j.result.reset();
          }
        }
        jobs.push_back(std::move(j));
      }
    }
  }

  // Per-fold contrastive pretraining, shared by every pretraining config.
  struct PreJob {
    std::size_t seed_index, fold;
    std::optional<Pretrained> encoder;
    std::string error;
  };
  std::vector<PreJob> pre_jobs;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pre_index;
  for (const auto& j : jobs) {
    if (!uses_pretraining(j.config) || j.result) continue;
    const auto key = std::make_pair(j.seed_index, j.fold);
    if (pre_index.count(key)) continue;
    pre_index[key] = pre_jobs.size();
    pre_jobs.push_back({j.seed_index, j.fold, std::nullopt, {}});
  }
  run_pool(pre_jobs.size(), workers, [&](std::size_t i) {
    auto& pj = pre_jobs[i];
    const auto seed = seeds[pj.seed_index];
    try {
      pj.encoder = pretrain_fold(cfg, cache, seed, plans[pj.seed_index][pj.fold],
                                 pretrain_dir(root, seed, pj.fold));
      progress("pretrained seed " + std::to_string(seed) + " fold " + std::to_string(pj.fold));
    } catch (const std::exception& e) {
      pj.error = e.what();
      progress("pretraining failed: seed " + std::to_string(seed) + " fold " + std::to_string(pj.fold) + ": " +
               e.what());
    }
  });

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!jobs[i].result) pending.push_back(i);
  }
  run_pool(pending.size(), workers, [&](std::size_t k) {
    auto& j = jobs[pending[k]];
    const auto seed = seeds[j.seed_index];
    const std::string name =
        ablation_name(j.config) + " seed " + std::to_string(seed) + " fold " + std::to_string(j.fold);
    try {
      const Pretrained* pre = nullptr;
      if (uses_pretraining(j.config)) {
        const auto& pj = pre_jobs[pre_index.at({j.seed_index, j.fold})];
        if (!pj.encoder) fail(ErrorCode::NumericFailure, "pretraining failed: " + pj.error);
        pre = &*pj.encoder;
      }
      FoldResult r = train_fold(cfg, cache, j.config, seed, plans[j.seed_index][j.fold], j.dir, pre);
      if (!j.dir.empty()) write_file_atomic(result_path(j.dir), json(r).dump() + "\n");
      const double acc = compute_metrics(r.predictions).accuracy;
      j.result = std::move(r);
      std::ostringstream msg;
      msg << "done " << name << " (test accuracy " << acc << ")";
      progress(msg.str());
    } catch (const std::exception& e) {
      j.error = name + ": " + e.what();
      progress("failed " + j.error);
    }
  });

  std::vector<FoldResult> results;
  std::vector<std::string> failures;
  for (auto& j : jobs) {
    if (j.result) results.push_back(std::move(*j.result));
    else failures.push_back(j.error);
  }
  ExperimentReport report = assemble_report(cfg, cache, std::move(results));
  report.failures = failures;
  report.partial = report.partial || !failures.empty();
  if (!root.empty()) write_report(root, report);
  return report;
}

ExperimentReport assemble_report(const ExperimentConfig& cfg, const WindowCache& cache,
                                 std::vector<FoldResult> folds) {
  ExperimentReport rep;
  rep.config = cfg;
  rep.channel_names = cache.channel_names;
  const auto subjects = subjects_of(cache);
  auto order_of = [&](Ablation a) {
    const auto& c = cfg.harness.configs;
    return static_cast<std::size_t>(std::find(c.begin(), c.end(), a) - c.begin());
  };
  auto seed_order = [&](std::uint64_t s) {
    const auto& v = cfg.harness.seeds;
    return static_cast<std::size_t>(std::find(v.begin(), v.end(), s) - v.begin());
  };
  std::stable_sort(folds.begin(), folds.end(), [&](const FoldResult& a, const FoldResult& b) {
    return std::make_tuple(order_of(a.config), seed_order(a.seed), a.plan.index) <
           std::make_tuple(order_of(b.config), seed_order(b.seed), b.plan.index);
  });

  for (Ablation a : cfg.harness.configs) {
    for (auto seed : cfg.harness.seeds) {
      const auto plans = plan_folds(subjects, cfg.harness.split, seed);
      SeedResult sr;
      sr.config = a;
      sr.seed = seed;
      sr.folds_total = plans.size();
      std::vector<Prediction> pooled;
      std::vector<BatchLog> logs(plans.size());
      const std::string tag = "[" + ablation_name(a) + " seed " + std::to_string(seed) + "] ";
      for (const auto& f : folds) {
        if (f.config != a || f.seed != seed) continue;
        if (f.plan.index >= plans.size() || !(f.plan == plans[f.plan.index])) {
          rep.audit.violations.push_back(tag + "fold " + std::to_string(f.plan.index) +
                                         " was trained on a plan that differs from the seeded plan");
        } else {
          logs[f.plan.index] = f.batches;
        }
        ++sr.folds_completed;
        pooled.insert(pooled.end(), f.predictions.begin(), f.predictions.end());
        merge(sr.explain_pd, f.explain_pd);
        merge(sr.explain_hc, f.explain_hc);
      }
      const auto audit = leakage_audit(plans, logs, cache);
      for (const auto& v : audit.violations) rep.audit.violations.push_back(tag + v);
      for (const auto& w : audit.warnings) {
        if (std::find(rep.audit.warnings.begin(), rep.audit.warnings.end(), w) == rep.audit.warnings.end()) {
          rep.audit.warnings.push_back(w);
        }
      }
      if (sr.folds_completed < sr.folds_total) rep.partial = true;
      if (sr.folds_completed == 0) continue;
      sr.pooled = compute_metrics(pooled);
      rep.seeds.push_back(std::move(sr));
    }
  }
  rep.audit.clean = rep.audit.violations.empty();
  rep.rows = aggregate(rep.seeds, cfg.harness.configs);
  rep.folds = std::move(folds);
  return rep;
}

// --- report files --------------------------------------------------------------

namespace {

constexpr const char* kColumns = "Model,Accuracy %,AUC,F1-Score,Precision,Recall,Seeds";
constexpr const char* kPlusMinus = "\xC2\xB1";

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) fail(ErrorCode::Parse, "report: bad number '" + s + "'");
  return v;
}

std::string cell(const Stat& s) { return fmt(s.mean) + (s.std ? kPlusMinus + fmt(*s.std) : ""); }

Stat parse_cell(const std::string& text) {
  Stat s;
  const auto at = text.find(kPlusMinus);
  if (at == std::string::npos) {
    s.mean = parse_double(text);
  } else {
    s.mean = parse_double(text.substr(0, at));
    s.std = parse_double(text.substr(at + std::string(kPlusMinus).size()));
  }
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream os;
  const bool sample = report.config.contains("harness") &&
                      report.config["harness"].value("split", std::string("subject")) == "sample";
  os << "# Ablation results, mean" << kPlusMinus << "std over seeds\n";
  if (sample) {
    os << "# split: sample-wise; windows of each subject appear in training and test, results are not "
          "subject-generalizable\n";
  }
  os << "# pooling: window-level test predictions are pooled across all folds of a (config, seed) before "
        "computing metrics; the spread is the sample standard deviation over seeds and is omitted for one seed\n";
  os << "# status: " << (report.partial ? "partial" : "complete") << "\n";
  os << "# audit: " << (report.audit.clean ? "clean" : "violations found") << "\n";
  os << "# config: " << report.config.dump() << "\n";
  os << kColumns << "\n";
  for (const auto& r : report.rows) {
    os << ablation_label(r.config) << "," << cell(r.accuracy_pct) << "," << (r.auc ? cell(*r.auc) : "NA") << ","
       << cell(r.f1) << "," << cell(r.precision) << "," << cell(r.recall) << "," << r.n_seeds << "\n";
  }
  return os.str();
}

ParsedReport parse_report_csv(const std::string& text) {
  ParsedReport out;
  std::istringstream is(text);
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string key = "# config: ";
      if (line.rfind(key, 0) == 0) out.config = json::parse(line.substr(key.size()));
      continue;
    }
    if (!header) {
      if (line != kColumns) fail(ErrorCode::Parse, "report: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 7) fail(ErrorCode::Parse, "report: expected 7 fields in '" + line + "'");
    AggregateRow r;
    bool found = false;
    for (Ablation a : kAllAblations) {
      if (ablation_label(a) == f[0]) {
        r.config = a;
        found = true;
      }
    }
    if (!found) fail(ErrorCode::Parse, "report: unknown model '" + f[0] + "'");
    r.accuracy_pct = parse_cell(f[1]);
    if (f[2] != "NA") r.auc = parse_cell(f[2]);
    r.f1 = parse_cell(f[3]);
    r.precision = parse_cell(f[4]);
    r.recall = parse_cell(f[5]);
    r.n_seeds = static_cast<std::size_t>(parse_double(f[6]));
    out.rows.push_back(r);
  }
  if (!header) fail(ErrorCode::Parse, "report: missing header row");
  return out;
}

std::string results_jsonl(const ExperimentReport& report) {
  std::string out;
  for (const auto& f : report.folds) {
    json j{{"type", "fold"},
           {"config", ablation_name(f.config)},
           {"seed", f.seed},
           {"fold", f.plan.index},
           {"test_subject", f.plan.test_subject},
           {"val_subjects", f.plan.val_subjects},
           {"best_epoch", f.best_epoch},
           {"best_val_loss", f.best_val_loss},
           {"metrics", compute_metrics(f.predictions)}};
    out += j.dump() + "\n";
  }
  for (const auto& s : report.seeds) {
    json j = s;
    j["type"] = "seed";
    out += j.dump() + "\n";
  }
  return out;
}

void write_report(const std::string& dir, const ExperimentReport& report) {
  fs::create_directories(dir);
  write_file_atomic((fs::path(dir) / "table1.csv").string(), report_csv(report));
  write_file_atomic((fs::path(dir) / "results.jsonl").string(), results_jsonl(report));
  json rows = json::array();
  for (const auto& r : report.rows) {
    auto stat = [](const Stat& s) { return json{{"mean", s.mean}, {"std", s.std ? json(*s.std) : json(nullptr)}}; };
    rows.push_back(json{{"config", ablation_name(r.config)},
                        {"model", ablation_label(r.config)},
                        {"seeds", r.n_seeds},
                        {"accuracy_pct", stat(r.accuracy_pct)},
                        {"auc", r.auc ? stat(*r.auc) : json(nullptr)},
                        {"f1", stat(r.f1)},
                        {"precision", stat(r.precision)},
                        {"recall", stat(r.recall)}});
  }
  json seeds = json::array();
  for (const auto& s : report.seeds) seeds.push_back(s);
  const json doc{{"config", report.config}, {"partial", report.partial}, {"failures", report.failures},
                 {"audit", report.audit},   {"rows", rows},                {"seeds", seeds}};
  write_file_atomic((fs::path(dir) / "report.json").string(), doc.dump(2) + "\n");

  std::vector<std::string> names = report.channel_names;
  for (const auto& s : report.seeds) {
    for (const auto& [group, sum] : {std::pair{"pd", &s.explain_pd}, std::pair{"hc", &s.explain_hc}}) {
      if (sum->count == 0) continue;
      const Matrix m = sum->mean();
      if (names.size() != m.rows) {
        names.clear();
        for (std::size_t c = 0; c < m.rows; ++c) names.push_back("ch" + std::to_string(c));
      }
      const fs::path base =
          fs::path(dir) / "explanations" / (ablation_name(s.config) + "_seed" + std::to_string(s.seed) + "_" + group);
      fs::create_directories(base.parent_path());
      write_matrix_csv(base.string() + ".csv", m, names);
      write_matrix_pgm(base.string() + ".pgm", m);
    }
  }
}

std::vector<FoldResult> load_fold_results(const std::string& dir) {
  std::vector<FoldResult> out;
  const fs::path runs = fs::path(dir) / "runs";
  if (!fs::exists(runs)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(runs)) {
    if (e.is_regular_file() && e.path().filename() == "result.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) out.push_back(read_result(p.string()));
  return out;
}

}  // namespace eeggsl
