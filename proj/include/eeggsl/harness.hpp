#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eeggsl/config.hpp"
#include "eeggsl/explain.hpp"

namespace eeggsl {

struct SubjectInfo {
  std::string id;
  Label label = Label::HC;
};
std::vector<SubjectInfo> subjects_of(const WindowCache& cache);

struct FoldPlan {
  SplitMode mode = SplitMode::SubjectWise;
  std::size_t index = 0;
  std::string test_subject;
  std::vector<std::string> val_subjects;  // one HC and one PD
  std::vector<std::string> train_subjects;
  /// Sample-wise mode: windows with window_index % folds == index are the
  /// test set and (index + 1) % folds the validation set.
  std::size_t folds = 0;
  bool operator==(const FoldPlan&) const = default;
};
void to_json(nlohmann::json& j, const FoldPlan& p);
void from_json(const nlohmann::json& j, FoldPlan& p);

/// One fold per subject; the validation pair is one HC and one PD drawn
/// uniformly from that fold's remaining subjects. Needs >= 2 of each class.
std::vector<FoldPlan> make_folds(const std::vector<SubjectInfo>& subjects, std::uint64_t seed);
/// Demonstration only: windows of every subject land in train and test.
std::vector<FoldPlan> make_sample_folds(const std::vector<SubjectInfo>& subjects, std::size_t folds = 5);
/// The plan set run_experiment uses for `seed` under `mode`.
std::vector<FoldPlan> plan_folds(const std::vector<SubjectInfo>& subjects, SplitMode mode, std::uint64_t seed);

struct FoldWindows {
  std::vector<const Window*> train, val, test;
};
/// Rejects plans naming unknown subjects or a validation set without both
/// classes.
FoldWindows fold_windows(const WindowCache& cache, const FoldPlan& plan);

struct Prediction {
  double score = 0.0;  // PD-class probability or any monotone transform
  int predicted = 0;
  int truth = 0;
};

struct Metrics {
  std::size_t n = 0;
  double accuracy = 0.0;
  /// Unweighted means over both classes; a class never predicted has
  /// precision 0.
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// Absent when the truth set has a single class.
  std::optional<double> auc;
};
void to_json(nlohmann::json& j, const Metrics& m);
void from_json(const nlohmann::json& j, Metrics& m);

Metrics compute_metrics(const std::vector<Prediction>& predictions);
/// Mann-Whitney statistic with midranks for ties.
std::optional<double> auc_midrank(const std::vector<Prediction>& predictions);

/// Running entrywise sum of explanation matrices.
struct GroupSum {
  Matrix sum;
  std::size_t count = 0;
  void add(const Matrix& m);
  /// Mean matrix; rejects an empty sum.
  Matrix mean() const;
};

/// Gradient-weighted explanations (target = predicted class) and the
/// mean-attention baseline of every correctly classified window, summed by
/// true class. Models without MH-GSL are rejected.
struct ExplainSummary {
  std::size_t windows = 0;
  std::size_t correct = 0;
  GroupSum pd, hc;
  GroupSum pd_baseline, hc_baseline;
};
ExplainSummary explain_correct(Model& model, const std::vector<const Window*>& windows, std::size_t batch_size = 64);

/// Rebuilds a model from a completed supervised checkpoint.
Model load_trained_model(const std::string& checkpoint_path);

struct FoldResult {
  Ablation config = Ablation::MhgslScratch;
  std::uint64_t seed = 0;
  FoldPlan plan;
  std::vector<Prediction> predictions;
  std::vector<std::string> window_subjects;
  std::vector<std::size_t> window_indices;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> history;
  BatchLog batches;
  /// Explanations of correctly classified test windows, by true class.
  GroupSum explain_pd, explain_hc;
};
void to_json(nlohmann::json& j, const FoldResult& r);
void from_json(const nlohmann::json& j, FoldResult& r);

struct SeedResult {
  Ablation config = Ablation::MhgslScratch;
  std::uint64_t seed = 0;
  std::size_t folds_completed = 0;
  std::size_t folds_total = 0;
  Metrics pooled;
  GroupSum explain_pd, explain_hc;
};
void to_json(nlohmann::json& j, const SeedResult& r);

struct Stat {
  double mean = 0.0;
  std::optional<double> std;  // sample standard deviation; absent for one value
  bool operator==(const Stat&) const = default;
};

struct AggregateRow {
  Ablation config = Ablation::MhgslScratch;
  std::size_t n_seeds = 0;
  Stat accuracy_pct;
  std::optional<Stat> auc;  // absent when any seed lacks an AUC
  Stat f1, precision, recall;
  bool operator==(const AggregateRow&) const = default;
};

/// Mean and sample std over seeds for each config, in `order`.
std::vector<AggregateRow> aggregate(const std::vector<SeedResult>& seeds, const std::vector<Ablation>& order);

struct AuditReport {
  bool clean = true;
  std::vector<std::string> violations;
  std::vector<std::string> warnings;
};
void to_json(nlohmann::json& j, const AuditReport& a);

/// Checks plan invariants, that no test subject appears in any training,
/// validation or pretraining batch log (`logs` pairs with `plans` by index,
/// and may be empty), and that normalization was per window.
AuditReport leakage_audit(const std::vector<FoldPlan>& plans, const std::vector<BatchLog>& logs,
                          const WindowCache& cache);

struct ExperimentReport {
  nlohmann::json config;
  std::vector<std::string> channel_names;
  std::vector<SeedResult> seeds;
  std::vector<AggregateRow> rows;
  std::vector<FoldResult> folds;
  AuditReport audit;
  bool partial = false;
  std::vector<std::string> failures;
};

/// Pools fold results per (config, seed) and aggregates.
ExperimentReport assemble_report(const ExperimentConfig& cfg, const WindowCache& cache,
                                 std::vector<FoldResult> folds);

struct ExperimentOptions {
  /// Per-fold artifacts are written here; empty keeps everything in memory.
  std::string out_dir;
  /// Overrides harness.workers when > 0.
  std::size_t workers = 0;
  std::function<void(const std::string&)> progress;
};

/// Every (config, seed, fold) job, skipping those whose result file already
/// exists. Failed jobs mark the report partial. The report is written to
/// out_dir when set.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const WindowCache& cache,
                                const ExperimentOptions& opts = {});

/// Artifact directories under an experiment root: per-fold contrastive
/// pretraining is shared by every pretraining config.
std::string pretrain_dir(const std::string& root, std::uint64_t seed, std::size_t fold);
std::string job_dir(const std::string& root, Ablation config, std::uint64_t seed, std::size_t fold);

struct PretrainOutcome {
  std::vector<double> epoch_losses;
  BatchLog batches;
};
/// Contrastive pretraining on the fold's training subjects. With a root, the
/// encoder checkpoint lands in pretrain_dir and a completed one is reused.
PretrainOutcome run_pretrain(const ExperimentConfig& cfg, const WindowCache& cache, std::uint64_t seed,
                             const FoldPlan& plan, const std::string& root = {});

/// Trains one fold: model init, per-fold pretraining for pretraining
/// configs, supervised training, test predictions and explanations. With a
/// root, artifacts and result.json land in job_dir and finished stages are
/// reused.
FoldResult run_fold(const ExperimentConfig& cfg, const WindowCache& cache, Ablation config, std::uint64_t seed,
                    const FoldPlan& plan, const std::string& root = {});

/// Table-1 shaped CSV: comment lines with the pooling rule and the resolved
/// config, then one row per config with mean±std cells.
std::string report_csv(const ExperimentReport& report);
struct ParsedReport {
  nlohmann::json config;
  std::vector<AggregateRow> rows;
};
ParsedReport parse_report_csv(const std::string& text);

/// One JSON line per fold, then one per (config, seed).
std::string results_jsonl(const ExperimentReport& report);

/// table1.csv, results.jsonl and report.json into `dir`.
void write_report(const std::string& dir, const ExperimentReport& report);
/// Fold results stored under `dir` by run_experiment.
std::vector<FoldResult> load_fold_results(const std::string& dir);

}  // namespace eeggsl
