// eeg-gsl: command-line front end over the C API.

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eeggsl/eeggsl.h"

namespace fs = std::filesystem;

namespace {

struct Failure {
  eeggsl_status status;
};

void check(eeggsl_status s, const std::string& what) {
  if (s == EEGGSL_OK) return;
  std::fprintf(stderr, "eeg-gsl: %s failed (%s): %s\n", what.c_str(), eeggsl_status_name(s), eeggsl_last_error());
  throw Failure{s};
}

struct StringDeleter {
  void operator()(char* p) const { eeggsl_string_free(p); }
};
using OwnedString = std::unique_ptr<char, StringDeleter>;

struct ConfigDeleter {
  void operator()(eeggsl_config* p) const { eeggsl_config_free(p); }
};
struct DataDeleter {
  void operator()(eeggsl_data* p) const { eeggsl_data_free(p); }
};
struct ModelDeleter {
  void operator()(eeggsl_model* p) const { eeggsl_model_free(p); }
};
struct ReportDeleter {
  void operator()(eeggsl_report* p) const { eeggsl_report_free(p); }
};
using Config = std::unique_ptr<eeggsl_config, ConfigDeleter>;
using Data = std::unique_ptr<eeggsl_data, DataDeleter>;
using ModelHandle = std::unique_ptr<eeggsl_model, ModelDeleter>;
using Report = std::unique_ptr<eeggsl_report, ReportDeleter>;

void print(const OwnedString& s) { std::printf("%s\n", s.get()); }

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t workers = 0;
  bool quiet = false;
};

// Explicit --config, else <out>/config.json when `prefer_out` and present,
// else defaults. --seed and --workers override the loaded values.
Config load_config(const Globals& g, bool prefer_out = false) {
  eeggsl_config* raw = nullptr;
  std::string path = g.config;
  if (path.empty() && prefer_out && !g.out.empty() && fs::exists(fs::path(g.out) / "config.json")) {
    path = (fs::path(g.out) / "config.json").string();
  }
  if (path.empty()) check(eeggsl_config_default(&raw), "default config");
  else check(eeggsl_config_load(path.c_str(), &raw), "loading config " + path);
  Config cfg(raw);
  if (g.seed) check(eeggsl_config_set_seed(cfg.get(), *g.seed), "--seed");
  if (g.workers > 0) check(eeggsl_config_set_workers(cfg.get(), g.workers), "--workers");
  return cfg;
}

Data load_data(eeggsl_config* cfg, const std::string& data_path) {
  if (!data_path.empty()) check(eeggsl_config_set_data(cfg, data_path.c_str()), "--data");
  eeggsl_data* raw = nullptr;
  check(eeggsl_data_load(cfg, &raw), "loading data");
  return Data(raw);
}

void require_out(const Globals& g, const std::string& cmd) {
  if (g.out.empty()) {
    std::fprintf(stderr, "eeg-gsl %s: --out is required\n", cmd.c_str());
    throw Failure{EEGGSL_INVALID_ARGUMENT};
  }
}

nlohmann::json config_json(const eeggsl_config* cfg) {
  char* raw = nullptr;
  check(eeggsl_config_to_json(cfg, &raw), "config");
  return nlohmann::json::parse(OwnedString(raw).get());
}

void on_progress(const char* message, void* user) {
  if (!*static_cast<bool*>(user)) std::fprintf(stderr, "%s\n", message);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG graph-structure learning: data, training, explanation and evaluation harness"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed (replaces the config's seed list; the synth seed for synth)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--workers", g.workers, "Worker threads for the experiment matrix")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");

  auto* synth = app.add_subcommand("synth", "Write a synthetic cohort (raw tensors + manifest.json)");
  auto* preprocess = app.add_subcommand("preprocess", "Filter, segment and normalize a manifest into a window cache");
  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pretraining of one LOSO fold");
  auto* train = app.add_subcommand("train", "Run the experiment matrix, or a single fold with --fold");
  auto* evaluate = app.add_subcommand("evaluate", "Metrics of a trained checkpoint on data");
  auto* explain = app.add_subcommand("explain", "Group explanations of a trained checkpoint");
  auto* audit = app.add_subcommand("audit", "Leakage audit of an experiment directory");
  auto* report = app.add_subcommand("report", "Rebuild the report of an experiment directory");

  std::string data_path, manifest, checkpoint, ablations, subjects, group = "both";
  std::optional<std::size_t> fold;

  preprocess->add_option("--data", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  for (auto* sub : {pretrain, train, evaluate, explain, audit, report}) {
    sub->add_option("--data", data_path, "Window cache directory or dataset manifest (default: config data block)");
  }
  pretrain->add_option("--fold", fold, "Fold index")->required();
  train->add_option("--fold", fold, "Run only this fold index for each ablation and seed");
  train->add_option("--ablation", ablations, "Comma-separated ablations (default: config list)");
  for (auto* sub : {evaluate, explain}) {
    sub->add_option("--checkpoint", checkpoint, "Trained model checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--subjects", subjects, "Comma-separated subject ids (default: all)");
  }
  explain->add_option("--group", group, "pd, hc or both")->check(CLI::IsMember({"pd", "hc", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      require_out(g, "synth");
      Config cfg = load_config(g);
      // The synth seed comes from --seed, else the config's data.synth_seed.
      const std::uint64_t seed = g.seed ? *g.seed : config_json(cfg.get())["data"]["synth_seed"].get<std::uint64_t>();
      check(eeggsl_synth(cfg.get(), seed, g.out.c_str()), "synth");
      std::printf("%s\n", (fs::path(g.out) / "manifest.json").string().c_str());
    } else if (*preprocess) {
      require_out(g, "preprocess");
      Config cfg = load_config(g);
      check(eeggsl_preprocess(cfg.get(), manifest.c_str(), g.out.c_str()), "preprocess");
      Config cache_cfg = load_config(g);
      Data data = load_data(cache_cfg.get(), g.out);
      char* raw = nullptr;
      check(eeggsl_data_summary(data.get(), &raw), "summary");
      print(OwnedString(raw));
    } else if (*pretrain) {
      Config cfg = load_config(g);
      Data data = load_data(cfg.get(), data_path);
      char* raw = nullptr;
      const std::uint64_t seed = config_json(cfg.get())["harness"]["seeds"].at(0).get<std::uint64_t>();
      check(eeggsl_pretrain_fold(cfg.get(), data.get(), seed, *fold, g.out.empty() ? nullptr : g.out.c_str(), &raw),
            "pretrain");
      print(OwnedString(raw));
    } else if (*train) {
      Config cfg = load_config(g);
      if (!ablations.empty()) check(eeggsl_config_set_ablations(cfg.get(), ablations.c_str()), "--ablation");
      Data data = load_data(cfg.get(), data_path);
      const char* out = g.out.empty() ? nullptr : g.out.c_str();
      if (fold) {
        const auto j = config_json(cfg.get());
        for (const auto& name : j["harness"]["configs"]) {
          for (const auto& seed : j["harness"]["seeds"]) {
            char* summary = nullptr;
            const std::string n = name.get<std::string>();
            check(eeggsl_train_fold(cfg.get(), data.get(), n.c_str(), seed.get<std::uint64_t>(), *fold, out, &summary),
                  "train " + n);
            print(OwnedString(summary));
          }
        }
      } else {
        eeggsl_report* raw = nullptr;
        check(eeggsl_run_experiment(cfg.get(), data.get(), out, on_progress, &g.quiet, &raw), "experiment");
        Report rep(raw);
        char* csv = nullptr;
        check(eeggsl_report_csv(rep.get(), &csv), "report");
        std::printf("%s", OwnedString(csv).get());
        int clean = 1;
        check(eeggsl_report_audit(rep.get(), &clean, nullptr), "audit");
        if (!clean) {
          std::fprintf(stderr, "eeg-gsl: leakage audit found violations; results are invalid\n");
          return EEGGSL_LEAKAGE;
        }
        if (eeggsl_report_partial(rep.get())) {
          std::fprintf(stderr, "eeg-gsl: experiment is partial; rerun to resume the failed folds\n");
          return EEGGSL_NUMERIC_FAILURE;
        }
      }
    } else if (*evaluate || *explain) {
      Config cfg = load_config(g);
      Data data = load_data(cfg.get(), data_path);
      eeggsl_model* raw_model = nullptr;
      check(eeggsl_model_load(checkpoint.c_str(), &raw_model), "loading checkpoint");
      ModelHandle model(raw_model);
      char* raw = nullptr;
      const char* subj = subjects.empty() ? nullptr : subjects.c_str();
      if (*evaluate) {
        check(eeggsl_model_evaluate(model.get(), data.get(), subj, &raw), "evaluate");
      } else {
        require_out(g, "explain");
        check(eeggsl_model_explain(model.get(), data.get(), subj, group.c_str(), g.out.c_str(), &raw), "explain");
      }
      print(OwnedString(raw));
    } else if (*audit || *report) {
      require_out(g, *audit ? "audit" : "report");
      Config cfg = load_config(g, true);
      Data data = load_data(cfg.get(), data_path);
      eeggsl_report* raw = nullptr;
      check(eeggsl_report_from_dir(cfg.get(), data.get(), g.out.c_str(), &raw), "report");
      Report rep(raw);
      char* text = nullptr;
      int clean = 1;
      if (*audit) {
        check(eeggsl_report_audit(rep.get(), &clean, &text), "audit");
        print(OwnedString(text));
        return clean ? 0 : EEGGSL_LEAKAGE;
      }
      check(eeggsl_report_csv(rep.get(), &text), "report");
      std::printf("%s", OwnedString(text).get());
    }
  } catch (const Failure& f) {
    return static_cast<int>(f.status);
  }
  return 0;
}
