#include "eeggsl/eeggsl.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "eeggsl/harness.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

struct eeggsl_config {
  eeggsl::ExperimentConfig cfg;
};
struct eeggsl_data {
  eeggsl::WindowCache cache;
};
struct eeggsl_model {
  eeggsl::Model model;
};
struct eeggsl_report {
  eeggsl::ExperimentReport report;
};

namespace {

thread_local std::string last_error;

eeggsl_status status_of(eeggsl::ErrorCode code) { return static_cast<eeggsl_status>(code); }

template <class F>
eeggsl_status guarded(F&& f) {
  last_error.clear();
  try {
    f();
    return EEGGSL_OK;
  } catch (const eeggsl::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    last_error = e.what();
    return EEGGSL_PARSE;
  } catch (const fs::filesystem_error& e) {
    last_error = e.what();
    return EEGGSL_IO;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return EEGGSL_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return EEGGSL_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return EEGGSL_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) eeggsl::fail(eeggsl::ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_out(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

std::string opt(const char* s) { return s ? s : ""; }

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::vector<const eeggsl::Window*> select_windows(const eeggsl::WindowCache& cache, const char* subjects) {
  const auto wanted = split_list(opt(subjects));
  std::vector<const eeggsl::Window*> out;
  for (const auto& id : wanted) {
    bool found = false;
    for (const auto& s : cache.subjects) found |= s.subject_id == id;
    if (!found) eeggsl::fail(eeggsl::ErrorCode::InvalidArgument, "unknown subject '" + id + "'");
  }
  for (const auto& s : cache.subjects) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), s.subject_id) == wanted.end()) continue;
    for (const auto& w : s.windows) out.push_back(&w);
  }
  if (out.empty()) eeggsl::fail(eeggsl::ErrorCode::InvalidArgument, "no windows selected");
  return out;
}

const eeggsl::FoldPlan& plan_at(const std::vector<eeggsl::FoldPlan>& plans, std::size_t fold) {
  if (fold >= plans.size()) {
    eeggsl::fail(eeggsl::ErrorCode::InvalidArgument,
                 "fold " + std::to_string(fold) + " out of range (" + std::to_string(plans.size()) + " folds)");
  }
  return plans[fold];
}

}  // namespace

extern "C" {

const char* eeggsl_version(void) { return "1.0.0"; }

const char* eeggsl_status_name(eeggsl_status status) {
  switch (status) {
    case EEGGSL_OK: return "ok";
    case EEGGSL_INVALID_ARGUMENT: return "invalid argument";
    case EEGGSL_SHAPE_MISMATCH: return "shape mismatch";
    case EEGGSL_IO: return "i/o error";
    case EEGGSL_PARSE: return "parse error";
    case EEGGSL_NUMERIC_FAILURE: return "numeric failure";
    case EEGGSL_LEAKAGE: return "leakage detected";
    case EEGGSL_UNSUPPORTED: return "unsupported";
    case EEGGSL_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* eeggsl_last_error(void) { return last_error.c_str(); }

void eeggsl_string_free(char* text) { std::free(text); }

void eeggsl_set_warning_handler(eeggsl_message_fn fn, void* user) {
  if (fn) {
    eeggsl::set_warning_sink([fn, user](const std::string& msg) { fn(msg.c_str(), user); });
  } else {
    eeggsl::set_warning_sink([](const std::string& msg) { std::fprintf(stderr, "warning: %s\n", msg.c_str()); });
  }
}

// --- configuration ----------------------------------------------------------------

eeggsl_status eeggsl_config_default(eeggsl_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new eeggsl_config{};
  });
}

eeggsl_status eeggsl_config_load(const char* path, eeggsl_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new eeggsl_config{eeggsl::load_experiment_config(path)};
  });
}

eeggsl_status eeggsl_config_parse(const char* json_text, eeggsl_config** out) {
  return guarded([&] {
    require(json_text, "json_text");
    require(out, "out");
    *out = new eeggsl_config{json::parse(json_text).get<eeggsl::ExperimentConfig>()};
  });
}

eeggsl_status eeggsl_config_to_json(const eeggsl_config* cfg, char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    set_out(out, json(cfg->cfg).dump(2));
  });
}

eeggsl_status eeggsl_config_set_seed(eeggsl_config* cfg, uint64_t seed) {
  return guarded([&] {
    require(cfg, "cfg");
    cfg->cfg.harness.seeds = {seed};
  });
}

eeggsl_status eeggsl_config_set_workers(eeggsl_config* cfg, size_t workers) {
  return guarded([&] {
    require(cfg, "cfg");
    if (workers == 0) eeggsl::fail(eeggsl::ErrorCode::InvalidArgument, "workers must be >= 1");
    cfg->cfg.harness.workers = workers;
  });
}

eeggsl_status eeggsl_config_set_ablations(eeggsl_config* cfg, const char* names) {
  return guarded([&] {
    require(cfg, "cfg");
    require(names, "names");
    std::vector<eeggsl::Ablation> list;
    for (const auto& n : split_list(names)) list.push_back(eeggsl::parse_ablation(n));
    auto next = cfg->cfg;
    next.harness.configs = list;
    next.validate();
    cfg->cfg = next;
  });
}

eeggsl_status eeggsl_config_set_data(eeggsl_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    if (!fs::exists(path)) eeggsl::fail(eeggsl::ErrorCode::Io, std::string("data path ") + path + " does not exist");
    cfg->cfg.data.source = fs::is_directory(path) ? eeggsl::DataSource::Cache : eeggsl::DataSource::Manifest;
    cfg->cfg.data.path = path;
  });
}

void eeggsl_config_free(eeggsl_config* cfg) { delete cfg; }

// --- data --------------------------------------------------------------------------

eeggsl_status eeggsl_synth(const eeggsl_config* cfg, uint64_t seed, const char* out_dir) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_dir, "out_dir");
    eeggsl::save_dataset(out_dir, eeggsl::synth_cohort(cfg->cfg.data.synth, seed));
  });
}

eeggsl_status eeggsl_preprocess(const eeggsl_config* cfg, const char* manifest_path, const char* cache_dir) {
  return guarded([&] {
    require(cfg, "cfg");
    require(manifest_path, "manifest_path");
    require(cache_dir, "cache_dir");
    eeggsl::save_window_cache(cache_dir,
                              eeggsl::build_window_cache(eeggsl::load_dataset(manifest_path), cfg->cfg.data.preprocess));
  });
}

eeggsl_status eeggsl_data_load(const eeggsl_config* cfg, eeggsl_data** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = new eeggsl_data{eeggsl::load_experiment_data(cfg->cfg.data)};
  });
}

eeggsl_status eeggsl_data_summary(const eeggsl_data* data, char** out) {
  return guarded([&] {
    require(data, "data");
    require(out, "out");
    const auto& c = data->cache;
    json subjects = json::array();
    std::size_t windows = 0;
    for (const auto& s : c.subjects) {
      subjects.push_back(json{{"id", s.subject_id}, {"label", eeggsl::label_name(s.label)}, {"windows", s.windows.size()}});
      windows += s.windows.size();
    }
    set_out(out, json{{"subjects", subjects},
                      {"channels", c.channel_names},
                      {"sample_rate_hz", c.sample_rate_hz},
                      {"window_seconds", c.window_seconds},
                      {"normalization", c.normalization},
                      {"windows", windows}}
                     .dump(2));
  });
}

void eeggsl_data_free(eeggsl_data* data) { delete data; }

// --- experiments -------------------------------------------------------------------

eeggsl_status eeggsl_fold_plans(const eeggsl_config* cfg, const eeggsl_data* data, uint64_t seed, char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(data, "data");
    require(out, "out");
    set_out(out, json(eeggsl::plan_folds(eeggsl::subjects_of(data->cache), cfg->cfg.harness.split, seed)).dump(2));
  });
}

eeggsl_status eeggsl_pretrain_fold(const eeggsl_config* cfg, const eeggsl_data* data, uint64_t seed, size_t fold,
                                   const char* out_dir, char** summary) {
  return guarded([&] {
    require(cfg, "cfg");
    require(data, "data");
    const auto plans = eeggsl::plan_folds(eeggsl::subjects_of(data->cache), cfg->cfg.harness.split, seed);
    const auto& plan = plan_at(plans, fold);
    const auto res = eeggsl::run_pretrain(cfg->cfg, data->cache, seed, plan, opt(out_dir));
    json j{{"seed", seed}, {"fold", fold}, {"plan", plan}, {"epoch_losses", res.epoch_losses}, {"batches", res.batches}};
    if (out_dir) j["checkpoint"] = (fs::path(eeggsl::pretrain_dir(out_dir, seed, fold)) / "encoder.ckpt").string();
    set_out(summary, j.dump(2));
  });
}

eeggsl_status eeggsl_train_fold(const eeggsl_config* cfg, const eeggsl_data* data, const char* ablation,
                                uint64_t seed, size_t fold, const char* out_dir, char** summary) {
  return guarded([&] {
    require(cfg, "cfg");
    require(data, "data");
    require(ablation, "ablation");
    const auto a = eeggsl::parse_ablation(ablation);
    const auto plans = eeggsl::plan_folds(eeggsl::subjects_of(data->cache), cfg->cfg.harness.split, seed);
    const auto r = eeggsl::run_fold(cfg->cfg, data->cache, a, seed, plan_at(plans, fold), opt(out_dir));
    json j{{"config", ablation},
           {"seed", seed},
           {"fold", fold},
           {"plan", r.plan},
           {"best_epoch", r.best_epoch},
           {"best_val_loss", r.best_val_loss},
           {"history", r.history},
           {"metrics", eeggsl::compute_metrics(r.predictions)}};
    if (out_dir) j["directory"] = eeggsl::job_dir(out_dir, a, seed, fold);
    set_out(summary, j.dump(2));
  });
}

eeggsl_status eeggsl_run_experiment(const eeggsl_config* cfg, const eeggsl_data* data, const char* out_dir,
                                    eeggsl_message_fn progress, void* user, eeggsl_report** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(data, "data");
    require(out, "out");
    eeggsl::ExperimentOptions opts;
    opts.out_dir = opt(out_dir);
    if (progress) opts.progress = [progress, user](const std::string& m) { progress(m.c_str(), user); };
    *out = new eeggsl_report{eeggsl::run_experiment(cfg->cfg, data->cache, opts)};
  });
}

eeggsl_status eeggsl_report_from_dir(const eeggsl_config* cfg, const eeggsl_data* data, const char* out_dir,
                                     eeggsl_report** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(data, "data");
    require(out_dir, "out_dir");
    require(out, "out");
    auto folds = eeggsl::load_fold_results(out_dir);
    if (folds.empty()) eeggsl::fail(eeggsl::ErrorCode::Io, std::string("no fold results under ") + out_dir);
    auto rep = eeggsl::assemble_report(cfg->cfg, data->cache, std::move(folds));
    eeggsl::write_report(out_dir, rep);
    *out = new eeggsl_report{std::move(rep)};
  });
}

eeggsl_status eeggsl_report_csv(const eeggsl_report* report, char** out) {
  return guarded([&] {
    require(report, "report");
    require(out, "out");
    set_out(out, eeggsl::report_csv(report->report));
  });
}

eeggsl_status eeggsl_report_audit(const eeggsl_report* report, int* clean, char** out) {
  return guarded([&] {
    require(report, "report");
    if (clean) *clean = report->report.audit.clean ? 1 : 0;
    set_out(out, json(report->report.audit).dump(2));
  });
}

int eeggsl_report_partial(const eeggsl_report* report) { return report && report->report.partial ? 1 : 0; }

void eeggsl_report_free(eeggsl_report* report) { delete report; }

// --- trained models ----------------------------------------------------------------

eeggsl_status eeggsl_model_load(const char* checkpoint_path, eeggsl_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    *out = new eeggsl_model{eeggsl::load_trained_model(checkpoint_path)};
  });
}

eeggsl_status eeggsl_model_evaluate(eeggsl_model* model, const eeggsl_data* data, const char* subjects,
                                    char** metrics) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    require(metrics, "metrics");
    const auto windows = select_windows(data->cache, subjects);
    const auto preds = eeggsl::predict(model->model, windows);
    std::vector<eeggsl::Prediction> list;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      list.push_back({preds.pd_probability[i], preds.predicted[i], static_cast<int>(windows[i]->label)});
    }
    json j = eeggsl::compute_metrics(list);
    j["config"] = eeggsl::ablation_name(model->model.config().ablation);
    set_out(metrics, j.dump(2));
  });
}

eeggsl_status eeggsl_model_explain(eeggsl_model* model, const eeggsl_data* data, const char* subjects,
                                   const char* group, const char* out_dir, char** summary) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    require(out_dir, "out_dir");
    const std::string g = group ? group : "both";
    if (g != "pd" && g != "hc" && g != "both") {
      eeggsl::fail(eeggsl::ErrorCode::InvalidArgument, "group must be pd, hc or both (got '" + g + "')");
    }
    const auto windows = select_windows(data->cache, subjects);
    const auto ex = eeggsl::explain_correct(model->model, windows);
    fs::create_directories(out_dir);
    json written = json::array();
    auto emit = [&](const std::string& name, const eeggsl::GroupSum& sum, const eeggsl::GroupSum& baseline) {
      if (sum.count == 0) {
        eeggsl::warn("explain: no correctly classified " + name + " windows");
        return;
      }
      for (const auto& [suffix, s] : {std::pair{"", &sum}, std::pair{"_baseline", &baseline}}) {
        const auto base = (fs::path(out_dir) / (name + suffix)).string();
        const auto m = s->mean();
        eeggsl::write_matrix_csv(base + ".csv", m, data->cache.channel_names);
        eeggsl::write_matrix_pgm(base + ".pgm", m);
        written.push_back(base + ".csv");
      }
    };
    if (g != "hc") emit("pd", ex.pd, ex.pd_baseline);
    if (g != "pd") emit("hc", ex.hc, ex.hc_baseline);
    set_out(summary, json{{"windows", ex.windows},
                          {"correct", ex.correct},
                          {"explained_pd", ex.pd.count},
                          {"explained_hc", ex.hc.count},
                          {"files", written}}
                         .dump(2));
  });
}

void eeggsl_model_free(eeggsl_model* model) { delete model; }

}  // extern "C"
