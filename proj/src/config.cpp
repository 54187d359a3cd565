#include "eeggsl/config.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

namespace eeggsl {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& block) {
  if (!j.is_object()) fail(ErrorCode::Parse, "config: block '" + block + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) fail(ErrorCode::Parse, "config: unknown key '" + key + "' in block '" + block + "'");
  }
}

// Known keys of a block are those its serializer emits for the defaults.
template <class T>
void check_keys(const json& j, const std::string& block) {
  const json defaults = T{};
  std::set<std::string> known;
  for (const auto& [key, value] : defaults.items()) known.insert(key);
  reject_unknown(j, known, block);
}

template <class T>
T parse_block(const json& j, const std::string& block) {
  check_keys<T>(j, block);
  return j.get<T>();
}

std::string source_name(DataSource s) {
  switch (s) {
    case DataSource::Synth: return "synth";
    case DataSource::Manifest: return "manifest";
    case DataSource::Cache: return "cache";
  }
  return "synth";
}

DataSource parse_source(const std::string& s) {
  if (s == "synth") return DataSource::Synth;
  if (s == "manifest") return DataSource::Manifest;
  if (s == "cache") return DataSource::Cache;
  fail(ErrorCode::Parse, "config: unknown data source '" + s + "' (expected synth, manifest or cache)");
}

}  // namespace

std::string split_mode_name(SplitMode m) { return m == SplitMode::SubjectWise ? "subject" : "sample"; }

SplitMode parse_split_mode(const std::string& name) {
  if (name == "subject") return SplitMode::SubjectWise;
  if (name == "sample") return SplitMode::SampleWise;
  fail(ErrorCode::Parse, "config: unknown split mode '" + name + "' (expected subject or sample)");
}

void to_json(json& j, const DataConfig& c) {
  j = json{{"source", source_name(c.source)},
           {"path", c.path},
           {"synth", c.synth},
           {"synth_seed", c.synth_seed},
           {"preprocess", c.preprocess}};
}

void from_json(const json& j, DataConfig& c) {
  reject_unknown(j, {"source", "path", "synth", "synth_seed", "preprocess"}, "data");
  c = DataConfig{};
  if (j.contains("source")) c.source = parse_source(j.at("source").get<std::string>());
  c.path = j.value("path", std::string{});
  if (j.contains("synth")) c.synth = parse_block<SynthConfig>(j.at("synth"), "data.synth");
  c.synth_seed = j.value("synth_seed", c.synth_seed);
  if (j.contains("preprocess")) {
    // Keys absent from the block keep the data-block defaults.
    check_keys<PreprocessConfig>(j.at("preprocess"), "data.preprocess");
    json merged = c.preprocess;
    merged.merge_patch(j.at("preprocess"));
    c.preprocess = merged.get<PreprocessConfig>();
  }
}

void to_json(json& j, const HarnessConfig& c) {
  std::vector<std::string> names;
  for (auto a : c.configs) names.push_back(ablation_name(a));
  j = json{{"configs", names},
           {"seeds", c.seeds},
           {"workers", c.workers},
           {"split", split_mode_name(c.split)},
           {"explain", c.explain}};
}

void from_json(const json& j, HarnessConfig& c) {
  reject_unknown(j, {"configs", "seeds", "workers", "split", "explain"}, "harness");
  c = HarnessConfig{};
  if (j.contains("configs")) {
    c.configs.clear();
    for (const auto& name : j.at("configs")) c.configs.push_back(parse_ablation(name.get<std::string>()));
  }
  c.seeds = j.value("seeds", c.seeds);
  c.workers = j.value("workers", c.workers);
  if (j.contains("split")) c.split = parse_split_mode(j.at("split").get<std::string>());
  c.explain = j.value("explain", c.explain);
}

ModelConfig ExperimentConfig::model(Ablation ablation) const {
  ModelConfig m;
  m.encoder = encoder;
  m.gsl = gsl;
  m.ablation = ablation;
  m.tied_init = tied_init;
  return m;
}

void ExperimentConfig::validate() const {
  augment.validate();
  train.validate();
  gsl.validate(encoder.d_m);
  if (harness.configs.empty()) fail(ErrorCode::InvalidArgument, "config: harness.configs is empty");
  if (harness.seeds.empty()) fail(ErrorCode::InvalidArgument, "config: harness.seeds is empty");
  if (harness.workers == 0) fail(ErrorCode::InvalidArgument, "config: harness.workers must be >= 1");
  std::set<Ablation> unique(harness.configs.begin(), harness.configs.end());
  if (unique.size() != harness.configs.size()) fail(ErrorCode::InvalidArgument, "config: duplicate entry in harness.configs");
  std::set<std::uint64_t> seeds(harness.seeds.begin(), harness.seeds.end());
  if (seeds.size() != harness.seeds.size()) fail(ErrorCode::InvalidArgument, "config: duplicate entry in harness.seeds");
  if (data.source != DataSource::Synth && data.path.empty()) {
    fail(ErrorCode::InvalidArgument, "config: data.path is required for source " + source_name(data.source));
  }
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"data", c.data},         {"augment", c.augment}, {"encoder", c.encoder},
           {"gsl", c.gsl},           {"train", c.train},     {"harness", c.harness},
           {"tied_init", c.tied_init}};
}

void from_json(const json& j, ExperimentConfig& c) {
  reject_unknown(j, {"data", "augment", "encoder", "gsl", "train", "harness", "tied_init"}, "top level");
  c = ExperimentConfig{};
  if (j.contains("data")) c.data = j.at("data").get<DataConfig>();
  if (j.contains("augment")) c.augment = parse_block<AugmentPolicy>(j.at("augment"), "augment");
  if (j.contains("encoder")) c.encoder = parse_block<EncoderConfig>(j.at("encoder"), "encoder");
  if (j.contains("gsl")) c.gsl = parse_block<GSLConfig>(j.at("gsl"), "gsl");
  if (j.contains("train")) c.train = parse_block<TrainConfig>(j.at("train"), "train");
  if (j.contains("harness")) c.harness = j.at("harness").get<HarnessConfig>();
  c.tied_init = j.value("tied_init", false);
  c.validate();
}

ExperimentConfig load_experiment_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, "config " + path + ": " + e.what());
  }
  try {
    ExperimentConfig c = j.get<ExperimentConfig>();
    // Relative data paths resolve against the config file.
    if (!c.data.path.empty() && std::filesystem::path(c.data.path).is_relative()) {
      c.data.path = (std::filesystem::path(path).parent_path() / c.data.path).lexically_normal().string();
    }
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, "config " + path + ": " + e.what());
  }
}

WindowCache load_experiment_data(const DataConfig& cfg) {
  switch (cfg.source) {
    case DataSource::Synth: return build_window_cache(synth_cohort(cfg.synth, cfg.synth_seed), cfg.preprocess);
    case DataSource::Manifest: return build_window_cache(load_dataset(cfg.path), cfg.preprocess);
    case DataSource::Cache: return load_window_cache(cfg.path);
  }
  fail(ErrorCode::InvalidArgument, "config: bad data source");
}

}  // namespace eeggsl
