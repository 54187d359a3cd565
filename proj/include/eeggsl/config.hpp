#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eeggsl/augment.hpp"
#include "eeggsl/model.hpp"
#include "eeggsl/signal.hpp"
#include "eeggsl/train.hpp"

namespace eeggsl {

enum class DataSource { Synth, Manifest, Cache };
enum class SplitMode { SubjectWise, SampleWise };

struct DataConfig {
  DataSource source = DataSource::Synth;
  /// Manifest file or window-cache directory, depending on `source`.
  std::string path;
  SynthConfig synth;
  std::uint64_t synth_seed = 1;
  /// Upper band edge 40 Hz so the default synthetic source (128 Hz) is valid.
  PreprocessConfig preprocess = [] {
    PreprocessConfig p;
    p.hi_hz = 40.0;
    return p;
  }();
};
void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

struct HarnessConfig {
  std::vector<Ablation> configs{Ablation::EncoderOnly, Ablation::StaticPcc, Ablation::MhgslScratch, Ablation::ClFreeze,
                                Ablation::ClFinetune};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t workers = 1;
  SplitMode split = SplitMode::SubjectWise;
  /// Gradient-weighted explanations of correctly classified test windows
  /// for models with learned graphs.
  bool explain = true;
};
void to_json(nlohmann::json& j, const HarnessConfig& c);
void from_json(const nlohmann::json& j, HarnessConfig& c);

/// One JSON document with blocks {data, augment, encoder, gsl, train,
/// harness}. Missing blocks and keys take their defaults.
struct ExperimentConfig {
  DataConfig data;
  AugmentPolicy augment;
  EncoderConfig encoder;
  GSLConfig gsl;
  TrainConfig train;
  HarnessConfig harness;
  bool tied_init = false;

  ModelConfig model(Ablation ablation) const;
  void validate() const;
};
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_experiment_config(const std::string& path);
/// Data as configured: synthesized, loaded from a manifest, or read from a
/// window cache. Manifest and synth data are preprocessed here.
WindowCache load_experiment_data(const DataConfig& cfg);

std::string split_mode_name(SplitMode m);
SplitMode parse_split_mode(const std::string& name);

}  // namespace eeggsl
