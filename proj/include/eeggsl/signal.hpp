#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "eeggsl/common.hpp"
#include "eeggsl/tensor.hpp"

namespace eeggsl {

enum class Label : int { HC = 0, PD = 1 };

const char* label_name(Label label);
Label parse_label(const std::string& text);  // "HC" / "PD", case-insensitive

struct Recording {
  std::string subject_id;
  Label label = Label::HC;
  int sample_rate_hz = 0;
  std::vector<std::string> channel_names;
  std::vector<std::vector<float>> channels;

  std::size_t num_channels() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
  /// Throws InvalidArgument (naming the subject) when channel lengths or names disagree.
  void validate() const;
};

/// Fixed-length segment of one recording, channels x length, row-major.
struct Window {
  std::string subject_id;
  Label label = Label::HC;
  std::size_t window_index = 0;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<float> samples;

  float at(std::size_t c, std::size_t t) const { return samples[c * length + t]; }
  float& at(std::size_t c, std::size_t t) { return samples[c * length + t]; }
};

/// Symmetric, unit-diagonal adjacency with entries in [0, 1].
struct StaticGraph {
  Matrix adjacency;
};

/// Reads the JSON manifest and every referenced raw tensor file (shape
/// (channels, samples)). Relative file paths resolve against the manifest's
/// directory.
std::vector<Recording> load_dataset(const std::string& manifest_path);
/// Writes one raw tensor per recording plus manifest.json into `dir`.
void save_dataset(const std::string& dir, const std::vector<Recording>& recordings);

/// Subtracts the samplewise mean of `ref_names` from every other channel and
/// drops the reference channels.
Recording rereference(const Recording& rec, const std::vector<std::string>& ref_names);

/// Second-order section in transposed direct form II, a0 normalized to 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

/// Butterworth low/high-pass of even order as cascaded biquads (bilinear
/// transform with frequency prewarping).
std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double sample_rate_hz);
std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double sample_rate_hz);

/// Single causal pass through the cascade, zero initial state.
std::vector<double> sos_filter(const std::vector<Biquad>& sections, const std::vector<double>& x);

/// Zero-phase filtering: odd-reflection padding, steady-state initial
/// conditions, forward and reverse passes, trim. Output length equals input.
std::vector<double> sos_filtfilt(const std::vector<Biquad>& sections, const std::vector<double>& x,
                                 std::size_t pad_len);

/// Zero-phase band-pass: order-`order` Butterworth high-pass at lo_hz cascaded
/// with an order-`order` low-pass at hi_hz, run forward and backward.
Recording bandpass(const Recording& rec, double lo_hz, double hi_hz, int order = 4);

/// Non-overlapping windows of round(window_seconds * rate) samples; the tail
/// remainder is discarded.
std::vector<Window> segment(const Recording& rec, double window_seconds);

/// Each channel to zero mean and unit variance within the window. Constant
/// channels are centred and left unscaled.
void standardize(Window& w);

/// |Pearson correlation| between channels, unit diagonal.
StaticGraph pcc_graph(const Window& w);

struct PreprocessConfig {
  std::vector<std::string> reference_channels;  // empty: skip re-referencing
  bool filter = true;
  double lo_hz = 0.5;
  double hi_hz = 80.0;
  int filter_order = 4;
  double window_seconds = 2.0;
  bool standardize = true;
};
void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);

/// rereference -> bandpass -> segment -> standardize.
std::vector<Window> preprocess(const Recording& rec, const PreprocessConfig& cfg);

/// Windows grouped per subject, in subject order.
struct SubjectWindows {
  std::string subject_id;
  Label label = Label::HC;
  std::vector<Window> windows;
};

struct WindowCache {
  std::vector<SubjectWindows> subjects;
  std::vector<std::string> channel_names;
  int sample_rate_hz = 0;
  double window_seconds = 0.0;
  std::string normalization = "per_window";

  std::size_t num_channels() const { return channel_names.size(); }
  const SubjectWindows& subject(const std::string& id) const;
};

/// One tensor (n_windows, C, L) per subject plus labels.json.
void save_window_cache(const std::string& dir, const WindowCache& cache);
WindowCache load_window_cache(const std::string& dir);
WindowCache build_window_cache(const std::vector<Recording>& recordings, const PreprocessConfig& cfg);

struct SynthConfig {
  std::size_t n_hc = 4;
  std::size_t n_pd = 4;
  std::size_t channels = 8;
  double duration_seconds = 60.0;
  int sample_rate_hz = 128;
  std::vector<std::pair<std::size_t, std::size_t>> pd_edges{{1, 5}, {1, 6}, {2, 7}};
  std::vector<std::pair<std::size_t, std::size_t>> hc_edges{{0, 3}};
  double coupling = 0.8;
  /// Standard deviation of the low-pass background on every channel.
  double noise_level = 0.5;
  std::size_t lag_samples = 2;
  double band_lo_hz = 8.0;
  double band_hi_hz = 12.0;
  double background_cutoff_hz = 30.0;
  /// Appends EXG7/EXG8 reference channels carrying a common-mode signal that
  /// is also added to every scalp channel.
  bool reference_channels = false;
};
void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Filtered background noise per channel plus planted coupling: the source
/// channel i of every planted edge carries a band-limited rhythm scaled by
/// `coupling`, and target j receives a copy lagged by `lag_samples` and
/// scaled by `coupling`. HC subjects use hc_edges, PD subjects pd_edges.
std::vector<Recording> synth_cohort(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace eeggsl
