#include "eeggsl/signal.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace eeggsl {

namespace fs = std::filesystem;
using nlohmann::json;

const char* label_name(Label label) { return label == Label::PD ? "PD" : "HC"; }

Label parse_label(const std::string& text) {
  std::string up(text);
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "HC") return Label::HC;
  if (up == "PD") return Label::PD;
  fail(ErrorCode::Parse, "unknown label '" + text + "' (expected HC or PD)");
}

void Recording::validate() const {
  if (channel_names.size() != channels.size()) {
    fail(ErrorCode::InvalidArgument, "subject " + subject_id + ": " + std::to_string(channels.size()) +
                                         " channels but " + std::to_string(channel_names.size()) +
                                         " channel names");
  }
  if (sample_rate_hz <= 0) {
    fail(ErrorCode::InvalidArgument, "subject " + subject_id + ": sample rate must be positive");
  }
  for (const auto& ch : channels) {
    if (ch.size() != length()) {
      fail(ErrorCode::InvalidArgument, "subject " + subject_id + ": channels differ in length");
    }
  }
  std::set<std::string> seen(channel_names.begin(), channel_names.end());
  if (seen.size() != channel_names.size()) {
    fail(ErrorCode::InvalidArgument, "subject " + subject_id + ": duplicate channel names");
  }
}

// --- dataset I/O -----------------------------------------------------------------

std::vector<Recording> load_dataset(const std::string& manifest_path) {
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, "manifest " + manifest_path + ": " + e.what());
  }
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<Recording> out;
  if (!manifest.contains("subjects") || manifest["subjects"].empty()) {
    warn("manifest " + manifest_path + " lists no subjects");
    return out;
  }
  for (const auto& entry : manifest["subjects"]) {
    Recording rec;
    rec.subject_id = entry.value("id", "");
    const std::string who = "subject " + (rec.subject_id.empty() ? std::string("<unnamed>") : rec.subject_id);
    try {
      rec.label = parse_label(entry.at("label").get<std::string>());
      rec.sample_rate_hz = entry.at("sample_rate_hz").get<int>();
      rec.channel_names = entry.at("channel_names").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      fail(ErrorCode::Parse, who + ": " + e.what());
    } catch (const Error& e) {
      fail(e.code(), who + ": " + e.what());
    }
    fs::path file = entry.value("file", "");
    if (file.is_relative()) file = base / file;
    if (!fs::exists(file)) fail(ErrorCode::Io, who + ": missing file " + file.string());
    Tensor raw = load_tensor(file.string());
    if (raw.rank() != 2) {
      fail(ErrorCode::ShapeMismatch, who + ": expected (channels, samples), got " + shape_str(raw.shape()));
    }
    if (raw.dim(0) != rec.channel_names.size()) {
      fail(ErrorCode::ShapeMismatch, who + ": file has " + std::to_string(raw.dim(0)) +
                                         " channels but manifest declares " +
                                         std::to_string(rec.channel_names.size()));
    }
    const std::size_t T = raw.dim(1);
    rec.channels.resize(raw.dim(0));
    for (std::size_t c = 0; c < raw.dim(0); ++c)
      rec.channels[c].assign(raw.data().begin() + c * T, raw.data().begin() + (c + 1) * T);
    rec.validate();
    out.push_back(std::move(rec));
  }
  return out;
}

void save_dataset(const std::string& dir, const std::vector<Recording>& recordings) {
  fs::create_directories(dir);
  json subjects = json::array();
  for (const auto& rec : recordings) {
    rec.validate();
    const std::size_t C = rec.num_channels(), T = rec.length();
    std::vector<float> flat;
    flat.reserve(C * T);
    for (const auto& ch : rec.channels) flat.insert(flat.end(), ch.begin(), ch.end());
    const std::string file = rec.subject_id + ".tensor";
    save_tensor((fs::path(dir) / file).string(), Tensor({C, T}, std::move(flat)), rec.subject_id);
    subjects.push_back({{"id", rec.subject_id},
                        {"label", label_name(rec.label)},
                        {"file", file},
                        {"sample_rate_hz", rec.sample_rate_hz},
                        {"channel_names", rec.channel_names}});
  }
  json manifest{{"subjects", subjects}};
  write_file_atomic((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

// --- re-referencing ----------------------------------------------------------------

Recording rereference(const Recording& rec, const std::vector<std::string>& ref_names) {
  std::vector<std::size_t> ref_idx;
  for (const auto& name : ref_names) {
    auto it = std::find(rec.channel_names.begin(), rec.channel_names.end(), name);
    if (it == rec.channel_names.end()) {
      fail(ErrorCode::InvalidArgument, "subject " + rec.subject_id + ": unknown reference channel '" + name + "'");
    }
    ref_idx.push_back(static_cast<std::size_t>(it - rec.channel_names.begin()));
  }
  if (ref_idx.empty()) return rec;
  const std::size_t T = rec.length();
  std::vector<double> ref(T, 0.0);
  for (auto r : ref_idx)
    for (std::size_t t = 0; t < T; ++t) ref[t] += rec.channels[r][t];
  for (auto& v : ref) v /= static_cast<double>(ref_idx.size());

  Recording out;
  out.subject_id = rec.subject_id;
  out.label = rec.label;
  out.sample_rate_hz = rec.sample_rate_hz;
  for (std::size_t c = 0; c < rec.num_channels(); ++c) {
    if (std::find(ref_idx.begin(), ref_idx.end(), c) != ref_idx.end()) continue;
    std::vector<float> ch(T);
    for (std::size_t t = 0; t < T; ++t) ch[t] = static_cast<float>(rec.channels[c][t] - ref[t]);
    out.channels.push_back(std::move(ch));
    out.channel_names.push_back(rec.channel_names[c]);
  }
  return out;
}

// --- filtering -----------------------------------------------------------------------

namespace {

std::vector<Biquad> butterworth(int order, double cutoff_hz, double fs, bool highpass) {
  if (order < 2 || order % 2 != 0) {
    fail(ErrorCode::InvalidArgument, "butterworth: order must be even and >= 2, got " + std::to_string(order));
  }
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < fs / 2.0)) {
    fail(ErrorCode::InvalidArgument, "butterworth: cutoff " + std::to_string(cutoff_hz) +
                                         " Hz outside (0, " + std::to_string(fs / 2.0) + ")");
  }
  const double K = std::tan(M_PI * cutoff_hz / fs);
  std::vector<Biquad> sections;
  for (int k = 0; k < order / 2; ++k) {
    const double theta = M_PI * (2.0 * k + 1.0) / (2.0 * order);
    const double q = 1.0 / (2.0 * std::cos(theta));
    const double norm = 1.0 / (1.0 + K / q + K * K);
    Biquad s{};
    if (highpass) {
      s.b0 = norm;
      s.b1 = -2.0 * norm;
      s.b2 = norm;
    } else {
      s.b0 = K * K * norm;
      s.b1 = 2.0 * s.b0;
      s.b2 = s.b0;
    }
    s.a1 = 2.0 * (K * K - 1.0) * norm;
    s.a2 = (1.0 - K / q + K * K) * norm;
    sections.push_back(s);
  }
  return sections;
}

// Filters in place; `x0` scales the steady-state (unit step) initial state.
void run_cascade(const std::vector<Biquad>& sections, std::vector<double>& x, bool steady_state) {
  double level = steady_state && !x.empty() ? x.front() : 0.0;
  for (const auto& s : sections) {
    double z1 = 0.0, z2 = 0.0;
    const double y_ss = level * (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    if (steady_state) {
      z2 = s.b2 * level - s.a2 * y_ss;
      z1 = s.b1 * level - s.a1 * y_ss + z2;
    }
    for (auto& v : x) {
      const double in = v;
      const double y = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * y + z2;
      z2 = s.b2 * in - s.a2 * y;
      v = y;
    }
    level = y_ss;
  }
}

}  // namespace

std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double sample_rate_hz) {
  return butterworth(order, cutoff_hz, sample_rate_hz, false);
}

std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double sample_rate_hz) {
  return butterworth(order, cutoff_hz, sample_rate_hz, true);
}

std::vector<double> sos_filter(const std::vector<Biquad>& sections, const std::vector<double>& x) {
  std::vector<double> y(x);
  run_cascade(sections, y, false);
  return y;
}

std::vector<double> sos_filtfilt(const std::vector<Biquad>& sections, const std::vector<double>& x,
                                 std::size_t pad_len) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  pad_len = std::min(pad_len, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad_len);
  for (std::size_t i = pad_len; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad_len; ++i) ext.push_back(2.0 * x.back() - x[n - 1 - i]);

  run_cascade(sections, ext, true);
  std::reverse(ext.begin(), ext.end());
  run_cascade(sections, ext, true);
  std::reverse(ext.begin(), ext.end());
  return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(pad_len),
                             ext.begin() + static_cast<std::ptrdiff_t>(pad_len + n));
}

Recording bandpass(const Recording& rec, double lo_hz, double hi_hz, int order) {
  const double fs = rec.sample_rate_hz;
  if (!(lo_hz > 0.0) || !(lo_hz < hi_hz) || !(hi_hz < fs / 2.0)) {
    fail(ErrorCode::InvalidArgument, "subject " + rec.subject_id + ": band-pass " + std::to_string(lo_hz) + "-" +
                                         std::to_string(hi_hz) + " Hz invalid at " + std::to_string(rec.sample_rate_hz) +
                                         " Hz (need 0 < lo < hi < rate/2)");
  }
  std::vector<Biquad> sections = butterworth_highpass(order, lo_hz, fs);
  const auto lp = butterworth_lowpass(order, hi_hz, fs);
  sections.insert(sections.end(), lp.begin(), lp.end());
  // Reflect-pad by 3x the overall filter order.
  const std::size_t pad = 3 * static_cast<std::size_t>(2 * order);

  Recording out = rec;
  for (auto& ch : out.channels) {
    std::vector<double> x(ch.begin(), ch.end());
    auto y = sos_filtfilt(sections, x, pad);
    for (std::size_t t = 0; t < ch.size(); ++t) ch[t] = static_cast<float>(y[t]);
  }
  return out;
}

// --- windows --------------------------------------------------------------------------

std::vector<Window> segment(const Recording& rec, double window_seconds) {
  if (!(window_seconds > 0.0)) fail(ErrorCode::InvalidArgument, "segment: window length must be positive");
  const auto L = static_cast<std::size_t>(std::llround(window_seconds * rec.sample_rate_hz));
  if (L == 0) fail(ErrorCode::InvalidArgument, "segment: window shorter than one sample");
  const std::size_t n = rec.length() / L;
  std::vector<Window> out;
  if (n == 0) {
    warn("subject " + rec.subject_id + ": recording of " + std::to_string(rec.length()) +
         " samples is shorter than one window (" + std::to_string(L) + ")");
    return out;
  }
  const std::size_t C = rec.num_channels();
  for (std::size_t w = 0; w < n; ++w) {
    Window win;
    win.subject_id = rec.subject_id;
    win.label = rec.label;
    win.window_index = w;
    win.channels = C;
    win.length = L;
    win.samples.resize(C * L);
    for (std::size_t c = 0; c < C; ++c)
      std::copy_n(rec.channels[c].begin() + static_cast<std::ptrdiff_t>(w * L), L, win.samples.begin() + c * L);
    out.push_back(std::move(win));
  }
  return out;
}

void standardize(Window& w) {
  for (std::size_t c = 0; c < w.channels; ++c) {
    float* x = w.samples.data() + c * w.length;
    double s = 0.0;
    for (std::size_t t = 0; t < w.length; ++t) s += x[t];
    const double m = s / static_cast<double>(w.length);
    double ss = 0.0;
    for (std::size_t t = 0; t < w.length; ++t) ss += (x[t] - m) * (x[t] - m);
    const double sd = std::sqrt(ss / static_cast<double>(w.length));
    const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
    for (std::size_t t = 0; t < w.length; ++t) x[t] = static_cast<float>((x[t] - m) * inv);
  }
}

StaticGraph pcc_graph(const Window& w) {
  const std::size_t C = w.channels, L = w.length;
  std::vector<double> centred(C * L);
  std::vector<double> norm(C);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t t = 0; t < L; ++t) s += w.at(c, t);
    const double m = s / static_cast<double>(L);
    double ss = 0.0;
    for (std::size_t t = 0; t < L; ++t) {
      centred[c * L + t] = w.at(c, t) - m;
      ss += centred[c * L + t] * centred[c * L + t];
    }
    norm[c] = std::sqrt(ss);
    if (norm[c] == 0.0) {
      warn("subject " + w.subject_id + " window " + std::to_string(w.window_index) + ": channel " +
           std::to_string(c) + " has zero variance; its correlations are set to 0");
    }
  }
  StaticGraph g{Matrix(C, C, 0.0f)};
  for (std::size_t i = 0; i < C; ++i) {
    g.adjacency(i, i) = 1.0f;
    for (std::size_t j = i + 1; j < C; ++j) {
      float r = 0.0f;
      if (norm[i] > 0.0 && norm[j] > 0.0) {
        double dot = 0.0;
        for (std::size_t t = 0; t < L; ++t) dot += centred[i * L + t] * centred[j * L + t];
        r = static_cast<float>(std::min(1.0, std::abs(dot / (norm[i] * norm[j]))));
      }
      g.adjacency(i, j) = r;
      g.adjacency(j, i) = r;
    }
  }
  return g;
}

void to_json(json& j, const PreprocessConfig& c) {
  j = json{{"reference_channels", c.reference_channels},
           {"filter", c.filter},
           {"lo_hz", c.lo_hz},
           {"hi_hz", c.hi_hz},
           {"filter_order", c.filter_order},
           {"window_seconds", c.window_seconds},
           {"standardize", c.standardize}};
}

void from_json(const json& j, PreprocessConfig& c) {
  PreprocessConfig d;
  c.reference_channels = j.value("reference_channels", d.reference_channels);
  c.filter = j.value("filter", d.filter);
  c.lo_hz = j.value("lo_hz", d.lo_hz);
  c.hi_hz = j.value("hi_hz", d.hi_hz);
  c.filter_order = j.value("filter_order", d.filter_order);
  c.window_seconds = j.value("window_seconds", d.window_seconds);
  c.standardize = j.value("standardize", d.standardize);
}

std::vector<Window> preprocess(const Recording& rec, const PreprocessConfig& cfg) {
  rec.validate();
  Recording r = cfg.reference_channels.empty() ? rec : rereference(rec, cfg.reference_channels);
  if (cfg.filter) r = bandpass(r, cfg.lo_hz, cfg.hi_hz, cfg.filter_order);
  auto windows = segment(r, cfg.window_seconds);
  if (cfg.standardize)
    for (auto& w : windows) standardize(w);
  return windows;
}

// --- window cache ----------------------------------------------------------------------

const SubjectWindows& WindowCache::subject(const std::string& id) const {
  for (const auto& s : subjects)
    if (s.subject_id == id) return s;
  fail(ErrorCode::InvalidArgument, "unknown subject '" + id + "'");
}

WindowCache build_window_cache(const std::vector<Recording>& recordings, const PreprocessConfig& cfg) {
  WindowCache cache;
  cache.window_seconds = cfg.window_seconds;
  cache.normalization = cfg.standardize ? "per_window" : "none";
  for (const auto& rec : recordings) {
    auto windows = preprocess(rec, cfg);
    Recording shape_probe = cfg.reference_channels.empty() ? rec : rereference(rec, cfg.reference_channels);
    if (cache.channel_names.empty()) {
      cache.channel_names = shape_probe.channel_names;
      cache.sample_rate_hz = rec.sample_rate_hz;
    } else if (cache.channel_names != shape_probe.channel_names || cache.sample_rate_hz != rec.sample_rate_hz) {
      fail(ErrorCode::InvalidArgument, "subject " + rec.subject_id + ": channel layout or sample rate differs from "
                                           "the first subject");
    }
    cache.subjects.push_back({rec.subject_id, rec.label, std::move(windows)});
  }
  return cache;
}

void save_window_cache(const std::string& dir, const WindowCache& cache) {
  fs::create_directories(dir);
  json subjects = json::array();
  for (const auto& s : cache.subjects) {
    const std::size_t n = s.windows.size();
    const std::size_t C = n ? s.windows.front().channels : cache.num_channels();
    const std::size_t L = n ? s.windows.front().length : 0;
    std::vector<float> flat;
    flat.reserve(n * C * L);
    for (const auto& w : s.windows) flat.insert(flat.end(), w.samples.begin(), w.samples.end());
    const std::string file = s.subject_id + ".windows";
    save_tensor((fs::path(dir) / file).string(), Tensor({n, C, L}, std::move(flat)), s.subject_id);
    subjects.push_back({{"id", s.subject_id}, {"label", label_name(s.label)}, {"file", file}, {"n_windows", n}});
  }
  json labels{{"subjects", subjects},
              {"channel_names", cache.channel_names},
              {"sample_rate_hz", cache.sample_rate_hz},
              {"window_seconds", cache.window_seconds},
              {"normalization", cache.normalization}};
  write_file_atomic((fs::path(dir) / "labels.json").string(), labels.dump(2) + "\n");
}

WindowCache load_window_cache(const std::string& dir) {
  const fs::path base(dir);
  json labels;
  try {
    labels = json::parse(read_file((base / "labels.json").string()));
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, "window cache " + dir + ": " + e.what());
  }
  WindowCache cache;
  cache.channel_names = labels.value("channel_names", std::vector<std::string>{});
  cache.sample_rate_hz = labels.value("sample_rate_hz", 0);
  cache.window_seconds = labels.value("window_seconds", 0.0);
  cache.normalization = labels.value("normalization", std::string("unknown"));
  for (const auto& entry : labels.at("subjects")) {
    SubjectWindows s;
    s.subject_id = entry.at("id").get<std::string>();
    s.label = parse_label(entry.at("label").get<std::string>());
    Tensor t = load_tensor((base / entry.at("file").get<std::string>()).string());
    if (t.rank() != 3) {
      fail(ErrorCode::ShapeMismatch, "subject " + s.subject_id + ": window tensor has shape " + shape_str(t.shape()));
    }
    const std::size_t n = t.dim(0), C = t.dim(1), L = t.dim(2);
    if (n > 0 && C != cache.num_channels()) {
      fail(ErrorCode::ShapeMismatch, "subject " + s.subject_id + ": " + std::to_string(C) +
                                         " channels, labels.json declares " + std::to_string(cache.num_channels()));
    }
    for (std::size_t w = 0; w < n; ++w) {
      Window win;
      win.subject_id = s.subject_id;
      win.label = s.label;
      win.window_index = w;
      win.channels = C;
      win.length = L;
      win.samples.assign(t.data().begin() + w * C * L, t.data().begin() + (w + 1) * C * L);
      s.windows.push_back(std::move(win));
    }
    cache.subjects.push_back(std::move(s));
  }
  return cache;
}

// --- synthetic cohorts --------------------------------------------------------------------

void to_json(json& j, const SynthConfig& c) {
  j = json{{"n_hc", c.n_hc},
           {"n_pd", c.n_pd},
           {"channels", c.channels},
           {"duration_seconds", c.duration_seconds},
           {"sample_rate_hz", c.sample_rate_hz},
           {"pd_edges", c.pd_edges},
           {"hc_edges", c.hc_edges},
           {"coupling", c.coupling},
           {"noise_level", c.noise_level},
           {"lag_samples", c.lag_samples},
           {"band_lo_hz", c.band_lo_hz},
           {"band_hi_hz", c.band_hi_hz},
           {"background_cutoff_hz", c.background_cutoff_hz},
           {"reference_channels", c.reference_channels}};
}

void from_json(const json& j, SynthConfig& c) {
  SynthConfig d;
  c.n_hc = j.value("n_hc", d.n_hc);
  c.n_pd = j.value("n_pd", d.n_pd);
  c.channels = j.value("channels", d.channels);
  c.duration_seconds = j.value("duration_seconds", d.duration_seconds);
  c.sample_rate_hz = j.value("sample_rate_hz", d.sample_rate_hz);
  c.pd_edges = j.value("pd_edges", d.pd_edges);
  c.hc_edges = j.value("hc_edges", d.hc_edges);
  c.coupling = j.value("coupling", d.coupling);
  c.noise_level = j.value("noise_level", d.noise_level);
  c.lag_samples = j.value("lag_samples", d.lag_samples);
  c.band_lo_hz = j.value("band_lo_hz", d.band_lo_hz);
  c.band_hi_hz = j.value("band_hi_hz", d.band_hi_hz);
  c.background_cutoff_hz = j.value("background_cutoff_hz", d.background_cutoff_hz);
  c.reference_channels = j.value("reference_channels", d.reference_channels);
}

namespace {

std::vector<double> unit_variance(std::vector<double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  const double m = s / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(x.size()));
  for (auto& v : x) v = sd > 0.0 ? (v - m) / sd : 0.0;
  return x;
}

std::vector<double> white(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> x(n);
  for (auto& v : x) v = standard_normal(rng);
  return x;
}

}  // namespace

std::vector<Recording> synth_cohort(const SynthConfig& cfg, std::uint64_t seed) {
  const std::size_t C = cfg.channels;
  if (C == 0) fail(ErrorCode::InvalidArgument, "synth: need at least one channel");
  for (const auto* edges : {&cfg.pd_edges, &cfg.hc_edges}) {
    for (const auto& [i, j] : *edges) {
      if (i >= C || j >= C) {
        fail(ErrorCode::InvalidArgument, "synth: planted edge (" + std::to_string(i) + "," + std::to_string(j) +
                                             ") references a channel >= " + std::to_string(C));
      }
      if (i == j) fail(ErrorCode::InvalidArgument, "synth: planted edge is a self-loop on channel " + std::to_string(i));
    }
  }
  for (const auto& e : cfg.pd_edges) {
    if (std::find(cfg.hc_edges.begin(), cfg.hc_edges.end(), e) != cfg.hc_edges.end()) {
      fail(ErrorCode::InvalidArgument, "synth: edge (" + std::to_string(e.first) + "," + std::to_string(e.second) +
                                           ") planted in both classes; class edge sets must be disjoint");
    }
  }
  const auto T = static_cast<std::size_t>(std::llround(cfg.duration_seconds * cfg.sample_rate_hz));
  if (T == 0) fail(ErrorCode::InvalidArgument, "synth: duration yields no samples");
  const double fs = cfg.sample_rate_hz;
  const auto background = butterworth_lowpass(4, cfg.background_cutoff_hz, fs);
  std::vector<Biquad> rhythm_band = butterworth_highpass(4, cfg.band_lo_hz, fs);
  const auto lp = butterworth_lowpass(4, cfg.band_hi_hz, fs);
  rhythm_band.insert(rhythm_band.end(), lp.begin(), lp.end());
  // Discarded lead-in so the causal filters start in steady state.
  const std::size_t burn = static_cast<std::size_t>(fs * 2.0);

  std::vector<Recording> cohort;
  const std::size_t total = cfg.n_hc + cfg.n_pd;
  for (std::size_t s = 0; s < total; ++s) {
    const bool pd = s >= cfg.n_hc;
    std::mt19937_64 rng(derive_seed(seed, s));
    Recording rec;
    rec.label = pd ? Label::PD : Label::HC;
    rec.subject_id = std::string(pd ? "PD" : "HC") + std::to_string(pd ? s - cfg.n_hc : s);
    rec.sample_rate_hz = cfg.sample_rate_hz;

    auto filtered = [&](const std::vector<Biquad>& sections) {
      auto x = sos_filter(sections, white(rng, T + burn));
      x.erase(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(burn));
      return unit_variance(std::move(x));
    };

    std::vector<std::vector<double>> chans(C);
    for (std::size_t c = 0; c < C; ++c) {
      chans[c] = filtered(background);
      for (auto& v : chans[c]) v *= cfg.noise_level;
    }
    const auto& edges = pd ? cfg.pd_edges : cfg.hc_edges;
    std::vector<std::vector<double>> rhythm(C);
    for (const auto& [i, j] : edges) {
      if (rhythm[i].empty()) {
        rhythm[i] = filtered(rhythm_band);
        for (std::size_t t = 0; t < T; ++t) chans[i][t] += cfg.coupling * rhythm[i][t];
      }
      for (std::size_t t = cfg.lag_samples; t < T; ++t) chans[j][t] += cfg.coupling * rhythm[i][t - cfg.lag_samples];
    }
    // The common-mode signal is added after the per-channel gain so that
    // re-referencing to EXG7/EXG8 removes it exactly.
    std::vector<double> common(T, 0.0);
    if (cfg.reference_channels) common = filtered(background);
    for (std::size_t c = 0; c < C; ++c) {
      const double gain = 0.5 + 1.5 * uniform01(rng);
      std::vector<float> ch(T);
      for (std::size_t t = 0; t < T; ++t) ch[t] = static_cast<float>(gain * chans[c][t] + common[t]);
      rec.channels.push_back(std::move(ch));
      rec.channel_names.push_back("Ch" + std::to_string(c));
    }
    if (cfg.reference_channels) {
      for (const char* name : {"EXG7", "EXG8"}) {
        std::vector<float> ch(T);
        for (std::size_t t = 0; t < T; ++t) ch[t] = static_cast<float>(common[t]);
        rec.channels.push_back(std::move(ch));
        rec.channel_names.emplace_back(name);
      }
    }
    cohort.push_back(std::move(rec));
  }
  return cohort;
}

}  // namespace eeggsl
