#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "eeggsl/signal.hpp"
#include "helpers.hpp"

using namespace eeggsl;
namespace fs = std::filesystem;

namespace {

Recording make_recording(std::size_t C, std::size_t n, int rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Recording r;
  r.subject_id = "S" + std::to_string(seed);
  r.label = Label::PD;
  r.sample_rate_hz = rate;
  for (std::size_t c = 0; c < C; ++c) {
    r.channel_names.push_back("Ch" + std::to_string(c));
    std::vector<float> ch(n);
    for (auto& v : ch) v = static_cast<float>(standard_normal(rng));
    r.channels.push_back(std::move(ch));
  }
  return r;
}

Recording tone(double freq, double amp, double offset, int rate, double seconds) {
  Recording r;
  r.subject_id = "tone";
  r.sample_rate_hz = rate;
  r.channel_names = {"A"};
  const auto n = static_cast<std::size_t>(seconds * rate);
  std::vector<float> ch(n);
  for (std::size_t t = 0; t < n; ++t) ch[t] = static_cast<float>(offset + amp * std::sin(2.0 * M_PI * freq * t / rate));
  r.channels.push_back(std::move(ch));
  return r;
}

// RMS over the central half, away from edge transients.
double central_rms(const std::vector<float>& x) {
  const std::size_t a = x.size() / 4, b = 3 * x.size() / 4;
  double ss = 0.0;
  for (std::size_t i = a; i < b; ++i) ss += static_cast<double>(x[i]) * x[i];
  return std::sqrt(ss / static_cast<double>(b - a));
}

double central_max_abs(const std::vector<float>& x) {
  double m = 0.0;
  for (std::size_t i = x.size() / 4; i < 3 * x.size() / 4; ++i) m = std::max(m, std::abs(static_cast<double>(x[i])));
  return m;
}

std::complex<double> sos_response(const std::vector<Biquad>& sos, double w) {
  const std::complex<double> z1 = std::polar(1.0, -w), z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const auto& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("eeggsl_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("Butterworth sections follow the bilinear Butterworth magnitude") {
  // |H(w)|^2 = 1 / (1 + (tan(w/2) / tan(wc/2))^(2N)) for the low-pass,
  // with the ratio inverted for the high-pass.
  const double fs_hz = 512.0;
  for (double fc : {0.5, 40.0, 80.0}) {
    const auto lp = butterworth_lowpass(4, fc, fs_hz);
    const auto hp = butterworth_highpass(4, fc, fs_hz);
    CHECK(lp.size() == 2);
    for (double f : {0.25, 1.0, 10.0, 60.0, 120.0, 200.0}) {
      const double w = 2.0 * M_PI * f / fs_hz;
      const double ratio = std::tan(w / 2) / std::tan(M_PI * fc / fs_hz);
      const double lp_mag = 1.0 / std::sqrt(1.0 + std::pow(ratio, 8));
      const double hp_mag = 1.0 / std::sqrt(1.0 + std::pow(1.0 / ratio, 8));
      CHECK(std::abs(sos_response(lp, w)) == doctest::Approx(lp_mag).epsilon(1e-6));
      CHECK(std::abs(sos_response(hp, w)) == doctest::Approx(hp_mag).epsilon(1e-6));
    }
  }
}

TEST_CASE("band-pass gains on pure tones") {
  const int rate = 512;
  const auto dc = bandpass(tone(0.0, 0.0, 1.0, rate, 20.0), 0.5, 80.0);
  CHECK(central_max_abs(dc.channels[0]) < 0.01);

  const auto ten = bandpass(tone(10.0, 1.0, 0.0, rate, 20.0), 0.5, 80.0);
  CHECK(ten.length() == static_cast<std::size_t>(20 * rate));
  const double gain10 = central_rms(ten.channels[0]) / (1.0 / std::sqrt(2.0));
  CHECK(gain10 > 0.95);
  CHECK(gain10 < 1.05);

  const auto hi = bandpass(tone(120.0, 1.0, 0.0, rate, 20.0), 0.5, 80.0);
  const double gain120 = central_rms(hi.channels[0]) / (1.0 / std::sqrt(2.0));
  CHECK(20.0 * std::log10(gain120) <= -20.0);
}

TEST_CASE("band-pass rejects cutoffs out of range") {
  const auto r = tone(10.0, 1.0, 0.0, 128, 4.0);
  CHECK_THROWS_AS(bandpass(r, 0.0, 30.0), Error);
  CHECK_THROWS_AS(bandpass(r, 10.0, 5.0), Error);
  CHECK_THROWS_AS(bandpass(r, 0.5, 80.0), Error);  // above Nyquist at 128 Hz
}

TEST_CASE("zero-phase filtering does not shift a tone") {
  const int rate = 512;
  const auto r = tone(10.0, 1.0, 0.0, rate, 10.0);
  const auto f = bandpass(r, 0.5, 80.0);
  // Cross-correlation peak at zero lag.
  double best = -1e9;
  int best_lag = 99;
  for (int lag = -5; lag <= 5; ++lag) {
    double acc = 0.0;
    for (std::size_t t = 1000; t < 4000; ++t) acc += r.channels[0][t] * f.channels[0][t + lag];
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  CHECK(best_lag == 0);
}

TEST_CASE("segment counts windows by floor") {
  const auto long_recording = make_recording(2, 180 * 512, 512, 1);
  const auto w = segment(long_recording, 2.0);
  CHECK(w.size() == 90);
  CHECK(w.front().length == 1024);
  CHECK(segment(make_recording(2, static_cast<std::size_t>(2.9 * 512), 512, 2), 2.0).size() == 1);
  WarningCapture capture;
  CHECK(segment(make_recording(2, static_cast<std::size_t>(1.9 * 512), 512, 3), 2.0).empty());
  CHECK(capture.contains("shorter"));
}

TEST_CASE("windows concatenate back to the recording prefix") {
  const auto r = make_recording(3, 1000, 100, 4);
  const auto w = segment(r, 1.5);
  REQUIRE(w.size() == 6);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < w.size(); ++k) {
      CHECK(w[k].window_index == k);
      for (std::size_t t = 0; t < 150; ++t) CHECK(w[k].at(c, t) == r.channels[c][k * 150 + t]);
    }
}

TEST_CASE("rereference subtracts the reference mean and drops the references") {
  auto r = make_recording(4, 64, 128, 5);
  r.channel_names = {"Fz", "Cz", "EXG7", "EXG8"};
  const auto out = rereference(r, {"EXG7", "EXG8"});
  REQUIRE(out.channel_names == std::vector<std::string>{"Fz", "Cz"});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < 64; ++t) {
      const double ref = 0.5 * (static_cast<double>(r.channels[2][t]) + r.channels[3][t]);
      CHECK(out.channels[c][t] == doctest::Approx(r.channels[c][t] - ref).epsilon(1e-6));
    }

  auto shifted = r;
  std::fill(shifted.channels[2].begin(), shifted.channels[2].end(), 3.0f);
  std::fill(shifted.channels[3].begin(), shifted.channels[3].end(), 3.0f);
  const auto s = rereference(shifted, {"EXG7", "EXG8"});
  CHECK(s.channels[0][10] == doctest::Approx(r.channels[0][10] - 3.0f));
  CHECK_THROWS_AS(rereference(r, {"EXG9"}), Error);
}

TEST_CASE("standardize gives zero mean and unit variance per channel") {
  auto w = segment(make_recording(3, 512, 256, 6), 1.0);
  REQUIRE(w.size() == 2);
  for (auto& v : w[0].samples) v = 5.0f * v + 2.0f;
  standardize(w[0]);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0, ss = 0.0;
    for (std::size_t t = 0; t < 256; ++t) m += w[0].at(c, t);
    m /= 256;
    for (std::size_t t = 0; t < 256; ++t) ss += (w[0].at(c, t) - m) * (w[0].at(c, t) - m);
    CHECK(std::abs(m) < 1e-5);
    CHECK(ss / 256 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("pcc graph") {
  auto w = segment(make_recording(4, 1024, 512, 7), 2.0).front();
  SUBCASE("white noise is weakly correlated, symmetric, unit diagonal") {
    const auto g = pcc_graph(w).adjacency;
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(g(i, i) == 1.0);
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(std::abs(g(i, j) - g(j, i)) < 1e-6);
        if (i != j) CHECK(g(i, j) < 0.15);
      }
    }
  }
  SUBCASE("copies and negated copies correlate fully") {
    for (std::size_t t = 0; t < w.length; ++t) {
      w.at(1, t) = w.at(0, t);
      w.at(2, t) = -w.at(0, t);
    }
    const auto g = pcc_graph(w).adjacency;
    CHECK(g(0, 1) == doctest::Approx(1.0));
    CHECK(g(0, 2) == doctest::Approx(1.0));
  }
  SUBCASE("constant channel gets zero edges and a warning") {
    for (std::size_t t = 0; t < w.length; ++t) w.at(3, t) = 2.0f;
    WarningCapture capture;
    const auto g = pcc_graph(w).adjacency;
    CHECK(g(3, 0) == 0.0);
    CHECK(g(1, 3) == 0.0);
    CHECK(g(3, 3) == 1.0);
    CHECK(!capture.messages().empty());
  }
}

TEST_CASE("dataset manifest round trip and validation") {
  const auto dir = scratch_dir("dataset");
  std::vector<Recording> recs{make_recording(32, 600, 512, 8), make_recording(32, 600, 512, 9)};
  recs[1].label = Label::HC;
  save_dataset(dir.string(), recs);
  const auto back = load_dataset((dir / "manifest.json").string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].num_channels() == 32);
  CHECK(back[1].label == Label::HC);
  CHECK(back[0].channels[5] == recs[0].channels[5]);

  SUBCASE("channel count mismatch names the subject") {
    auto j = nlohmann::json::parse(read_file((dir / "manifest.json").string()));
    j["subjects"][1]["channel_names"].push_back("extra");
    write_file_atomic((dir / "manifest.json").string(), j.dump());
    try {
      load_dataset((dir / "manifest.json").string());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find(recs[1].subject_id) != std::string::npos);
    }
  }
  SUBCASE("unknown label is rejected") {
    auto j = nlohmann::json::parse(read_file((dir / "manifest.json").string()));
    j["subjects"][0]["label"] = "MCI";
    write_file_atomic((dir / "manifest.json").string(), j.dump());
    CHECK_THROWS_AS(load_dataset((dir / "manifest.json").string()), Error);
  }
  SUBCASE("missing file is rejected") {
    fs::remove(dir / (recs[0].subject_id + ".tensor"));
    CHECK_THROWS_AS(load_dataset((dir / "manifest.json").string()), Error);
  }
  SUBCASE("empty manifest warns") {
    write_file_atomic((dir / "manifest.json").string(), R"({"subjects": []})");
    WarningCapture capture;
    CHECK(load_dataset((dir / "manifest.json").string()).empty());
    CHECK(!capture.messages().empty());
  }
  fs::remove_all(dir);
}

TEST_CASE("preprocessing is deterministic and the window cache round trips") {
  SynthConfig sc;
  sc.n_hc = 2;
  sc.n_pd = 2;
  sc.duration_seconds = 10.0;
  sc.reference_channels = true;
  const auto recs = synth_cohort(sc, 3);
  PreprocessConfig pc;
  pc.reference_channels = {"EXG7", "EXG8"};
  pc.hi_hz = 40.0;
  const auto a = build_window_cache(recs, pc);
  const auto b = build_window_cache(recs, pc);
  REQUIRE(a.subjects.size() == 4);
  CHECK(a.num_channels() == 8);
  CHECK(a.subjects[0].windows.size() == 5);
  CHECK(a.subjects[2].windows[3].samples == b.subjects[2].windows[3].samples);

  const auto dir = scratch_dir("cache");
  save_window_cache(dir.string(), a);
  const auto c = load_window_cache(dir.string());
  REQUIRE(c.subjects.size() == 4);
  CHECK(c.subject(a.subjects[1].subject_id).label == a.subjects[1].label);
  CHECK(c.subjects[3].windows[4].samples == a.subjects[3].windows[4].samples);
  CHECK(c.normalization == "per_window");
  CHECK(c.channel_names == a.channel_names);
  fs::remove_all(dir);
}

TEST_CASE("synthetic cohort") {
  SynthConfig sc;
  sc.duration_seconds = 30.0;
  SUBCASE("same seed is bit-identical") {
    const auto a = synth_cohort(sc, 11);
    const auto b = synth_cohort(sc, 11);
    REQUIRE(a.size() == 8);
    for (std::size_t s = 0; s < a.size(); ++s) CHECK(a[s].channels == b[s].channels);
  }
  SUBCASE("planted PD edge raises PD correlation") {
    const auto recs = synth_cohort(sc, 12);
    PreprocessConfig pc;
    pc.hi_hz = 40.0;
    double pd = 0.0, hc = 0.0;
    std::size_t npd = 0, nhc = 0;
    for (const auto& r : recs)
      for (const auto& w : preprocess(r, pc)) {
        const double v = pcc_graph(w).adjacency(1, 5);
        (r.label == Label::PD ? pd : hc) += v;
        ++(r.label == Label::PD ? npd : nhc);
      }
    CHECK(pd / npd > hc / nhc + 0.05);
  }
  SUBCASE("zero coupling leaves the classes indistinguishable") {
    sc.coupling = 0.0;
    const auto recs = synth_cohort(sc, 13);
    PreprocessConfig pc;
    pc.hi_hz = 40.0;
    double pd = 0.0, hc = 0.0;
    std::size_t npd = 0, nhc = 0;
    for (const auto& r : recs)
      for (const auto& w : preprocess(r, pc)) {
        const double v = pcc_graph(w).adjacency(1, 5);
        (r.label == Label::PD ? pd : hc) += v;
        ++(r.label == Label::PD ? npd : nhc);
      }
    CHECK(std::abs(pd / npd - hc / nhc) < 0.05);
  }
  SUBCASE("invalid edges are rejected") {
    sc.pd_edges = {{1, 8}};
    CHECK_THROWS_AS(synth_cohort(sc, 1), Error);
    sc.pd_edges = {{0, 3}};
    CHECK_THROWS_AS(synth_cohort(sc, 1), Error);
  }
}
