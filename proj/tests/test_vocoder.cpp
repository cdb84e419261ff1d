// Copyright 2026 The ITS-Desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "its/common.hpp"
#include "its/rng.hpp"
#include "its/vocoder.hpp"

using namespace its;

namespace {

constexpr double kTau = 2.0 * 3.14159265358979323846;

std::vector<double> sine_wave(double hz, double amp, Index samples, Index rate) {
  std::vector<double> w(static_cast<std::size_t>(samples));
  for (Index i = 0; i < samples; ++i)
    w[static_cast<std::size_t>(i)] = amp * std::sin(kTau * hz * static_cast<double>(i) / static_cast<double>(rate));
  return w;
}

// Independent spectral-peak oracle: an O(N^2) DFT over a mid-signal chunk,
// deliberately not sharing any code with the STFT under test.
double dft_peak_hz(const std::vector<double>& wav, Index start, Index n, Index rate) {
  REQUIRE(static_cast<Index>(wav.size()) >= start + n);
  Index best = 0;
  double best_mag = -1.0;
  for (Index k = 0; k < n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double ph = -kTau * static_cast<double>(k) * static_cast<double>(i) / static_cast<double>(n);
      re += wav[static_cast<std::size_t>(start + i)] * std::cos(ph);
      im += wav[static_cast<std::size_t>(start + i)] * std::sin(ph);
    }
    const double mag = re * re + im * im;
    if (mag > best_mag) {
      best_mag = mag;
      best = k;
    }
  }
  return static_cast<double>(best) * static_cast<double>(rate) / static_cast<double>(n);
}

std::string temp_path(const std::string& name) {
  return std::string("/tmp/its_vocoder_test_") + name;
}

}  // namespace

TEST_CASE("audio config validation rejects each broken invariant") {
  AudioConfig good;
  CHECK_NOTHROW(good.validate());

  AudioConfig c = good;
  c.hop = c.win + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.win = c.n_fft + 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.fmax = static_cast<double>(c.sample_rate);  // above Nyquist
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.n_mels = c.n_fft / 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.n_fft = 500;  // not a power of two
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.log_floor = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("mel filterbank rows are unimodal with a single peak and increasing centers") {
  AudioConfig cfg;
  Tensor fb = mel_filterbank(cfg);
  REQUIRE(fb.rows() == cfg.n_mels);
  REQUIRE(fb.cols() == cfg.bins());

  for (Index j = 0; j < fb.rows(); ++j) {
    Index arg = 0;
    double mx = fb(j, 0);
    for (Index k = 1; k < fb.cols(); ++k)
      if (fb(j, k) > mx) {
        mx = fb(j, k);
        arg = k;
      }
    REQUIRE(mx > 0.0);
    REQUIRE(mx <= 1.0);
    // Non-decreasing up to the peak, non-increasing after, single maximum.
    for (Index k = 1; k <= arg; ++k) CHECK(fb(j, k) >= fb(j, k - 1));
    for (Index k = arg + 1; k < fb.cols(); ++k) CHECK(fb(j, k) <= fb(j, k - 1));
    Index hits = 0;
    for (Index k = 0; k < fb.cols(); ++k)
      if (fb(j, k) == mx) ++hits;
    CHECK(hits == 1);
    for (Index k = 0; k < fb.cols(); ++k) CHECK(fb(j, k) >= 0.0);
  }

  std::vector<double> centers = mel_center_freqs(cfg);
  REQUIRE(centers.size() == static_cast<std::size_t>(cfg.n_mels));
  for (std::size_t j = 1; j < centers.size(); ++j) CHECK(centers[j] > centers[j - 1]);
}

TEST_CASE("two-filter bank puts centers at the closed-form mel thirds") {
  AudioConfig cfg;
  cfg.n_mels = 2;
  // Scalar mel-formula oracle, written out independently of the
  // implementation: centers split [0, m(8000)] into mel-equal thirds.
  const double m_hi = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  const double c1 = 700.0 * (std::pow(10.0, (m_hi / 3.0) / 2595.0) - 1.0);
  const double c2 = 700.0 * (std::pow(10.0, (2.0 * m_hi / 3.0) / 2595.0) - 1.0);

  std::vector<double> centers = mel_center_freqs(cfg);
  REQUIRE(centers.size() == 2);
  CHECK(std::abs(centers[0] - c1) <= 1e-9 * c1);
  CHECK(std::abs(centers[1] - c2) <= 1e-9 * c2);

  // The sampled triangles peak at the FFT bin nearest each center.
  Tensor fb = mel_filterbank(cfg);
  const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.n_fft);
  for (Index j = 0; j < 2; ++j) {
    Index arg = 0;
    for (Index k = 1; k < fb.cols(); ++k)
      if (fb(j, k) > fb(j, arg)) arg = k;
    CHECK(std::abs(static_cast<double>(arg) * bin_hz - centers[static_cast<std::size_t>(j)]) <= bin_hz);
  }
}

TEST_CASE("mel_from_waveform: frame count, silence floor, determinism, input checks") {
  AudioConfig cfg;
  // frames = ceil(len / hop) for a non-multiple and an exact multiple
  std::vector<double> w1(1000, 0.0), w2(1024, 0.0);
  Tensor m1 = mel_from_waveform(w1, cfg);
  Tensor m2 = mel_from_waveform(w2, cfg);
  CHECK(m1.rows() == 8);
  CHECK(m2.rows() == 8);
  CHECK(m1.cols() == cfg.n_mels);

  // Silence has zero energy in every filter, so every cell is exactly the
  // log of the floor.
  const double floor_log = std::log(cfg.log_floor);
  for (Index i = 0; i < m1.numel(); ++i) REQUIRE(m1[i] == floor_log);

  std::vector<double> s = sine_wave(440.0, 0.8, 4096, cfg.sample_rate);
  Tensor a = mel_from_waveform(s, cfg);
  Tensor b = mel_from_waveform(s, cfg);
  for (Index i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);

  CHECK_THROWS_AS(mel_from_waveform({}, cfg), ConfigError);
  CHECK_THROWS_AS(mel_from_waveform({0.0, 2.0}, cfg), ConfigError);
}

TEST_CASE("a 440 Hz sine concentrates every interior frame on the expected mel bin") {
  AudioConfig cfg;
  std::vector<double> s = sine_wave(440.0, 0.8, 4096, cfg.sample_rate);
  Tensor mel = mel_from_waveform(s, cfg);

  // Expected bin from the separately verified center frequencies: the
  // filter whose center lies closest to 440 Hz.
  std::vector<double> centers = mel_center_freqs(cfg);
  Index expect = 0;
  for (std::size_t j = 1; j < centers.size(); ++j)
    if (std::abs(centers[j] - 440.0) < std::abs(centers[static_cast<std::size_t>(expect)] - 440.0))
      expect = static_cast<Index>(j);

  for (Index t = 2; t < mel.rows() - 2; ++t) {
    Index arg = 0;
    for (Index j = 1; j < mel.cols(); ++j)
      if (mel(t, j) > mel(t, arg)) arg = j;
    CHECK(arg == expect);
  }
}

TEST_CASE("griffin_lim reconstructs a sine's spectral peak and stays deterministic") {
  AudioConfig cfg;
  std::vector<double> s = sine_wave(440.0, 0.8, 24 * cfg.hop, cfg.sample_rate);
  Tensor mel = mel_from_waveform(s, cfg);

  std::vector<double> rec1 = griffin_lim(mel, cfg);
  std::vector<double> rec2 = griffin_lim(mel, cfg);
  REQUIRE(rec1.size() == static_cast<std::size_t>(mel.rows() * cfg.hop));
  REQUIRE(rec1.size() == rec2.size());
  for (std::size_t i = 0; i < rec1.size(); ++i) REQUIRE(rec1[i] == rec2[i]);

  for (double v : rec1) CHECK(std::abs(v) <= 0.9);

  // FFT-peak oracle over a middle chunk: within one DFT bin of 440 Hz.
  const Index n = 2048;
  const double peak_hz = dft_peak_hz(rec1, 512, n, cfg.sample_rate);
  const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(n);
  CHECK(std::abs(peak_hz - 440.0) <= bin_hz + 1e-9);
}

TEST_CASE("griffin_lim of an all-floor mel is near-silent and non-finite mels are rejected") {
  AudioConfig cfg;
  Tensor mel(24, cfg.n_mels);
  for (Index i = 0; i < mel.numel(); ++i) mel[i] = std::log(cfg.log_floor);
  std::vector<double> wav = griffin_lim(mel, cfg);
  double rms = 0.0;
  for (double v : wav) rms += v * v;
  rms = std::sqrt(rms / static_cast<double>(wav.size()));
  CHECK(rms < 1e-3);

  mel(3, 5) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(griffin_lim(mel, cfg), NumericError);
  mel(3, 5) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(griffin_lim(mel, cfg), NumericError);
}

TEST_CASE("analysis-synthesis round trip correlates strongly on a harmonic waveform") {
  AudioConfig cfg;
  // Harmonic stack, shaped like the voiced synthesis templates.
  std::vector<double> w(static_cast<std::size_t>(32 * cfg.hop));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(cfg.sample_rate);
    w[i] = 0.5 * std::sin(kTau * 220.0 * t) + 0.3 * std::sin(kTau * 660.0 * t);
  }
  Tensor mel = mel_from_waveform(w, cfg);
  std::vector<double> rec = griffin_lim(mel, cfg);
  Tensor mel2 = mel_from_waveform(rec, cfg);
  REQUIRE(same_shape(mel, mel2));

  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  const double n = static_cast<double>(mel.numel());
  for (Index i = 0; i < mel.numel(); ++i) {
    sa += mel[i];
    sb += mel2[i];
    saa += mel[i] * mel[i];
    sbb += mel2[i] * mel2[i];
    sab += mel[i] * mel2[i];
  }
  const double r = (sab - sa * sb / n) / std::sqrt((saa - sa * sa / n) * (sbb - sb * sb / n));
  CHECK(r >= 0.9);
}

TEST_CASE("write_wav emits byte-exact headers and round trips within quantization") {
  AudioConfig cfg;
  const std::string path = temp_path("roundtrip.wav");

  // 1 second of silence: 44-byte header + 32000 data bytes.
  std::vector<double> silence(16000, 0.0);
  write_wav(silence, path, cfg.sample_rate);
  std::string bytes = read_file(path);
  REQUIRE(bytes.size() == 44 + 32000);
  CHECK(bytes.compare(0, 4, "RIFF") == 0);
  CHECK(bytes.compare(8, 4, "WAVE") == 0);
  CHECK(bytes.compare(12, 4, "fmt ") == 0);
  // fmt payload 16, PCM tag 1, mono, 16000 Hz, 16 bits, data size 32000.
  const unsigned char* u = reinterpret_cast<const unsigned char*>(bytes.data());
  CHECK(u[16] == 16);
  CHECK(u[17] == 0);
  CHECK(u[20] == 1);
  CHECK(u[21] == 0);
  CHECK(u[22] == 1);
  CHECK(u[23] == 0);
  CHECK(u[24] == 0x80);
  CHECK(u[25] == 0x3e);
  CHECK(u[26] == 0);
  CHECK(u[27] == 0);
  CHECK(u[34] == 16);
  CHECK(bytes.compare(36, 4, "data") == 0);
  CHECK(u[40] == 0x00);
  CHECK(u[41] == 0x7d);
  CHECK(u[42] == 0);
  CHECK(u[43] == 0);

  Rng rng(77);
  std::vector<double> wav(2000);
  for (double& v : wav) v = rng.uniform(-1.0, 1.0);
  write_wav(wav, path, cfg.sample_rate);
  Index rate = 0;
  std::vector<double> back = read_wav(path, &rate);
  REQUIRE(back.size() == wav.size());
  CHECK(rate == cfg.sample_rate);
  for (std::size_t i = 0; i < wav.size(); ++i)
    CHECK(std::abs(back[i] - wav[i]) <= 1.0 / 32767.0);

  CHECK_THROWS_AS(write_wav({1.5}, path, cfg.sample_rate), ConfigError);
  CHECK_THROWS_AS(write_wav(silence, "/nonexistent_dir/x.wav", cfg.sample_rate), IoError);
  CHECK_THROWS_AS(read_wav("/tmp/its_vocoder_test_missing.wav"), IoError);
  std::remove(path.c_str());
}
