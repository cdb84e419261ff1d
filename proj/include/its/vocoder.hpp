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

#ifndef ITS_VOCODER_HPP
#define ITS_VOCODER_HPP

#include <string>
#include <vector>

#include "its/tensor.hpp"

namespace its {

// Deterministic mel analysis and synthesis. Everything here is a pure
// function of its inputs: Griffin-Lim starts from zero phase instead of
// random phase, so repeated calls agree bitwise.
struct AudioConfig {
  Index sample_rate = 16000;
  Index n_fft = 512;
  Index hop = 128;
  Index win = 512;  // Hann window length
  Index n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  Index griffin_lim_iters = 32;
  double log_floor = 1e-5;

  Index bins() const { return n_fft / 2 + 1; }
  void validate() const;  // throws ConfigError on any violated invariant
};

// Triangular filters on the HTK mel scale m(f) = 2595 log10(1 + f/700),
// centers uniformly spaced in mel between fmin and fmax, peak value 1.
// Shape n_mels x (n_fft/2 + 1).
Tensor mel_filterbank(const AudioConfig& cfg);

// Interior center frequencies (Hz) of the filters above, one per mel bin.
// Exposed so tests can check placement against the closed-form mel formula.
std::vector<double> mel_center_freqs(const AudioConfig& cfg);

// Hann STFT (centered, reflect padded) -> magnitude -> filterbank ->
// log(max(x, log_floor)). Returns frames x n_mels with
// frames = ceil(len / hop).
Tensor mel_from_waveform(const std::vector<double>& wav, const AudioConfig& cfg);

// Log-mel -> waveform of length frames * hop. Linear magnitudes are
// recovered through the filterbank pseudo-inverse (clamped at zero), then
// griffin_lim_iters rounds of ISTFT/STFT phase refinement from zero phase.
// The output peak is capped at 0.9 (scaled down, never up, so silent mels
// stay silent).
std::vector<double> griffin_lim(const Tensor& mel, const AudioConfig& cfg);

// 16-bit PCM mono RIFF/WAVE, samples round(x * 32767) little-endian.
// Input values must already sit in [-1, 1].
void write_wav(const std::vector<double>& wav, const std::string& path, Index sample_rate);

// Round-trip reader for the writer above (validation and tests). Returns
// samples scaled back to [-1, 1]; throws IoError on any malformed header.
std::vector<double> read_wav(const std::string& path, Index* sample_rate = nullptr);

}  // namespace its

#endif  // ITS_VOCODER_HPP
