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

#include "its/vocoder.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>

#include "its/common.hpp"
#include "its/reduce.hpp"

namespace its {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMelScale = 2595.0;
constexpr double kMelBreak = 700.0;

double hz_to_mel(double f) { return kMelScale * std::log10(1.0 + f / kMelBreak); }
double mel_to_hz(double m) { return kMelBreak * (std::pow(10.0, m / kMelScale) - 1.0); }

// Periodic Hann window of length n.
std::vector<double> hann_window(Index n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  const double step = 2.0 * kPi / static_cast<double>(n);
  for (Index i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(step * i);
  return w;
}

// Reflect an out-of-range sample index back into [0, n) without repeating
// the edge sample (the usual "reflect" padding mode). n == 1 pins to 0.
Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// One centered analysis frame: window samples around t*hop, placed in the
// middle of an n_fft buffer when win < n_fft.
void fill_frame(const std::vector<double>& wav, const AudioConfig& cfg, Index t,
                const std::vector<double>& window, std::vector<double>* frame) {
  std::fill(frame->begin(), frame->end(), 0.0);
  const Index n = static_cast<Index>(wav.size());
  const Index start = t * cfg.hop - cfg.win / 2;
  const Index off = (cfg.n_fft - cfg.win) / 2;
  for (Index i = 0; i < cfg.win; ++i) {
    const Index src = reflect_index(start + i, n);
    (*frame)[static_cast<std::size_t>(off + i)] =
        wav[static_cast<std::size_t>(src)] * window[static_cast<std::size_t>(i)];
  }
}

Index frame_count(std::size_t samples, const AudioConfig& cfg) {
  return static_cast<Index>((static_cast<Index>(samples) + cfg.hop - 1) / cfg.hop);
}

using Spec = std::vector<std::vector<std::complex<double>>>;  // frames x bins

// Complex half-spectrum STFT of a waveform (framing as in mel_from_waveform).
Spec stft(const std::vector<double>& wav, const AudioConfig& cfg, Eigen::FFT<double>* fft) {
  const Index frames = frame_count(wav.size(), cfg);
  const std::vector<double> window = hann_window(cfg.win);
  std::vector<double> frame(static_cast<std::size_t>(cfg.n_fft));
  Spec spec(static_cast<std::size_t>(frames));
  for (Index t = 0; t < frames; ++t) {
    fill_frame(wav, cfg, t, window, &frame);
    fft->fwd(spec[static_cast<std::size_t>(t)], frame);
  }
  return spec;
}

// Overlap-add inverse of stft() for a signal of frames*hop samples. The
// synthesis window equals the analysis window; the accumulated squared
// window normalizes each sample, with near-zero weights dropped to silence.
std::vector<double> istft(const Spec& spec, const AudioConfig& cfg, Eigen::FFT<double>* fft) {
  const Index frames = static_cast<Index>(spec.size());
  const Index len = frames * cfg.hop;
  const std::vector<double> window = hann_window(cfg.win);
  const Index off = (cfg.n_fft - cfg.win) / 2;
  // Padded axis: real sample s lives at s + win/2, so frame t spans
  // [t*hop, t*hop + win) without negative indices.
  std::vector<double> acc(static_cast<std::size_t>(len + cfg.win), 0.0);
  std::vector<double> wsum(acc.size(), 0.0);
  std::vector<double> time;
  for (Index t = 0; t < frames; ++t) {
    fft->inv(time, spec[static_cast<std::size_t>(t)], static_cast<int>(cfg.n_fft));
    for (Index i = 0; i < cfg.win; ++i) {
      const std::size_t p = static_cast<std::size_t>(t * cfg.hop + i);
      const double w = window[static_cast<std::size_t>(i)];
      acc[p] += w * time[static_cast<std::size_t>(off + i)];
      wsum[p] += w * w;
    }
  }
  std::vector<double> wav(static_cast<std::size_t>(len), 0.0);
  for (Index s = 0; s < len; ++s) {
    const std::size_t p = static_cast<std::size_t>(s + cfg.win / 2);
    wav[static_cast<std::size_t>(s)] = wsum[p] > 1e-11 ? acc[p] / wsum[p] : 0.0;
  }
  return wav;
}

void append_u32(std::string* out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out->append(b, 4);
}

void append_u16(std::string* out, std::uint16_t v) {
  char b[2];
  std::memcpy(b, &v, 2);
  out->append(b, 2);
}

std::uint32_t read_u32(const std::string& s, std::size_t at) {
  ITS_CHECK_IO(at + 4 <= s.size(), "wav: truncated header");
  std::uint32_t v;
  std::memcpy(&v, s.data() + at, 4);
  return v;
}

std::uint16_t read_u16(const std::string& s, std::size_t at) {
  ITS_CHECK_IO(at + 2 <= s.size(), "wav: truncated header");
  std::uint16_t v;
  std::memcpy(&v, s.data() + at, 2);
  return v;
}

}  // namespace

void AudioConfig::validate() const {
  ITS_CHECK(sample_rate > 0, "audio config: sample_rate must be positive");
  ITS_CHECK(n_fft > 0 && (n_fft & (n_fft - 1)) == 0, "audio config: n_fft must be a power of two");
  ITS_CHECK(hop > 0 && hop <= win, "audio config: need 0 < hop <= win");
  ITS_CHECK(win <= n_fft, "audio config: need win <= n_fft");
  ITS_CHECK((n_fft - win) % 2 == 0, "audio config: n_fft - win must be even");
  ITS_CHECK(n_mels > 0 && n_mels < n_fft / 2, "audio config: need 0 < n_mels < n_fft/2");
  ITS_CHECK(fmin >= 0.0, "audio config: fmin must be non-negative");
  ITS_CHECK(fmin < fmax, "audio config: need fmin < fmax");
  ITS_CHECK(fmax <= static_cast<double>(sample_rate) / 2.0,
            "audio config: fmax above Nyquist");
  ITS_CHECK(griffin_lim_iters >= 0, "audio config: griffin_lim_iters must be non-negative");
  ITS_CHECK(log_floor > 0.0, "audio config: log_floor must be positive");
}

std::vector<double> mel_center_freqs(const AudioConfig& cfg) {
  cfg.validate();
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> centers(static_cast<std::size_t>(cfg.n_mels));
  for (Index j = 0; j < cfg.n_mels; ++j)
    centers[static_cast<std::size_t>(j)] =
        mel_to_hz(lo + (hi - lo) * static_cast<double>(j + 1) / static_cast<double>(cfg.n_mels + 1));
  return centers;
}

Tensor mel_filterbank(const AudioConfig& cfg) {
  cfg.validate();
  const Index bins = cfg.bins();
  // n_mels + 2 edge frequencies, uniform in mel; filter j rises over
  // [edge_j, edge_{j+1}] and falls over [edge_{j+1}, edge_{j+2}].
  std::vector<double> edge(static_cast<std::size_t>(cfg.n_mels + 2));
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  for (Index j = 0; j < cfg.n_mels + 2; ++j)
    edge[static_cast<std::size_t>(j)] =
        mel_to_hz(lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(cfg.n_mels + 1));
  Tensor fb(cfg.n_mels, bins);
  for (Index j = 0; j < cfg.n_mels; ++j) {
    const double fl = edge[static_cast<std::size_t>(j)];
    const double fc = edge[static_cast<std::size_t>(j + 1)];
    const double fr = edge[static_cast<std::size_t>(j + 2)];
    for (Index k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      double w = 0.0;
      if (f >= fl && f <= fc && fc > fl) w = (f - fl) / (fc - fl);
      else if (f > fc && f <= fr && fr > fc) w = (fr - f) / (fr - fc);
      fb(j, k) = w;
    }
  }
  return fb;
}

Tensor mel_from_waveform(const std::vector<double>& wav, const AudioConfig& cfg) {
  cfg.validate();
  ITS_CHECK(!wav.empty(), "mel_from_waveform: empty waveform");
  for (double v : wav)
    ITS_CHECK(v >= -1.0 && v <= 1.0, "mel_from_waveform: samples must lie in [-1, 1]");
  const Tensor fb = mel_filterbank(cfg);
  const Index frames = frame_count(wav.size(), cfg);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  const std::vector<double> window = hann_window(cfg.win);
  std::vector<double> frame(static_cast<std::size_t>(cfg.n_fft));
  std::vector<std::complex<double>> spec;
  std::vector<double> mag(static_cast<std::size_t>(cfg.bins()));
  Tensor mel(frames, cfg.n_mels);
  for (Index t = 0; t < frames; ++t) {
    fill_frame(wav, cfg, t, window, &frame);
    fft.fwd(spec, frame);
    for (Index k = 0; k < cfg.bins(); ++k) mag[static_cast<std::size_t>(k)] = std::abs(spec[static_cast<std::size_t>(k)]);
    for (Index j = 0; j < cfg.n_mels; ++j) {
      const double e = fixed_dot(fb.data() + j * cfg.bins(), mag.data(), cfg.bins());
      mel(t, j) = std::log(std::max(e, cfg.log_floor));
    }
  }
  return mel;
}

std::vector<double> griffin_lim(const Tensor& mel, const AudioConfig& cfg) {
  cfg.validate();
  ITS_CHECK(mel.rows() >= 1 && mel.cols() == cfg.n_mels,
            "griffin_lim: mel must be frames x n_mels");
  if (!mel.all_finite()) throw NumericError("griffin_lim: non-finite mel");
  const Index frames = mel.rows(), bins = cfg.bins();

  // Target linear magnitudes S = clamp(pinv(fb) * exp(mel), 0) with
  // pinv(fb) = fb^T pinv(fb fb^T). The Gram matrix is rank-deficient on
  // coarse FFT grids (a narrow low-frequency triangle can be a linear
  // combination of its neighbors), so the inverse truncates eigenvalues
  // below a relative tolerance instead of assuming positive definiteness.
  const Tensor fb = mel_filterbank(cfg);
  Eigen::MatrixXd fbm = Eigen::MatrixXd::Zero(cfg.n_mels, bins);
  for (Index j = 0; j < cfg.n_mels; ++j)
    for (Index k = 0; k < bins; ++k) fbm(j, k) = fb(j, k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gram(fbm * fbm.transpose());
  if (gram.info() != Eigen::Success) throw NumericError("griffin_lim: gram eigensolve failed");
  const double tol = 1e-10 * gram.eigenvalues().maxCoeff();
  Eigen::VectorXd inv_ev(cfg.n_mels);
  for (Index j = 0; j < cfg.n_mels; ++j) {
    const double ev = gram.eigenvalues()(j);
    inv_ev(j) = ev > tol ? 1.0 / ev : 0.0;
  }
  Tensor S(frames, bins);
  Eigen::VectorXd m(cfg.n_mels);
  for (Index t = 0; t < frames; ++t) {
    for (Index j = 0; j < cfg.n_mels; ++j) m(j) = std::exp(mel(t, j));
    Eigen::VectorXd y =
        gram.eigenvectors() * (inv_ev.array() * (gram.eigenvectors().transpose() * m).array()).matrix();
    Eigen::VectorXd s = fbm.transpose() * y;
    for (Index k = 0; k < bins; ++k) S(t, k) = std::max(s(k), 0.0);
  }

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  Spec spec(static_cast<std::size_t>(frames),
            std::vector<std::complex<double>>(static_cast<std::size_t>(bins)));
  for (Index t = 0; t < frames; ++t)
    for (Index k = 0; k < bins; ++k)
      spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] = {S(t, k), 0.0};

  std::vector<double> wav;
  for (Index it = 0; it < cfg.griffin_lim_iters; ++it) {
    wav = istft(spec, cfg, &fft);
    Spec re = stft(wav, cfg, &fft);
    for (Index t = 0; t < frames; ++t)
      for (Index k = 0; k < bins; ++k) {
        const std::complex<double> c = re[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
        const double a = std::abs(c);
        spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
            a > 1e-300 ? std::complex<double>(S(t, k) * c.real() / a, S(t, k) * c.imag() / a)
                       : std::complex<double>(S(t, k), 0.0);
      }
  }
  wav = istft(spec, cfg, &fft);

  // Scale down so the peak never exceeds 0.9. Scaling up as well would
  // amplify an all-floor (silent) mel to full scale, so quiet inputs pass
  // through at their reconstructed level.
  double peak = 0.0;
  for (double v : wav) peak = std::max(peak, std::abs(v));
  if (peak > 0.9) {
    const double scale = 0.9 / peak;
    for (double& v : wav) v *= scale;
  }
  return wav;
}

void write_wav(const std::vector<double>& wav, const std::string& path, Index sample_rate) {
  ITS_CHECK(sample_rate > 0, "write_wav: sample_rate must be positive");
  for (double v : wav) ITS_CHECK(v >= -1.0 && v <= 1.0, "write_wav: samples must lie in [-1, 1]");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(wav.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  append_u32(&out, 36 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  append_u32(&out, 16);
  append_u16(&out, 1);  // PCM
  append_u16(&out, 1);  // mono
  append_u32(&out, static_cast<std::uint32_t>(sample_rate));
  append_u32(&out, static_cast<std::uint32_t>(sample_rate) * 2);
  append_u16(&out, 2);   // block align
  append_u16(&out, 16);  // bits per sample
  out += "data";
  append_u32(&out, data_bytes);
  for (double v : wav) {
    const long q = std::lround(v * 32767.0);
    append_u16(&out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  write_file(path, out);
}

std::vector<double> read_wav(const std::string& path, Index* sample_rate) {
  const std::string s = read_file(path);
  ITS_CHECK_IO(s.size() >= 44 && s.compare(0, 4, "RIFF") == 0 && s.compare(8, 4, "WAVE") == 0,
               "wav: not a RIFF/WAVE file: " + path);
  std::size_t at = 12;
  bool have_fmt = false;
  Index rate = 0;
  while (at + 8 <= s.size()) {
    const std::string id = s.substr(at, 4);
    const std::uint32_t size = read_u32(s, at + 4);
    at += 8;
    if (id == "fmt ") {
      ITS_CHECK_IO(size >= 16, "wav: fmt chunk too short");
      ITS_CHECK_IO(read_u16(s, at) == 1, "wav: not PCM");
      ITS_CHECK_IO(read_u16(s, at + 2) == 1, "wav: not mono");
      rate = static_cast<Index>(read_u32(s, at + 4));
      ITS_CHECK_IO(read_u16(s, at + 14) == 16, "wav: not 16-bit");
      have_fmt = true;
    } else if (id == "data") {
      ITS_CHECK_IO(have_fmt, "wav: data chunk before fmt chunk");
      ITS_CHECK_IO(at + size <= s.size(), "wav: data chunk overruns file");
      std::vector<double> wav(size / 2);
      for (std::size_t i = 0; i < wav.size(); ++i) {
        std::int16_t q;
        std::memcpy(&q, s.data() + at + 2 * i, 2);
        wav[i] = static_cast<double>(q) / 32767.0;
      }
      if (sample_rate) *sample_rate = rate;
      return wav;
    }
    at += size + (size % 2);  // chunks are word-aligned
  }
  throw IoError("wav: missing data chunk: " + path);
}

}  // namespace its
