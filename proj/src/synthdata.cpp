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

#include "its/synthdata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "its/common.hpp"

namespace its {

namespace {

using nlohmann::json;

constexpr double kTau = 2.0 * 3.14159265358979323846;

// ---- bundled 5x7 font ----

// One byte per row, low 5 bits used, MSB-first left to right.
struct Glyph {
  unsigned char row[7];
};

const Glyph& glyph_for(char c) {
  static const Glyph kFont[26] = {
      {{0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},  // a
      {{0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},  // b
      {{0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},  // c
      {{0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},  // d
      {{0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},  // e
      {{0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},  // f
      {{0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},  // g
      {{0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},  // h
      {{0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},  // i
      {{0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},  // j
      {{0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},  // k
      {{0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},  // l
      {{0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},  // m
      {{0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},  // n
      {{0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},  // o
      {{0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},  // p
      {{0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},  // q
      {{0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},  // r
      {{0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},  // s
      {{0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},  // t
      {{0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},  // u
      {{0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},  // v
      {{0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},  // w
      {{0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},  // x
      {{0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},  // y
      {{0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},  // z
  };
  ITS_CHECK(c >= 'a' && c <= 'z', "font: only lowercase a-z glyphs are bundled");
  return kFont[c - 'a'];
}

constexpr Index kGlyphW = 5;
constexpr Index kGlyphH = 7;
constexpr Index kGlyphAdvance = 6;  // 5 columns + 1 spacing column

// Width in pixels of a word at integer scale s (trailing spacing dropped).
Index word_width(Index chars, Index s) { return s * (kGlyphAdvance * chars - 1); }

bool lowercase_alpha(const std::string& w) {
  if (w.empty()) return false;
  for (char c : w)
    if (c < 'a' || c > 'z') return false;
  return true;
}

// Snap to the 8-bit gray grid used by the PGM writer.
double quantize_gray(double p) { return std::round(p * 255.0) / 255.0; }

// ---- phoneme synthesis templates ----

// Per-phoneme recipe: frame count, plus either two sinusoid frequencies
// (voiced) or a noise tilt (unvoiced; 1.0 is strongly high-passed hiss,
// 0.0 is flat). Frequencies follow rough adult formant tables; exact
// values only need to be distinct and stable, not phonetically precise.
struct PhonTemplate {
  Index frames;
  bool voiced;
  double f1, f2;  // Hz when voiced; when unvoiced f1 is the tilt, f2 unused
};

const PhonTemplate& phoneme_template(Index id) {
  static const PhonTemplate kTable[39] = {
      {10, true, 730.0, 1090.0},  // AA
      {9, true, 660.0, 1720.0},   // AE
      {7, true, 640.0, 1190.0},   // AH
      {10, true, 570.0, 840.0},   // AO
      {11, true, 700.0, 1030.0},  // AW
      {11, true, 660.0, 1400.0},  // AY
      {4, true, 240.0, 720.0},    // B
      {6, false, 0.85, 0.0},      // CH
      {4, true, 260.0, 1700.0},   // D
      {5, false, 0.35, 0.0},      // DH
      {8, true, 530.0, 1840.0},   // EH
      {9, true, 490.0, 1350.0},   // ER
      {10, true, 400.0, 2000.0},  // EY
      {5, false, 0.55, 0.0},      // F
      {4, true, 250.0, 1200.0},   // G
      {4, false, 0.15, 0.0},      // HH
      {7, true, 390.0, 1990.0},   // IH
      {9, true, 270.0, 2290.0},   // IY
      {6, true, 280.0, 1900.0},   // JH
      {4, false, 0.65, 0.0},      // K
      {6, true, 360.0, 1300.0},   // L
      {6, true, 280.0, 900.0},    // M
      {6, true, 300.0, 1400.0},   // N
      {7, true, 320.0, 1100.0},   // NG
      {10, true, 450.0, 900.0},   // OW
      {12, true, 500.0, 1200.0},  // OY
      {4, false, 0.45, 0.0},      // P
      {6, true, 420.0, 1300.0},   // R
      {6, false, 0.95, 0.0},      // S
      {7, false, 0.90, 0.0},      // SH
      {4, false, 0.75, 0.0},      // T
      {5, false, 0.50, 0.0},      // TH
      {7, true, 440.0, 1020.0},   // UH
      {9, true, 300.0, 870.0},    // UW
      {5, true, 260.0, 1100.0},   // V
      {5, true, 310.0, 800.0},    // W
      {5, true, 290.0, 2000.0},   // Y
      {6, true, 270.0, 1600.0},   // Z
      {6, true, 280.0, 1750.0},   // ZH
  };
  ITS_CHECK(id >= 0 && id < 39, "synth audio: phoneme id outside the bundled template table");
  return kTable[id];
}

// Raised-cosine fade over the first and last fifth of the phoneme.
double envelope(Index i, Index n) {
  const Index ramp = std::max<Index>(1, n / 5);
  if (i < ramp) return 0.5 - 0.5 * std::cos(kTau / 2.0 * static_cast<double>(i) / static_cast<double>(ramp));
  if (i >= n - ramp)
    return 0.5 - 0.5 * std::cos(kTau / 2.0 * static_cast<double>(n - 1 - i) / static_cast<double>(ramp));
  return 1.0;
}

// ---- manifest plumbing ----

json record_to_json(const ManifestRecord& r) {
  return json{{"durations", r.durations}, {"id", r.id},       {"image", r.image_path},
              {"mel", r.mel_path},        {"phonemes", r.phonemes}, {"split", r.split},
              {"type", "sample"},         {"word", r.word}};
}

std::string config_canonical_json(const DatasetConfig& cfg) {
  json j{{"audio",
          {{"fmax", cfg.audio.fmax},
           {"fmin", cfg.audio.fmin},
           {"hop", cfg.audio.hop},
           {"log_floor", cfg.audio.log_floor},
           {"n_fft", cfg.audio.n_fft},
           {"n_mels", cfg.audio.n_mels},
           {"sample_rate", cfg.audio.sample_rate},
           {"win", cfg.audio.win}}},
         {"img_h", cfg.img_h},
         {"img_w", cfg.img_w},
         {"noisy",
          {{"brightness_delta", cfg.noisy.brightness_delta},
           {"contrast_delta", cfg.noisy.contrast_delta},
           {"max_deg", cfg.noisy.max_deg},
           {"max_shift", cfg.noisy.max_shift},
           {"noise_sigma", cfg.noisy.noise_sigma},
           {"p_crop", cfg.noisy.p_crop},
           {"p_level", cfg.noisy.p_level},
           {"p_noise", cfg.noisy.p_noise},
           {"p_rotate", cfg.noisy.p_rotate}}},
         {"seed", cfg.seed},
         {"train_frac", cfg.train_frac},
         {"variants_per_word", cfg.variants_per_word},
         {"words", cfg.words}};
  return j.dump();
}

}  // namespace

const std::vector<std::string>& arpabet39() {
  static const std::vector<std::string> kNames = {
      "AA", "AE", "AH", "AO", "AW", "AY", "B",  "CH", "D",  "DH", "EH", "ER", "EY",
      "F",  "G",  "HH", "IH", "IY", "JH", "K",  "L",  "M",  "N",  "NG", "OW", "OY",
      "P",  "R",  "S",  "SH", "T",  "TH", "UH", "UW", "V",  "W",  "Y",  "Z",  "ZH"};
  return kNames;
}

void Lexicon::validate() const {
  ITS_CHECK(!phoneme_names.empty(), "lexicon: empty phoneme inventory");
  ITS_CHECK(epsilon_id >= 0 && epsilon_id < static_cast<Index>(phoneme_names.size()),
            "lexicon: epsilon id outside the inventory");
  Index eps_count = 0;
  for (const std::string& n : phoneme_names)
    if (n == phoneme_names[static_cast<std::size_t>(epsilon_id)]) ++eps_count;
  ITS_CHECK(eps_count == 1, "lexicon: eps symbol must appear exactly once");
  for (const auto& [word, ids] : entries) {
    ITS_CHECK(!ids.empty(), "lexicon: empty pronunciation for '" + word + "'");
    for (Index id : ids) {
      ITS_CHECK(id >= 0 && id < static_cast<Index>(phoneme_names.size()),
                "lexicon: phoneme id out of range for '" + word + "'");
      ITS_CHECK(id != epsilon_id, "lexicon: eps inside the entry for '" + word + "'");
    }
  }
}

Lexicon load_lexicon(const std::string& path) {
  Lexicon lex;
  lex.phoneme_names = arpabet39();
  lex.phoneme_names.push_back("eps");
  lex.epsilon_id = static_cast<Index>(lex.phoneme_names.size()) - 1;

  std::map<std::string, Index> id_of;
  for (std::size_t i = 0; i < lex.phoneme_names.size(); ++i)
    id_of[lex.phoneme_names[i]] = static_cast<Index>(i);

  std::istringstream in(read_file(path));
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    ITS_CHECK_IO(tab != std::string::npos,
                 "lexicon: missing tab on line " + std::to_string(line_no) + " of " + path);
    const std::string word = line.substr(0, tab);
    ITS_CHECK_IO(lowercase_alpha(word),
                 "lexicon: word must be lowercase alphabetic on line " + std::to_string(line_no));
    ITS_CHECK_IO(lex.entries.find(word) == lex.entries.end(),
                 "lexicon: duplicate word '" + word + "'");
    std::istringstream syms(line.substr(tab + 1));
    std::vector<Index> ids;
    std::string sym;
    while (syms >> sym) {
      auto it = id_of.find(sym);
      ITS_CHECK_IO(it != id_of.end() && it->second != lex.epsilon_id,
                   "lexicon: unknown phoneme '" + sym + "' on line " + std::to_string(line_no));
      ids.push_back(it->second);
    }
    ITS_CHECK_IO(!ids.empty(), "lexicon: no phonemes on line " + std::to_string(line_no));
    lex.entries[word] = std::move(ids);
  }
  ITS_CHECK(!lex.entries.empty(), "lexicon: no entries in " + path);
  lex.validate();
  return lex;
}

std::string default_lexicon_path() { return std::string(ITS_DATA_DIR) + "/lexicon.txt"; }

std::vector<Index> g2p(const std::string& word, const Lexicon& lex) {
  ITS_CHECK(lowercase_alpha(word), "g2p: word must be lowercase alphabetic: '" + word + "'");
  auto it = lex.entries.find(word);
  ITS_CHECK(it != lex.entries.end(), "g2p: not in lexicon: '" + word + "'");
  return it->second;
}

std::vector<std::string> default_words(const Lexicon& lex, Index n) {
  ITS_CHECK(n >= 1 && n <= static_cast<Index>(lex.entries.size()),
            "default_words: need 1 <= n <= lexicon size");
  std::vector<std::string> words;
  words.reserve(static_cast<std::size_t>(n));
  for (const auto& [word, ids] : lex.entries) {
    words.push_back(word);
    if (static_cast<Index>(words.size()) == n) break;
  }
  return words;
}

ImageSample render_word(const std::string& word, const StyleSpec& style, Rng& rng,
                        const Lexicon& lex, Index img_h, Index img_w) {
  std::vector<Index> phonemes = g2p(word, lex);  // also rejects unknown words
  ITS_CHECK(style.scale >= 1, "render: scale must be at least 1");
  ITS_CHECK(style.fg >= 0.0 && style.fg <= 1.0 && style.bg >= 0.0 && style.bg <= 1.0,
            "render: gray levels must lie in [0, 1]");
  ITS_CHECK(std::abs(style.bg - style.fg) >= 0.2, "render: contrast below 0.2");
  ITS_CHECK(style.dx >= 0 && style.dy >= 0, "render: offsets must be non-negative");

  const Index chars = static_cast<Index>(word.size());
  const Index x0 = 1 + style.dx, y0 = 1 + style.dy;
  ITS_CHECK(x0 + word_width(chars, style.scale) <= img_w - 1,
            "render: word too long for canvas: '" + word + "'");
  ITS_CHECK(y0 + kGlyphH * style.scale <= img_h - 1, "render: glyphs do not fit vertically");

  // Lightly textured background; the texture depends only on the rng state.
  Tensor img(img_h, img_w);
  for (Index i = 0; i < img.numel(); ++i)
    img[i] = std::clamp(style.bg + rng.uniform(-0.02, 0.02), 0.0, 1.0);

  for (Index c = 0; c < chars; ++c) {
    const Glyph& g = glyph_for(word[static_cast<std::size_t>(c)]);
    const Index gx = x0 + c * kGlyphAdvance * style.scale;
    for (Index r = 0; r < kGlyphH; ++r)
      for (Index k = 0; k < kGlyphW; ++k) {
        if (!((g.row[r] >> (kGlyphW - 1 - k)) & 1)) continue;
        for (Index sy = 0; sy < style.scale; ++sy)
          for (Index sx = 0; sx < style.scale; ++sx)
            img(y0 + r * style.scale + sy, gx + k * style.scale + sx) = style.fg;
      }
  }
  for (Index i = 0; i < img.numel(); ++i) img[i] = quantize_gray(img[i]);

  ImageSample s;
  s.pixels = std::move(img);
  s.word = word;
  s.phonemes = std::move(phonemes);
  s.style = style;
  return s;
}

void AugmentConfig::validate() const {
  for (double p : {p_rotate, p_crop, p_noise, p_level})
    ITS_CHECK(p >= 0.0 && p <= 1.0, "augment config: probabilities must lie in [0, 1]");
  ITS_CHECK(max_deg >= 0.0 && max_deg <= 45.0, "augment config: max_deg must lie in [0, 45]");
  ITS_CHECK(max_shift >= 0, "augment config: max_shift must be non-negative");
  ITS_CHECK(noise_sigma >= 0.0 && noise_sigma <= 0.05,
            "augment config: noise sigma must lie in [0, 0.05]");
  ITS_CHECK(brightness_delta >= 0.0 && brightness_delta <= 0.5,
            "augment config: brightness delta must lie in [0, 0.5]");
  ITS_CHECK(contrast_delta >= 0.0 && contrast_delta <= 0.9,
            "augment config: contrast delta must lie in [0, 0.9]");
}

AugmentConfig AugmentConfig::noisy_family() {
  AugmentConfig cfg;
  cfg.p_rotate = 0.5;
  cfg.p_crop = 0.5;
  cfg.p_noise = 1.0;
  cfg.p_level = 0.5;
  return cfg;
}

namespace {

// Bilinear lookup with out-of-canvas reads filled by `fill`.
double sample_bilinear(const Tensor& img, double y, double x, double fill) {
  const Index iy = static_cast<Index>(std::floor(y)), ix = static_cast<Index>(std::floor(x));
  const double wy = y - static_cast<double>(iy), wx = x - static_cast<double>(ix);
  auto at = [&](Index r, Index c) -> double {
    if (r < 0 || r >= img.rows() || c < 0 || c >= img.cols()) return fill;
    return img(r, c);
  };
  return (1.0 - wy) * ((1.0 - wx) * at(iy, ix) + wx * at(iy, ix + 1)) +
         wy * ((1.0 - wx) * at(iy + 1, ix) + wx * at(iy + 1, ix + 1));
}

}  // namespace

Tensor augment(const Tensor& pixels, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  ITS_CHECK(pixels.numel() > 0, "augment: empty image");
  Tensor img = pixels;
  const Index H = img.rows(), W = img.cols();
  // Out-of-canvas fill for the geometric stages: the corner average is a
  // robust stand-in for the background gray.
  const double fill =
      0.25 * (img(0, 0) + img(0, W - 1) + img(H - 1, 0) + img(H - 1, W - 1));

  if (rng.bernoulli(cfg.p_rotate)) {
    const double deg = rng.uniform(-cfg.max_deg, cfg.max_deg);
    const double rad = deg * kTau / 360.0;
    const double cy = 0.5 * static_cast<double>(H - 1), cx = 0.5 * static_cast<double>(W - 1);
    const double c = std::cos(rad), s = std::sin(rad);
    Tensor out(H, W);
    for (Index r = 0; r < H; ++r)
      for (Index k = 0; k < W; ++k) {
        // Inverse map: rotate the destination point back into the source.
        const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(k) - cx;
        out(r, k) = sample_bilinear(img, cy + c * dy - s * dx, cx + s * dy + c * dx, fill);
      }
    img = std::move(out);
  }

  if (rng.bernoulli(cfg.p_crop) && cfg.max_shift > 0) {
    const Index top = rng.uniform_int(0, cfg.max_shift);
    const Index bottom = rng.uniform_int(0, cfg.max_shift);
    const Index left = rng.uniform_int(0, cfg.max_shift);
    const Index right = rng.uniform_int(0, cfg.max_shift);
    const Index ch = H - top - bottom, cw = W - left - right;
    ITS_CHECK(ch >= 2 && cw >= 2, "augment: crop jitter leaves too little image");
    Tensor out(H, W);
    for (Index r = 0; r < H; ++r)
      for (Index k = 0; k < W; ++k) {
        const double sy = static_cast<double>(top) +
                          static_cast<double>(r) * static_cast<double>(ch - 1) / static_cast<double>(H - 1);
        const double sx = static_cast<double>(left) +
                          static_cast<double>(k) * static_cast<double>(cw - 1) / static_cast<double>(W - 1);
        out(r, k) = sample_bilinear(img, sy, sx, fill);
      }
    img = std::move(out);
  }

  if (rng.bernoulli(cfg.p_level)) {
    const double add = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
    const double mul = 1.0 + rng.uniform(-cfg.contrast_delta, cfg.contrast_delta);
    for (Index i = 0; i < img.numel(); ++i) img[i] = 0.5 + (img[i] - 0.5) * mul + add;
  }

  if (rng.bernoulli(cfg.p_noise) && cfg.noise_sigma > 0.0) {
    for (Index i = 0; i < img.numel(); ++i) img[i] += rng.normal(0.0, cfg.noise_sigma);
  }

  for (Index i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
  return img;
}

Index phoneme_duration_frames(Index phoneme_id) { return phoneme_template(phoneme_id).frames; }

AudioSample synth_reference_audio(const std::vector<Index>& phonemes, const AudioConfig& cfg) {
  cfg.validate();
  ITS_CHECK(!phonemes.empty(), "synth audio: empty phoneme sequence");

  AudioSample out;
  out.durations.reserve(phonemes.size());
  Index total_frames = 0;
  for (Index id : phonemes) {
    out.durations.push_back(phoneme_template(id).frames);
    total_frames += out.durations.back();
  }
  out.waveform.reserve(static_cast<std::size_t>(total_frames * cfg.hop));

  for (Index id : phonemes) {
    const PhonTemplate& t = phoneme_template(id);
    const Index n = t.frames * cfg.hop;
    if (t.voiced) {
      // The two formant sinusoids ride on a faint breath-noise bed. A pure
      // sine pair has an off-formant leakage floor roughly 60 dB below the
      // formants, which zero-phase Griffin-Lim cannot reach, so mels of bed
      // free tones would not survive the analysis-synthesis round trip. The
      // bed keeps the spectral floor at a recoverable level and is also how
      // real voiced speech behaves (aspiration noise under the harmonics).
      Rng breath(mix64(0xbedull) ^ static_cast<std::uint64_t>(id));
      for (Index i = 0; i < n; ++i) {
        const double ts = static_cast<double>(i) / static_cast<double>(cfg.sample_rate);
        const double v = 0.55 * std::sin(kTau * t.f1 * ts) + 0.35 * std::sin(kTau * t.f2 * ts) +
                         0.015 * breath.uniform(-1.0, 1.0);
        out.waveform.push_back(envelope(i, n) * v);
      }
    } else {
      // Shaped noise: a first-order comb u[i] - tilt * u[i-1] tilts the
      // spectrum toward high frequencies as tilt approaches 1. The sub-seed
      // is a pure function of the phoneme id, so audio is reproducible.
      Rng noise(mix64(0xf00dull) ^ static_cast<std::uint64_t>(id));
      double prev = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double u = noise.uniform(-1.0, 1.0);
        const double v = 0.35 * (u - t.f1 * prev);
        prev = u;
        out.waveform.push_back(envelope(i, n) * v);
      }
    }
  }
  out.mel = mel_from_waveform(out.waveform, cfg);
  ITS_CHECK(out.mel.rows() == total_frames, "synth audio: mel frames diverge from durations");
  return out;
}

// ---- binary file formats ----

void write_pgm(const std::string& path, const Tensor& img) {
  ITS_CHECK(img.rows() >= 1 && img.cols() >= 1, "pgm: empty image");
  std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(img.numel()));
  for (Index i = 0; i < img.numel(); ++i) {
    const double p = img[i];
    ITS_CHECK(p >= 0.0 && p <= 1.0, "pgm: pixels must lie in [0, 1]");
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(p * 255.0))));
  }
  write_file(path, out);
}

Tensor read_pgm(const std::string& path) {
  const std::string s = read_file(path);
  std::istringstream in(s);
  std::string magic;
  Index w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  ITS_CHECK_IO(magic == "P5" && w > 0 && h > 0 && maxv == 255, "pgm: bad header in " + path);
  ITS_CHECK_IO(in.get() == '\n', "pgm: expected newline after header in " + path);
  const std::size_t off = static_cast<std::size_t>(in.tellg());
  ITS_CHECK_IO(s.size() == off + static_cast<std::size_t>(w * h), "pgm: payload size mismatch in " + path);
  Tensor img(h, w);
  for (Index i = 0; i < img.numel(); ++i)
    img[i] = static_cast<double>(static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)])) / 255.0;
  return img;
}

void write_mel_file(const std::string& path, const Tensor& mel) {
  ITS_CHECK(mel.rows() >= 1 && mel.cols() >= 1, "mel file: empty mel");
  static_assert(sizeof(float) == 4, "mel format assumes 4-byte floats");
  const std::uint32_t frames = static_cast<std::uint32_t>(mel.rows());
  const std::uint32_t n_mels = static_cast<std::uint32_t>(mel.cols());
  std::string out;
  out.resize(8 + static_cast<std::size_t>(mel.numel()) * 4);
  std::memcpy(out.data(), &frames, 4);
  std::memcpy(out.data() + 4, &n_mels, 4);
  for (Index i = 0; i < mel.numel(); ++i) {
    const float v = static_cast<float>(mel[i]);
    std::memcpy(out.data() + 8 + static_cast<std::size_t>(i) * 4, &v, 4);
  }
  write_file(path, out);
}

Tensor read_mel_file(const std::string& path) {
  const std::string s = read_file(path);
  ITS_CHECK_IO(s.size() >= 8, "mel file: truncated header in " + path);
  std::uint32_t frames = 0, n_mels = 0;
  std::memcpy(&frames, s.data(), 4);
  std::memcpy(&n_mels, s.data() + 4, 4);
  ITS_CHECK_IO(frames > 0 && n_mels > 0, "mel file: empty dimensions in " + path);
  ITS_CHECK_IO(s.size() == 8 + static_cast<std::size_t>(frames) * n_mels * 4,
               "mel file: payload size mismatch in " + path);
  Tensor mel(static_cast<Index>(frames), static_cast<Index>(n_mels));
  for (Index i = 0; i < mel.numel(); ++i) {
    float v;
    std::memcpy(&v, s.data() + 8 + static_cast<std::size_t>(i) * 4, 4);
    mel[i] = static_cast<double>(v);
  }
  return mel;
}

// ---- dataset assembly ----

void DatasetConfig::validate(const Lexicon& lex) const {
  ITS_CHECK(!out_dir.empty(), "dataset config: out_dir is empty");
  ITS_CHECK(!words.empty(), "dataset config: vocabulary is empty");
  for (const std::string& w : words)
    ITS_CHECK(lex.entries.count(w) == 1, "dataset config: word not in lexicon: '" + w + "'");
  ITS_CHECK(variants_per_word >= 2, "dataset config: need at least 2 variants per word");
  ITS_CHECK(train_frac > 0.0 && train_frac < 1.0, "dataset config: train_frac must lie in (0, 1)");
  ITS_CHECK(img_h >= 16 && img_w >= 16, "dataset config: image too small");
  audio.validate();
  noisy.validate();
}

DatasetManifest build_dataset(const DatasetConfig& cfg, const Lexicon& lex) {
  cfg.validate(lex);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(cfg.out_dir) / "images", ec);
  ITS_CHECK_IO(!ec, "dataset: cannot create " + cfg.out_dir + "/images: " + ec.message());
  fs::create_directories(fs::path(cfg.out_dir) / "mels", ec);
  ITS_CHECK_IO(!ec, "dataset: cannot create " + cfg.out_dir + "/mels: " + ec.message());

  DatasetManifest man;
  man.format_version = 1;
  man.seed = cfg.seed;
  man.config_hash = hex64(fnv1a64(config_canonical_json(cfg)));

  // Variants below the cut train, the rest test; every word appears in both.
  const Index train_variants =
      static_cast<Index>(std::lround(cfg.train_frac * static_cast<double>(cfg.variants_per_word)));
  ITS_CHECK(train_variants >= 1 && train_variants < cfg.variants_per_word,
            "dataset config: split leaves an empty train or test side");

  const AugmentConfig clean;  // all probabilities zero
  for (const std::string& word : cfg.words) {
    // One reference audio per word; every variant shares it.
    const std::vector<Index> phonemes = g2p(word, lex);
    AudioSample audio = synth_reference_audio(phonemes, cfg.audio);
    const std::string mel_rel = "mels/" + word + ".mel";
    write_mel_file(cfg.out_dir + "/" + mel_rel, audio.mel);

    for (Index v = 0; v < cfg.variants_per_word; ++v) {
      const std::string id = word + "_" + std::to_string(v);
      Rng rng(Rng::sample_seed(cfg.seed, fnv1a64(id)));

      // Style draw order is frozen: scale, grays, offsets, then render and
      // augmentation consume the same stream.
      const Index chars = static_cast<Index>(word.size());
      Index max_scale = 1;
      while (max_scale < 3 && 1 + word_width(chars, max_scale + 1) <= cfg.img_w - 1 &&
             1 + kGlyphH * (max_scale + 1) <= cfg.img_h - 1)
        ++max_scale;
      ITS_CHECK(1 + word_width(chars, 1) <= cfg.img_w - 1,
                "dataset: word too long for canvas: '" + word + "'");
      StyleSpec style;
      style.scale = rng.uniform_int(1, max_scale);
      style.fg = rng.uniform(0.0, 0.3);
      style.bg = rng.uniform(0.7, 1.0);
      style.dx = rng.uniform_int(0, cfg.img_w - 2 - word_width(chars, style.scale));
      style.dy = rng.uniform_int(0, cfg.img_h - 2 - kGlyphH * style.scale);

      ImageSample sample = render_word(word, style, rng, lex, cfg.img_h, cfg.img_w);
      // Even variants form the clean family, odd variants the noisy one.
      Tensor pixels = augment(sample.pixels, rng, (v % 2 == 0) ? clean : cfg.noisy);
      for (Index i = 0; i < pixels.numel(); ++i) pixels[i] = quantize_gray(pixels[i]);

      ManifestRecord rec;
      rec.id = id;
      rec.word = word;
      rec.image_path = "images/" + id + ".pgm";
      rec.mel_path = mel_rel;
      rec.phonemes = phonemes;
      rec.durations = audio.durations;
      rec.split = v < train_variants ? "train" : "test";
      write_pgm(cfg.out_dir + "/" + rec.image_path, pixels);
      (rec.split == "train" ? man.n_train : man.n_test) += 1;
      man.records.push_back(std::move(rec));
    }
  }

  std::string lines;
  json header{{"config_hash", man.config_hash},
              {"counts", {{"test", man.n_test}, {"train", man.n_train}}},
              {"format_version", man.format_version},
              {"seed", man.seed},
              {"type", "header"}};
  lines += header.dump() + "\n";
  for (const ManifestRecord& r : man.records) lines += record_to_json(r).dump() + "\n";
  write_file(cfg.out_dir + "/manifest.jsonl", lines);
  return man;
}

DatasetManifest load_manifest(const std::string& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  ITS_CHECK_IO(std::getline(in, line), "manifest: empty file: " + path);

  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw IoError("manifest: bad header line: " + std::string(e.what()));
  }
  ITS_CHECK_IO(header.value("type", "") == "header", "manifest: first line is not a header");
  ITS_CHECK_IO(header.value("format_version", -1) == 1, "manifest: unsupported format version");

  DatasetManifest man;
  man.format_version = header["format_version"].get<Index>();
  man.seed = header["seed"].get<std::uint64_t>();
  man.config_hash = header["config_hash"].get<std::string>();
  man.n_train = header["counts"]["train"].get<Index>();
  man.n_test = header["counts"]["test"].get<Index>();

  const std::string dir = std::filesystem::path(path).parent_path().string();
  std::map<std::string, bool> seen;
  Index train = 0, test = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("manifest: bad record line: " + std::string(e.what()));
    }
    ITS_CHECK_IO(j.value("type", "") == "sample", "manifest: record line is not a sample");
    ManifestRecord r;
    r.id = j["id"].get<std::string>();
    r.word = j["word"].get<std::string>();
    r.image_path = j["image"].get<std::string>();
    r.mel_path = j["mel"].get<std::string>();
    r.phonemes = j["phonemes"].get<std::vector<Index>>();
    r.durations = j["durations"].get<std::vector<Index>>();
    r.split = j["split"].get<std::string>();
    ITS_CHECK_IO(!seen[r.id], "manifest: duplicate sample id '" + r.id + "'");
    seen[r.id] = true;
    ITS_CHECK_IO(r.split == "train" || r.split == "test", "manifest: unknown split tag");
    ITS_CHECK_IO(file_exists(dir + "/" + r.image_path), "manifest: missing image " + r.image_path);
    ITS_CHECK_IO(file_exists(dir + "/" + r.mel_path), "manifest: missing mel " + r.mel_path);
    (r.split == "train" ? train : test) += 1;
    man.records.push_back(std::move(r));
  }
  ITS_CHECK_IO(train == man.n_train && test == man.n_test, "manifest: header counts disagree with records");
  return man;
}

}  // namespace its
