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

#ifndef ITS_SYNTHDATA_HPP
#define ITS_SYNTHDATA_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "its/rng.hpp"
#include "its/tensor.hpp"
#include "its/vocoder.hpp"

namespace its {

// Synthetic corpus generation: word images from a bundled 5x7 bitmap font,
// phoneme labels from a bundled lexicon, and deterministic reference audio
// with known per-phoneme durations.

// The 39-symbol ARPAbet set (no stress marks) in canonical id order.
const std::vector<std::string>& arpabet39();

struct Lexicon {
  // Symbol names whose indices define class ids; the last entry is eps.
  // The [GO] class is implied one past the end, so n_classes() matches the
  // encoder convention (phonemes, then eps, then [GO]).
  std::vector<std::string> phoneme_names;
  Index epsilon_id = 0;
  std::map<std::string, std::vector<Index>> entries;  // word -> phoneme ids

  Index n_classes() const { return static_cast<Index>(phoneme_names.size()) + 1; }
  void validate() const;  // throws ConfigError on any violated invariant
};

// Parses "word<TAB>space-separated phoneme symbols" lines ('#' comments and
// blank lines skipped) against the 39-symbol set plus eps.
Lexicon load_lexicon(const std::string& path);
std::string default_lexicon_path();

// Exact lexicon lookup. The word must be lowercase alphabetic; unknown
// words are errors (no rule-based fallback at desk scale).
std::vector<Index> g2p(const std::string& word, const Lexicon& lex);

struct StyleSpec {
  Index scale = 2;   // integer glyph magnification
  double fg = 0.1;   // glyph gray level
  double bg = 0.9;   // background gray level
  Index dx = 0;      // glyph block offset from the 1-pixel margin
  Index dy = 0;
};

struct ImageSample {
  Tensor pixels;  // img_h x img_w in [0, 1], quantized to the 8-bit grid
  std::string word;
  std::vector<Index> phonemes;
  StyleSpec style;
};

// Draws the word with the bundled font at the style's scale and offset,
// speckles the background lightly from rng, and quantizes every pixel to
// round(p * 255) / 255 so a stored PGM decodes to identical values.
ImageSample render_word(const std::string& word, const StyleSpec& style, Rng& rng,
                        const Lexicon& lex, Index img_h = 32, Index img_w = 96);

struct AugmentConfig {
  double p_rotate = 0.0;
  double max_deg = 15.0;
  double p_crop = 0.0;
  Index max_shift = 2;  // crop jitter per edge, pixels
  double p_noise = 0.0;
  double noise_sigma = 0.03;
  double p_level = 0.0;  // brightness/contrast jitter
  double brightness_delta = 0.1;
  double contrast_delta = 0.2;

  void validate() const;
  // The corpus's "noisy" style family.
  static AugmentConfig noisy_family();
};

// Applies rotation, crop jitter, brightness/contrast, and additive noise,
// each gated by its probability, then clamps to [0, 1]. All probabilities
// zero returns the input unchanged.
Tensor augment(const Tensor& pixels, Rng& rng, const AugmentConfig& cfg);

struct AudioSample {
  std::vector<double> waveform;  // 16 kHz mono in [-1, 1]
  std::vector<Index> durations;  // per-phoneme mel frame counts
  Tensor mel;                    // sum(durations) x n_mels, log domain
};

// Frame count the bundled template assigns to a phoneme id (range 4..12).
Index phoneme_duration_frames(Index phoneme_id);

// Concatenates the per-phoneme templates (two enveloped sinusoids for
// voiced sounds, shaped noise with a fixed sub-seed for the rest) and
// attaches the mel computed by vocoder_lite. Fully deterministic.
AudioSample synth_reference_audio(const std::vector<Index>& phonemes, const AudioConfig& cfg);

struct DatasetConfig {
  std::string out_dir;
  std::uint64_t seed = 1;
  std::vector<std::string> words;
  Index variants_per_word = 40;
  double train_frac = 0.9;
  Index img_h = 32;
  Index img_w = 96;
  AudioConfig audio;
  AugmentConfig noisy = AugmentConfig::noisy_family();

  void validate(const Lexicon& lex) const;
};

struct ManifestRecord {
  std::string id;
  std::string word;
  std::string image_path;  // relative to the manifest's directory
  std::string mel_path;
  std::vector<Index> phonemes;
  std::vector<Index> durations;
  std::string split;  // "train" or "test"
};

struct DatasetManifest {
  Index format_version = 1;
  std::uint64_t seed = 0;
  std::string config_hash;
  Index n_train = 0;
  Index n_test = 0;
  std::vector<ManifestRecord> records;
};

// Renders variants_per_word styled images per word (even variants clean,
// odd variants noisy, so the two families mix 50/50), synthesizes one
// reference audio per word, writes PGM images, mel files, and the
// JSON-lines manifest under cfg.out_dir, and returns the manifest.
// Identical (config, seed) reproduce every output byte.
DatasetManifest build_dataset(const DatasetConfig& cfg, const Lexicon& lex);

// Reads a manifest back and checks every referenced file exists.
DatasetManifest load_manifest(const std::string& path);

// First n lexicon words in alphabetical order (the desk vocabulary).
std::vector<std::string> default_words(const Lexicon& lex, Index n);

// Binary image and mel file formats (PGM P5 and the u32/u32 + f32 layout).
void write_pgm(const std::string& path, const Tensor& img);
Tensor read_pgm(const std::string& path);
void write_mel_file(const std::string& path, const Tensor& mel);
Tensor read_mel_file(const std::string& path);

}  // namespace its

#endif  // ITS_SYNTHDATA_HPP
