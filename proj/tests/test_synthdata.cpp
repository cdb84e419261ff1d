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
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "its/common.hpp"
#include "its/synthdata.hpp"

using namespace its;

namespace {

// Independent lexicon-file oracle: parse data/lexicon.txt with none of the
// loader's code and map symbols to ids by their position in the canonical
// 39-symbol list.
std::vector<Index> file_oracle_ids(const std::string& word) {
  std::ifstream in(default_lexicon_path());
  REQUIRE(in.good());
  std::map<std::string, Index> id_of;
  for (std::size_t i = 0; i < arpabet39().size(); ++i) id_of[arpabet39()[i]] = static_cast<Index>(i);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(word + "\t", 0) != 0) continue;
    std::istringstream syms(line.substr(word.size() + 1));
    std::vector<Index> ids;
    std::string s;
    while (syms >> s) {
      REQUIRE(id_of.count(s) == 1);
      ids.push_back(id_of[s]);
    }
    return ids;
  }
  REQUIRE_MESSAGE(false, "oracle: word not found in lexicon file");
  return {};
}

std::string fresh_dir(const std::string& name) {
  const std::string d = "/tmp/its_synthdata_test_" + name;
  std::filesystem::remove_all(d);
  return d;
}

bool on_8bit_grid(double p) { return p == std::round(p * 255.0) / 255.0; }

}  // namespace

TEST_CASE("bundled lexicon loads, validates, and matches the encoder class convention") {
  Lexicon lex = load_lexicon(default_lexicon_path());
  CHECK_NOTHROW(lex.validate());
  CHECK(lex.phoneme_names.size() == 40);  // 39 ARPAbet symbols + eps
  CHECK(lex.epsilon_id == 39);
  CHECK(lex.phoneme_names.back() == "eps");
  CHECK(lex.n_classes() == 41);  // + the implied [GO]
  CHECK(lex.entries.size() >= 200);
  for (const auto& [word, ids] : lex.entries) {
    CHECK(!ids.empty());
    for (Index id : ids) {
      CHECK(id >= 0);
      CHECK(id < 39);  // eps never appears inside an entry
    }
  }
}

TEST_CASE("g2p is an exact lookup against the bundled file") {
  Lexicon lex = load_lexicon(default_lexicon_path());

  CHECK(g2p("cat", lex) == file_oracle_ids("cat"));
  CHECK(g2p("a", lex) == file_oracle_ids("a"));
  CHECK(g2p("at", lex) == file_oracle_ids("at"));

  // Spot values pinned against the canonical symbol order
  // (K=19, AE=1, T=30, AH=2).
  CHECK(g2p("cat", lex) == std::vector<Index>{19, 1, 30});
  CHECK(g2p("a", lex) == std::vector<Index>{2});
  CHECK(g2p("at", lex) == std::vector<Index>{1, 30});

  CHECK_THROWS_AS(g2p("zzzz", lex), ConfigError);
  CHECK_THROWS_AS(g2p("", lex), ConfigError);
  CHECK_THROWS_AS(g2p("Cat", lex), ConfigError);
  CHECK_THROWS_AS(g2p("cat1", lex), ConfigError);
}

TEST_CASE("lexicon loader rejects malformed files") {
  const std::string path = "/tmp/its_synthdata_test_lex.txt";
  write_file(path, "cat\tK AE T\ncat\tK AE T\n");
  CHECK_THROWS_AS(load_lexicon(path), IoError);  // duplicate word
  write_file(path, "cat K AE T\n");
  CHECK_THROWS_AS(load_lexicon(path), IoError);  // missing tab
  write_file(path, "cat\tK QQ T\n");
  CHECK_THROWS_AS(load_lexicon(path), IoError);  // unknown symbol
  write_file(path, "cat\teps\n");
  CHECK_THROWS_AS(load_lexicon(path), IoError);  // eps inside an entry
  write_file(path, "# only comments\n");
  CHECK_THROWS_AS(load_lexicon(path), ConfigError);  // no entries at all
  std::filesystem::remove(path);
}

TEST_CASE("render_word is deterministic per seed, quantized, and checks its inputs") {
  Lexicon lex = load_lexicon(default_lexicon_path());
  StyleSpec style;

  Rng r1(7), r2(7);
  ImageSample a = render_word("at", style, r1, lex);
  ImageSample b = render_word("at", style, r2, lex);
  REQUIRE(same_shape(a.pixels, b.pixels));
  for (Index i = 0; i < a.pixels.numel(); ++i) REQUIRE(a.pixels[i] == b.pixels[i]);

  CHECK(a.word == "at");
  CHECK(a.phonemes == g2p("at", lex));
  CHECK(a.pixels.rows() == 32);
  CHECK(a.pixels.cols() == 96);
  for (Index i = 0; i < a.pixels.numel(); ++i) {
    CHECK(a.pixels[i] >= 0.0);
    CHECK(a.pixels[i] <= 1.0);
    CHECK(on_8bit_grid(a.pixels[i]));
  }

  // A different seed changes the background texture but not the labels.
  Rng r3(8);
  ImageSample c = render_word("at", style, r3, lex);
  bool any_diff = false;
  for (Index i = 0; i < a.pixels.numel(); ++i) any_diff = any_diff || a.pixels[i] != c.pixels[i];
  CHECK(any_diff);
  CHECK(c.phonemes == a.phonemes);

  // Glyph pixels carry the foreground level: the darkest rendered pixel
  // equals fg exactly (speckle only touches the background).
  double darkest = 1.0;
  for (Index i = 0; i < a.pixels.numel(); ++i) darkest = std::min(darkest, a.pixels[i]);
  CHECK(darkest == std::round(style.fg * 255.0) / 255.0);

  Rng r4(9);
  CHECK_THROWS_AS(render_word("", style, r4, lex), ConfigError);
  CHECK_THROWS_AS(render_word("zzzz", style, r4, lex), ConfigError);
  StyleSpec big = style;
  big.scale = 3;
  CHECK_THROWS_AS(render_word("measure", big, r4, lex), ConfigError);  // 123 px > canvas
  StyleSpec flat = style;
  flat.fg = 0.5;
  flat.bg = 0.6;
  CHECK_THROWS_AS(render_word("at", flat, r4, lex), ConfigError);  // contrast below 0.2
}

TEST_CASE("augment: identity at zero probabilities, zero-angle rotation, determinism") {
  Lexicon lex = load_lexicon(default_lexicon_path());
  Rng rr(11);
  Tensor img = render_word("cat", StyleSpec{}, rr, lex).pixels;

  AugmentConfig off;  // all probabilities zero
  Rng a1(3);
  Tensor same = augment(img, a1, off);
  REQUIRE(same_shape(same, img));
  for (Index i = 0; i < img.numel(); ++i) REQUIRE(same[i] == img[i]);

  // Forced rotation by an angle drawn from [0, 0] must be the identity up
  // to resampling tolerance.
  AugmentConfig rot0;
  rot0.p_rotate = 1.0;
  rot0.max_deg = 0.0;
  Rng a2(4);
  Tensor r0 = augment(img, a2, rot0);
  for (Index i = 0; i < img.numel(); ++i) CHECK(std::abs(r0[i] - img[i]) <= 1e-6);

  AugmentConfig noisy = AugmentConfig::noisy_family();
  Rng a3(3), a4(3);
  Tensor n1 = augment(img, a3, noisy);
  Tensor n2 = augment(img, a4, noisy);
  for (Index i = 0; i < img.numel(); ++i) REQUIRE(n1[i] == n2[i]);
  bool changed = false;
  for (Index i = 0; i < img.numel(); ++i) {
    CHECK(n1[i] >= 0.0);
    CHECK(n1[i] <= 1.0);
    changed = changed || n1[i] != img[i];
  }
  CHECK(changed);

  AugmentConfig bad = noisy;
  bad.noise_sigma = 0.2;  // above the 0.05 cap
  Rng a5(5);
  CHECK_THROWS_AS(augment(img, a5, bad), ConfigError);
}

TEST_CASE("synth_reference_audio: durations come from the table and drive the mel length") {
  AudioConfig cfg;
  Lexicon lex = load_lexicon(default_lexicon_path());

  // Find a phoneme whose bundled duration is 8 frames; one must exist.
  Index id8 = -1;
  for (Index id = 0; id < 39; ++id)
    if (phoneme_duration_frames(id) == 8) {
      id8 = id;
      break;
    }
  REQUIRE(id8 >= 0);
  AudioSample one = synth_reference_audio({id8}, cfg);
  CHECK(one.durations == std::vector<Index>{8});
  CHECK(one.mel.rows() == 8);
  CHECK(one.mel.cols() == cfg.n_mels);
  CHECK(static_cast<Index>(one.waveform.size()) == 8 * cfg.hop);

  // [K, AE, T]: total frames equals the sum of the table entries.
  const std::vector<Index> kat = g2p("cat", lex);
  Index expect = 0;
  for (Index id : kat) expect += phoneme_duration_frames(id);
  AudioSample cat = synth_reference_audio(kat, cfg);
  CHECK(cat.mel.rows() == expect);
  CHECK(static_cast<Index>(cat.durations.size()) == 3);
  for (std::size_t i = 0; i < kat.size(); ++i)
    CHECK(cat.durations[i] == phoneme_duration_frames(kat[i]));

  for (double v : cat.waveform) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  for (Index id = 0; id < 39; ++id) {
    CHECK(phoneme_duration_frames(id) >= 4);
    CHECK(phoneme_duration_frames(id) <= 12);
  }

  AudioSample again = synth_reference_audio(kat, cfg);
  REQUIRE(again.waveform.size() == cat.waveform.size());
  for (std::size_t i = 0; i < cat.waveform.size(); ++i) REQUIRE(again.waveform[i] == cat.waveform[i]);

  CHECK_THROWS_AS(synth_reference_audio({}, cfg), ConfigError);
  CHECK_THROWS_AS(synth_reference_audio({39}, cfg), ConfigError);  // eps has no template
}

TEST_CASE("pgm and mel files round trip exactly and reject malformed bytes") {
  Lexicon lex = load_lexicon(default_lexicon_path());
  Rng rr(13);
  Tensor img = render_word("dog", StyleSpec{}, rr, lex).pixels;

  const std::string pgm = "/tmp/its_synthdata_test_img.pgm";
  write_pgm(pgm, img);
  const std::string bytes = read_file(pgm);
  CHECK(bytes.compare(0, 13, "P5\n96 32\n255\n") == 0);
  REQUIRE(bytes.size() == 13 + 96 * 32);
  Tensor back = read_pgm(pgm);
  REQUIRE(same_shape(back, img));
  for (Index i = 0; i < img.numel(); ++i) REQUIRE(back[i] == img[i]);

  write_file(pgm, "P4\n96 32\n255\nxxxx");
  CHECK_THROWS_AS(read_pgm(pgm), IoError);
  write_file(pgm, "P5\n96 32\n255\nshort");
  CHECK_THROWS_AS(read_pgm(pgm), IoError);

  AudioConfig cfg;
  AudioSample a = synth_reference_audio(g2p("dog", lex), cfg);
  const std::string melp = "/tmp/its_synthdata_test_mel.bin";
  write_mel_file(melp, a.mel);
  const std::string mb = read_file(melp);
  REQUIRE(mb.size() == 8 + static_cast<std::size_t>(a.mel.numel()) * 4);
  // u32 little-endian frame count then mel count
  const unsigned char* u = reinterpret_cast<const unsigned char*>(mb.data());
  CHECK(u[0] == static_cast<unsigned char>(a.mel.rows() & 0xff));
  CHECK(u[4] == 80);
  Tensor mel_back = read_mel_file(melp);
  REQUIRE(same_shape(mel_back, a.mel));
  // Stored at f32: decoding reproduces the float-rounded values exactly.
  for (Index i = 0; i < a.mel.numel(); ++i)
    REQUIRE(mel_back[i] == static_cast<double>(static_cast<float>(a.mel[i])));

  write_file(melp, "1234567");
  CHECK_THROWS_AS(read_mel_file(melp), IoError);
  std::filesystem::remove(pgm);
  std::filesystem::remove(melp);
}

TEST_CASE("build_dataset writes a reproducible corpus with exact round trips") {
  Lexicon lex = load_lexicon(default_lexicon_path());
  DatasetConfig cfg;
  cfg.words = {"at", "cat", "dog", "sun"};
  cfg.variants_per_word = 6;
  cfg.train_frac = 0.75;
  cfg.seed = 99;
  cfg.out_dir = fresh_dir("ds1");

  DatasetManifest man = build_dataset(cfg, lex);
  CHECK(man.records.size() == 24);
  // lround(0.75 * 6) = 5 train variants per word
  CHECK(man.n_train == 20);
  CHECK(man.n_test == 4);
  CHECK(man.seed == 99);

  // Every word appears in both splits (split is by style variant).
  std::map<std::string, int> train_words, test_words;
  for (const ManifestRecord& r : man.records)
    (r.split == "train" ? train_words : test_words)[r.word] += 1;
  for (const std::string& w : cfg.words) {
    CHECK(train_words[w] == 5);
    CHECK(test_words[w] == 1);
  }

  // Round trips: stored image equals in-memory pixels exactly; the stored
  // mel equals the synthesized mel at f32 precision; frame count equals the
  // duration sum.
  for (const ManifestRecord& r : man.records) {
    Tensor img = read_pgm(cfg.out_dir + "/" + r.image_path);
    CHECK(img.rows() == cfg.img_h);
    CHECK(img.cols() == cfg.img_w);
    for (Index i = 0; i < img.numel(); ++i) REQUIRE(on_8bit_grid(img[i]));
    Tensor mel = read_mel_file(cfg.out_dir + "/" + r.mel_path);
    Index total = 0;
    for (Index d : r.durations) total += d;
    REQUIRE(mel.rows() == total);
    CHECK(r.phonemes == g2p(r.word, lex));
  }
  AudioSample cat = synth_reference_audio(g2p("cat", lex), cfg.audio);
  Tensor cat_mel = read_mel_file(cfg.out_dir + "/mels/cat.mel");
  REQUIRE(same_shape(cat_mel, cat.mel));
  for (Index i = 0; i < cat.mel.numel(); ++i)
    REQUIRE(cat_mel[i] == static_cast<double>(static_cast<float>(cat.mel[i])));

  // Regeneration into a fresh directory reproduces every byte.
  DatasetConfig cfg2 = cfg;
  cfg2.out_dir = fresh_dir("ds2");
  build_dataset(cfg2, lex);
  CHECK(read_file(cfg.out_dir + "/manifest.jsonl") == read_file(cfg2.out_dir + "/manifest.jsonl"));
  for (const ManifestRecord& r : man.records)
    REQUIRE(read_file(cfg.out_dir + "/" + r.image_path) == read_file(cfg2.out_dir + "/" + r.image_path));
  REQUIRE(read_file(cfg.out_dir + "/mels/cat.mel") == read_file(cfg2.out_dir + "/mels/cat.mel"));

  // Manifest reader returns the same records and checks file existence.
  DatasetManifest loaded = load_manifest(cfg.out_dir + "/manifest.jsonl");
  REQUIRE(loaded.records.size() == man.records.size());
  CHECK(loaded.n_train == man.n_train);
  CHECK(loaded.n_test == man.n_test);
  CHECK(loaded.config_hash == man.config_hash);
  for (std::size_t i = 0; i < man.records.size(); ++i) {
    CHECK(loaded.records[i].id == man.records[i].id);
    CHECK(loaded.records[i].phonemes == man.records[i].phonemes);
    CHECK(loaded.records[i].durations == man.records[i].durations);
    CHECK(loaded.records[i].split == man.records[i].split);
  }
  std::filesystem::remove(cfg.out_dir + "/" + man.records[0].image_path);
  CHECK_THROWS_AS(load_manifest(cfg.out_dir + "/manifest.jsonl"), IoError);

  std::filesystem::remove_all(cfg.out_dir);
  std::filesystem::remove_all(cfg2.out_dir);
}

TEST_CASE("build_dataset fails fast on bad vocabulary before writing anything") {
  Lexicon lex = load_lexicon(default_lexicon_path());
  DatasetConfig cfg;
  cfg.words = {"cat", "qqq"};
  cfg.out_dir = fresh_dir("ds_bad");
  CHECK_THROWS_AS(build_dataset(cfg, lex), ConfigError);
  CHECK(!std::filesystem::exists(cfg.out_dir));

  cfg.words = {};
  CHECK_THROWS_AS(build_dataset(cfg, lex), ConfigError);
  cfg.words = {"cat"};
  cfg.train_frac = 1.0;
  CHECK_THROWS_AS(build_dataset(cfg, lex), ConfigError);
}

TEST_CASE("griffin_lim round trip correlates with the template mels it will invert") {
  // Analysis-synthesis consistency on real corpus audio: re-analyzing the
  // reconstruction must correlate strongly with the original mel.
  Lexicon lex = load_lexicon(default_lexicon_path());
  AudioConfig cfg;
  for (const std::string& word : {"cat", "ship", "moon"}) {
    AudioSample a = synth_reference_audio(g2p(word, lex), cfg);
    std::vector<double> rec = griffin_lim(a.mel, cfg);
    Tensor mel2 = mel_from_waveform(rec, cfg);
    REQUIRE(same_shape(mel2, a.mel));
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    const double n = static_cast<double>(a.mel.numel());
    for (Index i = 0; i < a.mel.numel(); ++i) {
      sa += a.mel[i];
      sb += mel2[i];
      saa += a.mel[i] * a.mel[i];
      sbb += mel2[i] * mel2[i];
      sab += a.mel[i] * mel2[i];
    }
    const double r = (sab - sa * sb / n) / std::sqrt((saa - sa * sa / n) * (sbb - sb * sb / n));
    CHECK(r >= 0.9);
  }
}

TEST_CASE("default_words returns the alphabetical head of the lexicon") {
  Lexicon lex = load_lexicon(default_lexicon_path());
  std::vector<std::string> words = default_words(lex, 50);
  REQUIRE(words.size() == 50);
  CHECK(words.front() == "a");
  for (std::size_t i = 1; i < words.size(); ++i) CHECK(words[i - 1] < words[i]);
  for (const std::string& w : words) CHECK(lex.entries.count(w) == 1);
  CHECK_THROWS_AS(default_words(lex, 0), ConfigError);
}
