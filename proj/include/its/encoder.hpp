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

#ifndef ITS_ENCODER_HPP
#define ITS_ENCODER_HPP

#include <string>
#include <vector>

#include "its/autodiff.hpp"
#include "its/params.hpp"
#include "its/rng.hpp"
#include "its/tensor.hpp"

namespace its {

// Vision-transformer word-image encoder: patch embedding, a learned [GO]
// token, learned positions, pre-norm attention/MLP blocks with an
// up-projection wherever the hidden width changes, and a shared linear head
// that reads S phoneme slots from tokens 1..S.
//
// Class-id convention: ids [0, n_classes-2) are phonemes, n_classes-2 is the
// padding class eps, n_classes-1 is [GO].
struct EncoderConfig {
  Index img_h = 32;
  Index img_w = 96;
  Index patch = 8;
  std::vector<Index> layer_dims = {64, 64, 64, 64, 64, 64};
  Index heads = 4;
  Index mlp_ratio = 4;
  Index n_classes = 41;
  Index max_seq = 25;

  Index tokens() const { return (img_h / patch) * (img_w / patch); }
  Index last_dim() const { return layer_dims.back(); }
  Index eps_id() const { return n_classes - 2; }
  Index go_id() const { return n_classes - 1; }

  void validate() const;  // throws ConfigError on any violated invariant

  static EncoderConfig desk_teacher();
  static EncoderConfig desk_student();
};

struct EncoderModel {
  EncoderConfig cfg;
  ParamStore params;
};

// Truncated-normal(0.02) weights, zero biases and positions, unit layernorm
// gains; draw order is parameter insertion order, so fixed (cfg, rng state)
// gives bitwise-identical models.
EncoderModel init_encoder(const EncoderConfig& cfg, Rng& rng);

// Closed-form parameter count; init_encoder produces exactly this many
// elements (enforced by a check at the end of init).
Index count_params(const EncoderConfig& cfg);

// Checks a parameter store against the canonical layout for cfg (names,
// order, shapes). Throws ConfigError naming the first mismatch. Used when
// adopting tensors that did not come from init_encoder, e.g. checkpoints.
void validate_encoder_params(const EncoderConfig& cfg, const ParamStore& params);

// Rearranges B images (each img_h x img_w, values in [0,1]) into one
// (B*T) x patch^2 matrix of flattened patches in row-major patch order.
Tensor patchify(const EncoderConfig& cfg, const std::vector<Tensor>& images);

// Graph forward over a batch. `params` must come from lift_params on the
// model's store. Returns (B*S) x C logits and the final-layernorm hidden
// states (B*S) x d_last that feed the TTS front end. When attn_capture is
// non-null, every attention-probability matrix (one per batch element and
// head per block, each (T+1) x (T+1)) is appended to it.
struct EncodeOut {
  ad::Value logits;
  ad::Value hidden;
};
EncodeOut encode_graph(ad::Graph& g, const EncoderConfig& cfg,
                       const std::vector<ad::Value>& params, const Tensor& patches, Index batch,
                       std::vector<Tensor>* attn_capture = nullptr);

// Immutable graph-free forward pass. Casts the weights once at construction
// (double for the reference path, float for the compact inference path) and
// can then be called repeatedly: per image or on a pre-patchified batch.
template <typename S>
struct EncoderRunner {
  EncoderConfig cfg;
  std::vector<TensorT<S>> w;  // canonical parameter order

  explicit EncoderRunner(const EncoderModel& model);
  // logits (B*S) x C and/or hidden states (B*S) x d_last; null skips one.
  void run_batch(const TensorT<S>& patches, Index batch, TensorT<S>* logits,
                 TensorT<S>* hidden) const;
  void run(const TensorT<S>& image, TensorT<S>* logits, TensorT<S>* hidden) const;
};

// One-shot conveniences over EncoderRunner (construction cost per call).
template <typename S>
TensorT<S> encode_plain(const EncoderModel& model, const TensorT<S>& image);

template <typename S>
void encode_plain_full(const EncoderModel& model, const TensorT<S>& image, TensorT<S>* logits,
                       TensorT<S>* hidden);

// Per-slot argmax (ties to the lowest id), truncated at the first eps;
// [GO] predictions are dropped. Never returns eps or [GO].
std::vector<Index> decode_phonemes(const Tensor& logits, Index n_classes);

}  // namespace its

#endif  // ITS_ENCODER_HPP
