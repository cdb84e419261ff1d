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

#ifndef ITS_TTS_HPP
#define ITS_TTS_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "its/autodiff.hpp"
#include "its/params.hpp"
#include "its/rng.hpp"
#include "its/tensor.hpp"

namespace its {

// Non-autoregressive mel generator: a kernel-3 convolutional duration
// predictor over the encoder's phoneme-slot states, a length regulator that
// repeats each state for its duration, and a VAE whose posterior reads the
// ground-truth mel while the decoder turns expanded states plus one
// utterance-level latent into 80-bin log mels. v1 and v2 differ only in
// decoder depth.
struct TtsConfig {
  Index cond_dim = 64;      // encoder final hidden width feeding this module
  Index n_mels = 80;
  Index hidden = 64;
  Index latent_dim = 16;
  Index decoder_layers = 4;
  double kl_weight = 1e-4;

  void validate() const;  // throws ConfigError on any violated invariant

  static TtsConfig v1();
  static TtsConfig v2();  // half the decoder depth of v1
};

struct TtsModel {
  TtsConfig cfg;
  ParamStore params;
};

// Truncated-normal(0.02) weights, zero biases, in the canonical parameter
// order (duration head, posterior encoder, decoder). Fixed (cfg, rng state)
// gives bitwise-identical models.
TtsModel init_tts(const TtsConfig& cfg, Rng& rng);

// Closed-form parameter count; init_tts produces exactly this many elements.
Index count_tts_params(const TtsConfig& cfg);

// Checks names, order, and shapes against the canonical layout for cfg.
// Throws ConfigError naming the first mismatch.
void validate_tts_params(const TtsConfig& cfg, const ParamStore& params);

// ---- plain (graph-free) operations ----

// Per-slot log-duration head over S x cond_dim hidden states. The mask must
// be a non-empty prefix of true flags (the non-eps slots); outputs are
// defined on every slot, and only masked slots feed the loss and inference.
Tensor predict_durations(const TtsModel& model, const Tensor& hidden,
                         const std::vector<bool>& mask);

// Inference rounding rule d = max(1, round(exp(o) - 1)) applied to the
// first `used` slots of a per-slot log-duration column.
std::vector<Index> durations_from_logd(const Tensor& logd, Index used);

// Repeats row i of `hidden` durations[i] times, order preserved. Output has
// sum(durations) rows; every duration must be >= 1.
Tensor length_regulate(const Tensor& hidden, const std::vector<Index>& durations);

// Utterance-level posterior q(z | mel, cond): a two-layer kernel-3 conv
// stack over the concatenated frames, mean-pooled, then linear heads for mu
// and log sigma (each 1 x latent_dim). Frame counts must match.
void vae_posterior(const TtsModel& model, const Tensor& mel, const Tensor& cond, Tensor* mu,
                   Tensor* log_sigma);

// KL(q || N(0, I)) = sum over latent dims of 0.5 (mu^2 + sigma^2 - 1 -
// 2 log sigma). Non-negative; zero exactly at mu = 0, sigma = 1.
double kl_divergence(const Tensor& mu, const Tensor& log_sigma);

// Decodes expanded states plus one latent row (broadcast to all frames)
// into an L x n_mels mel. Inference passes z = 0 and is deterministic.
Tensor mel_decode(const TtsModel& model, const Tensor& cond, const Tensor& z);

// Mean local SSIM with a 7x7 Gaussian window (sigma 1.5), reflective
// padding, C1 = (0.01)^2 and C2 = (0.03)^2 on unit dynamic range. Inputs
// are expected on [0, 1]; see mel_norm_bounds for the shared normalization.
double ssim(const Tensor& a, const Tensor& b);

// Shared normalization bounds for an SSIM pair: lo = min(gt) and range =
// max(gt) - min(gt), floored at 1e-6 when the ground truth is flat.
void mel_norm_bounds(const Tensor& gt, double* lo, double* range);

struct TtsLossBreakdown {
  double total = 0.0;
  double l1 = 0.0;
  double ssim_term = 0.0;  // 1 - ssim(pred, gt), both normalized by gt range
  double dur_mse = 0.0;    // MSE(pred_logd, log(1 + gt_d)) over masked slots
  double kl = 0.0;         // unweighted; total applies kl_weight
};

// total = l1 + ssim_term + dur_mse + kl_weight * kl. The flat-ground-truth
// corner defines the SSIM term as 1 (so the term contributes 0) when pred
// equals gt bitwise. gt_d supplies the masked slot count; pred_logd must
// have at least that many rows.
TtsLossBreakdown tts_loss(const Tensor& pred_mel, const Tensor& gt_mel, const Tensor& pred_logd,
                          const std::vector<Index>& gt_d, const Tensor& mu,
                          const Tensor& log_sigma, const TtsConfig& cfg);

// ---- graph builders (training) ----
//
// `params` must come from lift_params on the model's store, in canonical
// order. Builders mirror the plain operations above bitwise.

ad::Value duration_graph(ad::Graph& g, const TtsConfig& cfg, const std::vector<ad::Value>& params,
                         ad::Value hidden);

ad::Value length_regulate_graph(ad::Graph& g, ad::Value hidden,
                                const std::vector<Index>& durations);

struct PosteriorOut {
  ad::Value mu;
  ad::Value log_sigma;
};
PosteriorOut posterior_graph(ad::Graph& g, const TtsConfig& cfg,
                             const std::vector<ad::Value>& params, ad::Value mel, ad::Value cond);

ad::Value kl_graph(ad::Graph& g, ad::Value mu, ad::Value log_sigma);

ad::Value decode_graph(ad::Graph& g, const TtsConfig& cfg, const std::vector<ad::Value>& params,
                       ad::Value cond, ad::Value z);

// SSIM on already-normalized inputs, differentiable through both arguments.
ad::Value ssim_graph(ad::Graph& g, ad::Value a, ad::Value b);

struct TtsLossValues {
  ad::Value total;
  ad::Value l1;
  ad::Value ssim_term;
  ad::Value dur_mse;
  ad::Value kl;
};

// Teacher-forced loss for one utterance: expands `hidden`'s masked prefix
// with the ground-truth durations, reads the posterior from the true mel,
// samples z = mu + sigma .* eps, decodes, and assembles the total loss.
// Pipeline stage four reuses this on top of a trainable encoder graph.
TtsLossValues tts_loss_graph(ad::Graph& g, const TtsConfig& cfg,
                             const std::vector<ad::Value>& params, ad::Value hidden,
                             const Tensor& gt_mel, const std::vector<Index>& gt_d,
                             const Tensor& eps_sample);

// ---- inference runner ----

// Casts the weights once and then runs the duration head and decoder
// without a graph. S = double mirrors the training forward; S = float is
// the compact path benchmarked for latency.
template <typename S>
struct TtsRunner {
  TtsConfig cfg;
  std::vector<TensorT<S>> w;  // canonical parameter order

  explicit TtsRunner(const TtsModel& model);

  // Per-slot log durations over all S slots.
  TensorT<S> predict_logd(const TensorT<S>& hidden) const;
  // Decoder forward with an explicit latent row.
  TensorT<S> decode(const TensorT<S>& cond, const TensorT<S>& z) const;
  // Full back half: durations from the first `used` slots, length-regulate,
  // decode at z = 0. Durations are reported if `durations_out` is non-null.
  TensorT<S> hidden_to_mel(const TensorT<S>& hidden, Index used,
                           std::vector<Index>* durations_out = nullptr) const;
};

// ---- stage-three trainer ----

// One training utterance with the conditioning states precomputed by the
// frozen encoder: hidden is S x cond_dim, durations/mel are the synthdata
// ground truth, used_slots is the non-eps prefix length.
struct TtsSample {
  Tensor hidden;
  Index used_slots = 0;
  std::vector<Index> durations;
  Tensor mel;
};

struct TtsTrainConfig {
  Index steps = 500;
  Index batch_size = 8;
  double lr = 1e-2;
  double clip_threshold = 5.0;

  void validate() const;
};

struct TtsStepStats {
  double total = 0.0;
  double l1 = 0.0;
  double ssim_term = 0.0;
  double dur_mse = 0.0;
  double kl = 0.0;
};

// Adam training loop over batches of utterances: seeded sampling, one
// reparameterization draw per utterance per step, global-norm clipping.
// Returns the per-step loss curve (batch means, measured pre-update);
// optionally appends one JSON record per step to `log`.
std::vector<TtsStepStats> train_tts(TtsModel& model, const std::vector<TtsSample>& data,
                                    const TtsTrainConfig& tcfg, std::uint64_t seed,
                                    std::ostream* log = nullptr);

// Dataset-mean loss with the deterministic latent z = mu (no sampling), for
// before/after training comparisons that must not depend on batch order.
TtsStepStats eval_tts(const TtsModel& model, const std::vector<TtsSample>& data);

// ---- checkpoint plumbing ----

std::string tts_config_to_json(const TtsConfig& cfg);
TtsConfig tts_config_from_json(const std::string& text);

void save_tts_checkpoint(const std::string& path, const TtsModel& model);
TtsModel load_tts_checkpoint(const std::string& path);

}  // namespace its

#endif  // ITS_TTS_HPP
