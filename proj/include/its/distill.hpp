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

#ifndef ITS_DISTILL_HPP
#define ITS_DISTILL_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "its/encoder.hpp"
#include "its/params.hpp"
#include "its/rng.hpp"
#include "its/tensor.hpp"

namespace its {

// Offline knowledge distillation: a frozen teacher supplies logit targets,
// the student trains on alpha * CE + (1 - alpha) * MSE, and the MSE term is
// dropped for any step where its gradient points against the CE gradient
// (negative cosine similarity). Global-norm clipping and Adam throughout.

struct DistillConfig {
  double alpha = 0.5;
  double lr_teacher = 5e-5;
  double lr_student = 5e-4;
  double clip_threshold = 5.0;
  Index batch_size = 32;
  Index steps = 3000;
  bool gate_enabled = true;

  void validate() const;  // throws ConfigError on any violated invariant
};

// Standard Adam with bias correction. Moments mirror the parameter store's
// names and shapes; the same state object must be threaded through a run.
struct AdamState {
  ParamStore m;  // first moments
  ParamStore v;  // second moments
  Index step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState like(const ParamStore& params);
};

struct StepStats {
  double ce_loss = 0.0;
  double kd_loss = 0.0;
  // Loss whose gradient was applied: alpha-mixed when the gate is open,
  // plain CE when it is closed.
  double combined_loss = 0.0;
  bool gate_open = false;
  double grad_norm_pre_clip = 0.0;
};

// One labeled sample: an img_h x img_w image in [0,1] and its unpadded
// phoneme ids (each in [0, eps)). The trainers are agnostic to where the
// data came from; synthdata produces this shape.
struct LabeledImage {
  Tensor image;
  std::vector<Index> phonemes;
};

// A sampled training batch: images plus eps-padded labels, B * max_seq ints
// in slot order.
struct Batch {
  std::vector<Tensor> images;
  std::vector<int> labels;
};

// Per-image augmentation hook applied while batching; identity when empty.
using AugmentFn = std::function<Tensor(const Tensor&, Rng&)>;

// Pads one phoneme sequence to max_seq with eps. Rejects sequences that are
// too long or that contain eps/[GO]/out-of-range ids.
std::vector<int> pad_labels(const std::vector<Index>& phonemes, Index max_seq, Index eps_id);

Batch make_batch(const std::vector<LabeledImage>& data, const std::vector<std::size_t>& idx,
                 const EncoderConfig& cfg, const AugmentFn& augment, Rng& rng);

// Gradients flattened to one row vector in parameter-store order.
Tensor flat_gradient(const ad::Graph& g, const std::vector<ad::Value>& leaves);

// cos(g_ce, g_kd) >= 0, with either norm below 1e-12 treated as
// non-conflicting (true). Throws ConfigError on length mismatch.
bool gradient_gate(const Tensor& g_ce, const Tensor& g_kd);

// Global-norm clipping: scales to threshold when the norm exceeds it.
// Throws NumericError on a non-finite gradient.
Tensor clip_gradients(const Tensor& g, double threshold);

// Applies one bias-corrected Adam step to params from a flat gradient in
// store order. lr > 0; shapes must match the state.
void adam_update(AdamState& opt, ParamStore& params, const Tensor& flat_grad, double lr);

// One CE-only optimization step: forward, backward, clip, Adam. This is the
// teacher trainer's inner loop and the reference behavior a closed
// distillation gate must match bitwise. Returns the CE loss.
double ce_step(EncoderModel& model, const Batch& batch, double lr, double clip_threshold,
               AdamState& opt, double* grad_norm_pre_clip = nullptr);

// Distillation step against precomputed teacher logits ((B*S) x C). Exposed
// so tests can drive the gate with constructed logit fields that no real
// teacher could produce.
StepStats distill_step_logits(EncoderModel& student, const Tensor& teacher_logits,
                              const Batch& batch, const DistillConfig& cfg, AdamState& opt);

// Full step: teacher forward (plain, no graph), then the logits-level step.
// The teacher is bitwise untouched; models must share (max_seq, n_classes)
// and image/patch geometry.
StepStats distill_step(const EncoderModel& teacher, EncoderModel& student, const Batch& batch,
                       const DistillConfig& cfg, AdamState& opt);

// Checkpoint/eval hook, invoked every hook_every steps (and on the last
// step) when hook_every > 0.
using TrainHook = std::function<void(Index step, const EncoderModel&)>;

// CE training loop at lr_teacher: seeded epoch permutations, augmentation,
// clipping, Adam. Returns the per-step loss curve; optionally appends one
// JSON record per step to `log`.
std::vector<double> train_teacher(EncoderModel& model, const std::vector<LabeledImage>& data,
                                  const DistillConfig& cfg, std::uint64_t seed,
                                  const AugmentFn& augment = nullptr, std::ostream* log = nullptr,
                                  const TrainHook& hook = nullptr, Index hook_every = 0);

// Distillation loop at lr_student with the teacher frozen; same sampling and
// logging scheme as train_teacher.
std::vector<StepStats> train_distill(const EncoderModel& teacher, EncoderModel& student,
                                     const std::vector<LabeledImage>& data,
                                     const DistillConfig& cfg, std::uint64_t seed,
                                     const AugmentFn& augment = nullptr,
                                     std::ostream* log = nullptr, const TrainHook& hook = nullptr,
                                     Index hook_every = 0);

}  // namespace its

#endif  // ITS_DISTILL_HPP
