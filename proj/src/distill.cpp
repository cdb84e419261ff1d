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

#include "its/distill.hpp"

#include <cmath>
#include <cstring>
#include <ostream>

#include <json.hpp>

#include "its/reduce.hpp"

namespace its {

namespace {

// Epoch-permuted index stream: one seeded Fisher-Yates shuffle per pass over
// the dataset, batches may straddle epoch boundaries so their size is
// constant. Deterministic for a fixed Rng.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Index batch, Rng rng) : n_(n), batch_(batch), rng_(rng) {
    ITS_CHECK(n_ > 0, "sampler: empty dataset");
    refill();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(static_cast<std::size_t>(batch_));
    for (Index i = 0; i < batch_; ++i) {
      if (at_ == order_.size()) refill();
      out.push_back(order_[at_++]);
    }
    return out;
  }

 private:
  void refill() {
    const auto perm = rng_.permutation(static_cast<Index>(n_));
    order_.assign(perm.begin(), perm.end());
    at_ = 0;
  }

  std::size_t n_;
  Index batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t at_ = 0;
};

double norm2(const Tensor& g) { return std::sqrt(fixed_dot(g.data(), g.data(), g.numel())); }

void log_step(std::ostream* log, Index step, const StepStats& s) {
  if (!log) return;
  nlohmann::json j = {{"step", step},
                      {"ce_loss", s.ce_loss},
                      {"kd_loss", s.kd_loss},
                      {"combined_loss", s.combined_loss},
                      {"gate_open", s.gate_open},
                      {"grad_norm_pre_clip", s.grad_norm_pre_clip},
                      {"wall_ms", wall_ms()}};
  *log << j.dump() << '\n';
}

// Forward + CE for a batch, leaves lifted trainable; shared by the CE step
// and the distillation step.
struct ForwardCtx {
  ad::Graph g;
  std::vector<ad::Value> leaves;
  ad::Value logits;
  ad::Value ce;
};

void forward_ce(ForwardCtx& ctx, const EncoderModel& model, const Batch& batch) {
  const Index B = static_cast<Index>(batch.images.size());
  ITS_CHECK(B > 0, "train step: empty batch");
  ITS_CHECK(static_cast<Index>(batch.labels.size()) == B * model.cfg.max_seq,
            "train step: labels must hold batch * max_seq entries");
  const Tensor patches = patchify(model.cfg, batch.images);
  ctx.leaves = lift_params(ctx.g, model.params, /*trainable=*/true);
  EncodeOut out = encode_graph(ctx.g, model.cfg, ctx.leaves, patches, B);
  ctx.logits = out.logits;
  ctx.ce = ad::softmax_cross_entropy(out.logits, batch.labels);
}

}  // namespace

void DistillConfig::validate() const {
  ITS_CHECK(alpha >= 0.0 && alpha <= 1.0, "distill: alpha must lie in [0,1]");
  ITS_CHECK(lr_teacher > 0.0 && lr_student > 0.0, "distill: learning rates must be positive");
  ITS_CHECK(clip_threshold > 0.0, "distill: clip threshold must be positive");
  ITS_CHECK(batch_size >= 1, "distill: batch size must be >= 1");
  ITS_CHECK(steps >= 0, "distill: step count must be >= 0");
}

AdamState AdamState::like(const ParamStore& params) {
  AdamState st;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.tensor(i);
    st.m.add(params.name(i), Tensor(t.rows(), t.cols()));
    st.v.add(params.name(i), Tensor(t.rows(), t.cols()));
  }
  return st;
}

std::vector<int> pad_labels(const std::vector<Index>& phonemes, Index max_seq, Index eps_id) {
  ITS_CHECK(static_cast<Index>(phonemes.size()) <= max_seq,
            "labels: phoneme sequence longer than max_seq");
  std::vector<int> out(static_cast<std::size_t>(max_seq), static_cast<int>(eps_id));
  for (std::size_t i = 0; i < phonemes.size(); ++i) {
    ITS_CHECK(phonemes[i] >= 0 && phonemes[i] < eps_id,
              "labels: phoneme id outside the class range");
    out[i] = static_cast<int>(phonemes[i]);
  }
  return out;
}

Batch make_batch(const std::vector<LabeledImage>& data, const std::vector<std::size_t>& idx,
                 const EncoderConfig& cfg, const AugmentFn& augment, Rng& rng) {
  Batch b;
  b.images.reserve(idx.size());
  b.labels.reserve(idx.size() * static_cast<std::size_t>(cfg.max_seq));
  for (std::size_t i : idx) {
    ITS_CHECK(i < data.size(), "batch: sample index out of range");
    const LabeledImage& s = data[i];
    ITS_CHECK(s.image.rows() == cfg.img_h && s.image.cols() == cfg.img_w,
              "batch: image dims do not match the model config");
    b.images.push_back(augment ? augment(s.image, rng) : s.image);
    const auto padded = pad_labels(s.phonemes, cfg.max_seq, cfg.eps_id());
    b.labels.insert(b.labels.end(), padded.begin(), padded.end());
  }
  return b;
}

Tensor flat_gradient(const ad::Graph& g, const std::vector<ad::Value>& leaves) {
  Index total = 0;
  for (const ad::Value& v : leaves) total += v.val().numel();
  Tensor flat(1, total);
  Index at = 0;
  for (const ad::Value& v : leaves) {
    const Tensor grad = g.grad(v);
    std::memcpy(flat.data() + at, grad.data(),
                static_cast<std::size_t>(grad.numel()) * sizeof(double));
    at += grad.numel();
  }
  return flat;
}

bool gradient_gate(const Tensor& g_ce, const Tensor& g_kd) {
  ITS_CHECK(g_ce.numel() == g_kd.numel(), "gate: gradient length mismatch");
  const double na = norm2(g_ce);
  const double nb = norm2(g_kd);
  if (na < 1e-12 || nb < 1e-12) return true;
  return fixed_dot(g_ce.data(), g_kd.data(), g_ce.numel()) / (na * nb) >= 0.0;
}

Tensor clip_gradients(const Tensor& g, double threshold) {
  ITS_CHECK(threshold > 0.0, "clip: threshold must be positive");
  if (!g.all_finite()) throw NumericError("clip: non-finite gradient");
  const double norm = norm2(g);
  Tensor out = g;
  if (norm > threshold) {
    const double scale = threshold / norm;
    for (Index i = 0; i < out.numel(); ++i) out[i] *= scale;
  }
  return out;
}

void adam_update(AdamState& opt, ParamStore& params, const Tensor& flat_grad, double lr) {
  ITS_CHECK(lr >= 0.0, "adam: learning rate must be non-negative");
  ITS_CHECK(opt.m.size() == params.size() && opt.v.size() == params.size(),
            "adam: state does not match the parameter store");
  ITS_CHECK(flat_grad.numel() == params.total_elements(),
            "adam: flat gradient length does not match the parameter store");
  opt.step += 1;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  Index at = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.tensor(i);
    Tensor& m = opt.m.tensor(i);
    Tensor& v = opt.v.tensor(i);
    ITS_CHECK(m.numel() == p.numel() && v.numel() == p.numel(),
              "adam: moment shape mismatch for " + params.name(i));
    const double* g = flat_grad.data() + at;
    for (Index e = 0; e < p.numel(); ++e) {
      m[e] = opt.beta1 * m[e] + (1.0 - opt.beta1) * g[e];
      v[e] = opt.beta2 * v[e] + (1.0 - opt.beta2) * g[e] * g[e];
      const double mhat = m[e] / c1;
      const double vhat = v[e] / c2;
      p[e] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    at += p.numel();
  }
}

double ce_step(EncoderModel& model, const Batch& batch, double lr, double clip_threshold,
               AdamState& opt, double* grad_norm_pre_clip) {
  ForwardCtx ctx;
  forward_ce(ctx, model, batch);
  ctx.g.backward(ctx.ce);
  const Tensor g = flat_gradient(ctx.g, ctx.leaves);
  if (grad_norm_pre_clip) *grad_norm_pre_clip = norm2(g);
  adam_update(opt, model.params, clip_gradients(g, clip_threshold), lr);
  return ctx.ce.val()[0];
}

StepStats distill_step_logits(EncoderModel& student, const Tensor& teacher_logits,
                              const Batch& batch, const DistillConfig& cfg, AdamState& opt) {
  cfg.validate();
  ForwardCtx ctx;
  forward_ce(ctx, student, batch);
  ITS_CHECK(teacher_logits.rows() == ctx.logits.val().rows() &&
                teacher_logits.cols() == ctx.logits.val().cols(),
            "distill: teacher and student logit shapes mismatch");
  ad::Value kd = ad::mse_loss(ctx.logits, ctx.g.constant(teacher_logits));

  ctx.g.backward(ctx.ce);
  const Tensor g_ce = flat_gradient(ctx.g, ctx.leaves);
  ctx.g.backward(kd);
  const Tensor g_kd = flat_gradient(ctx.g, ctx.leaves);

  StepStats stats;
  stats.ce_loss = ctx.ce.val()[0];
  stats.kd_loss = kd.val()[0];
  // Contract: the blend applies only when gating is on and the cosine is
  // non-negative; otherwise the step is CE-only.
  stats.gate_open = cfg.gate_enabled && gradient_gate(g_ce, g_kd);

  Tensor g(1, g_ce.numel());
  if (stats.gate_open) {
    for (Index i = 0; i < g.numel(); ++i)
      g[i] = cfg.alpha * g_ce[i] + (1.0 - cfg.alpha) * g_kd[i];
    stats.combined_loss = cfg.alpha * stats.ce_loss + (1.0 - cfg.alpha) * stats.kd_loss;
  } else {
    g = g_ce;
    stats.combined_loss = stats.ce_loss;
  }
  stats.grad_norm_pre_clip = norm2(g);
  adam_update(opt, student.params, clip_gradients(g, cfg.clip_threshold), cfg.lr_student);
  return stats;
}

StepStats distill_step(const EncoderModel& teacher, EncoderModel& student, const Batch& batch,
                       const DistillConfig& cfg, AdamState& opt) {
  ITS_CHECK(teacher.cfg.max_seq == student.cfg.max_seq &&
                teacher.cfg.n_classes == student.cfg.n_classes,
            "distill: teacher and student must share (max_seq, n_classes)");
  ITS_CHECK(teacher.cfg.img_h == student.cfg.img_h && teacher.cfg.img_w == student.cfg.img_w &&
                teacher.cfg.patch == student.cfg.patch,
            "distill: teacher and student must share image and patch geometry");
  const Index B = static_cast<Index>(batch.images.size());
  Tensor teacher_logits;
  EncoderRunner<double>(teacher).run_batch(patchify(teacher.cfg, batch.images), B,
                                           &teacher_logits, nullptr);
  return distill_step_logits(student, teacher_logits, batch, cfg, opt);
}

std::vector<double> train_teacher(EncoderModel& model, const std::vector<LabeledImage>& data,
                                  const DistillConfig& cfg, std::uint64_t seed,
                                  const AugmentFn& augment, std::ostream* log,
                                  const TrainHook& hook, Index hook_every) {
  cfg.validate();
  ITS_CHECK(!data.empty(), "train_teacher: dataset is empty");
  BatchSampler sampler(data.size(), cfg.batch_size, Rng(seed).fork(1));
  Rng aug_rng = Rng(seed).fork(2);
  AdamState opt = AdamState::like(model.params);
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(cfg.steps));
  for (Index step = 0; step < cfg.steps; ++step) {
    Batch b = make_batch(data, sampler.next(), model.cfg, augment, aug_rng);
    StepStats s;
    s.ce_loss = ce_step(model, b, cfg.lr_teacher, cfg.clip_threshold, opt, &s.grad_norm_pre_clip);
    s.combined_loss = s.ce_loss;
    curve.push_back(s.ce_loss);
    log_step(log, step, s);
    if (hook && hook_every > 0 && ((step + 1) % hook_every == 0 || step + 1 == cfg.steps))
      hook(step + 1, model);
  }
  return curve;
}

std::vector<StepStats> train_distill(const EncoderModel& teacher, EncoderModel& student,
                                     const std::vector<LabeledImage>& data,
                                     const DistillConfig& cfg, std::uint64_t seed,
                                     const AugmentFn& augment, std::ostream* log,
                                     const TrainHook& hook, Index hook_every) {
  cfg.validate();
  ITS_CHECK(!data.empty(), "train_distill: dataset is empty");
  BatchSampler sampler(data.size(), cfg.batch_size, Rng(seed).fork(1));
  Rng aug_rng = Rng(seed).fork(2);
  AdamState opt = AdamState::like(student.params);
  std::vector<StepStats> stats;
  stats.reserve(static_cast<std::size_t>(cfg.steps));
  for (Index step = 0; step < cfg.steps; ++step) {
    Batch b = make_batch(data, sampler.next(), student.cfg, augment, aug_rng);
    stats.push_back(distill_step(teacher, student, b, cfg, opt));
    log_step(log, step, stats.back());
    if (hook && hook_every > 0 && ((step + 1) % hook_every == 0 || step + 1 == cfg.steps))
      hook(step + 1, student);
  }
  return stats;
}

}  // namespace its
