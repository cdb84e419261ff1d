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

#include "its/tts.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <utility>

#include <json.hpp>

#include "its/common.hpp"
#include "its/distill.hpp"
#include "its/checkpoint.hpp"
#include "its/reduce.hpp"

namespace its {

namespace {

using nlohmann::json;

// SSIM stabilizers on unit dynamic range: (0.01)^2 and (0.03)^2.
constexpr double kSsimC1 = 1e-4;
constexpr double kSsimC2 = 9e-4;

// Same tanh-approximation constants as the autodiff gelu, so plain forwards
// match graph forwards bitwise.
constexpr double kGeluC0 = 0.7978845608;
constexpr double kGeluC1 = 0.044715;

// ---- canonical parameter layout ----

struct ParamSpec {
  std::string name;
  Index rows, cols;
  bool bias;
};

std::vector<ParamSpec> canonical_layout(const TtsConfig& cfg) {
  const Index c = cfg.cond_dim, h = cfg.hidden, k = cfg.latent_dim, m = cfg.n_mels;
  std::vector<ParamSpec> out = {
      {"dur.conv1.w", 3 * c, h, false},
      {"dur.conv1.b", 1, h, true},
      {"dur.conv2.w", 3 * h, 1, false},
      {"dur.conv2.b", 1, 1, true},
      {"post.conv1.w", 3 * (m + c), h, false},
      {"post.conv1.b", 1, h, true},
      {"post.conv2.w", 3 * h, h, false},
      {"post.conv2.b", 1, h, true},
      {"post.mu.w", h, k, false},
      {"post.mu.b", 1, k, true},
      {"post.logsig.w", h, k, false},
      {"post.logsig.b", 1, k, true},
      {"dec.in.w", c + k, h, false},
      {"dec.in.b", 1, h, true},
  };
  for (Index i = 0; i < cfg.decoder_layers; ++i) {
    out.push_back({"dec.block" + std::to_string(i) + ".w", 3 * h, h, false});
    out.push_back({"dec.block" + std::to_string(i) + ".b", 1, h, true});
  }
  out.push_back({"dec.out.w", h, m, false});
  out.push_back({"dec.out.b", 1, m, true});
  return out;
}

// Parameter positions in the canonical order.
constexpr int kDurW1 = 0, kDurB1 = 1, kDurW2 = 2, kDurB2 = 3;
constexpr int kPostW1 = 4, kPostB1 = 5, kPostW2 = 6, kPostB2 = 7;
constexpr int kPostMuW = 8, kPostMuB = 9, kPostLsW = 10, kPostLsB = 11;
constexpr int kDecInW = 12, kDecInB = 13, kDecBlocks = 14;
int dec_out_w(const TtsConfig& cfg) { return kDecBlocks + 2 * static_cast<int>(cfg.decoder_layers); }

// ---- shared forward pieces ----

// Kernel-3 context: row t carries [x_{t-1} | x_t | x_{t+1}], zero padded at
// the sequence edges. Matches concat_cols(shift_rows(x,1), x, shift_rows(x,-1)).
template <typename S>
TensorT<S> conv3_ctx(const TensorT<S>& x) {
  const Index rows = x.rows(), c = x.cols();
  TensorT<S> ctx(rows, 3 * c);
  if (rows > 1) {
    ctx.mat().block(1, 0, rows - 1, c) = x.mat().topRows(rows - 1);
    ctx.mat().block(0, 2 * c, rows - 1, c) = x.mat().bottomRows(rows - 1);
  }
  ctx.mat().middleCols(c, c) = x.mat();
  return ctx;
}

template <typename S>
TensorT<S> affine_rows(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  TensorT<S> out(x.rows(), w.cols());
  out.mat().noalias() = x.mat() * w.mat();
  out.mat().rowwise() += b.mat().row(0);
  return out;
}

template <typename S>
void gelu_inplace(TensorT<S>& t) {
  const S c0 = static_cast<S>(kGeluC0), c1 = static_cast<S>(kGeluC1);
  for (Index i = 0; i < t.numel(); ++i) {
    const S x = t[i];
    t[i] = S(0.5) * x * (S(1) + std::tanh(c0 * (x + c1 * x * x * x)));
  }
}

// Reflected index without repeating the edge sample; the padding convention
// the SSIM window shares with the STFT framing.
Index reflect_tap(Index i, Index n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// n x n smoothing matrix applying the 7-tap Gaussian (sigma 1.5) along one
// axis with reflective padding. W(X) = band(rows) * X * band(cols)^T.
Tensor ssim_band(Index n) {
  double g[7], sum = 0.0;
  for (int i = 0; i < 7; ++i) {
    g[i] = std::exp(-static_cast<double>((i - 3) * (i - 3)) / (2.0 * 1.5 * 1.5));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  Tensor b(n, n);
  for (Index r = 0; r < n; ++r)
    for (int t = -3; t <= 3; ++t) b(r, reflect_tap(r + t, n)) += g[t + 3];
  return b;
}

double fixed_min(const double* p, Index n) {
  double m = p[0];
  for (Index i = 1; i < n; ++i)
    if (p[i] < m) m = p[i];
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Index i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

void check_mask_prefix(const std::vector<bool>& mask, Index rows) {
  ITS_CHECK(static_cast<Index>(mask.size()) == rows,
            "predict_durations: mask length must equal slot count");
  Index used = 0;
  while (used < rows && mask[static_cast<std::size_t>(used)]) ++used;
  for (Index i = used; i < rows; ++i)
    ITS_CHECK(!mask[static_cast<std::size_t>(i)], "predict_durations: mask is not a prefix");
  ITS_CHECK(used > 0, "predict_durations: empty mask");
}

std::vector<Index> regulate_index(Index rows, const std::vector<Index>& durations) {
  ITS_CHECK(!durations.empty(), "length_regulate: empty durations");
  ITS_CHECK(static_cast<Index>(durations.size()) <= rows,
            "length_regulate: more durations than rows");
  std::vector<Index> idx;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    ITS_CHECK(durations[i] >= 1, "length_regulate: every duration must be >= 1");
    for (Index r = 0; r < durations[i]; ++r) idx.push_back(static_cast<Index>(i));
  }
  return idx;
}

// ---- stage-three batching ----

// Epoch-permuted index stream, the same scheme as the encoder trainers: one
// seeded shuffle per pass, constant batch size across epoch boundaries.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Index batch, Rng rng) : n_(n), batch_(batch), rng_(rng) { refill(); }

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

void check_sample(const TtsSample& s, const TtsConfig& cfg) {
  ITS_CHECK(s.hidden.cols() == cfg.cond_dim, "tts sample: hidden width mismatch");
  ITS_CHECK(s.used_slots >= 1 && s.used_slots <= s.hidden.rows(),
            "tts sample: used_slots outside the hidden row range");
  ITS_CHECK(static_cast<Index>(s.durations.size()) == s.used_slots,
            "tts sample: one duration per used slot required");
  Index total = 0;
  for (Index d : s.durations) {
    ITS_CHECK(d >= 1, "tts sample: durations must be >= 1");
    total += d;
  }
  ITS_CHECK(s.mel.rows() == total, "tts sample: mel frames must equal the duration sum");
  ITS_CHECK(s.mel.cols() == cfg.n_mels, "tts sample: mel width mismatch");
}

void log_step(std::ostream* log, Index step, const TtsStepStats& s) {
  if (!log) return;
  json j = {{"step", step},       {"total", s.total}, {"l1", s.l1},
            {"ssim_term", s.ssim_term}, {"dur_mse", s.dur_mse}, {"kl", s.kl},
            {"wall_ms", wall_ms()}};
  *log << j.dump() << '\n';
}

}  // namespace

// ---- config ----

void TtsConfig::validate() const {
  ITS_CHECK(cond_dim >= 1, "tts config: cond_dim must be positive");
  ITS_CHECK(n_mels >= 1, "tts config: n_mels must be positive");
  ITS_CHECK(hidden >= 1, "tts config: hidden must be positive");
  ITS_CHECK(latent_dim >= 1, "tts config: latent_dim must be positive");
  ITS_CHECK(decoder_layers >= 1, "tts config: decoder_layers must be >= 1");
  ITS_CHECK(kl_weight >= 0.0, "tts config: kl_weight must be non-negative");
}

TtsConfig TtsConfig::v1() { return TtsConfig{}; }

TtsConfig TtsConfig::v2() {
  TtsConfig cfg;
  cfg.decoder_layers = cfg.decoder_layers / 2;
  return cfg;
}

Index count_tts_params(const TtsConfig& cfg) {
  cfg.validate();
  const Index c = cfg.cond_dim, h = cfg.hidden, k = cfg.latent_dim, m = cfg.n_mels;
  Index n = 3 * c * h + h + 3 * h + 1;                     // duration head
  n += 3 * (m + c) * h + h + 3 * h * h + h;                // posterior convs
  n += 2 * (h * k + k);                                    // mu and log-sigma heads
  n += (c + k) * h + h;                                    // decoder input
  n += cfg.decoder_layers * (3 * h * h + h);               // decoder blocks
  n += h * m + m;                                          // decoder output
  return n;
}

TtsModel init_tts(const TtsConfig& cfg, Rng& rng) {
  cfg.validate();
  TtsModel model;
  model.cfg = cfg;
  for (const ParamSpec& p : canonical_layout(cfg)) {
    // The duration head's final projection starts at zero so a fresh model
    // predicts log duration 0, which the rounding rule maps to one frame
    // per slot.
    const bool zero = p.bias || p.name == "dur.conv2.w";
    Tensor t = zero ? Tensor::zeros(p.rows, p.cols)
                    : Tensor::trunc_normal(p.rows, p.cols, rng, 0.02);
    model.params.add(p.name, std::move(t));
  }
  ITS_CHECK(model.params.total_elements() == count_tts_params(cfg),
            "init_tts: parameter count diverges from the closed form");
  return model;
}

void validate_tts_params(const TtsConfig& cfg, const ParamStore& params) {
  const auto layout = canonical_layout(cfg);
  ITS_CHECK(params.size() == layout.size(), "tts params: wrong tensor count");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    ITS_CHECK(params.name(i) == layout[i].name,
              "tts params: expected '" + layout[i].name + "' at position " + std::to_string(i) +
                  ", found '" + params.name(i) + "'");
    const Tensor& t = params.tensor(i);
    ITS_CHECK(t.rows() == layout[i].rows && t.cols() == layout[i].cols,
              "tts params: shape mismatch for " + layout[i].name);
  }
}

// ---- plain operations ----

Tensor predict_durations(const TtsModel& model, const Tensor& hidden,
                         const std::vector<bool>& mask) {
  model.cfg.validate();
  ITS_CHECK(hidden.cols() == model.cfg.cond_dim, "predict_durations: hidden width mismatch");
  ITS_CHECK(hidden.rows() >= 1, "predict_durations: no slots");
  check_mask_prefix(mask, hidden.rows());
  Tensor h1 = affine_rows(conv3_ctx(hidden), model.params.at("dur.conv1.w"),
                          model.params.at("dur.conv1.b"));
  gelu_inplace(h1);
  return affine_rows(conv3_ctx(h1), model.params.at("dur.conv2.w"),
                     model.params.at("dur.conv2.b"));
}

std::vector<Index> durations_from_logd(const Tensor& logd, Index used) {
  ITS_CHECK(logd.cols() == 1, "durations_from_logd: expected one column");
  ITS_CHECK(used >= 1 && used <= logd.rows(), "durations_from_logd: bad slot count");
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(used));
  for (Index i = 0; i < used; ++i) {
    const double o = logd(i, 0);
    if (!std::isfinite(o)) throw NumericError("durations_from_logd: non-finite log duration");
    const double d = std::exp(o) - 1.0;
    if (!(d < 1e9)) throw NumericError("durations_from_logd: duration overflow");
    out.push_back(std::max<Index>(1, static_cast<Index>(std::lround(d))));
  }
  return out;
}

Tensor length_regulate(const Tensor& hidden, const std::vector<Index>& durations) {
  const std::vector<Index> idx = regulate_index(hidden.rows(), durations);
  Tensor out(static_cast<Index>(idx.size()), hidden.cols());
  for (Index r = 0; r < out.rows(); ++r)
    out.mat().row(r) = hidden.mat().row(idx[static_cast<std::size_t>(r)]);
  return out;
}

void vae_posterior(const TtsModel& model, const Tensor& mel, const Tensor& cond, Tensor* mu,
                   Tensor* log_sigma) {
  const TtsConfig& cfg = model.cfg;
  cfg.validate();
  ITS_CHECK(mel.rows() == cond.rows(), "vae_posterior: mel and cond frame counts differ");
  ITS_CHECK(mel.rows() >= 1, "vae_posterior: no frames");
  ITS_CHECK(mel.cols() == cfg.n_mels, "vae_posterior: mel width mismatch");
  ITS_CHECK(cond.cols() == cfg.cond_dim, "vae_posterior: cond width mismatch");
  ITS_CHECK(mu != nullptr && log_sigma != nullptr, "vae_posterior: null outputs");

  Tensor x(mel.rows(), cfg.n_mels + cfg.cond_dim);
  x.mat().leftCols(cfg.n_mels) = mel.mat();
  x.mat().rightCols(cfg.cond_dim) = cond.mat();
  Tensor h = affine_rows(conv3_ctx(x), model.params.at("post.conv1.w"),
                         model.params.at("post.conv1.b"));
  gelu_inplace(h);
  h = affine_rows(conv3_ctx(h), model.params.at("post.conv2.w"), model.params.at("post.conv2.b"));
  gelu_inplace(h);

  // Mean pool over frames, accumulating in frame order like the graph op.
  Tensor pooled(1, cfg.hidden);
  for (Index r = 0; r < h.rows(); ++r) pooled.mat().row(0) += h.mat().row(r);
  pooled.vec() *= 1.0 / static_cast<double>(h.rows());

  *mu = affine_rows(pooled, model.params.at("post.mu.w"), model.params.at("post.mu.b"));
  *log_sigma =
      affine_rows(pooled, model.params.at("post.logsig.w"), model.params.at("post.logsig.b"));
}

double kl_divergence(const Tensor& mu, const Tensor& log_sigma) {
  ITS_CHECK(mu.rows() == log_sigma.rows() && mu.cols() == log_sigma.cols(),
            "kl_divergence: shape mismatch");
  ITS_CHECK(mu.numel() >= 1, "kl_divergence: empty latent");
  Tensor terms(mu.rows(), mu.cols());
  for (Index i = 0; i < mu.numel(); ++i) {
    const double m = mu[i], ls = log_sigma[i];
    terms[i] = ((m * m + std::exp(2.0 * ls)) - 2.0 * ls) + -1.0;
  }
  return fixed_sum(terms.data(), terms.numel()) * 0.5;
}

Tensor mel_decode(const TtsModel& model, const Tensor& cond, const Tensor& z) {
  const TtsConfig& cfg = model.cfg;
  cfg.validate();
  ITS_CHECK(cond.cols() == cfg.cond_dim, "mel_decode: cond width mismatch");
  ITS_CHECK(cond.rows() >= 1, "mel_decode: no frames");
  ITS_CHECK(z.rows() == 1 && z.cols() == cfg.latent_dim, "mel_decode: latent dim mismatch");

  Tensor x(cond.rows(), cfg.cond_dim + cfg.latent_dim);
  x.mat().leftCols(cfg.cond_dim) = cond.mat();
  for (Index r = 0; r < x.rows(); ++r) x.mat().row(r).tail(cfg.latent_dim) = z.mat().row(0);
  Tensor h = affine_rows(x, model.params.at("dec.in.w"), model.params.at("dec.in.b"));
  gelu_inplace(h);
  for (Index i = 0; i < cfg.decoder_layers; ++i) {
    const std::string tag = "dec.block" + std::to_string(i);
    Tensor f = affine_rows(conv3_ctx(h), model.params.at(tag + ".w"), model.params.at(tag + ".b"));
    gelu_inplace(f);
    h.mat() += f.mat();
  }
  return affine_rows(h, model.params.at("dec.out.w"), model.params.at("dec.out.b"));
}

double ssim(const Tensor& a, const Tensor& b) {
  ITS_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), "ssim: shape mismatch");
  ITS_CHECK(a.numel() >= 1, "ssim: empty inputs");
  const Tensor br = ssim_band(a.rows());
  const Tensor bc = ssim_band(a.cols());
  Tensor bct(bc.rows(), bc.cols());
  bct.mat() = bc.mat().transpose();  // materialized so both windowed axes hit
                                     // the same GEMM path as the graph op
  auto window = [&](const Tensor& x) {
    Tensor t(x.rows(), x.cols());
    t.mat().noalias() = br.mat() * x.mat();
    Tensor out(x.rows(), x.cols());
    out.mat().noalias() = t.mat() * bct.mat();
    return out;
  };
  Tensor a2(a.rows(), a.cols()), b2(a.rows(), a.cols()), ab(a.rows(), a.cols());
  a2.vec() = a.vec().array() * a.vec().array();
  b2.vec() = b.vec().array() * b.vec().array();
  ab.vec() = a.vec().array() * b.vec().array();
  const Tensor mua = window(a), mub = window(b);
  const Tensor wa2 = window(a2), wb2 = window(b2), wab = window(ab);

  Tensor map(a.rows(), a.cols());
  for (Index i = 0; i < a.numel(); ++i) {
    const double va = wa2[i] - mua[i] * mua[i];
    const double vb = wb2[i] - mub[i] * mub[i];
    const double cab = wab[i] - mua[i] * mub[i];
    const double num = (2.0 * (mua[i] * mub[i]) + kSsimC1) * (2.0 * cab + kSsimC2);
    const double den = ((mua[i] * mua[i] + mub[i] * mub[i]) + kSsimC1) * ((va + vb) + kSsimC2);
    map[i] = num / den;
  }
  return fixed_sum(map.data(), map.numel()) * (1.0 / static_cast<double>(map.numel()));
}

void mel_norm_bounds(const Tensor& gt, double* lo, double* range) {
  ITS_CHECK(gt.numel() >= 1, "mel_norm_bounds: empty tensor");
  ITS_CHECK(lo != nullptr && range != nullptr, "mel_norm_bounds: null outputs");
  *lo = fixed_min(gt.data(), gt.numel());
  *range = std::max(fixed_max(gt.data(), gt.numel()) - *lo, 1e-6);
}

TtsLossBreakdown tts_loss(const Tensor& pred_mel, const Tensor& gt_mel, const Tensor& pred_logd,
                          const std::vector<Index>& gt_d, const Tensor& mu,
                          const Tensor& log_sigma, const TtsConfig& cfg) {
  cfg.validate();
  ITS_CHECK(pred_mel.rows() == gt_mel.rows() && pred_mel.cols() == gt_mel.cols(),
            "tts_loss: mel shape mismatch");
  ITS_CHECK(pred_mel.numel() >= 1, "tts_loss: empty mels");
  ITS_CHECK(pred_logd.cols() == 1, "tts_loss: pred_logd must be one column");
  ITS_CHECK(!gt_d.empty(), "tts_loss: empty duration targets");
  ITS_CHECK(static_cast<Index>(gt_d.size()) <= pred_logd.rows(),
            "tts_loss: more duration targets than predicted slots");

  TtsLossBreakdown out;

  double abssum = 0.0;
  for (Index i = 0; i < pred_mel.numel(); ++i) abssum += std::abs(pred_mel[i] - gt_mel[i]);
  out.l1 = abssum * (1.0 / static_cast<double>(pred_mel.numel()));

  double lo = 0.0, range = 0.0;
  mel_norm_bounds(gt_mel, &lo, &range);
  if (bitwise_equal(pred_mel, gt_mel)) {
    out.ssim_term = 0.0;  // identical inputs define SSIM as 1, flat or not
  } else {
    const double inv = 1.0 / range;
    Tensor an(pred_mel.rows(), pred_mel.cols()), bn(gt_mel.rows(), gt_mel.cols());
    for (Index i = 0; i < pred_mel.numel(); ++i) {
      an[i] = (pred_mel[i] + -lo) * inv;
      bn[i] = (gt_mel[i] + -lo) * inv;
    }
    out.ssim_term = 1.0 - ssim(an, bn);
  }

  double sq = 0.0;
  for (std::size_t i = 0; i < gt_d.size(); ++i) {
    ITS_CHECK(gt_d[i] >= 1, "tts_loss: duration targets must be >= 1");
    const double d = pred_logd(static_cast<Index>(i), 0) -
                     std::log1p(static_cast<double>(gt_d[i]));
    sq += d * d;
  }
  out.dur_mse = sq * (1.0 / static_cast<double>(gt_d.size()));

  out.kl = kl_divergence(mu, log_sigma);
  out.total = ((out.l1 + out.ssim_term) + out.dur_mse) + cfg.kl_weight * out.kl;
  return out;
}

// ---- graph builders ----

namespace {

ad::Value conv3_graph(ad::Graph& g, ad::Value x, ad::Value w, ad::Value b) {
  ad::Value ctx = ad::concat_cols({ad::shift_rows(x, 1), x, ad::shift_rows(x, -1)});
  return ad::add_rowvec(ad::matmul(ctx, w), b);
}

}  // namespace

ad::Value duration_graph(ad::Graph& g, const TtsConfig& cfg, const std::vector<ad::Value>& params,
                         ad::Value hidden) {
  ITS_CHECK(hidden.val().cols() == cfg.cond_dim, "duration_graph: hidden width mismatch");
  ad::Value h1 = ad::gelu(conv3_graph(g, hidden, params[kDurW1], params[kDurB1]));
  return conv3_graph(g, h1, params[kDurW2], params[kDurB2]);
}

ad::Value length_regulate_graph(ad::Graph& g, ad::Value hidden,
                                const std::vector<Index>& durations) {
  (void)g;
  return ad::gather_rows(hidden, regulate_index(hidden.val().rows(), durations));
}

PosteriorOut posterior_graph(ad::Graph& g, const TtsConfig& cfg,
                             const std::vector<ad::Value>& params, ad::Value mel, ad::Value cond) {
  ITS_CHECK(mel.val().rows() == cond.val().rows(),
            "posterior_graph: mel and cond frame counts differ");
  ITS_CHECK(mel.val().cols() == cfg.n_mels, "posterior_graph: mel width mismatch");
  ITS_CHECK(cond.val().cols() == cfg.cond_dim, "posterior_graph: cond width mismatch");
  ad::Value x = ad::concat_cols({mel, cond});
  ad::Value h1 = ad::gelu(conv3_graph(g, x, params[kPostW1], params[kPostB1]));
  ad::Value h2 = ad::gelu(conv3_graph(g, h1, params[kPostW2], params[kPostB2]));
  ad::Value pooled = ad::mean_rows(h2);
  PosteriorOut out;
  out.mu = ad::add_rowvec(ad::matmul(pooled, params[kPostMuW]), params[kPostMuB]);
  out.log_sigma = ad::add_rowvec(ad::matmul(pooled, params[kPostLsW]), params[kPostLsB]);
  return out;
}

ad::Value kl_graph(ad::Graph& g, ad::Value mu, ad::Value log_sigma) {
  (void)g;
  ad::Value sig2 = ad::exp(ad::mul_scalar(log_sigma, 2.0));
  ad::Value term =
      ad::add_scalar(ad::sub(ad::add(ad::mul(mu, mu), sig2), ad::mul_scalar(log_sigma, 2.0)), -1.0);
  return ad::mul_scalar(ad::sum_all(term), 0.5);
}

ad::Value decode_graph(ad::Graph& g, const TtsConfig& cfg, const std::vector<ad::Value>& params,
                       ad::Value cond, ad::Value z) {
  ITS_CHECK(cond.val().cols() == cfg.cond_dim, "decode_graph: cond width mismatch");
  ITS_CHECK(z.val().rows() == 1 && z.val().cols() == cfg.latent_dim,
            "decode_graph: latent dim mismatch");
  ad::Value ones = g.constant(Tensor::full(cond.val().rows(), 1, 1.0));
  ad::Value zb = ad::matmul(ones, z);
  ad::Value x = ad::concat_cols({cond, zb});
  ad::Value h = ad::gelu(ad::add_rowvec(ad::matmul(x, params[kDecInW]), params[kDecInB]));
  for (Index i = 0; i < cfg.decoder_layers; ++i) {
    const int at = kDecBlocks + 2 * static_cast<int>(i);
    h = ad::add(h, ad::gelu(conv3_graph(g, h, params[at], params[at + 1])));
  }
  const int ow = dec_out_w(cfg);
  return ad::add_rowvec(ad::matmul(h, params[ow]), params[ow + 1]);
}

ad::Value ssim_graph(ad::Graph& g, ad::Value a, ad::Value b) {
  ITS_CHECK(a.val().rows() == b.val().rows() && a.val().cols() == b.val().cols(),
            "ssim_graph: shape mismatch");
  ad::Value br = g.constant(ssim_band(a.val().rows()));
  ad::Value bct = g.constant([&] {
    Tensor bc = ssim_band(a.val().cols());
    Tensor t(bc.rows(), bc.cols());
    t.mat() = bc.mat().transpose();
    return t;
  }());
  auto window = [&](ad::Value x) { return ad::matmul(ad::matmul(br, x), bct); };
  ad::Value mua = window(a), mub = window(b);
  ad::Value wa2 = window(ad::mul(a, a)), wb2 = window(ad::mul(b, b)), wab = window(ad::mul(a, b));
  ad::Value va = ad::sub(wa2, ad::mul(mua, mua));
  ad::Value vb = ad::sub(wb2, ad::mul(mub, mub));
  ad::Value cab = ad::sub(wab, ad::mul(mua, mub));
  ad::Value num = ad::mul(ad::add_scalar(ad::mul_scalar(ad::mul(mua, mub), 2.0), kSsimC1),
                          ad::add_scalar(ad::mul_scalar(cab, 2.0), kSsimC2));
  ad::Value den = ad::mul(ad::add_scalar(ad::add(ad::mul(mua, mua), ad::mul(mub, mub)), kSsimC1),
                          ad::add_scalar(ad::add(va, vb), kSsimC2));
  return ad::mean_all(ad::div(num, den));
}

TtsLossValues tts_loss_graph(ad::Graph& g, const TtsConfig& cfg,
                             const std::vector<ad::Value>& params, ad::Value hidden,
                             const Tensor& gt_mel, const std::vector<Index>& gt_d,
                             const Tensor& eps_sample) {
  cfg.validate();
  ITS_CHECK(!gt_d.empty(), "tts_loss_graph: empty duration targets");
  ITS_CHECK(static_cast<Index>(gt_d.size()) <= hidden.val().rows(),
            "tts_loss_graph: more durations than slots");
  ITS_CHECK(eps_sample.rows() == 1 && eps_sample.cols() == cfg.latent_dim,
            "tts_loss_graph: eps shape mismatch");

  const Index used = static_cast<Index>(gt_d.size());
  ad::Value logd = duration_graph(g, cfg, params, hidden);
  Tensor dur_target(used, 1);
  for (Index i = 0; i < used; ++i) {
    ITS_CHECK(gt_d[static_cast<std::size_t>(i)] >= 1,
              "tts_loss_graph: duration targets must be >= 1");
    dur_target(i, 0) = std::log1p(static_cast<double>(gt_d[static_cast<std::size_t>(i)]));
  }
  ad::Value dur_mse = ad::mse_loss(ad::slice_rows(logd, 0, used), g.constant(dur_target));

  ad::Value cond = length_regulate_graph(g, ad::slice_rows(hidden, 0, used), gt_d);
  ITS_CHECK(gt_mel.rows() == cond.val().rows(),
            "tts_loss_graph: mel frames must equal the duration sum");
  ad::Value gt = g.constant(gt_mel);
  PosteriorOut q = posterior_graph(g, cfg, params, gt, cond);
  ad::Value z = ad::add(q.mu, ad::mul(ad::exp(q.log_sigma), g.constant(eps_sample)));
  ad::Value pred = decode_graph(g, cfg, params, cond, z);

  TtsLossValues out;
  out.l1 = ad::l1_loss(pred, gt);

  double lo = 0.0, range = 0.0;
  mel_norm_bounds(gt_mel, &lo, &range);
  const double inv = 1.0 / range;
  Tensor gt_norm(gt_mel.rows(), gt_mel.cols());
  for (Index i = 0; i < gt_mel.numel(); ++i) gt_norm[i] = (gt_mel[i] + -lo) * inv;
  ad::Value an = ad::mul_scalar(ad::add_scalar(pred, -lo), inv);
  ad::Value s = ssim_graph(g, an, g.constant(gt_norm));
  out.ssim_term = ad::add_scalar(ad::mul_scalar(s, -1.0), 1.0);

  out.dur_mse = dur_mse;
  out.kl = kl_graph(g, q.mu, q.log_sigma);
  out.total = ad::add(ad::add(ad::add(out.l1, out.ssim_term), out.dur_mse),
                      ad::mul_scalar(out.kl, cfg.kl_weight));
  return out;
}

// ---- inference runner ----

template <typename S>
TtsRunner<S>::TtsRunner(const TtsModel& model) : cfg(model.cfg) {
  cfg.validate();
  validate_tts_params(cfg, model.params);
  w.reserve(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i)
    w.push_back(model.params.tensor(i).template cast<S>());
}

template <typename S>
TensorT<S> TtsRunner<S>::predict_logd(const TensorT<S>& hidden) const {
  ITS_CHECK(hidden.cols() == cfg.cond_dim, "tts runner: hidden width mismatch");
  ITS_CHECK(hidden.rows() >= 1, "tts runner: no slots");
  TensorT<S> h1 = affine_rows(conv3_ctx(hidden), w[kDurW1], w[kDurB1]);
  gelu_inplace(h1);
  return affine_rows(conv3_ctx(h1), w[kDurW2], w[kDurB2]);
}

template <typename S>
TensorT<S> TtsRunner<S>::decode(const TensorT<S>& cond, const TensorT<S>& z) const {
  ITS_CHECK(cond.cols() == cfg.cond_dim, "tts runner: cond width mismatch");
  ITS_CHECK(cond.rows() >= 1, "tts runner: no frames");
  ITS_CHECK(z.rows() == 1 && z.cols() == cfg.latent_dim, "tts runner: latent dim mismatch");
  TensorT<S> x(cond.rows(), cfg.cond_dim + cfg.latent_dim);
  x.mat().leftCols(cfg.cond_dim) = cond.mat();
  for (Index r = 0; r < x.rows(); ++r) x.mat().row(r).tail(cfg.latent_dim) = z.mat().row(0);
  TensorT<S> h = affine_rows(x, w[kDecInW], w[kDecInB]);
  gelu_inplace(h);
  for (Index i = 0; i < cfg.decoder_layers; ++i) {
    const int at = kDecBlocks + 2 * static_cast<int>(i);
    TensorT<S> f = affine_rows(conv3_ctx(h), w[at], w[at + 1]);
    gelu_inplace(f);
    h.mat() += f.mat();
  }
  const int ow = dec_out_w(cfg);
  return affine_rows(h, w[ow], w[ow + 1]);
}

template <typename S>
TensorT<S> TtsRunner<S>::hidden_to_mel(const TensorT<S>& hidden, Index used,
                                       std::vector<Index>* durations_out) const {
  ITS_CHECK(used >= 1 && used <= hidden.rows(), "tts runner: bad used slot count");
  const TensorT<S> logd = predict_logd(hidden);
  Tensor logd_d(logd.rows(), 1);
  for (Index i = 0; i < logd.rows(); ++i) logd_d(i, 0) = static_cast<double>(logd(i, 0));
  const std::vector<Index> durations = durations_from_logd(logd_d, used);

  Index frames = 0;
  for (Index d : durations) frames += d;
  TensorT<S> cond(frames, cfg.cond_dim);
  Index r = 0;
  for (Index i = 0; i < used; ++i)
    for (Index j = 0; j < durations[static_cast<std::size_t>(i)]; ++j)
      cond.mat().row(r++) = hidden.mat().row(i);

  if (durations_out) *durations_out = durations;
  return decode(cond, TensorT<S>::zeros(1, cfg.latent_dim));
}

template struct TtsRunner<double>;
template struct TtsRunner<float>;

// ---- trainer ----

void TtsTrainConfig::validate() const {
  ITS_CHECK(steps >= 1, "tts train config: steps must be >= 1");
  ITS_CHECK(batch_size >= 1, "tts train config: batch_size must be >= 1");
  ITS_CHECK(lr > 0.0, "tts train config: lr must be positive");
  ITS_CHECK(clip_threshold > 0.0, "tts train config: clip_threshold must be positive");
}

std::vector<TtsStepStats> train_tts(TtsModel& model, const std::vector<TtsSample>& data,
                                    const TtsTrainConfig& tcfg, std::uint64_t seed,
                                    std::ostream* log) {
  tcfg.validate();
  model.cfg.validate();
  validate_tts_params(model.cfg, model.params);
  ITS_CHECK(!data.empty(), "train_tts: empty dataset");
  for (const TtsSample& s : data) check_sample(s, model.cfg);

  Rng rng(seed);
  BatchSampler sampler(data.size(), tcfg.batch_size, rng.fork(1));
  Rng eps_rng = rng.fork(2);
  AdamState opt = AdamState::like(model.params);
  const double inv_batch = 1.0 / static_cast<double>(tcfg.batch_size);

  std::vector<TtsStepStats> curve;
  curve.reserve(static_cast<std::size_t>(tcfg.steps));
  for (Index step = 0; step < tcfg.steps; ++step) {
    const std::vector<std::size_t> idx = sampler.next();
    ad::Graph g;
    std::vector<ad::Value> params = lift_params(g, model.params, true);

    TtsStepStats stats;
    ad::Value total;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const TtsSample& s = data[idx[j]];
      const Tensor eps = Tensor::randn(1, model.cfg.latent_dim, eps_rng);
      ad::Value hidden = g.constant(s.hidden);
      TtsLossValues parts =
          tts_loss_graph(g, model.cfg, params, hidden, s.mel, s.durations, eps);
      total = (j == 0) ? parts.total : ad::add(total, parts.total);
      stats.total += parts.total.val()[0];
      stats.l1 += parts.l1.val()[0];
      stats.ssim_term += parts.ssim_term.val()[0];
      stats.dur_mse += parts.dur_mse.val()[0];
      stats.kl += parts.kl.val()[0];
    }
    stats.total *= inv_batch;
    stats.l1 *= inv_batch;
    stats.ssim_term *= inv_batch;
    stats.dur_mse *= inv_batch;
    stats.kl *= inv_batch;

    g.backward(ad::mul_scalar(total, inv_batch));
    Tensor grad = clip_gradients(flat_gradient(g, params), tcfg.clip_threshold);
    adam_update(opt, model.params, grad, tcfg.lr);

    log_step(log, step, stats);
    curve.push_back(stats);
  }
  return curve;
}

TtsStepStats eval_tts(const TtsModel& model, const std::vector<TtsSample>& data) {
  model.cfg.validate();
  validate_tts_params(model.cfg, model.params);
  ITS_CHECK(!data.empty(), "eval_tts: empty dataset");

  TtsStepStats acc;
  for (const TtsSample& s : data) {
    check_sample(s, model.cfg);
    std::vector<bool> mask(static_cast<std::size_t>(s.hidden.rows()), false);
    for (Index i = 0; i < s.used_slots; ++i) mask[static_cast<std::size_t>(i)] = true;
    const Tensor logd = predict_durations(model, s.hidden, mask);

    Tensor prefix(s.used_slots, s.hidden.cols());
    prefix.mat() = s.hidden.mat().topRows(s.used_slots);
    const Tensor cond = length_regulate(prefix, s.durations);
    Tensor mu, log_sigma;
    vae_posterior(model, s.mel, cond, &mu, &log_sigma);
    const Tensor pred = mel_decode(model, cond, mu);

    const TtsLossBreakdown b =
        tts_loss(pred, s.mel, logd, s.durations, mu, log_sigma, model.cfg);
    acc.total += b.total;
    acc.l1 += b.l1;
    acc.ssim_term += b.ssim_term;
    acc.dur_mse += b.dur_mse;
    acc.kl += b.kl;
  }
  const double inv = 1.0 / static_cast<double>(data.size());
  acc.total *= inv;
  acc.l1 *= inv;
  acc.ssim_term *= inv;
  acc.dur_mse *= inv;
  acc.kl *= inv;
  return acc;
}

// ---- checkpoint plumbing ----

std::string tts_config_to_json(const TtsConfig& cfg) {
  json j = {{"cond_dim", cfg.cond_dim},   {"decoder_layers", cfg.decoder_layers},
            {"hidden", cfg.hidden},       {"kl_weight", cfg.kl_weight},
            {"latent_dim", cfg.latent_dim}, {"n_mels", cfg.n_mels}};
  return j.dump();
}

TtsConfig tts_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("tts config: ") + e.what());
  }
  TtsConfig cfg;
  try {
    cfg.cond_dim = j.at("cond_dim").get<Index>();
    cfg.decoder_layers = j.at("decoder_layers").get<Index>();
    cfg.hidden = j.at("hidden").get<Index>();
    cfg.kl_weight = j.at("kl_weight").get<double>();
    cfg.latent_dim = j.at("latent_dim").get<Index>();
    cfg.n_mels = j.at("n_mels").get<Index>();
  } catch (const json::exception& e) {
    throw IoError(std::string("tts config is missing fields: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_tts_checkpoint(const std::string& path, const TtsModel& model) {
  validate_tts_params(model.cfg, model.params);
  save_checkpoint(path, "tts", tts_config_to_json(model.cfg), model.params);
}

TtsModel load_tts_checkpoint(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  ITS_CHECK_IO(ck.kind == "tts",
               "expected a tts checkpoint, found kind '" + ck.kind + "' in " + path);
  TtsModel model;
  model.cfg = tts_config_from_json(ck.config_json);
  model.params = std::move(ck.params);
  ITS_CHECK_IO(model.params.total_elements() == count_tts_params(model.cfg),
               "checkpoint byte length disagrees with count_tts_params: " + path);
  validate_tts_params(model.cfg, model.params);
  return model;
}

}  // namespace its
