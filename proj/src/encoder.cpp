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

#include "its/encoder.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace its {

namespace {

enum class Init { kTruncNormal, kZero, kOne };

struct ParamSpec {
  std::string name;
  Index rows, cols;
  Init init;
};

// Single source of truth for parameter order and shapes. init_encoder,
// encode_graph, and the plain runner all walk this list, so they cannot
// drift apart.
std::vector<ParamSpec> param_layout(const EncoderConfig& cfg) {
  const Index p2 = cfg.patch * cfg.patch;
  const Index d1 = cfg.layer_dims.front();
  std::vector<ParamSpec> specs;
  specs.push_back({"patch.w", p2, d1, Init::kTruncNormal});
  specs.push_back({"patch.b", 1, d1, Init::kZero});
  specs.push_back({"pos", cfg.tokens() + 1, d1, Init::kZero});
  specs.push_back({"go", 1, d1, Init::kTruncNormal});
  Index d_in = d1;
  for (std::size_t i = 0; i < cfg.layer_dims.size(); ++i) {
    const Index d = cfg.layer_dims[i];
    const std::string b = "block" + std::to_string(i) + ".";
    if (d_in != d) {
      specs.push_back({b + "up.w", d_in, d, Init::kTruncNormal});
      specs.push_back({b + "up.b", 1, d, Init::kZero});
    }
    specs.push_back({b + "ln1.g", 1, d, Init::kOne});
    specs.push_back({b + "ln1.b", 1, d, Init::kZero});
    for (const char* nm : {"q", "k", "v", "o"}) {
      specs.push_back({b + "attn.w" + nm, d, d, Init::kTruncNormal});
      specs.push_back({b + "attn.b" + nm, 1, d, Init::kZero});
    }
    specs.push_back({b + "ln2.g", 1, d, Init::kOne});
    specs.push_back({b + "ln2.b", 1, d, Init::kZero});
    const Index dm = d * cfg.mlp_ratio;
    specs.push_back({b + "mlp.w1", d, dm, Init::kTruncNormal});
    specs.push_back({b + "mlp.b1", 1, dm, Init::kZero});
    specs.push_back({b + "mlp.w2", dm, d, Init::kTruncNormal});
    specs.push_back({b + "mlp.b2", 1, d, Init::kZero});
    d_in = d;
  }
  specs.push_back({"final_ln.g", 1, cfg.last_dim(), Init::kOne});
  specs.push_back({"final_ln.b", 1, cfg.last_dim(), Init::kZero});
  specs.push_back({"head.w", cfg.last_dim(), cfg.n_classes, Init::kTruncNormal});
  specs.push_back({"head.b", 1, cfg.n_classes, Init::kZero});
  return specs;
}

}  // namespace

void EncoderConfig::validate() const {
  ITS_CHECK(img_h > 0 && img_w > 0 && patch > 0, "encoder: image and patch sizes must be positive");
  ITS_CHECK(img_h % patch == 0 && img_w % patch == 0, "encoder: patch must divide image dims");
  ITS_CHECK(!layer_dims.empty(), "encoder: layer_dims is empty");
  for (Index d : layer_dims) {
    ITS_CHECK(d > 0, "encoder: layer dim must be positive");
    ITS_CHECK(heads > 0 && d % heads == 0, "encoder: heads must divide every layer dim");
  }
  ITS_CHECK(mlp_ratio >= 1, "encoder: mlp_ratio must be >= 1");
  ITS_CHECK(n_classes >= 2, "encoder: need at least the eps and [GO] classes");
  ITS_CHECK(max_seq >= 1, "encoder: max_seq must be >= 1");
  ITS_CHECK(tokens() >= max_seq, "encoder: token count must cover max_seq slots");
}

EncoderConfig EncoderConfig::desk_teacher() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::desk_student() {
  EncoderConfig cfg;
  cfg.layer_dims = {32, 32, 32, 32, 32, 64};
  return cfg;
}

Index count_params(const EncoderConfig& cfg) {
  cfg.validate();
  const Index p2 = cfg.patch * cfg.patch;
  const Index d1 = cfg.layer_dims.front();
  Index n = p2 * d1 + d1;            // patch embedding
  n += (cfg.tokens() + 1) * d1;      // positions
  n += d1;                           // [GO]
  Index d_in = d1;
  for (Index d : cfg.layer_dims) {
    if (d_in != d) n += d_in * d + d;  // up-projection
    n += 4 * (d * d + d);              // attention q,k,v,o
    const Index dm = d * cfg.mlp_ratio;
    n += d * dm + dm + dm * d + d;     // MLP
    n += 4 * d;                        // two layernorms
    d_in = d;
  }
  n += 2 * cfg.last_dim();                           // final layernorm
  n += cfg.last_dim() * cfg.n_classes + cfg.n_classes;  // shared head
  return n;
}

void validate_encoder_params(const EncoderConfig& cfg, const ParamStore& params) {
  cfg.validate();
  const auto layout = param_layout(cfg);
  ITS_CHECK(layout.size() == params.size(), "encoder params: tensor count mismatch");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    ITS_CHECK(params.name(i) == layout[i].name,
              "encoder params: expected '" + layout[i].name + "' at position " +
                  std::to_string(i) + ", found '" + params.name(i) + "'");
    const Tensor& t = params.tensor(i);
    ITS_CHECK(t.rows() == layout[i].rows && t.cols() == layout[i].cols,
              "encoder params: shape mismatch for '" + layout[i].name + "'");
  }
}

EncoderModel init_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderModel m;
  m.cfg = cfg;
  for (const ParamSpec& s : param_layout(cfg)) {
    switch (s.init) {
      case Init::kTruncNormal:
        m.params.add(s.name, Tensor::trunc_normal(s.rows, s.cols, rng, 0.02));
        break;
      case Init::kZero:
        m.params.add(s.name, Tensor(s.rows, s.cols));
        break;
      case Init::kOne:
        m.params.add(s.name, Tensor::full(s.rows, s.cols, 1.0));
        break;
    }
  }
  ITS_CHECK(m.params.total_elements() == count_params(cfg),
            "encoder: initialized element count disagrees with count_params");
  return m;
}

Tensor patchify(const EncoderConfig& cfg, const std::vector<Tensor>& images) {
  cfg.validate();
  ITS_CHECK(!images.empty(), "patchify: empty batch");
  const Index P = cfg.patch;
  const Index tr = cfg.img_h / P, tc = cfg.img_w / P;
  const Index T = tr * tc;
  Tensor out(static_cast<Index>(images.size()) * T, P * P);
  Index row = 0;
  for (const Tensor& img : images) {
    ITS_CHECK(img.rows() == cfg.img_h && img.cols() == cfg.img_w,
              "patchify: image dims do not match config");
    for (Index i = 0; i < img.numel(); ++i)
      ITS_CHECK(img[i] >= 0.0 && img[i] <= 1.0, "patchify: pixel outside [0,1]");
    for (Index pr = 0; pr < tr; ++pr)
      for (Index pc = 0; pc < tc; ++pc) {
        for (Index y = 0; y < P; ++y)
          for (Index x = 0; x < P; ++x) out(row, y * P + x) = img(pr * P + y, pc * P + x);
        ++row;
      }
  }
  return out;
}

EncodeOut encode_graph(ad::Graph& g, const EncoderConfig& cfg,
                       const std::vector<ad::Value>& params, const Tensor& patches, Index batch,
                       std::vector<Tensor>* attn_capture) {
  using namespace ad;
  cfg.validate();
  const Index T = cfg.tokens(), L = T + 1, S = cfg.max_seq;
  const Index P2 = cfg.patch * cfg.patch;
  ITS_CHECK(batch >= 1, "encode: empty batch");
  ITS_CHECK(patches.rows() == batch * T && patches.cols() == P2,
            "encode: patch matrix does not match config/batch");

  std::size_t cur = 0;
  auto next = [&]() -> Value {
    ITS_CHECK(cur < params.size(), "encode: parameter list too short");
    return params[cur++];
  };

  Value patch_w = next(), patch_b = next(), pos = next(), go = next();
  Value x = add_rowvec(matmul(g.constant(patches), patch_w), patch_b);  // (B*T) x d1

  // Interleave the [GO] token ahead of each image's patch tokens; gathering
  // from a [go; x] stack scatter-adds the [GO] gradient across the batch.
  std::vector<Index> inter;
  inter.reserve(static_cast<std::size_t>(batch * L));
  for (Index b = 0; b < batch; ++b) {
    inter.push_back(0);
    for (Index t = 0; t < T; ++t) inter.push_back(1 + b * T + t);
  }
  Value seq = gather_rows(concat_rows({go, x}), std::move(inter));

  std::vector<Index> posidx;
  posidx.reserve(static_cast<std::size_t>(batch * L));
  for (Index b = 0; b < batch; ++b)
    for (Index l = 0; l < L; ++l) posidx.push_back(l);
  seq = add(seq, gather_rows(pos, std::move(posidx)));

  Index d_in = cfg.layer_dims.front();
  for (Index d : cfg.layer_dims) {
    if (d_in != d) {
      // bind in two statements: argument evaluation order is unsequenced
      Value up_w = next();
      Value up_b = next();
      seq = add_rowvec(matmul(seq, up_w), up_b);
    }
    Value ln1_g = next(), ln1_b = next();
    Value h = layernorm(seq, ln1_g, ln1_b);
    Value wq = next(), bq = next(), wk = next(), bk = next(), wv = next(), bv = next();
    Value wo = next(), bo = next();
    const Index dh = d / cfg.heads;
    Value q = mul_scalar(add_rowvec(matmul(h, wq), bq), 1.0 / std::sqrt(static_cast<double>(dh)));
    Value k = add_rowvec(matmul(h, wk), bk);
    Value v = add_rowvec(matmul(h, wv), bv);
    std::vector<Value> ctx_rows;
    ctx_rows.reserve(static_cast<std::size_t>(batch));
    for (Index b = 0; b < batch; ++b) {
      Value qb = slice_rows(q, b * L, L), kb = slice_rows(k, b * L, L), vb = slice_rows(v, b * L, L);
      std::vector<Value> heads;
      heads.reserve(static_cast<std::size_t>(cfg.heads));
      for (Index hh = 0; hh < cfg.heads; ++hh) {
        Value qh = slice_cols(qb, hh * dh, dh);
        Value kh = slice_cols(kb, hh * dh, dh);
        Value vh = slice_cols(vb, hh * dh, dh);
        Value att = softmax_rows(matmul(qh, transpose(kh)));
        if (attn_capture) attn_capture->push_back(att.val());
        heads.push_back(matmul(att, vh));
      }
      ctx_rows.push_back(concat_cols(heads));
    }
    Value ctx = batch == 1 ? ctx_rows[0] : concat_rows(ctx_rows);
    seq = add(seq, add_rowvec(matmul(ctx, wo), bo));

    Value ln2_g = next(), ln2_b = next();
    Value h2 = layernorm(seq, ln2_g, ln2_b);
    Value w1 = next(), b1 = next(), w2 = next(), b2 = next();
    seq = add(seq, add_rowvec(matmul(gelu(add_rowvec(matmul(h2, w1), b1)), w2), b2));
    d_in = d;
  }

  Value fg = next(), fb = next();
  seq = layernorm(seq, fg, fb);

  std::vector<Index> slots;
  slots.reserve(static_cast<std::size_t>(batch * S));
  for (Index b = 0; b < batch; ++b)
    for (Index s = 1; s <= S; ++s) slots.push_back(b * L + s);
  Value hidden = gather_rows(seq, std::move(slots));  // (B*S) x d_last

  Value head_w = next(), head_b = next();
  Value logits = add_rowvec(matmul(hidden, head_w), head_b);
  ITS_CHECK(cur == params.size(), "encode: parameter list too long");
  return {logits, hidden};
}

// ---- graph-free forward ----

namespace {

template <typename S>
void ln_rows_plain(TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias, S eps) {
  const Index rows = x.rows(), cols = x.cols();
  for (Index r = 0; r < rows; ++r) {
    S* row = x.data() + r * cols;
    S mu = S(0);
    for (Index i = 0; i < cols; ++i) mu += row[i];
    mu /= static_cast<S>(cols);
    S var = S(0);
    for (Index i = 0; i < cols; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<S>(cols);
    const S inv = S(1) / std::sqrt(var + eps);
    for (Index i = 0; i < cols; ++i) row[i] = (row[i] - mu) * inv * gain[i] + bias[i];
  }
}

template <typename S>
void softmax_rows_plain(TensorT<S>& x) {
  const Index rows = x.rows(), cols = x.cols();
  for (Index r = 0; r < rows; ++r) {
    S* row = x.data() + r * cols;
    S m = row[0];
    for (Index i = 1; i < cols; ++i)
      if (row[i] > m) m = row[i];
    S z = S(0);
    for (Index i = 0; i < cols; ++i) {
      row[i] = std::exp(row[i] - m);
      z += row[i];
    }
    for (Index i = 0; i < cols; ++i) row[i] /= z;
  }
}

template <typename S>
void gelu_plain(TensorT<S>& x) {
  const S c0 = static_cast<S>(0.7978845608), c1 = static_cast<S>(0.044715);
  for (Index i = 0; i < x.numel(); ++i) {
    const S v = x[i];
    x[i] = S(0.5) * v * (S(1) + std::tanh(c0 * (v + c1 * v * v * v)));
  }
}

// x * w + b (b broadcast over rows)
template <typename S>
TensorT<S> affine_plain(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  TensorT<S> out(x.rows(), w.cols());
  out.mat().noalias() = x.mat() * w.mat();
  out.mat().rowwise() += b.mat().row(0);
  return out;
}

// x * w + b with one scalar dot product per output element.  Eigen's packed
// GEMM is faster, but its row-remainder kernels accumulate tail rows in a
// different order than body rows, so two identical input rows can differ in
// the last ulp of the product depending on where they sit.  The per-image
// path promises that equal rows produce bitwise-equal outputs, so it pays
// the scalar cost (row budgets are tiny at batch 1).
template <typename S>
TensorT<S> affine_rows_fixed(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  const Index rows = x.rows(), inner = x.cols(), cols = w.cols();
  TensorT<S> out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const S* xi = x.data() + i * inner;
    for (Index j = 0; j < cols; ++j) {
      S acc = S(0);
      for (Index k = 0; k < inner; ++k) acc += xi[k] * w(k, j);
      out(i, j) = acc + b[j];
    }
  }
  return out;
}

}  // namespace

template <typename S>
EncoderRunner<S>::EncoderRunner(const EncoderModel& model) : cfg(model.cfg) {
  validate_encoder_params(cfg, model.params);
  w.reserve(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i)
    w.push_back(model.params.tensor(i).template cast<S>());
}

template <typename S>
void EncoderRunner<S>::run_batch(const TensorT<S>& patches, Index batch, TensorT<S>* logits,
                                 TensorT<S>* hidden) const {
  const Index T = cfg.tokens(), L = T + 1, Smax = cfg.max_seq;
  ITS_CHECK(batch >= 1 && patches.rows() == batch * T && patches.cols() == cfg.patch * cfg.patch,
            "encode: patch matrix does not match config/batch");
  const S eps = static_cast<S>(1e-5);
  std::size_t cur = 0;
  auto next = [&]() -> const TensorT<S>& { return w[cur++]; };

  const TensorT<S>& patch_w = next();
  const TensorT<S>& patch_b = next();
  const TensorT<S>& pos = next();
  const TensorT<S>& go = next();

  TensorT<S> seq(batch * L, cfg.layer_dims.front());
  {
    TensorT<S> x = affine_plain(patches, patch_w, patch_b);
    for (Index b = 0; b < batch; ++b) {
      seq.mat().row(b * L) = go.mat().row(0) + pos.mat().row(0);
      for (Index t = 0; t < T; ++t)
        seq.mat().row(b * L + 1 + t) = x.mat().row(b * T + t) + pos.mat().row(1 + t);
    }
  }

  Index d_in = cfg.layer_dims.front();
  for (Index d : cfg.layer_dims) {
    if (d_in != d) {
      const TensorT<S>& up_w = next();
      const TensorT<S>& up_b = next();
      seq = affine_plain(seq, up_w, up_b);
    }
    const TensorT<S>& ln1_g = next();
    const TensorT<S>& ln1_b = next();
    TensorT<S> h = seq;
    ln_rows_plain(h, ln1_g, ln1_b, eps);
    const TensorT<S>& wq = next();
    const TensorT<S>& bq = next();
    const TensorT<S>& wk = next();
    const TensorT<S>& bk = next();
    const TensorT<S>& wv = next();
    const TensorT<S>& bv = next();
    const TensorT<S>& wo = next();
    const TensorT<S>& bo = next();
    const Index dh = d / cfg.heads;
    TensorT<S> q = affine_plain(h, wq, bq);
    q.vec() *= S(1) / std::sqrt(static_cast<S>(dh));
    TensorT<S> k = affine_plain(h, wk, bk);
    TensorT<S> v = affine_plain(h, wv, bv);
    TensorT<S> ctx(batch * L, d);
    TensorT<S> sc(L, L);
    for (Index b = 0; b < batch; ++b)
      for (Index hh = 0; hh < cfg.heads; ++hh) {
        auto qb = q.mat().block(b * L, hh * dh, L, dh);
        auto kb = k.mat().block(b * L, hh * dh, L, dh);
        auto vb = v.mat().block(b * L, hh * dh, L, dh);
        sc.mat().noalias() = qb * kb.transpose();
        softmax_rows_plain(sc);
        ctx.mat().block(b * L, hh * dh, L, dh).noalias() = sc.mat() * vb;
      }
    seq.mat() += affine_plain(ctx, wo, bo).mat();

    const TensorT<S>& ln2_g = next();
    const TensorT<S>& ln2_b = next();
    TensorT<S> h2 = seq;
    ln_rows_plain(h2, ln2_g, ln2_b, eps);
    const TensorT<S>& w1 = next();
    const TensorT<S>& b1 = next();
    const TensorT<S>& w2 = next();
    const TensorT<S>& b2 = next();
    TensorT<S> m = affine_plain(h2, w1, b1);
    gelu_plain(m);
    seq.mat() += affine_plain(m, w2, b2).mat();
    d_in = d;
  }

  const TensorT<S>& fg = next();
  const TensorT<S>& fb = next();
  ln_rows_plain(seq, fg, fb, eps);

  TensorT<S> hid(batch * Smax, cfg.last_dim());
  for (Index b = 0; b < batch; ++b)
    for (Index s = 0; s < Smax; ++s) hid.mat().row(b * Smax + s) = seq.mat().row(b * L + 1 + s);

  const TensorT<S>& head_w = next();
  const TensorT<S>& head_b = next();
  ITS_CHECK(cur == w.size(), "encode: parameter cursor mismatch");
  if (logits) *logits = affine_plain(hid, head_w, head_b);
  if (hidden) *hidden = std::move(hid);
}

// Per-image forward.  Mirrors run_batch at batch 1 but uses the fixed-order
// scalar affine so the arithmetic applied to a row never depends on the
// row's position.  With zero position embeddings, equal slot inputs then
// yield bitwise-equal logit rows, which run_batch's GEMM does not guarantee.
template <typename S>
void EncoderRunner<S>::run(const TensorT<S>& image, TensorT<S>* logits, TensorT<S>* hidden) const {
  ITS_CHECK(image.rows() == cfg.img_h && image.cols() == cfg.img_w,
            "encode: image dims do not match config");
  const Index P = cfg.patch;
  const Index tr = cfg.img_h / P, tc = cfg.img_w / P;
  const Index T = cfg.tokens(), L = T + 1, Smax = cfg.max_seq;
  const S eps = static_cast<S>(1e-5);
  TensorT<S> patches(tr * tc, P * P);
  Index row = 0;
  for (Index pr = 0; pr < tr; ++pr)
    for (Index pc = 0; pc < tc; ++pc) {
      for (Index y = 0; y < P; ++y)
        for (Index x = 0; x < P; ++x) patches(row, y * P + x) = image(pr * P + y, pc * P + x);
      ++row;
    }

  std::size_t cur = 0;
  auto next = [&]() -> const TensorT<S>& { return w[cur++]; };

  const TensorT<S>& patch_w = next();
  const TensorT<S>& patch_b = next();
  const TensorT<S>& pos = next();
  const TensorT<S>& go = next();

  TensorT<S> seq(L, cfg.layer_dims.front());
  {
    TensorT<S> x = affine_rows_fixed(patches, patch_w, patch_b);
    seq.mat().row(0) = go.mat().row(0) + pos.mat().row(0);
    for (Index t = 0; t < T; ++t) seq.mat().row(1 + t) = x.mat().row(t) + pos.mat().row(1 + t);
  }

  Index d_in = cfg.layer_dims.front();
  for (Index d : cfg.layer_dims) {
    if (d_in != d) {
      const TensorT<S>& up_w = next();
      const TensorT<S>& up_b = next();
      seq = affine_rows_fixed(seq, up_w, up_b);
    }
    const TensorT<S>& ln1_g = next();
    const TensorT<S>& ln1_b = next();
    TensorT<S> h = seq;
    ln_rows_plain(h, ln1_g, ln1_b, eps);
    const TensorT<S>& wq = next();
    const TensorT<S>& bq = next();
    const TensorT<S>& wk = next();
    const TensorT<S>& bk = next();
    const TensorT<S>& wv = next();
    const TensorT<S>& bv = next();
    const TensorT<S>& wo = next();
    const TensorT<S>& bo = next();
    const Index dh = d / cfg.heads;
    TensorT<S> q = affine_rows_fixed(h, wq, bq);
    q.vec() *= S(1) / std::sqrt(static_cast<S>(dh));
    TensorT<S> k = affine_rows_fixed(h, wk, bk);
    TensorT<S> v = affine_rows_fixed(h, wv, bv);
    TensorT<S> ctx(L, d);
    TensorT<S> sc(L, L);
    for (Index hh = 0; hh < cfg.heads; ++hh) {
      const Index off = hh * dh;
      for (Index i = 0; i < L; ++i)
        for (Index j = 0; j < L; ++j) {
          S acc = S(0);
          for (Index c = 0; c < dh; ++c) acc += q(i, off + c) * k(j, off + c);
          sc(i, j) = acc;
        }
      softmax_rows_plain(sc);
      for (Index i = 0; i < L; ++i)
        for (Index c = 0; c < dh; ++c) {
          S acc = S(0);
          for (Index j = 0; j < L; ++j) acc += sc(i, j) * v(j, off + c);
          ctx(i, off + c) = acc;
        }
    }
    seq.mat() += affine_rows_fixed(ctx, wo, bo).mat();

    const TensorT<S>& ln2_g = next();
    const TensorT<S>& ln2_b = next();
    TensorT<S> h2 = seq;
    ln_rows_plain(h2, ln2_g, ln2_b, eps);
    const TensorT<S>& w1 = next();
    const TensorT<S>& b1 = next();
    const TensorT<S>& w2 = next();
    const TensorT<S>& b2 = next();
    TensorT<S> m = affine_rows_fixed(h2, w1, b1);
    gelu_plain(m);
    seq.mat() += affine_rows_fixed(m, w2, b2).mat();
    d_in = d;
  }

  const TensorT<S>& fg = next();
  const TensorT<S>& fb = next();
  ln_rows_plain(seq, fg, fb, eps);

  TensorT<S> hid(Smax, cfg.last_dim());
  for (Index s = 0; s < Smax; ++s) hid.mat().row(s) = seq.mat().row(1 + s);

  const TensorT<S>& head_w = next();
  const TensorT<S>& head_b = next();
  ITS_CHECK(cur == w.size(), "encode: parameter cursor mismatch");
  if (logits) *logits = affine_rows_fixed(hid, head_w, head_b);
  if (hidden) *hidden = std::move(hid);
}

template struct EncoderRunner<double>;
template struct EncoderRunner<float>;

template <typename S>
TensorT<S> encode_plain(const EncoderModel& model, const TensorT<S>& image) {
  TensorT<S> logits;
  EncoderRunner<S>(model).run(image, &logits, nullptr);
  return logits;
}

template Tensor encode_plain<double>(const EncoderModel&, const Tensor&);
template TensorF encode_plain<float>(const EncoderModel&, const TensorF&);

template <typename S>
void encode_plain_full(const EncoderModel& model, const TensorT<S>& image, TensorT<S>* logits,
                       TensorT<S>* hidden) {
  EncoderRunner<S>(model).run(image, logits, hidden);
}

template void encode_plain_full<double>(const EncoderModel&, const Tensor&, Tensor*, Tensor*);
template void encode_plain_full<float>(const EncoderModel&, const TensorF&, TensorF*, TensorF*);

std::vector<Index> decode_phonemes(const Tensor& logits, Index n_classes) {
  ITS_CHECK(n_classes >= 2, "decode: need at least the eps and [GO] classes");
  ITS_CHECK(logits.cols() == n_classes, "decode: class count mismatch");
  const Index eps_id = n_classes - 2, go_id = n_classes - 1;
  std::vector<Index> out;
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < n_classes; ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    if (best == eps_id) break;
    if (best == go_id) continue;
    out.push_back(best);
  }
  return out;
}

}  // namespace its
