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

#include "its/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "its/reduce.hpp"

namespace its::ad {

namespace {

constexpr double kGeluC0 = 0.7978845608;  // sqrt(2/pi), fixed constant
constexpr double kGeluC1 = 0.044715;
constexpr double kLogClamp = 1e-12;

void check_same_graph(Value a, Value b) {
  ITS_CHECK(a.valid() && b.valid() && a.g == b.g, "values belong to different graphs");
}

}  // namespace

Value Graph::emit(const char* op, std::vector<int> ins, Tensor val,
                  std::function<void(Graph&, int)> back, bool force_needs_grad) {
  if (!val.all_finite()) throw NumericError(std::string("non-finite output of op ") + op);
  Node n;
  n.op = op;
  n.ins = std::move(ins);
  n.needs_grad = force_needs_grad;
  for (int i : n.ins) {
    if (node(i).needs_grad) n.needs_grad = true;
  }
  n.val = std::move(val);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Value Graph::leaf(Tensor t) {
  const bool rg = t.requires_grad;
  return emit("leaf", {}, std::move(t), nullptr, rg);
}

Value Graph::constant(Tensor t) {
  t.requires_grad = false;
  return emit("const", {}, std::move(t), nullptr, false);
}

Tensor& Graph::ensure_grad(int id) {
  Node& n = node(id);
  if (!n.has_grad) {
    n.grad = Tensor(n.val.rows(), n.val.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::accumulate(int id, const Tensor& g) {
  ensure_grad(id).vec() += g.vec();
}

void Graph::backward(Value loss) {
  ITS_CHECK(loss.valid() && loss.g == this, "loss is not a node of this graph");
  ITS_CHECK(loss.g->node(loss.id).val.numel() == 1, "loss must be scalar");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  // Reverse reachability from the loss through grad-requiring edges.
  std::vector<char> live(nodes_.size(), 0);
  std::vector<int> stack{loss.id};
  live[static_cast<std::size_t>(loss.id)] = 1;
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    for (int i : node(id).ins) {
      if (!live[static_cast<std::size_t>(i)] && node(i).needs_grad) {
        live[static_cast<std::size_t>(i)] = 1;
        stack.push_back(i);
      }
    }
  }
  ensure_grad(loss.id).vec().setConstant(1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = node(id);
    if (!live[static_cast<std::size_t>(id)] || !n.has_grad || !n.back) continue;
    n.back(*this, id);
  }
}

Tensor Graph::grad(Value v) const {
  ITS_CHECK(v.valid() && v.g == this, "value is not a node of this graph");
  const Node& n = node(v.id);
  if (n.has_grad) return n.grad;
  return Tensor(n.val.rows(), n.val.cols());
}

// ---- op helpers ----

namespace {

using MapMat = Tensor::MapMat;
using CMapMat = Tensor::CMapMat;

// Propagate into an input only if it can reach a grad-requiring leaf.
bool wants(Graph& g, int id) { return g.node(id).needs_grad; }

}  // namespace

Value add(Value a, Value b) {
  check_same_graph(a, b);
  ITS_CHECK(same_shape(a.val(), b.val()), "add: shape mismatch");
  Tensor out = a.val();
  out.vec() += b.val().vec();
  const int ia = a.id, ib = b.id;
  return a.g->emit("add", {ia, ib}, std::move(out), [ia, ib](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    if (wants(g, ia)) g.accumulate(ia, go);
    if (wants(g, ib)) g.accumulate(ib, go);
  });
}

Value sub(Value a, Value b) {
  check_same_graph(a, b);
  ITS_CHECK(same_shape(a.val(), b.val()), "sub: shape mismatch");
  Tensor out = a.val();
  out.vec() -= b.val().vec();
  const int ia = a.id, ib = b.id;
  return a.g->emit("sub", {ia, ib}, std::move(out), [ia, ib](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    if (wants(g, ia)) g.accumulate(ia, go);
    if (wants(g, ib)) g.ensure_grad(ib).vec() -= go.vec();
  });
}

Value mul(Value a, Value b) {
  check_same_graph(a, b);
  ITS_CHECK(same_shape(a.val(), b.val()), "mul: shape mismatch");
  Tensor out = a.val();
  out.vec().array() *= b.val().vec().array();
  const int ia = a.id, ib = b.id;
  return a.g->emit("mul", {ia, ib}, std::move(out), [ia, ib](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    if (wants(g, ia))
      g.ensure_grad(ia).vec().array() += go.vec().array() * g.node(ib).val.vec().array();
    if (wants(g, ib))
      g.ensure_grad(ib).vec().array() += go.vec().array() * g.node(ia).val.vec().array();
  });
}

Value div(Value a, Value b) {
  check_same_graph(a, b);
  ITS_CHECK(same_shape(a.val(), b.val()), "div: shape mismatch");
  Tensor out = a.val();
  out.vec().array() /= b.val().vec().array();
  const int ia = a.id, ib = b.id;
  return a.g->emit("div", {ia, ib}, std::move(out), [ia, ib](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    const auto bv = g.node(ib).val.vec().array();
    if (wants(g, ia)) g.ensure_grad(ia).vec().array() += go.vec().array() / bv;
    if (wants(g, ib)) {
      const auto av = g.node(ia).val.vec().array();
      g.ensure_grad(ib).vec().array() -= go.vec().array() * av / (bv * bv);
    }
  });
}

Value add_scalar(Value a, double s) {
  Tensor out = a.val();
  out.vec().array() += s;
  const int ia = a.id;
  return a.g->emit("add_scalar", {ia}, std::move(out), [ia](Graph& g, int id) {
    if (wants(g, ia)) g.accumulate(ia, g.node(id).grad);
  });
}

Value mul_scalar(Value a, double s) {
  Tensor out = a.val();
  out.vec() *= s;
  const int ia = a.id;
  return a.g->emit("mul_scalar", {ia}, std::move(out), [ia, s](Graph& g, int id) {
    if (wants(g, ia)) g.ensure_grad(ia).vec() += s * g.node(id).grad.vec();
  });
}

Value exp(Value a) {
  Tensor out = a.val();
  for (Index i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  const int ia = a.id;
  return a.g->emit("exp", {ia}, std::move(out), [ia](Graph& g, int id) {
    if (wants(g, ia))
      g.ensure_grad(ia).vec().array() += g.node(id).grad.vec().array() * g.node(id).val.vec().array();
  });
}

Value log(Value a) {
  Tensor out = a.val();
  for (Index i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(out[i], kLogClamp));
  const int ia = a.id;
  return a.g->emit("log", {ia}, std::move(out), [ia](Graph& g, int id) {
    if (!wants(g, ia)) return;
    const auto av = g.node(ia).val.vec().array();
    // zero subgradient below the clamp
    g.ensure_grad(ia).vec().array() +=
        (av > kLogClamp).select(g.node(id).grad.vec().array() / av.max(kLogClamp), 0.0);
  });
}

Value matmul(Value a, Value b) {
  check_same_graph(a, b);
  ITS_CHECK(a.val().cols() == b.val().rows(), "matmul: inner dims mismatch");
  Tensor out(a.val().rows(), b.val().cols());
  out.mat().noalias() = a.val().mat() * b.val().mat();
  const int ia = a.id, ib = b.id;
  return a.g->emit("matmul", {ia, ib}, std::move(out), [ia, ib](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    if (wants(g, ia))
      g.ensure_grad(ia).mat().noalias() += go.mat() * g.node(ib).val.mat().transpose();
    if (wants(g, ib))
      g.ensure_grad(ib).mat().noalias() += g.node(ia).val.mat().transpose() * go.mat();
  });
}

Value transpose(Value a) {
  Tensor out(a.val().cols(), a.val().rows());
  out.mat() = a.val().mat().transpose();
  const int ia = a.id;
  return a.g->emit("transpose", {ia}, std::move(out), [ia](Graph& g, int id) {
    if (wants(g, ia)) g.ensure_grad(ia).mat() += g.node(id).grad.mat().transpose();
  });
}

Value slice_rows(Value a, Index r0, Index n) {
  ITS_CHECK(r0 >= 0 && n >= 0 && r0 + n <= a.val().rows(), "slice_rows: out of range");
  Tensor out(n, a.val().cols());
  out.mat() = a.val().mat().middleRows(r0, n);
  const int ia = a.id;
  return a.g->emit("slice_rows", {ia}, std::move(out), [ia, r0, n](Graph& g, int id) {
    if (wants(g, ia)) g.ensure_grad(ia).mat().middleRows(r0, n) += g.node(id).grad.mat();
  });
}

Value slice_cols(Value a, Index c0, Index n) {
  ITS_CHECK(c0 >= 0 && n >= 0 && c0 + n <= a.val().cols(), "slice_cols: out of range");
  Tensor out(a.val().rows(), n);
  out.mat() = a.val().mat().middleCols(c0, n);
  const int ia = a.id;
  return a.g->emit("slice_cols", {ia}, std::move(out), [ia, c0, n](Graph& g, int id) {
    if (wants(g, ia)) g.ensure_grad(ia).mat().middleCols(c0, n) += g.node(id).grad.mat();
  });
}

Value concat_rows(const std::vector<Value>& parts) {
  ITS_CHECK(!parts.empty(), "concat_rows: empty");
  Graph* g = parts[0].g;
  Index rows = 0;
  const Index cols = parts[0].val().cols();
  std::vector<int> ins;
  for (const Value& p : parts) {
    check_same_graph(parts[0], p);
    ITS_CHECK(p.val().cols() == cols, "concat_rows: column mismatch");
    rows += p.val().rows();
    ins.push_back(p.id);
  }
  Tensor out(rows, cols);
  Index r = 0;
  for (const Value& p : parts) {
    out.mat().middleRows(r, p.val().rows()) = p.val().mat();
    r += p.val().rows();
  }
  return g->emit("concat_rows", ins, std::move(out), [](Graph& gg, int id) {
    const auto& n = gg.node(id);
    Index r = 0;
    for (int in : n.ins) {
      const Index nr = gg.node(in).val.rows();
      if (wants(gg, in)) gg.ensure_grad(in).mat() += n.grad.mat().middleRows(r, nr);
      r += nr;
    }
  });
}

Value concat_cols(const std::vector<Value>& parts) {
  ITS_CHECK(!parts.empty(), "concat_cols: empty");
  Graph* g = parts[0].g;
  Index cols = 0;
  const Index rows = parts[0].val().rows();
  std::vector<int> ins;
  for (const Value& p : parts) {
    check_same_graph(parts[0], p);
    ITS_CHECK(p.val().rows() == rows, "concat_cols: row mismatch");
    cols += p.val().cols();
    ins.push_back(p.id);
  }
  Tensor out(rows, cols);
  Index c = 0;
  for (const Value& p : parts) {
    out.mat().middleCols(c, p.val().cols()) = p.val().mat();
    c += p.val().cols();
  }
  return g->emit("concat_cols", ins, std::move(out), [](Graph& gg, int id) {
    const auto& n = gg.node(id);
    Index c = 0;
    for (int in : n.ins) {
      const Index nc = gg.node(in).val.cols();
      if (wants(gg, in)) gg.ensure_grad(in).mat() += n.grad.mat().middleCols(c, nc);
      c += nc;
    }
  });
}

Value gather_rows(Value a, std::vector<Index> idx) {
  const Index rows = a.val().rows();
  for (Index i : idx) ITS_CHECK(i >= 0 && i < rows, "gather_rows: index out of range");
  Tensor out(static_cast<Index>(idx.size()), a.val().cols());
  for (Index i = 0; i < out.rows(); ++i)
    out.mat().row(i) = a.val().mat().row(idx[static_cast<std::size_t>(i)]);
  const int ia = a.id;
  return a.g->emit("gather_rows", {ia}, std::move(out),
                   [ia, idx = std::move(idx)](Graph& g, int id) {
                     if (!wants(g, ia)) return;
                     Tensor& ga = g.ensure_grad(ia);
                     const Tensor& go = g.node(id).grad;
                     for (std::size_t i = 0; i < idx.size(); ++i)
                       ga.mat().row(idx[i]) += go.mat().row(static_cast<Index>(i));
                   });
}

Value shift_rows(Value a, Index offset) {
  const Index rows = a.val().rows();
  Tensor out(rows, a.val().cols());
  for (Index i = 0; i < rows; ++i) {
    const Index src = i - offset;
    if (src >= 0 && src < rows) out.mat().row(i) = a.val().mat().row(src);
  }
  const int ia = a.id;
  return a.g->emit("shift_rows", {ia}, std::move(out), [ia, offset, rows](Graph& g, int id) {
    if (!wants(g, ia)) return;
    Tensor& ga = g.ensure_grad(ia);
    const Tensor& go = g.node(id).grad;
    for (Index i = 0; i < rows; ++i) {
      const Index src = i - offset;
      if (src >= 0 && src < rows) ga.mat().row(src) += go.mat().row(i);
    }
  });
}

Value sum_all(Value a) {
  Tensor out = Tensor::scalar(fixed_sum(a.val().data(), a.val().numel()));
  const int ia = a.id;
  return a.g->emit("sum", {ia}, std::move(out), [ia](Graph& g, int id) {
    if (wants(g, ia)) g.ensure_grad(ia).vec().array() += g.node(id).grad[0];
  });
}

Value mean_all(Value a) {
  ITS_CHECK(a.val().numel() > 0, "mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.val().numel());
  Tensor out = Tensor::scalar(fixed_sum(a.val().data(), a.val().numel()) * inv);
  const int ia = a.id;
  return a.g->emit("mean", {ia}, std::move(out), [ia, inv](Graph& g, int id) {
    if (wants(g, ia)) g.ensure_grad(ia).vec().array() += g.node(id).grad[0] * inv;
  });
}

Value mean_rows(Value a) {
  ITS_CHECK(a.val().rows() > 0, "mean_rows: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.val().rows());
  Tensor out(1, a.val().cols());
  for (Index r = 0; r < a.val().rows(); ++r) out.mat().row(0) += a.val().mat().row(r);
  out.vec() *= inv;
  const int ia = a.id;
  return a.g->emit("mean_rows", {ia}, std::move(out), [ia, inv](Graph& g, int id) {
    if (!wants(g, ia)) return;
    Tensor& ga = g.ensure_grad(ia);
    const Tensor& go = g.node(id).grad;
    ga.mat().rowwise() += (go.mat().row(0) * inv).eval().row(0);
  });
}

Value add_rowvec(Value x, Value b) {
  check_same_graph(x, b);
  ITS_CHECK(b.val().rows() == 1 && b.val().cols() == x.val().cols(), "add_rowvec: bias shape");
  Tensor out = x.val();
  out.mat().rowwise() += b.val().mat().row(0);
  const int ix = x.id, ib = b.id;
  return x.g->emit("add_rowvec", {ix, ib}, std::move(out), [ix, ib](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    if (wants(g, ix)) g.accumulate(ix, go);
    if (wants(g, ib)) {
      Tensor& gb = g.ensure_grad(ib);
      for (Index r = 0; r < go.rows(); ++r) gb.mat().row(0) += go.mat().row(r);
    }
  });
}

Value layernorm(Value x, Value gain, Value bias, double eps) {
  check_same_graph(x, gain);
  check_same_graph(x, bias);
  const Index rows = x.val().rows(), cols = x.val().cols();
  ITS_CHECK(gain.val().rows() == 1 && gain.val().cols() == cols, "layernorm: gain shape");
  ITS_CHECK(bias.val().rows() == 1 && bias.val().cols() == cols, "layernorm: bias shape");
  Tensor xhat(rows, cols);
  Tensor inv_std(rows, 1);
  for (Index r = 0; r < rows; ++r) {
    const double* row = x.val().data() + r * cols;
    const double mu = fixed_sum(row, cols) / static_cast<double>(cols);
    double var = 0.0;
    for (Index i = 0; i < cols; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(cols);
    const double s = 1.0 / std::sqrt(var + eps);
    inv_std(r, 0) = s;
    for (Index i = 0; i < cols; ++i) xhat(r, i) = (row[i] - mu) * s;
  }
  Tensor out(rows, cols);
  out.mat() = xhat.mat().array().rowwise() * gain.val().mat().row(0).array();
  out.mat().rowwise() += bias.val().mat().row(0);
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return x.g->emit(
      "layernorm", {ix, ig, ib}, std::move(out),
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, int id) {
        const Tensor& go = g.node(id).grad;
        const Index rows = go.rows(), cols = go.cols();
        if (wants(g, ig)) {
          Tensor& gg = g.ensure_grad(ig);
          for (Index r = 0; r < rows; ++r)
            gg.mat().row(0).array() += go.mat().row(r).array() * xhat.mat().row(r).array();
        }
        if (wants(g, ib)) {
          Tensor& gb = g.ensure_grad(ib);
          for (Index r = 0; r < rows; ++r) gb.mat().row(0) += go.mat().row(r);
        }
        if (!wants(g, ix)) return;
        Tensor& gx = g.ensure_grad(ix);
        const auto gainrow = g.node(ig).val.mat().row(0).array();
        const double invn = 1.0 / static_cast<double>(cols);
        for (Index r = 0; r < rows; ++r) {
          const auto dxhat = (go.mat().row(r).array() * gainrow).eval();
          const double m1 = fixed_sum(dxhat.data(), cols) * invn;
          const double m2 = fixed_dot(dxhat.data(), xhat.data() + r * cols, cols) * invn;
          gx.mat().row(r).array() +=
              inv_std(r, 0) * (dxhat - m1 - xhat.mat().row(r).array() * m2);
        }
      });
}

Value gelu(Value a) {
  Tensor out = a.val();
  for (Index i = 0; i < out.numel(); ++i) {
    const double x = out[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kGeluC0 * (x + kGeluC1 * x * x * x)));
  }
  const int ia = a.id;
  return a.g->emit("gelu", {ia}, std::move(out), [ia](Graph& g, int id) {
    if (!wants(g, ia)) return;
    const Tensor& xv = g.node(ia).val;
    const Tensor& go = g.node(id).grad;
    Tensor& ga = g.ensure_grad(ia);
    for (Index i = 0; i < xv.numel(); ++i) {
      const double x = xv[i];
      const double t = std::tanh(kGeluC0 * (x + kGeluC1 * x * x * x));
      const double dudx = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
      ga[i] += go[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dudx);
    }
  });
}

Value softmax_rows(Value a) {
  Tensor out = a.val();
  const Index cols = out.cols();
  for (Index r = 0; r < out.rows(); ++r) {
    double* row = out.data() + r * cols;
    const double m = fixed_max(row, cols);
    for (Index i = 0; i < cols; ++i) row[i] = std::exp(row[i] - m);
    const double z = fixed_sum(row, cols);
    for (Index i = 0; i < cols; ++i) row[i] /= z;
  }
  const int ia = a.id;
  return a.g->emit("softmax", {ia}, std::move(out), [ia](Graph& g, int id) {
    if (!wants(g, ia)) return;
    const Tensor& y = g.node(id).val;
    const Tensor& go = g.node(id).grad;
    Tensor& ga = g.ensure_grad(ia);
    const Index cols = y.cols();
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = fixed_dot(go.data() + r * cols, y.data() + r * cols, cols);
      ga.mat().row(r).array() += (go.mat().row(r).array() - dot) * y.mat().row(r).array();
    }
  });
}

Value softmax_cross_entropy(Value logits, const std::vector<int>& labels) {
  const Index n = logits.val().rows(), c = logits.val().cols();
  ITS_CHECK(n > 0, "cross_entropy: empty batch");
  ITS_CHECK(static_cast<Index>(labels.size()) == n, "cross_entropy: label count mismatch");
  for (int l : labels)
    ITS_CHECK(l >= 0 && l < c, "cross_entropy: label out of range");
  Tensor probs(n, c);
  double loss = 0.0;
  for (Index r = 0; r < n; ++r) {
    const double* row = logits.val().data() + r * c;
    double* prow = probs.data() + r * c;
    const double m = fixed_max(row, c);
    for (Index i = 0; i < c; ++i) prow[i] = std::exp(row[i] - m);
    const double z = fixed_sum(prow, c);
    for (Index i = 0; i < c; ++i) prow[i] /= z;
    loss += std::log(z) + m - row[labels[static_cast<std::size_t>(r)]];
  }
  loss /= static_cast<double>(n);
  const int il = logits.id;
  return logits.g->emit(
      "softmax_ce", {il}, Tensor::scalar(loss),
      [il, labels, probs = std::move(probs)](Graph& g, int id) {
        if (!wants(g, il)) return;
        const double gscale = g.node(id).grad[0] / static_cast<double>(probs.rows());
        Tensor& gl = g.ensure_grad(il);
        gl.mat() += gscale * probs.mat();
        for (Index r = 0; r < probs.rows(); ++r)
          gl(r, labels[static_cast<std::size_t>(r)]) -= gscale;
      });
}

Value mse_loss(Value a, Value b) {
  check_same_graph(a, b);
  ITS_CHECK(same_shape(a.val(), b.val()), "mse: shape mismatch");
  ITS_CHECK(a.val().numel() > 0, "mse: empty tensors");
  const double inv = 1.0 / static_cast<double>(a.val().numel());
  double sq = 0.0;
  for (Index i = 0; i < a.val().numel(); ++i) {
    const double d = a.val()[i] - b.val()[i];
    sq += d * d;
  }
  const double loss = sq * inv;
  const int ia = a.id, ib = b.id;
  return a.g->emit("mse", {ia, ib}, Tensor::scalar(loss), [ia, ib, inv](Graph& g, int id) {
    const double gs = 2.0 * inv * g.node(id).grad[0];
    const auto diff = (g.node(ia).val.vec() - g.node(ib).val.vec()).eval();
    if (wants(g, ia)) g.ensure_grad(ia).vec() += gs * diff;
    if (wants(g, ib)) g.ensure_grad(ib).vec() -= gs * diff;
  });
}

Value l1_loss(Value a, Value b) {
  check_same_graph(a, b);
  ITS_CHECK(same_shape(a.val(), b.val()), "l1: shape mismatch");
  ITS_CHECK(a.val().numel() > 0, "l1: empty tensors");
  const double inv = 1.0 / static_cast<double>(a.val().numel());
  double abssum = 0.0;
  for (Index i = 0; i < a.val().numel(); ++i) abssum += std::abs(a.val()[i] - b.val()[i]);
  const double loss = abssum * inv;
  const int ia = a.id, ib = b.id;
  return a.g->emit("l1", {ia, ib}, Tensor::scalar(loss), [ia, ib, inv](Graph& g, int id) {
    const double gs = inv * g.node(id).grad[0];
    const auto sgn = (g.node(ia).val.vec() - g.node(ib).val.vec()).array().sign().eval();
    if (wants(g, ia)) g.ensure_grad(ia).vec().array() += gs * sgn;
    if (wants(g, ib)) g.ensure_grad(ib).vec().array() -= gs * sgn;
  });
}

double check_gradients(const BuildFn& build, const std::vector<Tensor>& inputs, double step) {
  ITS_CHECK(step > 0, "check_gradients: step must be positive");
  for (const auto& t : inputs)
    ITS_CHECK(t.all_finite(), "check_gradients: non-finite input");

  // Fixed weights make the scalar reduction sensitive to every output element.
  auto scalarize = [](Graph& g, Value out) {
    Rng wrng(0x5eedu);
    Tensor w(out.val().rows(), out.val().cols());
    for (Index i = 0; i < w.numel(); ++i) w[i] = wrng.uniform(0.5, 1.5);
    return sum_all(mul(out, g.constant(w)));
  };

  auto eval_loss = [&](const std::vector<Tensor>& ins) {
    Graph g;
    std::vector<Value> vals;
    vals.reserve(ins.size());
    for (const auto& t : ins) {
      Tensor c = t;
      c.requires_grad = true;
      vals.push_back(g.leaf(std::move(c)));
    }
    Value out = build(g, vals);
    Value loss = out.val().numel() == 1 ? out : scalarize(g, out);
    return std::pair<double, std::vector<Tensor>>{loss.val()[0], {}};
  };

  // Analytic gradients.
  Graph g;
  std::vector<Value> vals;
  for (const auto& t : inputs) {
    Tensor c = t;
    c.requires_grad = true;
    vals.push_back(g.leaf(std::move(c)));
  }
  Value out = build(g, vals);
  Value loss = out.val().numel() == 1 ? out : scalarize(g, out);
  g.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(vals.size());
  for (Value v : vals) analytic.push_back(g.grad(v));

  double max_rel = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (Index i = 0; i < probe[k].numel(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + step;
      const double lp = eval_loss(probe).first;
      probe[k][i] = orig - step;
      const double lm = eval_loss(probe).first;
      probe[k][i] = orig;
      const double num = (lp - lm) / (2.0 * step);
      const double ana = analytic[k][i];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace its::ad
