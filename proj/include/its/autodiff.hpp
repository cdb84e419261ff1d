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

#ifndef ITS_AUTODIFF_HPP
#define ITS_AUTODIFF_HPP

#include <functional>
#include <string>
#include <vector>

#include "its/tensor.hpp"

namespace its::ad {

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid for the graph's lifetime.
struct Value {
  Graph* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor& val() const;
};

// Define-by-run tape. Built fresh for every training step; nodes are stored
// in creation order, which is a topological order of the DAG. Every forward
// op verifies its output is finite and throws NumericError otherwise.
//
// A Graph and its tensors are confined to one thread between construction
// and backward(). backward() may be called more than once with different
// loss nodes (gradients are reset each call); this is how the distillation
// step obtains the CE and KD gradients from one forward pass.
class Graph {
 public:
  struct Node {
    const char* op = "";
    std::vector<int> ins;
    Tensor val;
    Tensor grad;            // allocated on first accumulation
    bool has_grad = false;
    bool needs_grad = false;
    std::function<void(Graph&, int)> back;
  };

  Value leaf(Tensor t);              // requires_grad taken from the tensor
  Value constant(Tensor t);

  void backward(Value loss);
  // Gradient of the last backward() w.r.t. a node; zeros if the node did not
  // participate in the loss.
  Tensor grad(Value v) const;

  std::size_t size() const { return nodes_.size(); }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  Value emit(const char* op, std::vector<int> ins, Tensor val,
             std::function<void(Graph&, int)> back, bool force_needs_grad = false);
  void accumulate(int id, const Tensor& g);
  Tensor& ensure_grad(int id);

 private:
  std::vector<Node> nodes_;
};

inline const Tensor& Value::val() const { return g->node(id).val; }

// ---- primitive ops (forward + exact analytic gradient) ----

Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);        // elementwise
Value div(Value a, Value b);        // elementwise
Value add_scalar(Value a, double s);
Value mul_scalar(Value a, double s);
Value exp(Value a);
Value log(Value a);                 // input clamped at 1e-12
Value matmul(Value a, Value b);
Value transpose(Value a);
Value slice_rows(Value a, Index r0, Index n);
Value slice_cols(Value a, Index c0, Index n);
Value concat_rows(const std::vector<Value>& parts);
Value concat_cols(const std::vector<Value>& parts);
Value gather_rows(Value a, std::vector<Index> idx);
Value shift_rows(Value a, Index offset);  // vacated rows are zero-filled
Value sum_all(Value a);             // -> 1x1
Value mean_all(Value a);            // -> 1x1
Value mean_rows(Value a);           // RxC -> 1xC
Value add_rowvec(Value x, Value b); // broadcast 1xC over rows
Value layernorm(Value x, Value gain, Value bias, double eps = 1e-5);
Value gelu(Value a);                // tanh approximation
Value softmax_rows(Value a);        // row-max subtracted
Value softmax_cross_entropy(Value logits, const std::vector<int>& labels);
Value mse_loss(Value a, Value b);
Value l1_loss(Value a, Value b);

inline Value operator+(Value a, Value b) { return add(a, b); }
inline Value operator-(Value a, Value b) { return sub(a, b); }
inline Value operator*(Value a, Value b) { return mul(a, b); }
inline Value operator/(Value a, Value b) { return div(a, b); }

// ---- finite-difference oracle ----

// Builds loss = sum(f(inputs) .* w) with fixed pseudo-random weights w,
// compares the analytic gradient of every input element against central
// differences, and returns the max relative error with denominator
// max(|analytic|, |numeric|, 1e-8).
using BuildFn = std::function<Value(Graph&, const std::vector<Value>&)>;
double check_gradients(const BuildFn& build, const std::vector<Tensor>& inputs, double step);

}  // namespace its::ad

#endif  // ITS_AUTODIFF_HPP
