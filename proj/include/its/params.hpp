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

#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "its/autodiff.hpp"
#include "its/common.hpp"
#include "its/tensor.hpp"

namespace its {

// Ordered collection of named parameter tensors. Order is insertion order and
// defines the layout of checkpoints, optimizer state, and flattened gradient
// vectors, so it must be identical across construction paths.
class ParamStore {
 public:
  Tensor& add(std::string name, Tensor t) {
    ITS_CHECK(index_.find(name) == index_.end(), "duplicate parameter name: " + name);
    index_.emplace(name, items_.size());
    items_.emplace_back(std::move(name), std::move(t));
    return items_.back().second;
  }

  bool contains(std::string_view name) const {
    return index_.find(std::string(name)) != index_.end();
  }

  Tensor& at(std::string_view name) {
    auto it = index_.find(std::string(name));
    ITS_CHECK(it != index_.end(), "unknown parameter: " + std::string(name));
    return items_[it->second].second;
  }

  const Tensor& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    ITS_CHECK(it != index_.end(), "unknown parameter: " + std::string(name));
    return items_[it->second].second;
  }

  std::size_t size() const { return items_.size(); }
  const std::string& name(std::size_t i) const { return items_[i].first; }
  Tensor& tensor(std::size_t i) { return items_[i].second; }
  const Tensor& tensor(std::size_t i) const { return items_[i].second; }

  Index total_elements() const {
    Index n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, t] : items_)
      if (!t.all_finite()) return false;
    return true;
  }

  // Re-exports every tensor under a prefix (used to bundle sub-models into
  // one checkpoint).
  void merge_from(const ParamStore& other, const std::string& prefix) {
    for (std::size_t i = 0; i < other.size(); ++i) add(prefix + other.name(i), other.tensor(i));
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Enters every parameter into a graph, in store order. Trainable parameters
// become grad-requiring leaves; frozen ones become constants.
inline std::vector<ad::Value> lift_params(ad::Graph& g, const ParamStore& ps, bool trainable) {
  std::vector<ad::Value> vals;
  vals.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor t = ps.tensor(i);
    if (trainable) {
      t.requires_grad = true;
      vals.push_back(g.leaf(std::move(t)));
    } else {
      vals.push_back(g.constant(std::move(t)));
    }
  }
  return vals;
}

}  // namespace its
