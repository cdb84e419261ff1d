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

#ifndef ITS_TENSOR_HPP
#define ITS_TENSOR_HPP

#include <Eigen/Dense>
#include <initializer_list>
#include <new>
#include <utility>
#include <vector>

#include "its/common.hpp"
#include "its/rng.hpp"

namespace its {

// Allocator that pins every tensor buffer to one 64 byte alignment class.
// Eigen selects vector kernels from the runtime alignment of operand
// pointers, and for some products the selected kernel changes the
// accumulation order, so the same arithmetic on the same values can differ
// in the last ulp when the heap hands out differently aligned blocks.
// Fixing the class makes repeated runs see identical kernels, which the
// bitwise reproducibility guarantees depend on.
template <typename Scalar>
struct AlignedAlloc {
  using value_type = Scalar;
  static constexpr std::size_t kAlign = 64;

  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  Scalar* allocate(std::size_t n) {
    return static_cast<Scalar*>(::operator new(n * sizeof(Scalar), std::align_val_t(kAlign)));
  }
  void deallocate(Scalar* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(kAlign));
  }
  template <typename U>
  bool operator==(const AlignedAlloc<U>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAlloc<U>&) const {
    return false;
  }
};

// Dense row-major tensor. Storage is a flat buffer plus a shape; all graph
// ops treat tensors as rank <= 2 (scalars are 1x1). Doubles carry training
// and tests, floats the optional inference path.
template <typename Scalar>
class TensorT {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;
  using MapVec = Eigen::Map<Vec>;
  using CMapVec = Eigen::Map<const Vec>;

  TensorT() = default;

  explicit TensorT(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(numel_of(shape_)), Scalar(0));
  }

  TensorT(Index rows, Index cols) : TensorT(Shape{rows, cols}) {}

  static TensorT zeros(Index rows, Index cols) { return TensorT(rows, cols); }

  static TensorT full(Index rows, Index cols, Scalar v) {
    TensorT t(rows, cols);
    t.vec().setConstant(v);
    return t;
  }

  static TensorT scalar(Scalar v) { return full(1, 1, v); }

  static TensorT from_rows(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
    TensorT t(r, c);
    Index i = 0;
    for (const auto& row : rows) {
      ITS_CHECK(static_cast<Index>(row.size()) == c, "ragged initializer");
      Index j = 0;
      for (Scalar v : row) t(i, j++) = v;
      ++i;
    }
    return t;
  }

  static TensorT randn(Index rows, Index cols, Rng& rng, Scalar sigma = Scalar(1)) {
    TensorT t(rows, cols);
    for (auto& v : t.data_) v = static_cast<Scalar>(rng.normal(0.0, static_cast<double>(sigma)));
    return t;
  }

  static TensorT trunc_normal(Index rows, Index cols, Rng& rng, Scalar sigma) {
    TensorT t(rows, cols);
    for (auto& v : t.data_) v = static_cast<Scalar>(rng.trunc_normal(static_cast<double>(sigma)));
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index numel() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Rank <= 2 views: rank 0 is 1x1, rank 1 is 1xN.
  Index rows() const {
    ITS_CHECK(shape_.size() <= 2, "tensor rank > 2 has no matrix view");
    return shape_.size() == 2 ? shape_[0] : 1;
  }
  Index cols() const {
    ITS_CHECK(shape_.size() <= 2, "tensor rank > 2 has no matrix view");
    if (shape_.empty()) return 1;
    return shape_.size() == 2 ? shape_[1] : shape_[0];
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }
  Scalar& operator()(Index r, Index c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  Scalar operator()(Index r, Index c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }

  MapMat mat() { return MapMat(data(), rows(), cols()); }
  CMapMat mat() const { return CMapMat(data(), rows(), cols()); }
  MapVec vec() { return MapVec(data(), numel()); }
  CMapVec vec() const { return CMapVec(data(), numel()); }

  TensorT reshaped(Index rows, Index cols) const {
    ITS_CHECK(rows * cols == numel(), "reshape changes element count");
    TensorT t = *this;
    t.shape_ = {rows, cols};
    return t;
  }

  bool all_finite() const { return vec().allFinite(); }

  template <typename Other>
  TensorT<Other> cast() const {
    TensorT<Other> t(shape_.size() == 2 ? shape_[0] : 1, cols());
    for (Index i = 0; i < numel(); ++i) t[i] = static_cast<Other>(data_[static_cast<std::size_t>(i)]);
    return t;
  }

  bool requires_grad = false;

 private:
  static Index numel_of(const Shape& s) {
    Index n = 1;
    for (Index d : s) {
      ITS_CHECK(d >= 0, "negative dimension");
      n *= d;
    }
    return n;
  }

  Shape shape_;
  std::vector<Scalar, AlignedAlloc<Scalar>> data_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

template <typename Scalar>
inline bool same_shape(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace its

#endif  // ITS_TENSOR_HPP
