// Copyright 2026 the iwsel authors
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

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "iwsel/errors.hpp"

namespace iwsel {

// Dense row-major tensor. 2D shapes are {rows, cols}; feature maps are
// {channels, height, width}; scalars are {1, 1}.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) n *= size_t(d);
    return n;
  }

  size_t numel() const { return data.size(); }
  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }

  T& at(int r, int c) { return data[size_t(r) * cols() + c]; }
  const T& at(int r, int c) const { return data[size_t(r) * cols() + c]; }

  // {C,H,W} indexing.
  T& at3(int c, int y, int x) {
    return data[(size_t(c) * shape[1] + y) * shape[2] + x];
  }
  const T& at3(int c, int y, int x) const {
    return data[(size_t(c) * shape[1] + y) * shape[2] + x];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// {m,k} x {k,n} -> {m,n} with optional transposed reads.
template <typename T>
Tensor<T> gemm(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
  const int m = ta ? a.cols() : a.rows();
  const int k = ta ? a.rows() : a.cols();
  const int kb = tb ? b.cols() : b.rows();
  const int n = tb ? b.rows() : b.cols();
  if (k != kb) throw ConfigError("gemm: inner dimensions mismatch");
  Tensor<T> c({m, n});
  for (int i = 0; i < m; ++i) {
    T* crow = &c.data[size_t(i) * n];
    for (int p = 0; p < k; ++p) {
      const T av = ta ? a.at(p, i) : a.at(i, p);
      if (av == T(0)) continue;
      if (!tb) {
        const T* brow = &b.data[size_t(p) * b.cols()];
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * b.at(j, p);
      }
    }
  }
  return c;
}

template <typename T>
Tensor<T> transposed(const Tensor<T>& a) {
  Tensor<T> t({a.cols(), a.rows()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

template <typename T>
void axpy(Tensor<T>& y, const Tensor<T>& x, T alpha = T(1)) {
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

// Named parameter tensor; construction order fixes checkpoint layout.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

}  // namespace iwsel
