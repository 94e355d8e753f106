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

#include <cmath>
#include <functional>
#include <vector>

#include "iwsel/errors.hpp"
#include "iwsel/tensor.hpp"

namespace iwsel {

// Reverse-mode tape over dense tensors. One graph per scored example; leaves
// bound to model parameters report their gradients through grad(id) after
// backward(). Nodes are created in topological order by construction, so the
// backward sweep is a reverse scan of the tape.
template <typename T>
class Graph {
 public:
  using Id = int;

  // --- leaves ---------------------------------------------------------

  Id constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  // Tracked leaf: gradient is accumulated and readable via grad(id).
  Id leaf(const Tensor<T>& v) { return push(v, true, nullptr); }

  // --- elementwise ----------------------------------------------------

  Id add(Id a, Id b) {
    check_same(a, b, "add");
    Tensor<T> out = val(a);
    axpy(out, val(b));
    return push(std::move(out), tracked(a) || tracked(b), [this, a, b](Node& n) {
      if (tracked(a)) axpy(grad_ref(a), n.grad);
      if (tracked(b)) axpy(grad_ref(b), n.grad);
    });
  }

  Id sub(Id a, Id b) {
    check_same(a, b, "sub");
    Tensor<T> out = val(a);
    axpy(out, val(b), T(-1));
    return push(std::move(out), tracked(a) || tracked(b), [this, a, b](Node& n) {
      if (tracked(a)) axpy(grad_ref(a), n.grad);
      if (tracked(b)) axpy(grad_ref(b), n.grad, T(-1));
    });
  }

  Id hadamard(Id a, Id b) {
    check_same(a, b, "hadamard");
    Tensor<T> out = val(a);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= val(b).data[i];
    return push(std::move(out), tracked(a) || tracked(b), [this, a, b](Node& n) {
      if (tracked(a)) {
        Tensor<T>& ga = grad_ref(a);
        for (size_t i = 0; i < ga.data.size(); ++i)
          ga.data[i] += n.grad.data[i] * val(b).data[i];
      }
      if (tracked(b)) {
        Tensor<T>& gb = grad_ref(b);
        for (size_t i = 0; i < gb.data.size(); ++i)
          gb.data[i] += n.grad.data[i] * val(a).data[i];
      }
    });
  }

  Id scale(Id a, T c) {
    Tensor<T> out = val(a);
    for (T& v : out.data) v *= c;
    return push(std::move(out), tracked(a), [this, a, c](Node& n) {
      if (tracked(a)) axpy(grad_ref(a), n.grad, c);
    });
  }

  Id add_const(Id a, T c) {
    Tensor<T> out = val(a);
    for (T& v : out.data) v += c;
    return push(std::move(out), tracked(a), [this, a](Node& n) {
      if (tracked(a)) axpy(grad_ref(a), n.grad);
    });
  }

  Id sigmoid(Id a) {
    Tensor<T> out = val(a);
    for (T& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return push(std::move(out), tracked(a), [this, a](Node& n) {
      if (!tracked(a)) return;
      Tensor<T>& g = grad_ref(a);
      for (size_t i = 0; i < g.data.size(); ++i) {
        const T y = n.value.data[i];
        g.data[i] += n.grad.data[i] * y * (T(1) - y);
      }
    });
  }

  Id tanh_op(Id a) {
    Tensor<T> out = val(a);
    for (T& v : out.data) v = std::tanh(v);
    return push(std::move(out), tracked(a), [this, a](Node& n) {
      if (!tracked(a)) return;
      Tensor<T>& g = grad_ref(a);
      for (size_t i = 0; i < g.data.size(); ++i) {
        const T y = n.value.data[i];
        g.data[i] += n.grad.data[i] * (T(1) - y * y);
      }
    });
  }

  // Subgradient at the kink is 0, so inactive hinges stay silent.
  Id relu(Id a) {
    Tensor<T> out = val(a);
    for (T& v : out.data) v = v > T(0) ? v : T(0);
    return push(std::move(out), tracked(a), [this, a](Node& n) {
      if (!tracked(a)) return;
      Tensor<T>& g = grad_ref(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        if (val(a).data[i] > T(0)) g.data[i] += n.grad.data[i];
    });
  }

  Id log_op(Id a) {
    Tensor<T> out = val(a);
    for (T& v : out.data) v = std::log(v);
    return push(std::move(out), tracked(a), [this, a](Node& n) {
      if (!tracked(a)) return;
      Tensor<T>& g = grad_ref(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        g.data[i] += n.grad.data[i] / val(a).data[i];
    });
  }

  // Pass-through inside (lo, hi), zero gradient where the clamp is active.
  Id clamp(Id a, T lo, T hi) {
    Tensor<T> out = val(a);
    for (T& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
    return push(std::move(out), tracked(a), [this, a, lo, hi](Node& n) {
      if (!tracked(a)) return;
      Tensor<T>& g = grad_ref(a);
      for (size_t i = 0; i < g.data.size(); ++i) {
        const T x = val(a).data[i];
        if (x > lo && x < hi) g.data[i] += n.grad.data[i];
      }
    });
  }

  // --- linear algebra ---------------------------------------------------

  Id matmul(Id a, Id b, bool ta = false, bool tb = false) {
    Tensor<T> out = gemm(val(a), val(b), ta, tb);
    return push(std::move(out), tracked(a) || tracked(b), [this, a, b, ta, tb](Node& n) {
      if (tracked(a)) {
        Tensor<T> da = gemm(n.grad, val(b), false, !tb);  // d(a_eff)
        if (ta) da = transposed(da);
        axpy(grad_ref(a), da);
      }
      if (tracked(b)) {
        Tensor<T> db = gemm(val(a), n.grad, !ta, false);  // d(b_eff)
        if (tb) db = transposed(db);
        axpy(grad_ref(b), db);
      }
    });
  }

  // m {r,c} + v {1,c} broadcast over rows.
  Id add_rowvec(Id m, Id v) {
    Tensor<T> out = val(m);
    const Tensor<T>& rv = val(v);
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out.at(i, j) += rv.at(0, j);
    return push(std::move(out), tracked(m) || tracked(v), [this, m, v](Node& n) {
      if (tracked(m)) axpy(grad_ref(m), n.grad);
      if (tracked(v)) {
        Tensor<T>& gv = grad_ref(v);
        for (int i = 0; i < n.grad.rows(); ++i)
          for (int j = 0; j < n.grad.cols(); ++j) gv.at(0, j) += n.grad.at(i, j);
      }
    });
  }

  Id softmax_rows(Id a) {
    Tensor<T> out = val(a);
    for (int i = 0; i < out.rows(); ++i) {
      T mx = out.at(i, 0);
      for (int j = 1; j < out.cols(); ++j) mx = std::max(mx, out.at(i, j));
      T sum = T(0);
      for (int j = 0; j < out.cols(); ++j) {
        out.at(i, j) = std::exp(out.at(i, j) - mx);
        sum += out.at(i, j);
      }
      for (int j = 0; j < out.cols(); ++j) out.at(i, j) /= sum;
    }
    return push(std::move(out), tracked(a), [this, a](Node& n) {
      if (!tracked(a)) return;
      Tensor<T>& g = grad_ref(a);
      for (int i = 0; i < n.value.rows(); ++i) {
        T dot = T(0);
        for (int j = 0; j < n.value.cols(); ++j)
          dot += n.grad.at(i, j) * n.value.at(i, j);
        for (int j = 0; j < n.value.cols(); ++j)
          g.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
      }
    });
  }

  // Row gather from an embedding table leaf.
  Id gather_rows(Id table, std::vector<int> ids) {
    const Tensor<T>& e = val(table);
    Tensor<T> out({int(ids.size()), e.cols()});
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < e.cols(); ++j) out.at(int(i), j) = e.at(ids[i], j);
    return push(std::move(out), tracked(table),
                [this, table, ids = std::move(ids)](Node& n) {
                  if (!tracked(table)) return;
                  Tensor<T>& g = grad_ref(table);
                  for (size_t i = 0; i < ids.size(); ++i)
                    for (int j = 0; j < n.grad.cols(); ++j)
                      g.at(ids[i], j) += n.grad.at(int(i), j);
                });
  }

  Id row(Id m, int r) {
    const Tensor<T>& x = val(m);
    Tensor<T> out({1, x.cols()});
    for (int j = 0; j < x.cols(); ++j) out.at(0, j) = x.at(r, j);
    return push(std::move(out), tracked(m), [this, m, r](Node& n) {
      if (!tracked(m)) return;
      Tensor<T>& g = grad_ref(m);
      for (int j = 0; j < n.grad.cols(); ++j) g.at(r, j) += n.grad.at(0, j);
    });
  }

  Id cols(Id m, int c0, int c1) {
    const Tensor<T>& x = val(m);
    Tensor<T> out({x.rows(), c1 - c0});
    for (int i = 0; i < x.rows(); ++i)
      for (int j = c0; j < c1; ++j) out.at(i, j - c0) = x.at(i, j);
    return push(std::move(out), tracked(m), [this, m, c0, c1](Node& n) {
      if (!tracked(m)) return;
      Tensor<T>& g = grad_ref(m);
      for (int i = 0; i < n.grad.rows(); ++i)
        for (int j = c0; j < c1; ++j) g.at(i, j) += n.grad.at(i, j - c0);
    });
  }

  Id concat_rows(const std::vector<Id>& xs) {
    int rows = 0;
    const int c = val(xs[0]).cols();
    bool tr = false;
    for (Id x : xs) {
      rows += val(x).rows();
      tr = tr || tracked(x);
    }
    Tensor<T> out({rows, c});
    int r = 0;
    for (Id x : xs) {
      const Tensor<T>& v = val(x);
      for (int i = 0; i < v.rows(); ++i, ++r)
        for (int j = 0; j < c; ++j) out.at(r, j) = v.at(i, j);
    }
    return push(std::move(out), tr, [this, xs](Node& n) {
      int r = 0;
      for (Id x : xs) {
        const int nr = val(x).rows();
        if (tracked(x)) {
          Tensor<T>& g = grad_ref(x);
          for (int i = 0; i < nr; ++i)
            for (int j = 0; j < n.grad.cols(); ++j) g.at(i, j) += n.grad.at(r + i, j);
        }
        r += nr;
      }
    });
  }

  Id concat_cols(const std::vector<Id>& xs) {
    int colsum = 0;
    const int r = val(xs[0]).rows();
    bool tr = false;
    for (Id x : xs) {
      colsum += val(x).cols();
      tr = tr || tracked(x);
    }
    Tensor<T> out({r, colsum});
    int c = 0;
    for (Id x : xs) {
      const Tensor<T>& v = val(x);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < v.cols(); ++j) out.at(i, c + j) = v.at(i, j);
      c += v.cols();
    }
    return push(std::move(out), tr, [this, xs](Node& n) {
      int c = 0;
      for (Id x : xs) {
        const int nc = val(x).cols();
        if (tracked(x)) {
          Tensor<T>& g = grad_ref(x);
          for (int i = 0; i < n.grad.rows(); ++i)
            for (int j = 0; j < nc; ++j) g.at(i, j) += n.grad.at(i, c + j);
        }
        c += nc;
      }
    });
  }

  // Stack equal-shape {H,W} maps into a {C,H,W} feature volume.
  Id stack_channels(const std::vector<Id>& maps) {
    const Tensor<T>& m0 = val(maps[0]);
    const int h = m0.rows(), w = m0.cols();
    bool tr = false;
    Tensor<T> out({int(maps.size()), h, w});
    size_t off = 0;
    for (Id m : maps) {
      const Tensor<T>& v = val(m);
      std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
      off += v.data.size();
      tr = tr || tracked(m);
    }
    return push(std::move(out), tr, [this, maps](Node& n) {
      size_t off = 0;
      for (Id m : maps) {
        const size_t sz = val(m).data.size();
        if (tracked(m)) {
          Tensor<T>& g = grad_ref(m);
          for (size_t i = 0; i < sz; ++i) g.data[i] += n.grad.data[off + i];
        }
        off += sz;
      }
    });
  }

  // Place {h,w} into the top-left of a zero {H,W} canvas.
  Id pad_to(Id m, int H, int W) {
    const Tensor<T>& x = val(m);
    const int h = x.rows(), w = x.cols();
    if (h > H || w > W) throw ConfigError("pad_to: input exceeds canvas");
    Tensor<T> out({H, W});
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) out.at(i, j) = x.at(i, j);
    return push(std::move(out), tracked(m), [this, m, h, w](Node& n) {
      if (!tracked(m)) return;
      Tensor<T>& g = grad_ref(m);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) g.at(i, j) += n.grad.at(i, j);
    });
  }

  // {C,H,W} -> {1, C*H*W} view.
  Id flatten_rowvec(Id x) {
    Tensor<T> out({1, int(val(x).numel())}, val(x).data);
    return push(std::move(out), tracked(x), [this, x](Node& n) {
      if (!tracked(x)) return;
      Tensor<T>& g = grad_ref(x);
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    });
  }

  // --- conv / pooling ---------------------------------------------------

  // 3x3 same-padding convolution: x {C,H,W}, k {F,C,3,3}, bias {1,F} -> {F,H,W}.
  Id conv3x3_same(Id x, Id k, Id b) {
    const Tensor<T>& in = val(x);
    const Tensor<T>& kn = val(k);
    const Tensor<T>& bs = val(b);
    const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
    const int F = kn.shape[0];
    Tensor<T> out({F, H, W});
    for (int f = 0; f < F; ++f)
      for (int y = 0; y < H; ++y)
        for (int xw = 0; xw < W; ++xw) {
          T acc = bs.at(0, f);
          for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < 3; ++dy) {
              const int sy = y + dy - 1;
              if (sy < 0 || sy >= H) continue;
              for (int dx = 0; dx < 3; ++dx) {
                const int sx = xw + dx - 1;
                if (sx < 0 || sx >= W) continue;
                acc += in.at3(c, sy, sx) *
                       kn.data[((size_t(f) * C + c) * 3 + dy) * 3 + dx];
              }
            }
          out.at3(f, y, xw) = acc;
        }
    return push(std::move(out), tracked(x) || tracked(k) || tracked(b),
                [this, x, k, b, C, H, W, F](Node& n) {
                  const Tensor<T>& in = val(x);
                  const Tensor<T>& kn = val(k);
                  for (int f = 0; f < F; ++f)
                    for (int y = 0; y < H; ++y)
                      for (int xw = 0; xw < W; ++xw) {
                        const T go = n.grad.at3(f, y, xw);
                        if (tracked(b)) grad_ref(b).at(0, f) += go;
                        for (int c = 0; c < C; ++c)
                          for (int dy = 0; dy < 3; ++dy) {
                            const int sy = y + dy - 1;
                            if (sy < 0 || sy >= H) continue;
                            for (int dx = 0; dx < 3; ++dx) {
                              const int sx = xw + dx - 1;
                              if (sx < 0 || sx >= W) continue;
                              const size_t ki = ((size_t(f) * C + c) * 3 + dy) * 3 + dx;
                              if (tracked(k))
                                grad_ref(k).data[ki] += go * in.at3(c, sy, sx);
                              if (tracked(x))
                                grad_ref(x).at3(c, sy, sx) += go * kn.data[ki];
                            }
                          }
                      }
                });
  }

  // 2x2 max pool, stride 2, edge windows clipped. {C,H,W} -> {C,ceil(H/2),ceil(W/2)}.
  Id maxpool2x2(Id x) {
    const Tensor<T>& in = val(x);
    const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
    const int PH = (H + 1) / 2, PW = (W + 1) / 2;
    Tensor<T> out({C, PH, PW});
    auto arg = std::make_shared<std::vector<size_t>>(size_t(C) * PH * PW);
    for (int c = 0; c < C; ++c)
      for (int py = 0; py < PH; ++py)
        for (int px = 0; px < PW; ++px) {
          T best{};
          size_t besti = 0;
          bool first = true;
          for (int dy = 0; dy < 2; ++dy) {
            const int y = py * 2 + dy;
            if (y >= H) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const int xw = px * 2 + dx;
              if (xw >= W) continue;
              const size_t idx = (size_t(c) * H + y) * W + xw;
              if (first || in.data[idx] > best) {
                best = in.data[idx];
                besti = idx;
                first = false;
              }
            }
          }
          out.at3(c, py, px) = best;
          (*arg)[(size_t(c) * PH + py) * PW + px] = besti;
        }
    return push(std::move(out), tracked(x), [this, x, arg](Node& n) {
      if (!tracked(x)) return;
      Tensor<T>& g = grad_ref(x);
      for (size_t i = 0; i < arg->size(); ++i) g.data[(*arg)[i]] += n.grad.data[i];
    });
  }

  // {C,H,W} -> {1,C}, max over each channel.
  Id global_maxpool(Id x) {
    const Tensor<T>& in = val(x);
    const int C = in.shape[0];
    const size_t plane = size_t(in.shape[1]) * in.shape[2];
    Tensor<T> out({1, C});
    auto arg = std::make_shared<std::vector<size_t>>(C);
    for (int c = 0; c < C; ++c) {
      size_t base = size_t(c) * plane, besti = base;
      T best = in.data[base];
      for (size_t i = 1; i < plane; ++i)
        if (in.data[base + i] > best) {
          best = in.data[base + i];
          besti = base + i;
        }
      out.at(0, c) = best;
      (*arg)[c] = besti;
    }
    return push(std::move(out), tracked(x), [this, x, arg](Node& n) {
      if (!tracked(x)) return;
      Tensor<T>& g = grad_ref(x);
      for (size_t c = 0; c < arg->size(); ++c) g.data[(*arg)[c]] += n.grad.data[c];
    });
  }

  // Column-wise max over rows: {r,c} -> {1,c}.
  Id colmax(Id x) {
    const Tensor<T>& in = val(x);
    Tensor<T> out({1, in.cols()});
    auto arg = std::make_shared<std::vector<int>>(in.cols());
    for (int j = 0; j < in.cols(); ++j) {
      int bi = 0;
      T best = in.at(0, j);
      for (int i = 1; i < in.rows(); ++i)
        if (in.at(i, j) > best) {
          best = in.at(i, j);
          bi = i;
        }
      out.at(0, j) = best;
      (*arg)[j] = bi;
    }
    return push(std::move(out), tracked(x), [this, x, arg](Node& n) {
      if (!tracked(x)) return;
      Tensor<T>& g = grad_ref(x);
      for (int j = 0; j < int(arg->size()); ++j) g.at((*arg)[j], j) += n.grad.at(0, j);
    });
  }

  Id mean_rows(Id x) {
    const Tensor<T>& in = val(x);
    const T inv = T(1) / T(in.rows());
    Tensor<T> out({1, in.cols()});
    for (int i = 0; i < in.rows(); ++i)
      for (int j = 0; j < in.cols(); ++j) out.at(0, j) += in.at(i, j) * inv;
    return push(std::move(out), tracked(x), [this, x, inv](Node& n) {
      if (!tracked(x)) return;
      Tensor<T>& g = grad_ref(x);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) g.at(i, j) += n.grad.at(0, j) * inv;
    });
  }

  // --- driver -----------------------------------------------------------

  const Tensor<T>& val(Id id) const { return nodes_[id].value; }

  const Tensor<T>& grad(Id id) const { return nodes_[id].grad; }

  T scalar(Id id) const { return nodes_[id].value.data[0]; }

  // Seeds d(root) = upstream and sweeps the tape once. root must be {1,1}.
  void backward(Id root, T upstream = T(1)) {
    if (val(root).numel() != 1) throw ConfigError("backward: root must be scalar");
    if (!nodes_[root].tracked) return;  // constant graph, nothing reaches a leaf
    for (Node& n : nodes_)
      if (n.tracked && n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
    nodes_[root].grad.data[0] += upstream;
    for (int i = root; i >= 0; --i)
      if (nodes_[i].tracked && nodes_[i].back) nodes_[i].back(nodes_[i]);
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool tracked = false;
    std::function<void(Node&)> back;
  };

  bool tracked(Id id) const { return nodes_[id].tracked; }

  Tensor<T>& grad_ref(Id id) { return nodes_[id].grad; }

  void check_same(Id a, Id b, const char* op) const {
    if (!val(a).same_shape(val(b)))
      throw ConfigError(std::string(op) + ": shape mismatch");
  }

  Id push(Tensor<T> v, bool tr, std::function<void(Node&)> back) {
    Node n;
    n.value = std::move(v);
    n.tracked = tr;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Id(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace iwsel
