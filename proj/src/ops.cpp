// Copyright 2026 The mformer Authors. All Rights Reserved.
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

#include "mformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "mformer/kernels.hpp"

namespace mformer::ops {
namespace {

using kernels::axpy;
using kernels::dot;
using kernels::gemm;

template <typename T>
void require_rank(const Var<T>& v, std::size_t rank, const char* op, const char* what) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + to_string(v.shape()));
  }
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     to_string(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Output columns [lo, hi) whose input column ox*stride + k - pad lies in [0, in).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t k,
                                                std::size_t stride, std::size_t pad) {
  std::size_t lo = 0;
  if (k < pad) lo = (pad - k + stride - 1) / stride;
  if (in - 1 + pad < k) return {0, 0};
  const std::size_t hi = std::min(out, (in - 1 + pad - k) / stride + 1);
  return {std::min(lo, hi), hi};
}

template <typename T>
Var<T> linear_impl(const Var<T>& x, const Var<T>& w, const Var<T>* bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  const std::size_t rows = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in) {
    throw ShapeError("linear: weight " + to_string(w.shape()) + " does not accept input " +
                     to_string(x.shape()));
  }
  if (bias && bias->shape() != Shape{out_f}) {
    throw ShapeError("linear: bias must be [" + std::to_string(out_f) + "], got " +
                     to_string(bias->shape()));
  }
  Tape<T>& tape = x.tape();
  tape.charge(OpClass::kLinear, static_cast<std::uint64_t>(rows) * in * out_f);
  Tensor<T> out({rows, out_f});
  if (!tape.dry_run()) {
    gemm(false, true, rows, out_f, in, x.value().ptr(), in, w.value().ptr(), in, out.ptr(), out_f);
    if (bias) {
      const T* b = bias->value().ptr();
      for (std::size_t r = 0; r < rows; ++r) axpy(out_f, T(1), b, out.ptr() + r * out_f);
    }
  }
  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  const NodeId ix = x.id(), iw = w.id(), ib = bias ? bias->id() : NodeId(-1);
  return tape.emit(OpKind::kLinear, inputs, std::move(out),
                   [=](Tape<T>& t, NodeId o) {
                     const T* g = t.grad(o).data();
                     if (t.requires_grad(ix)) {
                       gemm(false, false, rows, in, out_f, g, out_f, t.value(iw).ptr(), in,
                            t.grad(ix).data(), in);
                     }
                     if (t.requires_grad(iw)) {
                       gemm(true, false, out_f, in, rows, g, out_f, t.value(ix).ptr(), in,
                            t.grad(iw).data(), in);
                     }
                     if (ib != NodeId(-1) && t.requires_grad(ib)) {
                       T* db = t.grad(ib).data();
                       for (std::size_t r = 0; r < rows; ++r) axpy(out_f, T(1), g + r * out_f, db);
                     }
                   });
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, groups, cig, cog, stride, pad, ho, wo;
};

template <typename T>
void im2col(const ConvGeometry& c, const T* x, T* cols) {
  // x points at the first channel of the group; cols is (cig*kh*kw) x (ho*wo).
  const std::size_t l = c.ho * c.wo;
  for (std::size_t ci = 0; ci < c.cig; ++ci) {
    for (std::size_t ky = 0; ky < c.kh; ++ky) {
      for (std::size_t kx = 0; kx < c.kw; ++kx) {
        T* row = cols + ((ci * c.kh + ky) * c.kw + kx) * l;
        std::fill(row, row + l, T(0));
        const auto [lo, hi] = valid_range(c.wo, c.w, kx, c.stride, c.pad);
        for (std::size_t oy = 0; oy < c.ho; ++oy) {
          const std::size_t iy_raw = oy * c.stride + ky;
          if (iy_raw < c.pad || iy_raw - c.pad >= c.h) continue;
          const T* src = x + (ci * c.h + (iy_raw - c.pad)) * c.w;
          for (std::size_t ox = lo; ox < hi; ++ox) {
            row[oy * c.wo + ox] = src[ox * c.stride + kx - c.pad];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& c, const T* cols, T* dx) {
  const std::size_t l = c.ho * c.wo;
  for (std::size_t ci = 0; ci < c.cig; ++ci) {
    for (std::size_t ky = 0; ky < c.kh; ++ky) {
      for (std::size_t kx = 0; kx < c.kw; ++kx) {
        const T* row = cols + ((ci * c.kh + ky) * c.kw + kx) * l;
        const auto [lo, hi] = valid_range(c.wo, c.w, kx, c.stride, c.pad);
        for (std::size_t oy = 0; oy < c.ho; ++oy) {
          const std::size_t iy_raw = oy * c.stride + ky;
          if (iy_raw < c.pad || iy_raw - c.pad >= c.h) continue;
          T* dst = dx + (ci * c.h + (iy_raw - c.pad)) * c.w;
          for (std::size_t ox = lo; ox < hi; ++ox) {
            dst[ox * c.stride + kx - c.pad] += row[oy * c.wo + ox];
          }
        }
      }
    }
  }
}

// One input channel per group: each output channel filters a single plane.
template <typename T>
void depthwise_forward(const ConvGeometry& c, const T* x, const T* w, T* y) {
  for (std::size_t n = 0; n < c.n; ++n) {
    for (std::size_t oc = 0; oc < c.cout; ++oc) {
      const T* xp = x + (n * c.cin + oc / c.cog) * c.h * c.w;
      T* yp = y + (n * c.cout + oc) * c.ho * c.wo;
      for (std::size_t ky = 0; ky < c.kh; ++ky) {
        for (std::size_t kx = 0; kx < c.kw; ++kx) {
          const T wv = w[(oc * c.kh + ky) * c.kw + kx];
          const auto [lo, hi] = valid_range(c.wo, c.w, kx, c.stride, c.pad);
          if (lo >= hi) continue;
          for (std::size_t oy = 0; oy < c.ho; ++oy) {
            const std::size_t iy_raw = oy * c.stride + ky;
            if (iy_raw < c.pad || iy_raw - c.pad >= c.h) continue;
            const T* src = xp + (iy_raw - c.pad) * c.w;
            T* dst = yp + oy * c.wo;
            if (c.stride == 1) {
              axpy(hi - lo, wv, src + lo + kx - c.pad, dst + lo);
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox * c.stride + kx - c.pad];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const ConvGeometry& c, const T* x, const T* w, const T* g, T* dx, T* dw) {
  for (std::size_t n = 0; n < c.n; ++n) {
    for (std::size_t oc = 0; oc < c.cout; ++oc) {
      const std::size_t plane = (n * c.cin + oc / c.cog) * c.h * c.w;
      const T* gp = g + (n * c.cout + oc) * c.ho * c.wo;
      for (std::size_t ky = 0; ky < c.kh; ++ky) {
        for (std::size_t kx = 0; kx < c.kw; ++kx) {
          const std::size_t wi = (oc * c.kh + ky) * c.kw + kx;
          const T wv = w[wi];
          const auto [lo, hi] = valid_range(c.wo, c.w, kx, c.stride, c.pad);
          if (lo >= hi) continue;
          T acc = T(0);
          for (std::size_t oy = 0; oy < c.ho; ++oy) {
            const std::size_t iy_raw = oy * c.stride + ky;
            if (iy_raw < c.pad || iy_raw - c.pad >= c.h) continue;
            const std::size_t row = plane + (iy_raw - c.pad) * c.w;
            const T* grow = gp + oy * c.wo;
            if (c.stride == 1) {
              const std::size_t off = row + lo + kx - c.pad;
              if (dw) acc += dot(hi - lo, grow + lo, x + off);
              if (dx) axpy(hi - lo, wv, grow + lo, dx + off);
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) {
                const std::size_t xi = row + ox * c.stride + kx - c.pad;
                acc += grow[ox] * x[xi];
                if (dx) dx[xi] += wv * grow[ox];
              }
            }
          }
          if (dw) dw[wi] += acc;
        }
      }
    }
  }
}

template <typename T>
Var<T> conv2d_impl(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, Conv2dOptions opt) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  if (opt.stride != 1 && opt.stride != 2) {
    throw ArgumentError("conv2d: stride must be 1 or 2, got " + std::to_string(opt.stride));
  }
  if (opt.groups == 0) throw ArgumentError("conv2d: groups must be positive");
  ConvGeometry c{};
  c.n = x.dim(0);
  c.cin = x.dim(1);
  c.h = x.dim(2);
  c.w = x.dim(3);
  c.cout = weight.dim(0);
  c.kh = weight.dim(2);
  c.kw = weight.dim(3);
  c.groups = opt.groups;
  c.stride = opt.stride;
  c.pad = opt.padding;
  if (c.cin % c.groups != 0 || c.cout % c.groups != 0) {
    throw ShapeError("conv2d: groups=" + std::to_string(c.groups) + " must divide Cin=" +
                     std::to_string(c.cin) + " and Cout=" + std::to_string(c.cout));
  }
  c.cig = c.cin / c.groups;
  c.cog = c.cout / c.groups;
  if (weight.dim(1) != c.cig) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)) + " input channels per group, input has " +
                     std::to_string(c.cig));
  }
  if (c.h + 2 * c.pad < c.kh || c.w + 2 * c.pad < c.kw) {
    throw ShapeError("conv2d: kernel " + to_string(weight.shape()) + " larger than padded input " +
                     to_string(x.shape()));
  }
  c.ho = (c.h + 2 * c.pad - c.kh) / c.stride + 1;
  c.wo = (c.w + 2 * c.pad - c.kw) / c.stride + 1;
  if (bias && bias->shape() != Shape{c.cout}) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(c.cout) + "], got " +
                     to_string(bias->shape()));
  }

  Tape<T>& tape = x.tape();
  const std::size_t l = c.ho * c.wo;
  tape.charge(OpClass::kConv,
              static_cast<std::uint64_t>(c.kh) * c.kw * c.cig * c.cout * l * c.n);
  Tensor<T> out({c.n, c.cout, c.ho, c.wo});
  const bool pointwise = c.kh == 1 && c.kw == 1 && c.stride == 1 && c.pad == 0;
  const bool depthwise = !pointwise && c.cig == 1;
  const std::size_t kdim = c.cig * c.kh * c.kw;

  if (!tape.dry_run()) {
    const T* xp = x.value().ptr();
    const T* wp = weight.value().ptr();
    T* yp = out.ptr();
    if (pointwise) {
      for (std::size_t n = 0; n < c.n; ++n) {
        for (std::size_t g = 0; g < c.groups; ++g) {
          gemm(false, false, c.cog, l, c.cig, wp + g * c.cog * c.cig, c.cig,
               xp + (n * c.cin + g * c.cig) * l, l, yp + (n * c.cout + g * c.cog) * l, l);
        }
      }
    } else if (depthwise) {
      depthwise_forward(c, xp, wp, yp);
    } else {
      std::vector<T> cols(kdim * l);
      for (std::size_t n = 0; n < c.n; ++n) {
        for (std::size_t g = 0; g < c.groups; ++g) {
          im2col(c, xp + (n * c.cin + g * c.cig) * c.h * c.w, cols.data());
          gemm(false, false, c.cog, l, kdim, wp + g * c.cog * kdim, kdim, cols.data(), l,
               yp + (n * c.cout + g * c.cog) * l, l);
        }
      }
    }
    if (bias) {
      const T* b = bias->value().ptr();
      for (std::size_t n = 0; n < c.n; ++n) {
        for (std::size_t oc = 0; oc < c.cout; ++oc) {
          T* p = yp + (n * c.cout + oc) * l;
          for (std::size_t i = 0; i < l; ++i) p[i] += b[oc];
        }
      }
    }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const NodeId ix = x.id(), iw = weight.id(), ib = bias ? bias->id() : NodeId(-1);
  return tape.emit(
      OpKind::kConv2d, inputs, std::move(out), [=](Tape<T>& t, NodeId o) {
        const T* g = t.grad(o).data();
        const T* xp = t.value(ix).ptr();
        const T* wp = t.value(iw).ptr();
        T* dx = t.requires_grad(ix) ? t.grad(ix).data() : nullptr;
        T* dw = t.requires_grad(iw) ? t.grad(iw).data() : nullptr;
        if (pointwise) {
          for (std::size_t n = 0; n < c.n; ++n) {
            for (std::size_t gi = 0; gi < c.groups; ++gi) {
              const T* gg = g + (n * c.cout + gi * c.cog) * l;
              const std::size_t xo = (n * c.cin + gi * c.cig) * l;
              const T* wg = wp + gi * c.cog * c.cig;
              if (dx) gemm(true, false, c.cig, l, c.cog, wg, c.cig, gg, l, dx + xo, l);
              if (dw) gemm(false, true, c.cog, c.cig, l, gg, l, xp + xo, l, dw + gi * c.cog * c.cig, c.cig);
            }
          }
        } else if (depthwise) {
          depthwise_backward(c, xp, wp, g, dx, dw);
        } else {
          std::vector<T> cols(kdim * l);
          std::vector<T> dcols(dx ? kdim * l : 0);
          for (std::size_t n = 0; n < c.n; ++n) {
            for (std::size_t gi = 0; gi < c.groups; ++gi) {
              const T* gg = g + (n * c.cout + gi * c.cog) * l;
              const std::size_t xo = (n * c.cin + gi * c.cig) * c.h * c.w;
              const T* wg = wp + gi * c.cog * kdim;
              if (dw) {
                im2col(c, xp + xo, cols.data());
                gemm(false, true, c.cog, kdim, l, gg, l, cols.data(), l, dw + gi * c.cog * kdim, kdim);
              }
              if (dx) {
                std::fill(dcols.begin(), dcols.end(), T(0));
                gemm(true, false, kdim, l, c.cog, wg, kdim, gg, l, dcols.data(), l);
                col2im(c, dcols.data(), dx + xo);
              }
            }
          }
        }
        if (ib != NodeId(-1) && t.requires_grad(ib)) {
          T* db = t.grad(ib).data();
          for (std::size_t n = 0; n < c.n; ++n) {
            for (std::size_t oc = 0; oc < c.cout; ++oc) {
              const T* p = g + (n * c.cout + oc) * l;
              T acc = T(0);
              for (std::size_t i = 0; i < l; ++i) acc += p[i];
              db[oc] += acc;
            }
          }
        }
      });
}

// Elementwise unary op with a derivative that depends only on the input.
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, OpKind kind, OpClass cls, F f, D df) {
  Tape<T>& tape = x.tape();
  tape.charge(cls, x.size());
  Tensor<T> out(x.shape());
  if (!tape.dry_run()) {
    const T* xp = x.value().ptr();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xp[i]);
  }
  const NodeId ix = x.id();
  return tape.emit(kind, {x}, std::move(out), [=](Tape<T>& t, NodeId o) {
    if (!t.requires_grad(ix)) return;
    const auto g = t.grad(o);
    const T* xp = t.value(ix).ptr();
    T* dx = t.grad(ix).data();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * df(xp[i]);
  });
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta, bool tb) {
  require_rank(a, 2, "matmul", "left operand");
  require_rank(b, 2, "matmul", "right operand");
  const std::size_t ac = a.dim(1), bc = b.dim(1);
  const std::size_t m = ta ? a.dim(1) : a.dim(0);
  const std::size_t k = ta ? a.dim(0) : a.dim(1);
  const std::size_t kb = tb ? b.dim(1) : b.dim(0);
  const std::size_t n = tb ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ: " + to_string(a.shape()) + (ta ? "^T" : "") +
                     " x " + to_string(b.shape()) + (tb ? "^T" : ""));
  }
  Tape<T>& tape = a.tape();
  tape.charge(OpClass::kMatMul, static_cast<std::uint64_t>(m) * k * n);
  Tensor<T> out({m, n});
  if (!tape.dry_run()) {
    gemm(ta, tb, m, n, k, a.value().ptr(), ac, b.value().ptr(), bc, out.ptr(), n);
  }
  const NodeId ia = a.id(), ib = b.id();
  return tape.emit(OpKind::kMatMul, {a, b}, std::move(out), [=](Tape<T>& t, NodeId o) {
    const T* g = t.grad(o).data();
    if (t.requires_grad(ia)) {
      const T* bp = t.value(ib).ptr();
      T* da = t.grad(ia).data();
      if (!ta) {
        gemm(false, !tb, m, k, n, g, n, bp, bc, da, k);
      } else {
        gemm(tb, true, k, m, n, bp, bc, g, n, da, m);
      }
    }
    if (t.requires_grad(ib)) {
      const T* ap = t.value(ia).ptr();
      T* db = t.grad(ib).data();
      if (!tb) {
        gemm(!ta, false, k, n, m, ap, ac, g, n, db, n);
      } else {
        gemm(true, ta, n, k, m, g, n, ap, ac, db, k);
      }
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight) {
  return linear_impl<T>(x, weight, nullptr);
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return linear_impl<T>(x, weight, &bias);
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, Conv2dOptions options) {
  return conv2d_impl<T>(x, weight, nullptr, options);
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dOptions options) {
  return conv2d_impl<T>(x, weight, &bias, options);
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis, T scale) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  Tape<T>& tape = x.tape();
  tape.charge(OpClass::kSoftmax, 3 * static_cast<std::uint64_t>(x.size()));
  Tensor<T> out(x.shape());
  if (!tape.dry_run()) {
    const T* xp = x.value().ptr();
    T* yp = out.ptr();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        T mx = scale * xp[base];
        for (std::size_t j = 1; j < s.extent; ++j) mx = std::max(mx, scale * xp[base + j * s.inner]);
        double total = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) {
          const T e = std::exp(scale * xp[base + j * s.inner] - mx);
          yp[base + j * s.inner] = e;
          total += e;
        }
        const T inv = static_cast<T>(1.0 / total);
        for (std::size_t j = 0; j < s.extent; ++j) yp[base + j * s.inner] *= inv;
      }
    }
  }
  const NodeId ix = x.id();
  return tape.emit(OpKind::kSoftmax, {x}, std::move(out), [=](Tape<T>& t, NodeId o) {
    if (!t.requires_grad(ix)) return;
    const T* g = t.grad(o).data();
    const T* p = t.value(o).ptr();
    T* dx = t.grad(ix).data();
    for (std::size_t oi = 0; oi < s.outer; ++oi) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = oi * s.extent * s.inner + i;
        double gp = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) {
          gp += static_cast<double>(g[base + j * s.inner]) * p[base + j * s.inner];
        }
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t k = base + j * s.inner;
          dx[k] += scale * p[k] * (g[k] - static_cast<T>(gp));
        }
      }
    }
  });
}

template <typename T>
Var<T> avgpool2d(const Var<T>& x, std::size_t wh, std::size_t ww) {
  require_rank(x, 4, "avgpool2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (wh == 0 || ww == 0 || h % wh != 0 || w % ww != 0) {
    throw ShapeError("avgpool2d: window " + std::to_string(wh) + "x" + std::to_string(ww) +
                     " does not divide input " + to_string(x.shape()));
  }
  const std::size_t ho = h / wh, wo = w / ww;
  Tape<T>& tape = x.tape();
  tape.charge(OpClass::kPool, x.size());
  Tensor<T> out({n, c, ho, wo});
  const T inv = T(1) / static_cast<T>(wh * ww);
  if (!tape.dry_run()) {
    const T* xp = x.value().ptr();
    for (std::size_t p = 0; p < n * c; ++p) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          out[(p * ho + y / wh) * wo + xx / ww] += xp[(p * h + y) * w + xx];
        }
      }
    }
    for (T& v : out.data()) v *= inv;
  }
  const NodeId ix = x.id();
  return tape.emit(OpKind::kAvgPool, {x}, std::move(out), [=](Tape<T>& t, NodeId o) {
    if (!t.requires_grad(ix)) return;
    const T* g = t.grad(o).data();
    T* dx = t.grad(ix).data();
    for (std::size_t p = 0; p < n * c; ++p) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          dx[(p * h + y) * w + xx] += inv * g[(p * ho + y / wh) * wo + xx / ww];
        }
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tape<T>& tape = a.tape();
  tape.charge(OpClass::kElementwise, a.size());
  Tensor<T> out(a.shape());
  if (!tape.dry_run()) {
    const T* ap = a.value().ptr();
    const T* bp = b.value().ptr();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ap[i] + bp[i];
  }
  const NodeId ia = a.id(), ib = b.id();
  return tape.emit(OpKind::kAdd, {a, b}, std::move(out), [=](Tape<T>& t, NodeId o) {
    const auto g = t.grad(o);
    if (t.requires_grad(ia)) axpy(g.size(), T(1), g.data(), t.grad(ia).data());
    if (t.requires_grad(ib)) axpy(g.size(), T(1), g.data(), t.grad(ib).data());
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tape<T>& tape = a.tape();
  tape.charge(OpClass::kElementwise, a.size());
  Tensor<T> out(a.shape());
  if (!tape.dry_run()) {
    const T* ap = a.value().ptr();
    const T* bp = b.value().ptr();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ap[i] * bp[i];
  }
  const NodeId ia = a.id(), ib = b.id();
  return tape.emit(OpKind::kMul, {a, b}, std::move(out), [=](Tape<T>& t, NodeId o) {
    const auto g = t.grad(o);
    if (t.requires_grad(ia)) {
      const T* bp = t.value(ib).ptr();
      T* da = t.grad(ia).data();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bp[i];
    }
    if (t.requires_grad(ib)) {
      const T* ap = t.value(ia).ptr();
      T* db = t.grad(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * ap[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tape<T>& tape = a.tape();
  tape.charge(OpClass::kElementwise, a.size());
  Tensor<T> out(a.shape());
  if (!tape.dry_run()) {
    const T* ap = a.value().ptr();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * ap[i];
  }
  const NodeId ia = a.id();
  return tape.emit(OpKind::kScale, {a}, std::move(out), [=](Tape<T>& t, NodeId o) {
    if (!t.requires_grad(ia)) return;
    const auto g = t.grad(o);
    axpy(g.size(), factor, g.data(), t.grad(ia).data());
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tape<T>& tape = a.tape();
  tape.charge(OpClass::kElementwise, a.size());
  Tensor<T> out({1});
  if (!tape.dry_run()) {
    double acc = 0.0;
    for (T v : a.value().data()) acc += v;
    out[0] = static_cast<T>(acc);
  }
  const NodeId ia = a.id();
  return tape.emit(OpKind::kSum, {a}, std::move(out), [=](Tape<T>& t, NodeId o) {
    if (!t.requires_grad(ia)) return;
    const T g = t.grad(o)[0];
    for (T& d : t.grad(ia)) d += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  Tape<T>& tape = a.tape();
  tape.charge(OpClass::kElementwise, a.size());
  Tensor<T> out({1});
  const T inv = T(1) / static_cast<T>(a.size());
  if (!tape.dry_run()) {
    double acc = 0.0;
    for (T v : a.value().data()) acc += v;
    out[0] = static_cast<T>(acc) * inv;
  }
  const NodeId ia = a.id();
  return tape.emit(OpKind::kMean, {a}, std::move(out), [=](Tape<T>& t, NodeId o) {
    if (!t.requires_grad(ia)) return;
    const T g = t.grad(o)[0] * inv;
    for (T& d : t.grad(ia)) d += g;
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tape<T>& tape = x.tape();
  if (tape.tracks_kinks() && !tape.dry_run()) {
    for (T v : x.value().data()) tape.note_kink_distance(std::abs(static_cast<double>(v)));
  }
  return unary(
      x, OpKind::kRelu, OpClass::kActivation, [](T v) { return v > T(0) ? v : T(0); },
      [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> h_swish(const Var<T>& x) {
  Tape<T>& tape = x.tape();
  if (tape.tracks_kinks() && !tape.dry_run()) {
    for (T v : x.value().data()) {
      const double d = static_cast<double>(v);
      tape.note_kink_distance(std::min(std::abs(d + 3.0), std::abs(d - 3.0)));
    }
  }
  return unary(
      x, OpKind::kHSwish, OpClass::kActivation,
      [](T v) { return v * std::clamp(v + T(3), T(0), T(6)) / T(6); },
      [](T v) {
        if (v <= T(-3)) return T(0);
        if (v >= T(3)) return T(1);
        return (T(2) * v + T(3)) / T(6);
      });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T kInvSqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T kInvSqrt2Pi = std::numbers::inv_sqrtpi_v<T> * kInvSqrt2;
  return unary(
      x, OpKind::kGelu, OpClass::kActivation,
      [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T v) {
        return T(0.5) * (T(1) + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Var<T> dynamic_relu(const Var<T>& x, const Var<T>& deltas, T la, T lb) {
  if (x.shape().size() < 2) {
    throw ShapeError("dynamic_relu: input must be [N, C, ...], got " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.size() / (n * c);
  if (deltas.shape() != Shape{n, 4 * c}) {
    throw ShapeError("dynamic_relu: coefficients must be [" + std::to_string(n) + ", " +
                     std::to_string(4 * c) + "], got " + to_string(deltas.shape()));
  }
  Tape<T>& tape = x.tape();
  tape.charge(OpClass::kActivation, 3 * static_cast<std::uint64_t>(x.size()));
  Tensor<T> out(x.shape());
  std::vector<std::uint8_t> first;
  if (!tape.dry_run()) {
    first.resize(x.size());
    const bool track = tape.tracks_kinks();
    const T* xp = x.value().ptr();
    const T* dp = deltas.value().ptr();
    for (std::size_t b = 0; b < n; ++b) {
      const T* d = dp + b * 4 * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T a1 = T(1) + la * d[ch], a2 = la * d[c + ch];
        const T b1 = lb * d[2 * c + ch], b2 = lb * d[3 * c + ch];
        const std::size_t off = (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T v = xp[off + i];
          const T y1 = a1 * v + b1, y2 = a2 * v + b2;
          first[off + i] = y1 > y2;
          if (track) tape.note_kink_distance(std::abs(static_cast<double>(y1 - y2)));
          out[off + i] = y1 > y2 ? y1 : y2;
        }
      }
    }
  }
  const NodeId ix = x.id(), id = deltas.id();
  return tape.emit(OpKind::kDyRelu, {x, deltas}, std::move(out),
                   [=, first = std::move(first)](Tape<T>& t, NodeId o) {
                     const T* g = t.grad(o).data();
                     const T* xp = t.value(ix).ptr();
                     const T* dp = t.value(id).ptr();
                     T* dx = t.requires_grad(ix) ? t.grad(ix).data() : nullptr;
                     T* dd = t.requires_grad(id) ? t.grad(id).data() : nullptr;
                     for (std::size_t b = 0; b < n; ++b) {
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const T a1 = T(1) + la * dp[b * 4 * c + ch];
                         const T a2 = la * dp[b * 4 * c + c + ch];
                         const std::size_t off = (b * c + ch) * plane;
                         T ga1 = 0, ga2 = 0, gb1 = 0, gb2 = 0;
                         for (std::size_t i = 0; i < plane; ++i) {
                           const T gi = g[off + i];
                           if (first[off + i]) {
                             if (dx) dx[off + i] += gi * a1;
                             ga1 += gi * xp[off + i];
                             gb1 += gi;
                           } else {
                             if (dx) dx[off + i] += gi * a2;
                             ga2 += gi * xp[off + i];
                             gb2 += gi;
                           }
                         }
                         if (dd) {
                           T* row = dd + b * 4 * c;
                           row[ch] += la * ga1;
                           row[c + ch] += la * ga2;
                           row[2 * c + ch] += lb * gb1;
                           row[3 * c + ch] += lb * gb2;
                         }
                       }
                     }
                   });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, Mode mode) {
  if (x.shape().size() < 2) {
    throw ShapeError("batch_norm: input must be [N, C, ...], got " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.size() / (n * c);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batch_norm: gamma/beta must be [" + std::to_string(c) + "]");
  }
  if (state.running_mean.size() != c) {
    state.running_mean.assign(c, T(0));
    state.running_var.assign(c, T(1));
    state.initialized = false;
  }
  Tape<T>& tape = x.tape();
  tape.charge(OpClass::kNorm, x.size());
  Tensor<T> out(x.shape());
  if (tape.dry_run()) {
    return tape.emit(OpKind::kBatchNorm, {x, gamma, beta}, std::move(out), {});
  }
  if (mode == Mode::kEval && !state.initialized) {
    throw UninitializedStatsError(
        "batch_norm: running statistics were never estimated; run a train-mode pass first");
  }
  const T eps = state.eps;
  const std::size_t count = n * plane;
  std::vector<T> inv_std(c);
  std::vector<T> xhat(x.size());
  const T* xp = x.value().ptr();
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (mode == Mode::kTrain) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xp + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xp + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s2 += (p[i] - m) * (p[i] - m);
      }
      mu = static_cast<T>(m);
      var = static_cast<T>(s2 / static_cast<double>(count));
      const T unbiased = count > 1 ? static_cast<T>(s2 / static_cast<double>(count - 1)) : var;
      state.running_mean[ch] = (T(1) - state.momentum) * state.running_mean[ch] + state.momentum * mu;
      state.running_var[ch] = (T(1) - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    inv_std[ch] = T(1) / std::sqrt(var + eps);
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[off + i] = (xp[off + i] - mu) * inv_std[ch];
        out[off + i] = gp[ch] * xhat[off + i] + bp[ch];
      }
    }
  }
  if (mode == Mode::kTrain) state.initialized = true;

  const NodeId ix = x.id(), ig = gamma.id(), ibt = beta.id();
  const bool train = mode == Mode::kTrain;
  return tape.emit(
      OpKind::kBatchNorm, {x, gamma, beta}, std::move(out),
      [=, inv_std = std::move(inv_std), xhat = std::move(xhat)](Tape<T>& t, NodeId o) {
        const T* g = t.grad(o).data();
        const T* gp = t.value(ig).ptr();
        T* dx = t.requires_grad(ix) ? t.grad(ix).data() : nullptr;
        T* dg = t.requires_grad(ig) ? t.grad(ig).data() : nullptr;
        T* db = t.requires_grad(ibt) ? t.grad(ibt).data() : nullptr;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sg = 0.0, sgx = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sg += g[off + i];
              sgx += static_cast<double>(g[off + i]) * xhat[off + i];
            }
          }
          if (dg) dg[ch] += static_cast<T>(sgx);
          if (db) db[ch] += static_cast<T>(sg);
          if (!dx) continue;
          const T k = gp[ch] * inv_std[ch];
          const T mg = train ? static_cast<T>(sg / count) : T(0);
          const T mgx = train ? static_cast<T>(sgx / count) : T(0);
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              dx[off + i] += k * (g[off + i] - mg - xhat[off + i] * mgx);
            }
          }
        }
      });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  require_rank(x, 2, "layer_norm", "input");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  }
  Tape<T>& tape = x.tape();
  tape.charge(OpClass::kNorm, x.size());
  Tensor<T> out(x.shape());
  std::vector<T> inv_std, xhat;
  if (!tape.dry_run()) {
    inv_std.resize(rows);
    xhat.resize(x.size());
    const T* xp = x.value().ptr();
    const T* gp = gamma.value().ptr();
    const T* bp = beta.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = xp + r * d;
      double s = 0.0, s2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += p[j];
      const double m = s / static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) s2 += (p[j] - m) * (p[j] - m);
      inv_std[r] = static_cast<T>(1.0 / std::sqrt(s2 / static_cast<double>(d) + eps));
      for (std::size_t j = 0; j < d; ++j) {
        xhat[r * d + j] = static_cast<T>(p[j] - m) * inv_std[r];
        out[r * d + j] = gp[j] * xhat[r * d + j] + bp[j];
      }
    }
  }
  const NodeId ix = x.id(), ig = gamma.id(), ib = beta.id();
  return tape.emit(
      OpKind::kLayerNorm, {x, gamma, beta}, std::move(out),
      [=, inv_std = std::move(inv_std), xhat = std::move(xhat)](Tape<T>& t, NodeId o) {
        const T* g = t.grad(o).data();
        const T* gp = t.value(ig).ptr();
        T* dx = t.requires_grad(ix) ? t.grad(ix).data() : nullptr;
        T* dg = t.requires_grad(ig) ? t.grad(ig).data() : nullptr;
        T* db = t.requires_grad(ib) ? t.grad(ib).data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g + r * d;
          const T* xh = xhat.data() + r * d;
          double sg = 0.0, sgx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const T gh = gr[j] * gp[j];
            sg += gh;
            sgx += static_cast<double>(gh) * xh[j];
            if (dg) dg[j] += gr[j] * xh[j];
            if (db) db[j] += gr[j];
          }
          if (!dx) continue;
          const T mg = static_cast<T>(sg / d), mgx = static_cast<T>(sgx / d);
          for (std::size_t j = 0; j < d; ++j) {
            dx[r * d + j] += inv_std[r] * (gr[j] * gp[j] - mg - xh[j] * mgx);
          }
        }
      });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (begin >= end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for extent " + std::to_string(s.extent) + " of " +
                     to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  Tape<T>& tape = x.tape();
  Tensor<T> out(shape);
  if (!tape.dry_run()) {
    const T* xp = x.value().ptr();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(xp + (o * s.extent + begin) * s.inner, chunk, out.ptr() + o * chunk);
    }
  }
  const NodeId ix = x.id();
  return tape.emit(OpKind::kSlice, {x}, std::move(out), [=](Tape<T>& t, NodeId o) {
    if (!t.requires_grad(ix)) return;
    const T* g = t.grad(o).data();
    T* dx = t.grad(ix).data();
    for (std::size_t oi = 0; oi < s.outer; ++oi) {
      axpy(chunk, T(1), g + oi * chunk, dx + (oi * s.extent + begin) * s.inner);
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ArgumentError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  const AxisSplit s0 = split_axis(ref, axis, "concat");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const Var<T>& p : parts) {
    Shape a = p.shape(), b = ref;
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch " + to_string(a) + " vs " + to_string(b));
    extents.push_back(a[axis]);
    total += a[axis];
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat: shapes differ off the concat axis: " + to_string(p.shape()) + " vs " + to_string(ref));
  }
  Shape shape = ref;
  shape[axis] = total;
  Tape<T>& tape = parts.front().tape();
  Tensor<T> out(shape);
  const std::size_t outer = s0.outer, inner = s0.inner;
  if (!tape.dry_run()) {
    std::size_t at = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const T* src = parts[k].value().ptr();
      const std::size_t chunk = extents[k] * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(src + o * chunk, chunk, out.ptr() + (o * total + at) * inner);
      }
      at += extents[k];
    }
  }
  std::vector<NodeId> ids;
  for (const Var<T>& p : parts) ids.push_back(p.id());
  return tape.emit(OpKind::kConcat, parts, std::move(out), [=](Tape<T>& t, NodeId o) {
    const T* g = t.grad(o).data();
    std::size_t at = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t chunk = extents[k] * inner;
      if (t.requires_grad(ids[k])) {
        T* dx = t.grad(ids[k]).data();
        for (std::size_t oi = 0; oi < outer; ++oi) {
          axpy(chunk, T(1), g + (oi * total + at) * inner, dx + oi * chunk);
        }
      }
      at += extents[k];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tape<T>& tape = x.tape();
  Tensor<T> out = tape.dry_run() ? Tensor<T>(shape) : x.value().reshaped(shape);
  const NodeId ix = x.id();
  return tape.emit(OpKind::kReshape, {x}, std::move(out), [=](Tape<T>& t, NodeId o) {
    if (!t.requires_grad(ix)) return;
    const auto g = t.grad(o);
    axpy(g.size(), T(1), g.data(), t.grad(ix).data());
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows) {
  if (x.shape().empty() || rows.empty()) throw ShapeError("gather_rows: empty input or index list");
  const std::size_t extent = x.dim(0), width = x.size() / extent;
  for (std::size_t r : rows) {
    if (r >= extent) {
      throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " +
                       to_string(x.shape()));
    }
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tape<T>& tape = x.tape();
  Tensor<T> out(shape);
  if (!tape.dry_run()) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(x.value().ptr() + rows[i] * width, width, out.ptr() + i * width);
    }
  }
  const NodeId ix = x.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape.emit(OpKind::kGatherRows, {x}, std::move(out), [=](Tape<T>& t, NodeId o) {
    if (!t.requires_grad(ix)) return;
    const T* g = t.grad(o).data();
    T* dx = t.grad(ix).data();
    for (std::size_t i = 0; i < idx.size(); ++i) axpy(width, T(1), g + i * width, dx + idx[i] * width);
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T rate, std::mt19937_64& rng) {
  if (!(rate >= T(0) && rate < T(1))) {
    throw ArgumentError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (rate == T(0)) return x;
  Tape<T>& tape = x.tape();
  Tensor<T> out(x.shape());
  std::vector<T> mask;
  if (!tape.dry_run()) {
    mask.resize(x.size());
    std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
    const T kept = T(1) / (T(1) - rate);
    const T* xp = x.value().ptr();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = keep(rng) ? kept : T(0);
      out[i] = xp[i] * mask[i];
    }
  }
  const NodeId ix = x.id();
  return tape.emit(OpKind::kDropout, {x}, std::move(out),
                   [=, mask = std::move(mask)](Tape<T>& t, NodeId o) {
                     if (!t.requires_grad(ix)) return;
                     const T* g = t.grad(o).data();
                     T* dx = t.grad(ix).data();
                     for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += g[i] * mask[i];
                   });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw ArgumentError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                          std::to_string(k) + ")");
    }
  }
  Tape<T>& tape = logits.tape();
  tape.charge(OpClass::kSoftmax, 3 * static_cast<std::uint64_t>(logits.size()));
  Tensor<T> out({1});
  std::vector<T> probs;
  std::vector<int> lab(labels.begin(), labels.end());
  if (!tape.dry_run()) {
    probs.resize(n * k);
    const T* xp = logits.value().ptr();
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const T* row = xp + r * k;
      const T mx = *std::max_element(row, row + k);
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(row[j] - mx));
      for (std::size_t j = 0; j < k; ++j) {
        probs[r * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / total);
      }
      loss += std::log(total) - static_cast<double>(row[lab[r]] - mx);
    }
    out[0] = static_cast<T>(loss / static_cast<double>(n));
  }
  const NodeId ix = logits.id();
  return tape.emit(OpKind::kCrossEntropy, {logits}, std::move(out),
                   [=, probs = std::move(probs)](Tape<T>& t, NodeId o) {
                     if (!t.requires_grad(ix)) return;
                     const T g = t.grad(o)[0] / static_cast<T>(n);
                     T* dx = t.grad(ix).data();
                     for (std::size_t r = 0; r < n; ++r) {
                       for (std::size_t j = 0; j < k; ++j) {
                         const T target = static_cast<std::size_t>(lab[r]) == j ? T(1) : T(0);
                         dx[r * k + j] += g * (probs[r * k + j] - target);
                       }
                     }
                   });
}

#define MFORMER_INSTANTIATE_OPS(T)                                                              \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                            \
  template Var<T> linear(const Var<T>&, const Var<T>&);                                        \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                         \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, Conv2dOptions);                         \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, Conv2dOptions);          \
  template Var<T> softmax(const Var<T>&, std::size_t, T);                                      \
  template Var<T> avgpool2d(const Var<T>&, std::size_t, std::size_t);                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                           \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                           \
  template Var<T> scale(const Var<T>&, T);                                                     \
  template Var<T> sum(const Var<T>&);                                                          \
  template Var<T> mean(const Var<T>&);                                                         \
  template Var<T> relu(const Var<T>&);                                                         \
  template Var<T> h_swish(const Var<T>&);                                                      \
  template Var<T> gelu(const Var<T>&);                                                         \
  template Var<T> dynamic_relu(const Var<T>&, const Var<T>&, T, T);                            \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormState<T>&,  \
                             Mode);                                                            \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                  \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                 \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                             \
  template Var<T> reshape(const Var<T>&, Shape);                                               \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);                    \
  template Var<T> dropout(const Var<T>&, T, std::mt19937_64&);                                 \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>);

MFORMER_INSTANTIATE_OPS(float)
MFORMER_INSTANTIATE_OPS(double)

}  // namespace mformer::ops
