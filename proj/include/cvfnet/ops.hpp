// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cvfnet/tensor.hpp"

namespace cvf::ops {

// Fractional image coordinate; u is column, v is row.
struct Sample2d {
  double u = 0.0;
  double v = 0.0;
};

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return;
  if (a.rank() != b.rank())
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  for (std::size_t ax = 0; ax < a.rank(); ++ax)
    if (a.dim(ax) != b.dim(ax))
      throw ShapeError(std::string(op) + ": axis " + std::to_string(ax) +
                       " mismatch (" + std::to_string(a.dim(ax)) + " vs " +
                       std::to_string(b.dim(ax)) + ")");
}

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
  return a >= 0 ? (a + b - 1) / b : a / b;
}

// Output index range [lo, hi] for which in = out*stride + off - padding stays
// inside [0, in_dim); hi < lo when empty.
inline void conv_out_range(std::int64_t off, std::int64_t in_dim, std::int64_t out_dim,
                           std::int64_t stride, std::int64_t padding, std::int64_t& lo,
                           std::int64_t& hi) {
  lo = std::max<std::int64_t>(0, ceil_div(padding - off, stride));
  const std::int64_t top = in_dim - 1 - off + padding;
  hi = top < 0 ? -1 : std::min<std::int64_t>(out_dim - 1, top / stride);
}

}  // namespace detail

// out[n,j] = sum_i x[n,i] * weight[i,j] + bias[j]
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1)
    throw ShapeError("linear: expected ranks (2,2,1), got " + shape_str(x.shape()) +
                     ", " + shape_str(weight.shape()) + ", " + shape_str(bias.shape()));
  const std::size_t n = x.dim(0), ci = x.dim(1), co = weight.dim(1);
  if (weight.dim(0) != ci)
    throw ShapeError("linear: inner axis mismatch (x axis 1 = " + std::to_string(ci) +
                     ", weight axis 0 = " + std::to_string(weight.dim(0)) + ")");
  if (bias.dim(0) != co)
    throw ShapeError("linear: bias axis 0 = " + std::to_string(bias.dim(0)) +
                     ", weight axis 1 = " + std::to_string(co));

  auto out = Tensor<T>::zeros({n, co});
  const T* xv = x.value().data();
  const T* wv = weight.value().data();
  const T* bv = bias.value().data();
  T* ov = out.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    T* orow = ov + r * co;
    for (std::size_t j = 0; j < co; ++j) orow[j] = bv[j];
    const T* xrow = xv + r * ci;
    for (std::size_t i = 0; i < ci; ++i) {
      const T xi = xrow[i];
      if (xi == T(0)) continue;
      const T* wrow = wv + i * co;
      for (std::size_t j = 0; j < co; ++j) orow[j] += xi * wrow[j];
    }
  }

  if (tape.recording() &&
      (x.requires_grad() || weight.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), ws = weight.storage(), bs = bias.storage(),
                 os = out.storage(), n, ci, co] {
      if (os->grad.empty()) return;
      const T* go = os->grad.data();
      if (xs->requires_grad) {
        auto gx = ensure_grad(xs);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t i = 0; i < ci; ++i) {
            T acc = T(0);
            const T* wrow = ws->value.data() + i * co;
            const T* grow = go + r * co;
            for (std::size_t j = 0; j < co; ++j) acc += grow[j] * wrow[j];
            gx[r * ci + i] += acc;
          }
      }
      if (ws->requires_grad) {
        auto gw = ensure_grad(ws);
        for (std::size_t r = 0; r < n; ++r) {
          const T* xrow = xs->value.data() + r * ci;
          const T* grow = go + r * co;
          for (std::size_t i = 0; i < ci; ++i) {
            const T xi = xrow[i];
            if (xi == T(0)) continue;
            T* gwrow = gw.data() + i * co;
            for (std::size_t j = 0; j < co; ++j) gwrow[j] += xi * grow[j];
          }
        }
      }
      if (bs->requires_grad) {
        auto gb = ensure_grad(bs);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < co; ++j) gb[j] += go[r * co + j];
      }
    });
  }
  return out;
}

// Cross-correlation of x[C,H,W] with kernels[K,C,kh,kw]; odd kernel sizes only.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernels,
                 const Tensor<T>& bias, int stride, int padding) {
  if (x.rank() != 3 || kernels.rank() != 4 || bias.rank() != 1)
    throw ShapeError("conv2d: expected ranks (3,4,1), got " + shape_str(x.shape()) +
                     ", " + shape_str(kernels.shape()) + ", " + shape_str(bias.shape()));
  const std::int64_t c = static_cast<std::int64_t>(x.dim(0));
  const std::int64_t h = static_cast<std::int64_t>(x.dim(1));
  const std::int64_t w = static_cast<std::int64_t>(x.dim(2));
  const std::int64_t k = static_cast<std::int64_t>(kernels.dim(0));
  const std::int64_t kh = static_cast<std::int64_t>(kernels.dim(2));
  const std::int64_t kw = static_cast<std::int64_t>(kernels.dim(3));
  if (static_cast<std::int64_t>(kernels.dim(1)) != c)
    throw ShapeError("conv2d: kernel axis 1 = " + std::to_string(kernels.dim(1)) +
                     " but input axis 0 = " + std::to_string(c));
  if (static_cast<std::int64_t>(bias.dim(0)) != k)
    throw ShapeError("conv2d: bias axis 0 = " + std::to_string(bias.dim(0)) +
                     " but kernel axis 0 = " + std::to_string(k));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ConfigError("conv2d: kernel sizes must be odd, got " + std::to_string(kh) +
                      "x" + std::to_string(kw));
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  const std::int64_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::int64_t ow = (w + 2 * padding - kw) / stride + 1;
  if (h + 2 * padding < kh || w + 2 * padding < kw || oh < 1 || ow < 1)
    throw ConfigError("conv2d: output size " + std::to_string(oh) + "x" +
                      std::to_string(ow) + " underflows for input " +
                      std::to_string(h) + "x" + std::to_string(w));

  auto out = Tensor<T>::zeros({static_cast<std::size_t>(k),
                               static_cast<std::size_t>(oh),
                               static_cast<std::size_t>(ow)});
  const T* xv = x.value().data();
  const T* kv = kernels.value().data();
  const T* bv = bias.value().data();
  T* ov = out.value().data();

  for (std::int64_t kk = 0; kk < k; ++kk) {
    T* oplane = ov + kk * oh * ow;
    for (std::int64_t i = 0; i < oh * ow; ++i) oplane[i] = bv[kk];
    for (std::int64_t cc = 0; cc < c; ++cc) {
      const T* xplane = xv + cc * h * w;
      const T* kplane = kv + ((kk * c + cc) * kh) * kw;
      for (std::int64_t ki = 0; ki < kh; ++ki) {
        std::int64_t r_lo, r_hi;
        detail::conv_out_range(ki, h, oh, stride, padding, r_lo, r_hi);
        for (std::int64_t kj = 0; kj < kw; ++kj) {
          const T wv2 = kplane[ki * kw + kj];
          if (wv2 == T(0)) continue;
          std::int64_t c_lo, c_hi;
          detail::conv_out_range(kj, w, ow, stride, padding, c_lo, c_hi);
          for (std::int64_t r = r_lo; r <= r_hi; ++r) {
            const std::int64_t ih = r * stride + ki - padding;
            const T* xrow = xplane + ih * w + (kj - padding);
            T* orow = oplane + r * ow;
            for (std::int64_t q = c_lo; q <= c_hi; ++q)
              orow[q] += wv2 * xrow[q * stride];
          }
        }
      }
    }
  }

  if (tape.recording() &&
      (x.requires_grad() || kernels.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), ks = kernels.storage(), bs = bias.storage(),
                 os = out.storage(), c, h, w, k, kh, kw, oh, ow, stride, padding] {
      if (os->grad.empty()) return;
      const T* go = os->grad.data();
      if (bs->requires_grad) {
        auto gb = ensure_grad(bs);
        for (std::int64_t kk = 0; kk < k; ++kk) {
          T acc = T(0);
          const T* gplane = go + kk * oh * ow;
          for (std::int64_t i = 0; i < oh * ow; ++i) acc += gplane[i];
          gb[kk] += acc;
        }
      }
      const bool need_gx = xs->requires_grad;
      const bool need_gk = ks->requires_grad;
      if (!need_gx && !need_gk) return;
      std::span<T> gx, gk;
      if (need_gx) gx = ensure_grad(xs);
      if (need_gk) gk = ensure_grad(ks);
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const T* gplane = go + kk * oh * ow;
        for (std::int64_t cc = 0; cc < c; ++cc) {
          const T* xplane = xs->value.data() + cc * h * w;
          const T* kplane = ks->value.data() + ((kk * c + cc) * kh) * kw;
          T* gxplane = need_gx ? gx.data() + cc * h * w : nullptr;
          T* gkplane = need_gk ? gk.data() + ((kk * c + cc) * kh) * kw : nullptr;
          for (std::int64_t ki = 0; ki < kh; ++ki) {
            std::int64_t r_lo, r_hi;
            detail::conv_out_range(ki, h, oh, stride, padding, r_lo, r_hi);
            for (std::int64_t kj = 0; kj < kw; ++kj) {
              std::int64_t c_lo, c_hi;
              detail::conv_out_range(kj, w, ow, stride, padding, c_lo, c_hi);
              const T wv2 = kplane[ki * kw + kj];
              T wacc = T(0);
              for (std::int64_t r = r_lo; r <= r_hi; ++r) {
                const std::int64_t ih = r * stride + ki - padding;
                const T* grow = gplane + r * ow;
                const std::int64_t base = ih * w + (kj - padding);
                if (need_gx) {
                  for (std::int64_t q = c_lo; q <= c_hi; ++q)
                    gxplane[base + q * stride] += wv2 * grow[q];
                }
                if (need_gk) {
                  const T* xrow = xplane + base;
                  for (std::int64_t q = c_lo; q <= c_hi; ++q)
                    wacc += xrow[q * stride] * grow[q];
                }
              }
              if (need_gk) gkplane[ki * kw + kj] += wacc;
            }
          }
        }
      }
    });
  }
  return out;
}

namespace detail {

struct AxisTable {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> frac;
};

// Align-corners source coordinates for resizing in_dim -> out_dim.
inline AxisTable resize_axis(std::int64_t in_dim, std::int64_t out_dim) {
  AxisTable t;
  t.i0.resize(out_dim);
  t.i1.resize(out_dim);
  t.frac.resize(out_dim);
  const double scale =
      out_dim > 1 ? static_cast<double>(in_dim - 1) / static_cast<double>(out_dim - 1)
                  : 0.0;
  for (std::int64_t o = 0; o < out_dim; ++o) {
    double src = static_cast<double>(o) * scale;
    if (src > static_cast<double>(in_dim - 1)) src = static_cast<double>(in_dim - 1);
    const std::int64_t lo = static_cast<std::int64_t>(src);
    t.i0[o] = lo;
    t.i1[o] = std::min(lo + 1, in_dim - 1);
    t.frac[o] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace detail

// Align-corners bilinear resize of x[C,H,W] to [C,target_h,target_w].
template <typename T>
Tensor<T> bilinear_resize(Tape<T>& tape, const Tensor<T>& x, int target_h, int target_w) {
  if (x.rank() != 3)
    throw ShapeError("bilinear_resize: expected rank 3, got " + shape_str(x.shape()));
  if (target_h < 1 || target_w < 1)
    throw ConfigError("bilinear_resize: target size must be >= 1");
  const std::int64_t c = static_cast<std::int64_t>(x.dim(0));
  const std::int64_t h = static_cast<std::int64_t>(x.dim(1));
  const std::int64_t w = static_cast<std::int64_t>(x.dim(2));
  const auto ty = detail::resize_axis(h, target_h);
  const auto tx = detail::resize_axis(w, target_w);

  auto out = Tensor<T>::zeros({static_cast<std::size_t>(c),
                               static_cast<std::size_t>(target_h),
                               static_cast<std::size_t>(target_w)});
  const T* xv = x.value().data();
  T* ov = out.value().data();
  for (std::int64_t cc = 0; cc < c; ++cc) {
    const T* xplane = xv + cc * h * w;
    T* oplane = ov + cc * target_h * target_w;
    for (std::int64_t oy = 0; oy < target_h; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      const T* r0 = xplane + ty.i0[oy] * w;
      const T* r1 = xplane + ty.i1[oy] * w;
      T* orow = oplane + oy * target_w;
      for (std::int64_t ox = 0; ox < target_w; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const std::int64_t x0 = tx.i0[ox], x1 = tx.i1[ox];
        const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
        orow[ox] = top + fy * (bot - top);
      }
    }
  }

  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), os = out.storage(), c, h, w, target_h, target_w,
                 ty, tx] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T* go = os->grad.data();
      for (std::int64_t cc = 0; cc < c; ++cc) {
        T* gxplane = gx.data() + cc * h * w;
        const T* gplane = go + cc * target_h * target_w;
        for (std::int64_t oy = 0; oy < target_h; ++oy) {
          const T fy = static_cast<T>(ty.frac[oy]);
          const std::int64_t y0 = ty.i0[oy], y1 = ty.i1[oy];
          const T* grow = gplane + oy * target_w;
          for (std::int64_t ox = 0; ox < target_w; ++ox) {
            const T fx = static_cast<T>(tx.frac[ox]);
            const std::int64_t x0 = tx.i0[ox], x1 = tx.i1[ox];
            const T g = grow[ox];
            gxplane[y0 * w + x0] += (T(1) - fy) * (T(1) - fx) * g;
            gxplane[y0 * w + x1] += (T(1) - fy) * fx * g;
            gxplane[y1 * w + x0] += fy * (T(1) - fx) * g;
            gxplane[y1 * w + x1] += fy * fx * g;
          }
        }
      }
    });
  }
  return out;
}

// Per-point 4-neighbour bilinear read of x[C,H,W] at fractional (u,v) pixel
// coordinates; coordinates are clamped into the image and treated as
// non-differentiable constants.
template <typename T>
Tensor<T> bilinear_sample(Tape<T>& tape, const Tensor<T>& x,
                          std::span<const Sample2d> coords) {
  if (x.rank() != 3)
    throw ShapeError("bilinear_sample: expected rank 3, got " + shape_str(x.shape()));
  const std::int64_t c = static_cast<std::int64_t>(x.dim(0));
  const std::int64_t h = static_cast<std::int64_t>(x.dim(1));
  const std::int64_t w = static_cast<std::int64_t>(x.dim(2));
  const std::size_t n = coords.size();

  struct Taps {
    std::int64_t u0, u1, v0, v1;
    T fu, fv;
  };
  std::vector<Taps> taps(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = std::clamp(coords[i].u, 0.0, static_cast<double>(w - 1));
    double v = std::clamp(coords[i].v, 0.0, static_cast<double>(h - 1));
    const std::int64_t u0 = static_cast<std::int64_t>(u);
    const std::int64_t v0 = static_cast<std::int64_t>(v);
    taps[i] = {u0, std::min(u0 + 1, w - 1), v0, std::min(v0 + 1, h - 1),
               static_cast<T>(u - static_cast<double>(u0)),
               static_cast<T>(v - static_cast<double>(v0))};
  }

  auto out = Tensor<T>::zeros({n, static_cast<std::size_t>(c)});
  const T* xv = x.value().data();
  T* ov = out.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = taps[i];
    T* orow = ov + i * c;
    for (std::int64_t cc = 0; cc < c; ++cc) {
      const T* xplane = xv + cc * h * w;
      const T a = xplane[t.v0 * w + t.u0];
      const T b = xplane[t.v0 * w + t.u1];
      const T d = xplane[t.v1 * w + t.u0];
      const T e = xplane[t.v1 * w + t.u1];
      const T top = a + t.fu * (b - a);
      const T bot = d + t.fu * (e - d);
      orow[cc] = top + t.fv * (bot - top);
    }
  }

  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), os = out.storage(), taps = std::move(taps), c, h, w,
                 n] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T* go = os->grad.data();
      for (std::size_t i = 0; i < n; ++i) {
        const auto& t = taps[i];
        const T* grow = go + i * c;
        for (std::int64_t cc = 0; cc < c; ++cc) {
          T* gxplane = gx.data() + cc * h * w;
          const T g = grow[cc];
          gxplane[t.v0 * w + t.u0] += (T(1) - t.fv) * (T(1) - t.fu) * g;
          gxplane[t.v0 * w + t.u1] += (T(1) - t.fv) * t.fu * g;
          gxplane[t.v1 * w + t.u0] += t.fv * (T(1) - t.fu) * g;
          gxplane[t.v1 * w + t.u1] += t.fv * t.fu * g;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, std::span<const Tensor<T>> xs, int axis) {
  if (xs.empty()) throw ContractError("concat: empty input list");
  const std::size_t rank = xs[0].rank();
  if (axis < 0 || static_cast<std::size_t>(axis) >= rank)
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  Shape out_shape = xs[0].shape();
  std::size_t total = xs[0].dim(axis);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i].rank() != rank)
      throw ShapeError("concat: input " + std::to_string(i) + " rank mismatch");
    for (std::size_t ax = 0; ax < rank; ++ax) {
      if (ax == static_cast<std::size_t>(axis)) continue;
      if (xs[i].dim(ax) != out_shape[ax])
        throw ShapeError("concat: axis " + std::to_string(ax) + " mismatch (" +
                         std::to_string(xs[i].dim(ax)) + " vs " +
                         std::to_string(out_shape[ax]) + ")");
    }
    total += xs[i].dim(axis);
  }
  out_shape[axis] = total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t ax = 0; ax < static_cast<std::size_t>(axis); ++ax)
    outer *= out_shape[ax];
  for (std::size_t ax = axis + 1; ax < rank; ++ax) inner *= out_shape[ax];

  auto out = Tensor<T>::zeros(out_shape);
  T* ov = out.value().data();
  const std::size_t out_row = total * inner;
  std::size_t offset = 0;
  bool any_grad = false;
  std::vector<std::size_t> offsets(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    offsets[i] = offset;
    const std::size_t chunk = xs[i].dim(axis) * inner;
    const T* src = xs[i].value().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * chunk, src + (o + 1) * chunk, ov + o * out_row + offset);
    offset += chunk;
    any_grad = any_grad || xs[i].requires_grad();
  }

  if (tape.recording() && any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorStorage<T>>> ss;
    std::vector<std::size_t> chunks;
    ss.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ss.push_back(xs[i].storage());
      chunks.push_back(xs[i].dim(axis) * inner);
    }
    tape.record([ss = std::move(ss), chunks = std::move(chunks),
                 offsets = std::move(offsets), os = out.storage(), outer, out_row] {
      if (os->grad.empty()) return;
      const T* go = os->grad.data();
      for (std::size_t i = 0; i < ss.size(); ++i) {
        if (!ss[i]->requires_grad) continue;
        auto g = ensure_grad(ss[i]);
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = go + o * out_row + offsets[i];
          T* dst = g.data() + o * chunks[i];
          for (std::size_t q = 0; q < chunks[i]; ++q) dst[q] += src[q];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, std::initializer_list<Tensor<T>> xs, int axis) {
  std::vector<Tensor<T>> v(xs);
  return concat(tape, std::span<const Tensor<T>>(v), axis);
}

// Row gather: out[i,:] = x[idx[i],:].
template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const int> idx) {
  if (x.rank() != 2)
    throw ShapeError("gather_rows: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), c = x.dim(1), n = idx.size();
  for (std::size_t i = 0; i < n; ++i)
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= m)
      throw IndexError("gather_rows: index " + std::to_string(idx[i]) +
                       " out of range [0," + std::to_string(m) + ")");

  auto out = Tensor<T>::zeros({n, c});
  const T* xv = x.value().data();
  T* ov = out.value().data();
  for (std::size_t i = 0; i < n; ++i)
    std::copy(xv + idx[i] * c, xv + (idx[i] + 1) * c, ov + i * c);

  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    std::vector<int> idx_copy(idx.begin(), idx.end());
    tape.record([xs = x.storage(), os = out.storage(), idx = std::move(idx_copy), c] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T* go = os->grad.data();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        T* dst = gx.data() + static_cast<std::size_t>(idx[i]) * c;
        const T* src = go + i * c;
        for (std::size_t q = 0; q < c; ++q) dst[q] += src[q];
      }
    });
  }
  return out;
}

// Winner per output row under the deterministic last-write rule: on index
// collision the row with the largest input position wins.
inline std::vector<int> scatter_winners(std::span<const int> idx, std::size_t m) {
  std::vector<int> winner(m, -1);
  for (std::size_t i = 0; i < idx.size(); ++i)
    winner[static_cast<std::size_t>(idx[i])] = static_cast<int>(i);
  return winner;
}

// Row scatter with overwrite-last collision rule; unwritten rows stay zero.
// Gradient flows only to winning input rows.
template <typename T>
Tensor<T> scatter_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const int> idx,
                       std::size_t m) {
  if (x.rank() != 2)
    throw ShapeError("scatter_rows: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (idx.size() != n)
    throw ContractError("scatter_rows: index count " + std::to_string(idx.size()) +
                        " != row count " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i)
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= m)
      throw IndexError("scatter_rows: index " + std::to_string(idx[i]) +
                       " out of range [0," + std::to_string(m) + ")");

  auto out = Tensor<T>::zeros({m, c});
  const T* xv = x.value().data();
  T* ov = out.value().data();
  for (std::size_t i = 0; i < n; ++i)
    std::copy(xv + i * c, xv + (i + 1) * c, ov + static_cast<std::size_t>(idx[i]) * c);

  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    std::vector<int> winner = scatter_winners(idx, m);
    tape.record([xs = x.storage(), os = out.storage(), winner = std::move(winner), c] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T* go = os->grad.data();
      for (std::size_t p = 0; p < winner.size(); ++p) {
        if (winner[p] < 0) continue;
        T* dst = gx.data() + static_cast<std::size_t>(winner[p]) * c;
        const T* src = go + p * c;
        for (std::size_t q = 0; q < c; ++q) dst[q] += src[q];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  auto out = Tensor<T>::zeros(x.shape());
  const T* xv = x.value().data();
  T* ov = out.value().data();
  for (std::size_t i = 0; i < x.numel(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T* go = os->grad.data();
      for (std::size_t i = 0; i < xs->value.size(); ++i)
        if (xs->value[i] > T(0)) gx[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  auto out = Tensor<T>::zeros(x.shape());
  const T* xv = x.value().data();
  T* ov = out.value().data();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = xv[i];
    ov[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                      : std::exp(v) / (T(1) + std::exp(v));
  }
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T* go = os->grad.data();
      const T* y = os->value.data();
      for (std::size_t i = 0; i < xs->value.size(); ++i)
        gx[i] += go[i] * y[i] * (T(1) - y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis) {
  if (axis < 0 || static_cast<std::size_t>(axis) >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(x.rank()));
  std::size_t outer = 1, inner = 1;
  const std::size_t dim = x.dim(axis);
  for (std::size_t ax = 0; ax < static_cast<std::size_t>(axis); ++ax) outer *= x.dim(ax);
  for (std::size_t ax = axis + 1; ax < x.rank(); ++ax) inner *= x.dim(ax);

  auto out = Tensor<T>::zeros(x.shape());
  const T* xv = x.value().data();
  T* ov = out.value().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * dim * inner + q;
      T mx = xv[base];
      for (std::size_t d = 1; d < dim; ++d) mx = std::max(mx, xv[base + d * inner]);
      T sum = T(0);
      for (std::size_t d = 0; d < dim; ++d) {
        const T e = std::exp(xv[base + d * inner] - mx);
        ov[base + d * inner] = e;
        sum += e;
      }
      for (std::size_t d = 0; d < dim; ++d) ov[base + d * inner] /= sum;
    }

  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), os = out.storage(), outer, inner, dim] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T* go = os->grad.data();
      const T* y = os->value.data();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t q = 0; q < inner; ++q) {
          const std::size_t base = o * dim * inner + q;
          T dot = T(0);
          for (std::size_t d = 0; d < dim; ++d)
            dot += go[base + d * inner] * y[base + d * inner];
          for (std::size_t d = 0; d < dim; ++d)
            gx[base + d * inner] +=
                y[base + d * inner] * (go[base + d * inner] - dot);
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& y) {
  detail::check_same_shape(x, y, "add");
  auto out = Tensor<T>::zeros(x.shape());
  const T* xv = x.value().data();
  const T* yv = y.value().data();
  T* ov = out.value().data();
  for (std::size_t i = 0; i < x.numel(); ++i) ov[i] = xv[i] + yv[i];
  if (tape.recording() && (x.requires_grad() || y.requires_grad())) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), ys = y.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      const T* go = os->grad.data();
      if (xs->requires_grad) {
        auto gx = ensure_grad(xs);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
      }
      if (ys->requires_grad) {
        auto gy = ensure_grad(ys);
        for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& y) {
  detail::check_same_shape(x, y, "mul");
  auto out = Tensor<T>::zeros(x.shape());
  const T* xv = x.value().data();
  const T* yv = y.value().data();
  T* ov = out.value().data();
  for (std::size_t i = 0; i < x.numel(); ++i) ov[i] = xv[i] * yv[i];
  if (tape.recording() && (x.requires_grad() || y.requires_grad())) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), ys = y.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      const T* go = os->grad.data();
      if (xs->requires_grad) {
        auto gx = ensure_grad(xs);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * ys->value[i];
      }
      if (ys->requires_grad) {
        auto gy = ensure_grad(ys);
        for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += go[i] * xs->value[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& x, T s) {
  auto out = Tensor<T>::zeros(x.shape());
  const T* xv = x.value().data();
  T* ov = out.value().data();
  for (std::size_t i = 0; i < x.numel(); ++i) ov[i] = xv[i] * s;
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), os = out.storage(), s] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T* go = os->grad.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * s;
    });
  }
  return out;
}

// Matrix transpose of x[M,N] -> [N,M].
template <typename T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 2)
    throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = Tensor<T>::zeros({n, m});
  const T* xv = x.value().data();
  T* ov = out.value().data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t q = 0; q < n; ++q) ov[q * m + r] = xv[r * n + q];
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), os = out.storage(), m, n] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T* go = os->grad.data();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t q = 0; q < n; ++q) gx[r * n + q] += go[q * m + r];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  auto out = Tensor<T>::from(std::move(new_shape),
                             std::vector<T>(x.value().begin(), x.value().end()));
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T* go = os->grad.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

// Full reduction to a scalar.
template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.value()) acc += v;
  auto out = Tensor<T>::scalar(acc);
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xs = x.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      auto gx = ensure_grad(xs);
      const T g = os->grad[0];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

}  // namespace cvf::ops
