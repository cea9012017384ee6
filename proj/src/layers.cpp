#include "wsr/layers.hpp"

#include <cmath>

namespace wsr {

int conv_out_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

int conv_transpose_out_size(int in, int k, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + k;
}

template <typename T>
Tensor<T> init_uniform_fan(Rng& rng, Shape shape, int fan_in, int fan_out, bool requires_grad) {
  WSR_REQUIRE(fan_in > 0, ErrKind::usage, "init: zero fan-in for shape ", shape_str(shape));
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-a, a));
  return Tensor<T>::from_values(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Conv2d<T> make_conv2d(Rng& rng, int in_ch, int out_ch, int k, int stride, int pad) {
  Conv2d<T> layer;
  layer.w = init_uniform_fan<T>(rng, {out_ch, in_ch, k, k}, in_ch * k * k, out_ch * k * k, true);
  layer.b = Tensor<T>::zeros({out_ch}, true);
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

template <typename T>
ConvTranspose2d<T> make_conv_transpose2d(Rng& rng, int in_ch, int out_ch, int k, int stride, int pad) {
  ConvTranspose2d<T> layer;
  layer.w = init_uniform_fan<T>(rng, {in_ch, out_ch, k, k}, in_ch * k * k, out_ch * k * k, true);
  layer.b = Tensor<T>::zeros({out_ch}, true);
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

template <typename T>
Linear<T> make_linear(Rng& rng, int in, int out) {
  Linear<T> layer;
  layer.w = init_uniform_fan<T>(rng, {out, in}, in, out, true);
  layer.b = Tensor<T>::zeros({out}, true);
  return layer;
}

// ---------------------------------------------------------------- conv2d

namespace {

// Valid output range [lo, hi) along one axis for stride 1:
// input index = out - pad + koff must land in [0, in_size).
inline void s1_range(int out_size, int in_size, int pad, int koff, int& lo, int& hi) {
  lo = std::max(0, pad - koff);
  hi = std::min(out_size, in_size + pad - koff);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Conv2d<T>& layer) {
  WSR_REQUIRE(x.rank() == 3, ErrKind::usage, "conv2d: input must be [C,H,W], got ",
              shape_str(x.shape()));
  const int in_ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int out_ch = layer.w.dim(0), kh = layer.w.dim(2), kw = layer.w.dim(3);
  const int s = layer.stride, p = layer.pad;
  WSR_REQUIRE(layer.w.dim(1) == in_ch, ErrKind::usage, "conv2d: weight expects ", layer.w.dim(1),
              " input channels, input has ", in_ch);
  WSR_REQUIRE(h + 2 * p >= kh && w + 2 * p >= kw, ErrKind::usage,
              "conv2d: kernel ", kh, "x", kw, " larger than padded input ", h + 2 * p, "x",
              w + 2 * p);
  const int oh = conv_out_size(h, kh, s, p);
  const int ow = conv_out_size(w, kw, s, p);

  Tensor<T> out = Tensor<T>::zeros({out_ch, oh, ow});
  T* po = out.data();
  const T* px = x.data();
  const T* pw = layer.w.data();
  const T* pb = layer.b.data();

  for (int oc = 0; oc < out_ch; ++oc) {
    T* plane = po + static_cast<size_t>(oc) * oh * ow;
    const T bias = pb[oc];
    for (int i = 0; i < oh * ow; ++i) plane[i] = bias;
  }
  if (s == 1) {
    for (int oc = 0; oc < out_ch; ++oc) {
      T* oplane = po + static_cast<size_t>(oc) * oh * ow;
      for (int ic = 0; ic < in_ch; ++ic) {
        const T* xplane = px + static_cast<size_t>(ic) * h * w;
        const T* wk = pw + (static_cast<size_t>(oc) * in_ch + ic) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          int ylo, yhi;
          s1_range(oh, h, p, ky, ylo, yhi);
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = wk[ky * kw + kx];
            int xlo, xhi;
            s1_range(ow, w, p, kx, xlo, xhi);
            for (int oy = ylo; oy < yhi; ++oy) {
              const T* xrow = xplane + (oy - p + ky) * w + (xlo - p + kx);
              T* orow = oplane + oy * ow + xlo;
              const int n = xhi - xlo;
              for (int i = 0; i < n; ++i) orow[i] += wv * xrow[i];
            }
          }
        }
      }
    }
  } else {
    for (int oc = 0; oc < out_ch; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = po[(static_cast<size_t>(oc) * oh + oy) * ow + ox];
          for (int ic = 0; ic < in_ch; ++ic)
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * s - p + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * s - p + kx;
                if (ix < 0 || ix >= w) continue;
                acc += pw[((static_cast<size_t>(oc) * in_ch + ic) * kh + ky) * kw + kx] *
                       px[(static_cast<size_t>(ic) * h + iy) * w + ix];
              }
            }
          po[(static_cast<size_t>(oc) * oh + oy) * ow + ox] = acc;
        }
  }

  if (tape) {
    Tensor<T> wt = layer.w, bt = layer.b;
    tape->record("conv2d", out,
                 [x, wt, bt, out, in_ch, out_ch, h, w, kh, kw, oh, ow, s, p](Tape<T>& tp) {
      const std::vector<T>& go = tp.grad(out);
      const T* pgo = go.data();
      const T* px = x.data();
      const T* pw = wt.data();
      if (tp.wants_grad(bt)) {
        std::vector<T>& gb = tp.grad(bt);
        for (int oc = 0; oc < out_ch; ++oc) {
          T acc = 0;
          const T* oplane = pgo + static_cast<size_t>(oc) * oh * ow;
          for (int i = 0; i < oh * ow; ++i) acc += oplane[i];
          gb[static_cast<size_t>(oc)] += acc;
        }
      }
      const bool want_x = tp.wants_grad(x);
      const bool want_w = tp.wants_grad(wt);
      if (!want_x && !want_w) return;
      std::vector<T>* gx = want_x ? &tp.grad(x) : nullptr;
      std::vector<T>* gw = want_w ? &tp.grad(wt) : nullptr;
      if (s == 1) {
        for (int oc = 0; oc < out_ch; ++oc) {
          const T* oplane = pgo + static_cast<size_t>(oc) * oh * ow;
          for (int ic = 0; ic < in_ch; ++ic) {
            const T* xplane = px + static_cast<size_t>(ic) * h * w;
            T* gxplane = want_x ? gx->data() + static_cast<size_t>(ic) * h * w : nullptr;
            const size_t wbase = (static_cast<size_t>(oc) * in_ch + ic) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
              int ylo, yhi;
              s1_range(oh, h, p, ky, ylo, yhi);
              for (int kx = 0; kx < kw; ++kx) {
                int xlo, xhi;
                s1_range(ow, w, p, kx, xlo, xhi);
                const int n = xhi - xlo;
                if (n <= 0 || ylo >= yhi) continue;
                const T wv = pw[wbase + ky * kw + kx];
                T wacc = 0;
                for (int oy = ylo; oy < yhi; ++oy) {
                  const T* grow = oplane + oy * ow + xlo;
                  const int ibase = (oy - p + ky) * w + (xlo - p + kx);
                  if (want_x) {
                    T* gxrow = gxplane + ibase;
                    for (int i = 0; i < n; ++i) gxrow[i] += wv * grow[i];
                  }
                  if (want_w) {
                    const T* xrow = xplane + ibase;
                    for (int i = 0; i < n; ++i) wacc += grow[i] * xrow[i];
                  }
                }
                if (want_w) (*gw)[wbase + ky * kw + kx] += wacc;
              }
            }
          }
        }
      } else {
        for (int oc = 0; oc < out_ch; ++oc)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const T g = pgo[(static_cast<size_t>(oc) * oh + oy) * ow + ox];
              for (int ic = 0; ic < in_ch; ++ic)
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = oy * s - p + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * s - p + kx;
                    if (ix < 0 || ix >= w) continue;
                    const size_t wi = ((static_cast<size_t>(oc) * in_ch + ic) * kh + ky) * kw + kx;
                    const size_t xi = (static_cast<size_t>(ic) * h + iy) * w + ix;
                    if (want_x) (*gx)[xi] += pw[wi] * g;
                    if (want_w) (*gw)[wi] += px[xi] * g;
                  }
                }
            }
      }
    });
  }
  return out;
}

// ------------------------------------------------------- conv_transpose2d

namespace {

// Valid input range [lo, hi] along one axis of the scatter form:
// output index = in*s - pad + koff must land in [0, out_size).
inline bool scatter_range(int in_size, int out_size, int s, int pad, int koff, int& lo, int& hi) {
  lo = std::max(0, (pad - koff + s - 1) / s);
  const int num = out_size - 1 + pad - koff;
  if (num < 0) return false;
  hi = std::min(in_size - 1, num / s);
  return lo <= hi;
}

}  // namespace

template <typename T>
Tensor<T> conv_transpose2d(Tape<T>* tape, const Tensor<T>& x, const ConvTranspose2d<T>& layer) {
  WSR_REQUIRE(x.rank() == 3, ErrKind::usage, "conv_transpose2d: input must be [C,H,W], got ",
              shape_str(x.shape()));
  const int in_ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  WSR_REQUIRE(layer.w.dim(0) == in_ch, ErrKind::usage, "conv_transpose2d: weight expects ",
              layer.w.dim(0), " input channels, input has ", in_ch);
  const int out_ch = layer.w.dim(1), kh = layer.w.dim(2), kw = layer.w.dim(3);
  const int s = layer.stride, p = layer.pad;
  WSR_REQUIRE(s >= 1, ErrKind::usage, "conv_transpose2d: stride must be >= 1");
  const int oh = conv_transpose_out_size(h, kh, s, p);
  const int ow = conv_transpose_out_size(w, kw, s, p);
  WSR_REQUIRE(oh > 0 && ow > 0, ErrKind::usage, "conv_transpose2d: empty output for input ",
              shape_str(x.shape()));

  Tensor<T> out = Tensor<T>::zeros({out_ch, oh, ow});
  T* po = out.data();
  const T* px = x.data();
  const T* pw = layer.w.data();
  const T* pb = layer.b.data();

  for (int oc = 0; oc < out_ch; ++oc) {
    T* plane = po + static_cast<size_t>(oc) * oh * ow;
    const T bias = pb[oc];
    for (int i = 0; i < oh * ow; ++i) plane[i] = bias;
  }
  for (int ic = 0; ic < in_ch; ++ic) {
    const T* xplane = px + static_cast<size_t>(ic) * h * w;
    for (int oc = 0; oc < out_ch; ++oc) {
      T* oplane = po + static_cast<size_t>(oc) * oh * ow;
      const T* wk = pw + (static_cast<size_t>(ic) * out_ch + oc) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        int ylo, yhi;
        if (!scatter_range(h, oh, s, p, ky, ylo, yhi)) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int xlo, xhi;
          if (!scatter_range(w, ow, s, p, kx, xlo, xhi)) continue;
          const T wv = wk[ky * kw + kx];
          for (int iy = ylo; iy <= yhi; ++iy) {
            const T* xrow = xplane + iy * w;
            T* orow = oplane + (iy * s - p + ky) * ow;
            for (int ix = xlo; ix <= xhi; ++ix) orow[ix * s - p + kx] += wv * xrow[ix];
          }
        }
      }
    }
  }

  if (tape) {
    Tensor<T> wt = layer.w, bt = layer.b;
    tape->record("conv_transpose2d", out,
                 [x, wt, bt, out, in_ch, out_ch, h, w, kh, kw, oh, ow, s, p](Tape<T>& tp) {
      const std::vector<T>& go = tp.grad(out);
      const T* pgo = go.data();
      const T* px = x.data();
      const T* pw = wt.data();
      if (tp.wants_grad(bt)) {
        std::vector<T>& gb = tp.grad(bt);
        for (int oc = 0; oc < out_ch; ++oc) {
          T acc = 0;
          const T* oplane = pgo + static_cast<size_t>(oc) * oh * ow;
          for (int i = 0; i < oh * ow; ++i) acc += oplane[i];
          gb[static_cast<size_t>(oc)] += acc;
        }
      }
      const bool want_x = tp.wants_grad(x);
      const bool want_w = tp.wants_grad(wt);
      if (!want_x && !want_w) return;
      std::vector<T>* gx = want_x ? &tp.grad(x) : nullptr;
      std::vector<T>* gw = want_w ? &tp.grad(wt) : nullptr;
      for (int ic = 0; ic < in_ch; ++ic) {
        const T* xplane = px + static_cast<size_t>(ic) * h * w;
        T* gxplane = want_x ? gx->data() + static_cast<size_t>(ic) * h * w : nullptr;
        for (int oc = 0; oc < out_ch; ++oc) {
          const T* goplane = pgo + static_cast<size_t>(oc) * oh * ow;
          const size_t wbase = (static_cast<size_t>(ic) * out_ch + oc) * kh * kw;
          for (int ky = 0; ky < kh; ++ky) {
            int ylo, yhi;
            if (!scatter_range(h, oh, s, p, ky, ylo, yhi)) continue;
            for (int kx = 0; kx < kw; ++kx) {
              int xlo, xhi;
              if (!scatter_range(w, ow, s, p, kx, xlo, xhi)) continue;
              const T wv = pw[wbase + ky * kw + kx];
              T wacc = 0;
              for (int iy = ylo; iy <= yhi; ++iy) {
                const T* grow = goplane + (iy * s - p + ky) * ow;
                const T* xrow = xplane + iy * w;
                if (want_x) {
                  T* gxrow = gxplane + iy * w;
                  for (int ix = xlo; ix <= xhi; ++ix) gxrow[ix] += wv * grow[ix * s - p + kx];
                }
                if (want_w) {
                  for (int ix = xlo; ix <= xhi; ++ix) wacc += xrow[ix] * grow[ix * s - p + kx];
                }
              }
              if (want_w) (*gw)[wbase + ky * kw + kx] += wacc;
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- linear

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Linear<T>& layer) {
  WSR_REQUIRE(x.rank() == 1, ErrKind::usage, "linear: input must be rank 1, got ",
              shape_str(x.shape()));
  const int in = layer.w.dim(1), out_n = layer.w.dim(0);
  WSR_REQUIRE(x.dim(0) == in, ErrKind::usage, "linear: weight expects ", in, " inputs, got ",
              x.dim(0));
  Tensor<T> out = Tensor<T>::zeros({out_n});
  const T* px = x.data();
  const T* pw = layer.w.data();
  const T* pb = layer.b.data();
  T* po = out.data();
  for (int o = 0; o < out_n; ++o) {
    const T* wrow = pw + static_cast<size_t>(o) * in;
    T acc = pb[o];
    for (int i = 0; i < in; ++i) acc += wrow[i] * px[i];
    po[o] = acc;
  }
  if (tape) {
    Tensor<T> wt = layer.w, bt = layer.b;
    tape->record("linear", out, [x, wt, bt, out, in, out_n](Tape<T>& tp) {
      const std::vector<T>& go = tp.grad(out);
      const T* px = x.data();
      const T* pw = wt.data();
      if (tp.wants_grad(bt)) {
        std::vector<T>& gb = tp.grad(bt);
        for (int o = 0; o < out_n; ++o) gb[static_cast<size_t>(o)] += go[static_cast<size_t>(o)];
      }
      if (tp.wants_grad(wt)) {
        std::vector<T>& gw = tp.grad(wt);
        for (int o = 0; o < out_n; ++o) {
          const T g = go[static_cast<size_t>(o)];
          T* gwrow = gw.data() + static_cast<size_t>(o) * in;
          for (int i = 0; i < in; ++i) gwrow[i] += g * px[i];
        }
      }
      if (tp.wants_grad(x)) {
        std::vector<T>& gxv = tp.grad(x);
        for (int o = 0; o < out_n; ++o) {
          const T g = go[static_cast<size_t>(o)];
          const T* wrow = pw + static_cast<size_t>(o) * in;
          for (int i = 0; i < in; ++i) gxv[static_cast<size_t>(i)] += g * wrow[i];
        }
      }
    });
  }
  return out;
}

// ----------------------------------------------------------- activations

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  std::vector<T> v(static_cast<size_t>(x.size()));
  const T* px = x.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = px[i] > T(0) ? px[i] : T(0);
  Tensor<T> out = Tensor<T>::from_values(x.shape(), std::move(v));
  if (tape) {
    tape->record("relu", out, [x, out](Tape<T>& tp) {
      if (!tp.wants_grad(x)) return;
      const std::vector<T>& go = tp.grad(out);
      std::vector<T>& gx = tp.grad(x);
      const T* px = x.data();
      for (size_t i = 0; i < gx.size(); ++i)
        if (px[i] > T(0)) gx[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  // saturation would round to exactly 0 or 1 for large |x|; nudge back one
  // ulp so outputs stay strictly inside (0, 1)
  const T hi = std::nextafter(T(1), T(0));
  const T lo = std::numeric_limits<T>::min();
  std::vector<T> v(static_cast<size_t>(x.size()));
  const T* px = x.data();
  for (size_t i = 0; i < v.size(); ++i) {
    const T y = T(1) / (T(1) + std::exp(-px[i]));
    v[i] = y >= T(1) ? hi : (y <= T(0) ? lo : y);
  }
  Tensor<T> out = Tensor<T>::from_values(x.shape(), std::move(v));
  if (tape) {
    tape->record("sigmoid", out, [x, out](Tape<T>& tp) {
      if (!tp.wants_grad(x)) return;
      const std::vector<T>& go = tp.grad(out);
      std::vector<T>& gx = tp.grad(x);
      const T* py = out.data();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * py[i] * (T(1) - py[i]);
    });
  }
  return out;
}

// --------------------------------------------------------------- pooling

template <typename T>
Tensor<T> avg_pool2(Tape<T>* tape, const Tensor<T>& x) {
  WSR_REQUIRE(x.rank() == 3, ErrKind::usage, "avg_pool2: input must be [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  WSR_REQUIRE(h % 2 == 0 && w % 2 == 0, ErrKind::usage, "avg_pool2: odd spatial size ",
              shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor<T> out = Tensor<T>::zeros({c, oh, ow});
  const T* px = x.data();
  T* po = out.data();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const T* r0 = px + (static_cast<size_t>(ch) * h + 2 * y) * w + 2 * xx;
        const T* r1 = r0 + w;
        po[(static_cast<size_t>(ch) * oh + y) * ow + xx] =
            (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
      }
  if (tape) {
    tape->record("avg_pool2", out, [x, out, c, h, w, oh, ow](Tape<T>& tp) {
      if (!tp.wants_grad(x)) return;
      const std::vector<T>& go = tp.grad(out);
      std::vector<T>& gx = tp.grad(x);
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) {
            const T g = go[(static_cast<size_t>(ch) * oh + y) * ow + xx] * T(0.25);
            T* r0 = gx.data() + (static_cast<size_t>(ch) * h + 2 * y) * w + 2 * xx;
            T* r1 = r0 + w;
            r0[0] += g;
            r0[1] += g;
            r1[0] += g;
            r1[1] += g;
          }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x) {
  WSR_REQUIRE(x.rank() == 3, ErrKind::usage, "global_avg_pool: input must be [C,H,W]");
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<T> out = Tensor<T>::zeros({c});
  const T* px = x.data();
  T* po = out.data();
  for (int ch = 0; ch < c; ++ch) {
    T acc = 0;
    const T* plane = px + static_cast<size_t>(ch) * hw;
    for (int i = 0; i < hw; ++i) acc += plane[i];
    po[ch] = acc / static_cast<T>(hw);
  }
  if (tape) {
    tape->record("global_avg_pool", out, [x, out, c, hw](Tape<T>& tp) {
      if (!tp.wants_grad(x)) return;
      const std::vector<T>& go = tp.grad(out);
      std::vector<T>& gx = tp.grad(x);
      for (int ch = 0; ch < c; ++ch) {
        const T g = go[static_cast<size_t>(ch)] / static_cast<T>(hw);
        T* plane = gx.data() + static_cast<size_t>(ch) * hw;
        for (int i = 0; i < hw; ++i) plane[i] += g;
      }
    });
  }
  return out;
}

#define WSR_INSTANTIATE_LAYERS(T)                                                              \
  template Tensor<T> init_uniform_fan<T>(Rng&, Shape, int, int, bool);                         \
  template Conv2d<T> make_conv2d<T>(Rng&, int, int, int, int, int);                            \
  template ConvTranspose2d<T> make_conv_transpose2d<T>(Rng&, int, int, int, int, int);         \
  template Linear<T> make_linear<T>(Rng&, int, int);                                           \
  template Tensor<T> conv2d<T>(Tape<T>*, const Tensor<T>&, const Conv2d<T>&);                  \
  template Tensor<T> conv_transpose2d<T>(Tape<T>*, const Tensor<T>&, const ConvTranspose2d<T>&); \
  template Tensor<T> linear<T>(Tape<T>*, const Tensor<T>&, const Linear<T>&);                  \
  template Tensor<T> relu<T>(Tape<T>*, const Tensor<T>&);                                      \
  template Tensor<T> sigmoid<T>(Tape<T>*, const Tensor<T>&);                                   \
  template Tensor<T> avg_pool2<T>(Tape<T>*, const Tensor<T>&);                                 \
  template Tensor<T> global_avg_pool<T>(Tape<T>*, const Tensor<T>&);

WSR_INSTANTIATE_LAYERS(float)
WSR_INSTANTIATE_LAYERS(double)

}  // namespace wsr
