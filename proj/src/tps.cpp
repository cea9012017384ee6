#include "wsr/tps.hpp"

#include <cmath>

namespace wsr {

ControlGrid ControlGrid::regular(int side) {
  WSR_REQUIRE(side >= 2, ErrKind::usage, "control grid needs side >= 2");
  ControlGrid g;
  g.xs.reserve(static_cast<size_t>(side) * side);
  g.ys.reserve(static_cast<size_t>(side) * side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      g.xs.push_back(-1.0 + 2.0 * c / (side - 1));
      g.ys.push_back(-1.0 + 2.0 * r / (side - 1));
    }
  return g;
}

double tps_kernel_sq(double r2) {
  return r2 > 0.0 ? r2 * std::log(r2) : 0.0;
}

double pixel_center_coord(int i, int n) {
  return -1.0 + (2.0 * i + 1.0) / n;
}

namespace {

constexpr double kDiagRegularization = 1e-8;

// LU factorization with partial pivoting, in place.
void lu_factor(std::vector<double>& a, std::vector<int>& piv, int n) {
  piv.resize(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    int pr = k;
    double best = std::fabs(a[static_cast<size_t>(k) * n + k]);
    for (int r = k + 1; r < n; ++r) {
      const double v = std::fabs(a[static_cast<size_t>(r) * n + k]);
      if (v > best) {
        best = v;
        pr = r;
      }
    }
    WSR_REQUIRE(best > 0.0, ErrKind::internal, "TPS system is singular at column ", k);
    piv[static_cast<size_t>(k)] = pr;
    if (pr != k)
      for (int j = 0; j < n; ++j)
        std::swap(a[static_cast<size_t>(k) * n + j], a[static_cast<size_t>(pr) * n + j]);
    const double inv = 1.0 / a[static_cast<size_t>(k) * n + k];
    for (int r = k + 1; r < n; ++r) {
      const double f = a[static_cast<size_t>(r) * n + k] * inv;
      a[static_cast<size_t>(r) * n + k] = f;
      if (f == 0.0) continue;
      for (int j = k + 1; j < n; ++j)
        a[static_cast<size_t>(r) * n + j] -= f * a[static_cast<size_t>(k) * n + j];
    }
  }
}

void lu_solve(const std::vector<double>& lu, const std::vector<int>& piv, int n,
              std::vector<double>& b) {
  // apply the full permutation before substituting (rows already updated
  // must not move afterwards)
  for (int k = 0; k < n; ++k)
    if (piv[static_cast<size_t>(k)] != k)
      std::swap(b[static_cast<size_t>(k)], b[static_cast<size_t>(piv[static_cast<size_t>(k)])]);
  for (int k = 0; k < n; ++k) {
    const double bk = b[static_cast<size_t>(k)];
    if (bk == 0.0) continue;
    for (int r = k + 1; r < n; ++r)
      b[static_cast<size_t>(r)] -= lu[static_cast<size_t>(r) * n + k] * bk;
  }
  for (int k = n - 1; k >= 0; --k) {
    for (int j = k + 1; j < n; ++j)
      b[static_cast<size_t>(k)] -= lu[static_cast<size_t>(k) * n + j] * b[static_cast<size_t>(j)];
    b[static_cast<size_t>(k)] /= lu[static_cast<size_t>(k) * n + k];
  }
}

}  // namespace

TpsSystem::TpsSystem(const ControlGrid& grid, int out_h, int out_w)
    : grid_(grid), c_(grid.count()), out_h_(out_h), out_w_(out_w), n_(grid.count() + 3) {
  WSR_REQUIRE(out_h > 0 && out_w > 0, ErrKind::usage, "TpsSystem: empty output grid");
  for (int i = 0; i < c_; ++i)
    for (int j = i + 1; j < c_; ++j)
      WSR_REQUIRE(grid_.xs[i] != grid_.xs[j] || grid_.ys[i] != grid_.ys[j], ErrKind::usage,
                  "TpsSystem: duplicate control points ", i, " and ", j);

  // bordered system [[K + eps*I, P], [P^T, 0]]
  lu_.assign(static_cast<size_t>(n_) * n_, 0.0);
  for (int i = 0; i < c_; ++i) {
    for (int j = 0; j < c_; ++j) {
      const double dx = grid_.xs[i] - grid_.xs[j];
      const double dy = grid_.ys[i] - grid_.ys[j];
      lu_[static_cast<size_t>(i) * n_ + j] = tps_kernel_sq(dx * dx + dy * dy);
    }
    lu_[static_cast<size_t>(i) * n_ + i] += kDiagRegularization;
    lu_[static_cast<size_t>(i) * n_ + c_ + 0] = 1.0;
    lu_[static_cast<size_t>(i) * n_ + c_ + 1] = grid_.xs[i];
    lu_[static_cast<size_t>(i) * n_ + c_ + 2] = grid_.ys[i];
    lu_[static_cast<size_t>(c_ + 0) * n_ + i] = 1.0;
    lu_[static_cast<size_t>(c_ + 1) * n_ + i] = grid_.xs[i];
    lu_[static_cast<size_t>(c_ + 2) * n_ + i] = grid_.ys[i];
  }
  lu_factor(lu_, piv_, n_);

  identity_.resize(2 * static_cast<size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      identity_[static_cast<size_t>(y) * out_w + x] = pixel_center_coord(x, out_w);
      identity_[static_cast<size_t>(out_h) * out_w + static_cast<size_t>(y) * out_w + x] =
          pixel_center_coord(y, out_h);
    }

  // J = B * L^{-1} * E with E the first C columns of the identity: the same
  // matrix turns x-shifts into the x coordinate field and y-shifts into y.
  const size_t hw = static_cast<size_t>(out_h) * out_w;
  std::vector<double> z(static_cast<size_t>(n_) * c_);  // column-major per shift index
  {
    std::vector<double> col(static_cast<size_t>(n_));
    for (int j = 0; j < c_; ++j) {
      std::fill(col.begin(), col.end(), 0.0);
      col[static_cast<size_t>(j)] = 1.0;
      lu_solve(lu_, piv_, n_, col);
      for (int m = 0; m < n_; ++m) z[static_cast<size_t>(m) * c_ + j] = col[static_cast<size_t>(m)];
    }
  }
  jacobian_.assign(hw * static_cast<size_t>(c_), 0.0);
  std::vector<double> basis(static_cast<size_t>(n_));
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const double gx = pixel_center_coord(x, out_w);
      const double gy = pixel_center_coord(y, out_h);
      for (int j = 0; j < c_; ++j) {
        const double dx = gx - grid_.xs[j];
        const double dy = gy - grid_.ys[j];
        basis[static_cast<size_t>(j)] = tps_kernel_sq(dx * dx + dy * dy);
      }
      basis[static_cast<size_t>(c_) + 0] = 1.0;
      basis[static_cast<size_t>(c_) + 1] = gx;
      basis[static_cast<size_t>(c_) + 2] = gy;
      double* jrow = jacobian_.data() + (static_cast<size_t>(y) * out_w + x) * c_;
      for (int m = 0; m < n_; ++m) {
        const double bm = basis[static_cast<size_t>(m)];
        if (bm == 0.0) continue;
        const double* zrow = z.data() + static_cast<size_t>(m) * c_;
        for (int j = 0; j < c_; ++j) jrow[j] += bm * zrow[j];
      }
    }
}

std::vector<double> TpsSystem::solve(const std::vector<double>& targets) const {
  WSR_REQUIRE(static_cast<int>(targets.size()) == c_, ErrKind::usage, "TpsSystem::solve: expected ",
              c_, " targets, got ", targets.size());
  std::vector<double> rhs(static_cast<size_t>(n_), 0.0);
  std::copy(targets.begin(), targets.end(), rhs.begin());
  lu_solve(lu_, piv_, n_, rhs);
  return rhs;
}

double TpsSystem::evaluate(const std::vector<double>& weights, double x, double y) const {
  double v = weights[static_cast<size_t>(c_) + 0] + weights[static_cast<size_t>(c_) + 1] * x +
             weights[static_cast<size_t>(c_) + 2] * y;
  for (int j = 0; j < c_; ++j) {
    const double dx = x - grid_.xs[j];
    const double dy = y - grid_.ys[j];
    v += weights[static_cast<size_t>(j)] * tps_kernel_sq(dx * dx + dy * dy);
  }
  return v;
}

// ---------------------------------------------------------------- tps_grid

template <typename T>
Tensor<T> tps_grid(Tape<T>* tape, const Tensor<T>& shifts, const TpsSystem& sys) {
  const int c = sys.control_count();
  WSR_REQUIRE(shifts.rank() == 1 && shifts.dim(0) == 2 * c, ErrKind::usage,
              "tps_grid: expected shift vector of length ", 2 * c, ", got ",
              shape_str(shifts.shape()));
  for (T v : shifts.values())
    WSR_REQUIRE(std::isfinite(static_cast<double>(v)), ErrKind::numeric,
                "tps_grid: non-finite shift parameter");
  const int h = sys.out_h(), w = sys.out_w();
  const size_t hw = static_cast<size_t>(h) * w;
  const std::vector<double>& id = sys.identity_grid();
  const std::vector<double>& jac = sys.shift_jacobian();
  const T* ps = shifts.data();

  Tensor<T> out = Tensor<T>::zeros({2, h, w});
  T* po = out.data();
  for (int coord = 0; coord < 2; ++coord) {
    const T* d = ps + coord * c;
    T* plane = po + coord * hw;
    const double* idp = id.data() + coord * hw;
    bool all_zero = true;
    for (int j = 0; j < c; ++j)
      if (d[j] != T(0)) {
        all_zero = false;
        break;
      }
    if (all_zero) {
      for (size_t p = 0; p < hw; ++p) plane[p] = static_cast<T>(idp[p]);
      continue;
    }
    for (size_t p = 0; p < hw; ++p) {
      const double* jrow = jac.data() + p * c;
      double acc = idp[p];
      for (int j = 0; j < c; ++j) acc += jrow[j] * static_cast<double>(d[j]);
      plane[p] = static_cast<T>(acc);
    }
  }

  if (tape) {
    const std::vector<double>* jacp = &sys.shift_jacobian();
    tape->record("tps_grid", out, [shifts, out, jacp, c, hw](Tape<T>& tp) {
      if (!tp.wants_grad(shifts)) return;
      const std::vector<T>& go = tp.grad(out);
      std::vector<T>& gs = tp.grad(shifts);
      for (int coord = 0; coord < 2; ++coord) {
        const T* gplane = go.data() + coord * hw;
        T* gd = gs.data() + coord * c;
        for (size_t p = 0; p < hw; ++p) {
          const double g = static_cast<double>(gplane[p]);
          if (g == 0.0) continue;
          const double* jrow = jacp->data() + p * c;
          for (int j = 0; j < c; ++j) gd[j] += static_cast<T>(jrow[j] * g);
        }
      }
    });
  }
  return out;
}

// -------------------------------------------------------------- grid_sample

template <typename T>
Tensor<T> grid_sample(Tape<T>* tape, const Tensor<T>& f, const Tensor<T>& field) {
  WSR_REQUIRE(f.rank() == 3, ErrKind::usage, "grid_sample: features must be [D,h,w], got ",
              shape_str(f.shape()));
  WSR_REQUIRE(field.rank() == 3 && field.dim(0) == 2, ErrKind::usage,
              "grid_sample: field must be [2,h,w], got ", shape_str(field.shape()));
  const int d = f.dim(0), h = f.dim(1), w = f.dim(2);
  const int oh = field.dim(1), ow = field.dim(2);
  for (T v : field.values())
    WSR_REQUIRE(std::isfinite(static_cast<double>(v)), ErrKind::numeric,
                "grid_sample: non-finite coordinate in field");

  const size_t ohw = static_cast<size_t>(oh) * ow;
  const T* pf = f.data();
  const T* pg = field.data();
  Tensor<T> out = Tensor<T>::zeros({d, oh, ow});
  T* po = out.data();

  // Per-pixel gather corners/weights, shared across channels.
  std::vector<int> x0s(ohw), x1s(ohw), y0s(ohw), y1s(ohw);
  std::vector<T> fxs(ohw), fys(ohw);
  for (size_t p = 0; p < ohw; ++p) {
    const T u = pg[p];
    const T v = pg[ohw + p];
    const T px = (u + T(1)) * T(0.5) * static_cast<T>(w) - T(0.5);
    const T py = (v + T(1)) * T(0.5) * static_cast<T>(h) - T(0.5);
    const T fx0 = std::floor(px);
    const T fy0 = std::floor(py);
    const int ix0 = static_cast<int>(fx0);
    const int iy0 = static_cast<int>(fy0);
    x0s[p] = std::min(std::max(ix0, 0), w - 1);
    x1s[p] = std::min(std::max(ix0 + 1, 0), w - 1);
    y0s[p] = std::min(std::max(iy0, 0), h - 1);
    y1s[p] = std::min(std::max(iy0 + 1, 0), h - 1);
    fxs[p] = px - fx0;
    fys[p] = py - fy0;
  }
  for (int ch = 0; ch < d; ++ch) {
    const T* fplane = pf + static_cast<size_t>(ch) * h * w;
    T* oplane = po + static_cast<size_t>(ch) * ohw;
    for (size_t p = 0; p < ohw; ++p) {
      const T fx = fxs[p], fy = fys[p];
      const T v00 = fplane[y0s[p] * w + x0s[p]];
      const T v01 = fplane[y0s[p] * w + x1s[p]];
      const T v10 = fplane[y1s[p] * w + x0s[p]];
      const T v11 = fplane[y1s[p] * w + x1s[p]];
      oplane[p] = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                  fy * ((T(1) - fx) * v10 + fx * v11);
    }
  }

  if (tape) {
    tape->record("grid_sample", out,
                 [f, field, out, x0s = std::move(x0s), x1s = std::move(x1s), y0s = std::move(y0s),
                  y1s = std::move(y1s), fxs = std::move(fxs), fys = std::move(fys), d, h, w,
                  ohw](Tape<T>& tp) {
      const std::vector<T>& go = tp.grad(out);
      const bool want_f = tp.wants_grad(f);
      const bool want_field = tp.wants_grad(field);
      if (!want_f && !want_field) return;
      const T* pf = f.data();
      std::vector<T>* gf = want_f ? &tp.grad(f) : nullptr;
      std::vector<T>* gfield = want_field ? &tp.grad(field) : nullptr;
      for (int ch = 0; ch < d; ++ch) {
        const T* fplane = pf + static_cast<size_t>(ch) * h * w;
        const T* goplane = go.data() + static_cast<size_t>(ch) * ohw;
        T* gfplane = want_f ? gf->data() + static_cast<size_t>(ch) * h * w : nullptr;
        for (size_t p = 0; p < ohw; ++p) {
          const T g = goplane[p];
          if (g == T(0)) continue;
          const T fx = fxs[p], fy = fys[p];
          const int i00 = y0s[p] * w + x0s[p];
          const int i01 = y0s[p] * w + x1s[p];
          const int i10 = y1s[p] * w + x0s[p];
          const int i11 = y1s[p] * w + x1s[p];
          if (want_f) {
            gfplane[i00] += g * (T(1) - fy) * (T(1) - fx);
            gfplane[i01] += g * (T(1) - fy) * fx;
            gfplane[i10] += g * fy * (T(1) - fx);
            gfplane[i11] += g * fy * fx;
          }
          if (want_field) {
            const T v00 = fplane[i00], v01 = fplane[i01], v10 = fplane[i10], v11 = fplane[i11];
            // d(out)/d(px), d(out)/d(py); px = (u+1)*w/2 - 1/2
            const T dpx = (T(1) - fy) * (v01 - v00) + fy * (v11 - v10);
            const T dpy = (T(1) - fx) * (v10 - v00) + fx * (v11 - v01);
            (*gfield)[p] += g * dpx * T(0.5) * static_cast<T>(w);
            (*gfield)[ohw + p] += g * dpy * T(0.5) * static_cast<T>(h);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> translation_field(int h, int w, double dx, double dy) {
  Tensor<T> out = Tensor<T>::zeros({2, h, w});
  T* po = out.data();
  const size_t hw = static_cast<size_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      po[static_cast<size_t>(y) * w + x] = static_cast<T>(pixel_center_coord(x, w) + dx);
      po[hw + static_cast<size_t>(y) * w + x] = static_cast<T>(pixel_center_coord(y, h) + dy);
    }
  return out;
}

#define WSR_INSTANTIATE_TPS(T)                                                   \
  template Tensor<T> tps_grid<T>(Tape<T>*, const Tensor<T>&, const TpsSystem&);  \
  template Tensor<T> grid_sample<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> translation_field<T>(int, int, double, double);

WSR_INSTANTIATE_TPS(float)
WSR_INSTANTIATE_TPS(double)

}  // namespace wsr
