#ifndef WSR_TEST_HELPERS_HPP
#define WSR_TEST_HELPERS_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "wsr/rng.hpp"
#include "wsr/tensor.hpp"

namespace wsrtest {

inline void fill_uniform(wsr::Tensor<double>& t, wsr::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.mutable_values()) v = rng.uniform(lo, hi);
}

inline void fill_uniform(wsr::Tensor<float>& t, wsr::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.mutable_values()) v = static_cast<float>(rng.uniform(lo, hi));
}

// Central finite differences against the tape's analytic gradients, on the
// given leaf tensors. `build` must construct the whole graph from scratch on
// each call (tape == nullptr for pure re-evaluations) and return a scalar
// loss. Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
// When max_elems_per_tensor > 0, only a deterministic subsample of each
// tensor's elements is probed.
inline double fd_max_rel_err(std::vector<wsr::Tensor<double>> inputs,
                             const std::function<wsr::Tensor<double>(wsr::Tape<double>*)>& build,
                             int max_elems_per_tensor = 0, double eps = 1e-4) {
  std::vector<std::vector<double>> analytic;
  {
    wsr::Tape<double> tape;
    wsr::Tensor<double> loss = build(&tape);
    tape.backward(loss);
    for (auto& t : inputs) {
      const std::vector<double>* g = tape.find_grad(t);
      analytic.push_back(g ? *g : std::vector<double>(static_cast<size_t>(t.size()), 0.0));
    }
  }
  double worst = 0.0;
  wsr::Rng pick(12345);
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].mutable_values();
    std::vector<size_t> idx(vals.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_elems_per_tensor > 0 && idx.size() > static_cast<size_t>(max_elems_per_tensor)) {
      pick.shuffle(idx.begin(), idx.end());
      idx.resize(static_cast<size_t>(max_elems_per_tensor));
    }
    for (size_t i : idx) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = build(nullptr).item();
      vals[i] = saved - eps;
      const double down = build(nullptr).item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[ti][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

// Reference convolution straight from the definition: six nested loops,
// independent of the production kernel.
inline wsr::Tensor<double> naive_conv2d(const wsr::Tensor<double>& x, const wsr::Tensor<double>& w,
                                        const wsr::Tensor<double>& b, int stride, int pad) {
  const int in_ch = x.dim(0), h = x.dim(1), ww = x.dim(2);
  const int out_ch = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  wsr::Tensor<double> out = wsr::Tensor<double>::zeros({out_ch, oh, ow});
  for (int oc = 0; oc < out_ch; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b.data()[oc];
        for (int ic = 0; ic < in_ch; ++ic)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
              acc += w.data()[((static_cast<size_t>(oc) * in_ch + ic) * kh + ky) * kw + kx] *
                     x.data()[(static_cast<size_t>(ic) * h + iy) * ww + ix];
            }
        out.data()[(static_cast<size_t>(oc) * oh + oy) * ow + ox] = acc;
      }
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

}  // namespace wsrtest

#endif  // WSR_TEST_HELPERS_HPP
