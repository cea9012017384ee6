#ifndef WSR_LAYERS_HPP
#define WSR_LAYERS_HPP

#include "wsr/rng.hpp"
#include "wsr/tensor.hpp"

namespace wsr {

// Weight layout [out_ch, in_ch, kh, kw]. Odd kernels with pad = (k-1)/2 and
// stride 1 preserve the spatial size.
template <typename T>
struct Conv2d {
  Tensor<T> w;
  Tensor<T> b;
  int stride = 1;
  int pad = 0;
};

// Weight layout [in_ch, out_ch, kh, kw]; the scatter (adjoint-of-conv) form.
// With k = 2*stride and pad = stride/2 the output is exactly stride times
// the input size.
template <typename T>
struct ConvTranspose2d {
  Tensor<T> w;
  Tensor<T> b;
  int stride = 1;
  int pad = 0;
};

template <typename T>
struct Linear {
  Tensor<T> w;  // [out, in]
  Tensor<T> b;  // [out]
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases zero.
// Deterministic for a given rng state.
template <typename T>
Conv2d<T> make_conv2d(Rng& rng, int in_ch, int out_ch, int k, int stride, int pad);
template <typename T>
ConvTranspose2d<T> make_conv_transpose2d(Rng& rng, int in_ch, int out_ch, int k, int stride, int pad);
template <typename T>
Linear<T> make_linear(Rng& rng, int in, int out);

template <typename T>
Tensor<T> init_uniform_fan(Rng& rng, Shape shape, int fan_in, int fan_out, bool requires_grad);

// x: [C, H, W] -> [out_ch, H', W'] with H' = (H + 2p - kh)/s + 1.
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Conv2d<T>& layer);

// x: [C, H, W] -> [out_ch, (H-1)s - 2p + k, ...].
template <typename T>
Tensor<T> conv_transpose2d(Tape<T>* tape, const Tensor<T>& x, const ConvTranspose2d<T>& layer);

// x: rank-1 [in] -> [out].
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Linear<T>& layer);

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x);

// 2x2 average pooling, stride 2 (H, W must be even).
template <typename T>
Tensor<T> avg_pool2(Tape<T>* tape, const Tensor<T>& x);

// [C, H, W] -> [C] mean over the spatial extent.
template <typename T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x);

int conv_out_size(int in, int k, int stride, int pad);
int conv_transpose_out_size(int in, int k, int stride, int pad);

}  // namespace wsr

#endif  // WSR_LAYERS_HPP
