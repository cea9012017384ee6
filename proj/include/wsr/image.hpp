#ifndef WSR_IMAGE_HPP
#define WSR_IMAGE_HPP

#include <string>
#include <vector>

#include "wsr/tensor.hpp"

namespace wsr {

// Planar RGB, values in [0,1], channel-major like the tensors it feeds.
struct Image {
  int h = 0;
  int w = 0;
  std::vector<float> v;  // 3*h*w

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(3) * h_ * w_, 0.0f) {}

  float& at(int c, int y, int x) { return v[(static_cast<size_t>(c) * h + y) * w + x]; }
  float at(int c, int y, int x) const { return v[(static_cast<size_t>(c) * h + y) * w + x]; }
  size_t size() const { return v.size(); }

  void clamp01();
};

template <typename T>
Tensor<T> image_to_tensor(const Image& img);
template <typename T>
Image tensor_to_image(const Tensor<T>& t);

// 8-bit RGB PNG only; anything else (grayscale, palette, RGBA, 16-bit) is an
// explicit unsupported-format error.
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

}  // namespace wsr

#endif  // WSR_IMAGE_HPP
