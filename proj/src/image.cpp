#include "wsr/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace wsr {

void Image::clamp01() {
  for (float& x : v) x = x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x);
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  std::vector<T> v(img.v.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.v[i]);
  return Tensor<T>::from_values({3, img.h, img.w}, std::move(v));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
  WSR_REQUIRE(t.rank() == 3 && t.dim(0) == 3, ErrKind::usage,
              "tensor_to_image: expected [3,H,W], got ", shape_str(t.shape()));
  Image img(t.dim(1), t.dim(2));
  const T* p = t.data();
  for (size_t i = 0; i < img.v.size(); ++i) img.v[i] = static_cast<float>(p[i]);
  return img;
}

template Tensor<float> image_to_tensor<float>(const Image&);
template Tensor<double> image_to_tensor<double>(const Image&);
template Image tensor_to_image<float>(const Tensor<float>&);
template Image tensor_to_image<double>(const Tensor<double>&);

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Image load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  WSR_REQUIRE(fp != nullptr, ErrKind::io, "cannot open '", path, "'");

  png_byte header[8];
  WSR_REQUIRE(std::fread(header, 1, 8, fp.get()) == 8 && !png_sig_cmp(header, 0, 8), ErrKind::io,
              "'", path, "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  WSR_REQUIRE(png, ErrKind::internal, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrKind::internal, "png_create_info_struct failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  int width = 0, height = 0, color = 0, depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrKind::io, "PNG decode failed for '", path, "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  color = png_get_color_type(png, info);
  depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_RGB || depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrKind::io, "unsupported PNG format in '", path, "': color type ", color, ", bit depth ",
         depth, " (8-bit RGB required)");
  }
  pixels.resize(static_cast<size_t>(width) * height * 3);
  rows.resize(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] = pixels.data() + static_cast<size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) =
            static_cast<float>(pixels[(static_cast<size_t>(y) * width + x) * 3 + c]) / 255.0f;
  return img;
}

void save_png(const Image& img, const std::string& path) {
  WSR_REQUIRE(img.h > 0 && img.w > 0, ErrKind::usage, "save_png: empty image");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  WSR_REQUIRE(fp != nullptr, ErrKind::io, "cannot open '", path, "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  WSR_REQUIRE(png, ErrKind::internal, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrKind::internal, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrKind::io, "PNG encode failed for '", path, "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<size_t>(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img.at(c, y, x);
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        row[static_cast<size_t>(x) * 3 + c] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace wsr
