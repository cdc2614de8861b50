#include "xmar/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "xmar/error.hpp"

namespace xmar {
namespace {

struct WriteSink {
  std::vector<std::uint8_t>* out;
};

struct ReadSource {
  const std::vector<std::uint8_t>* in;
  std::size_t pos = 0;
};

void on_write(png_structp png, png_bytep data, png_size_t len) {
  auto* sink = static_cast<WriteSink*>(png_get_io_ptr(png));
  sink->out->insert(sink->out->end(), data, data + len);
}

void on_flush(png_structp) {}

void on_read(png_structp png, png_bytep data, png_size_t len) {
  auto* src = static_cast<ReadSource*>(png_get_io_ptr(png));
  if (src->pos + len > src->in->size()) png_error(png, "truncated PNG");
  std::memcpy(data, src->in->data() + src->pos, len);
  src->pos += len;
}

[[noreturn]] void on_error(png_structp, png_const_charp msg) { throw ParseError(std::string("png: ") + msg); }

void on_warning(png_structp, png_const_charp) {}

}  // namespace

std::uint8_t pixel_byte(float v) {
  const double scaled = std::floor((static_cast<double>(v) + 1.0) * 127.5 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

std::uint8_t pixel_byte_toward(float v, float anchor) {
  const double r = (static_cast<double>(v) + 1.0) * 127.5;
  const double a = (static_cast<double>(anchor) + 1.0) * 127.5;
  const double b = r >= a ? std::floor(r) : std::ceil(r);
  return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}

std::vector<std::uint8_t> encode_png(const Tensor<float>& image, const Tensor<float>* anchor) {
  if (image.rank() != 3) throw ShapeError("export_png: expected (h, w, c), got " + to_string(image.shape()));
  const auto h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (c != 1 && c != 3) throw ShapeError("export_png: only 1 or 3 channels are supported, got " + std::to_string(c));

  std::vector<std::uint8_t> pixels(image.size());
  if (anchor && anchor->shape() != image.shape()) {
    throw ShapeError("export_png: anchor shape " + to_string(anchor->shape()) + " differs from image " +
                     to_string(image.shape()));
  }
  for (std::size_t i = 0; i < image.size(); ++i) {
    pixels[i] = anchor ? pixel_byte_toward(image[i], (*anchor)[i]) : pixel_byte(image[i]);
  }

  std::vector<std::uint8_t> out;
  WriteSink sink{&out};
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  if (!png) throw Error("export_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  try {
    if (!info) throw Error("export_png: libpng init failed");
    png_set_write_fn(png, &sink, on_write, on_flush);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::int64_t y = 0; y < h; ++y) png_write_row(png, pixels.data() + y * w * c);
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Tensor<float> decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ParseError("png: bad signature");
  ReadSource src{&bytes};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  if (!png) throw Error("png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  Tensor<float> out;
  try {
    if (!info) throw Error("png: libpng init failed");
    png_set_read_fn(png, &src, on_read);
    png_read_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) != 8 || (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB)) {
      throw ParseError("png: only 8-bit grayscale or RGB images are supported");
    }
    const int c = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
    std::vector<std::uint8_t> row(std::size_t(w) * c);
    out = Tensor<float>(Shape{std::int64_t(h), std::int64_t(w), c});
    for (png_uint_32 y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (std::size_t i = 0; i < row.size(); ++i) out[y * row.size() + i] = static_cast<float>(row[i] / 127.5 - 1.0);
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace xmar
