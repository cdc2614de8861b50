#pragma once

#include <cstdint>
#include <vector>

#include "xmar/tensor.hpp"

namespace xmar {

// 8-bit PNG of an (h, w, c) image in [-1, 1]; c = 1 is grayscale, c = 3 RGB.
// Channel value = round((v + 1) * 127.5), half-up, clamped to [0, 255].
// With an anchor image each channel is instead rounded toward the anchor, so
// an anchor already on the 8-bit grid stays within the image's distance of it.
std::vector<std::uint8_t> encode_png(const Tensor<float>& image, const Tensor<float>* anchor = nullptr);

// Inverse mapping v = byte / 127.5 - 1. Grayscale and RGB inputs only.
Tensor<float> decode_png(const std::vector<std::uint8_t>& bytes);

std::uint8_t pixel_byte(float v);
std::uint8_t pixel_byte_toward(float v, float anchor);

}  // namespace xmar
