#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace winnow {

struct ImageU8 {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> pixels;  // row-major, one byte per pixel

  uint8_t at(int64_t x, int64_t y) const {
    return pixels[static_cast<size_t>(y * width + x)];
  }
  uint8_t& at(int64_t x, int64_t y) {
    return pixels[static_cast<size_t>(y * width + x)];
  }
};

ImageU8 make_image(int64_t width, int64_t height, uint8_t fill = 0);

// 8-bit grayscale PNG, non-interlaced. The reader handles all five scanline
// filters; anything but depth-8 grayscale is rejected with FormatError.
std::vector<uint8_t> encode_png_gray8(const ImageU8& image);
ImageU8 decode_png_gray8(const std::vector<uint8_t>& bytes);
void write_png_gray8(const std::string& path, const ImageU8& image);
ImageU8 read_png_gray8(const std::string& path);

ImageU8 pad_replicate(const ImageU8& image, int64_t pad);
ImageU8 crop(const ImageU8& image, int64_t x0, int64_t y0, int64_t width,
             int64_t height);
ImageU8 hflip(const ImageU8& image);

}  // namespace winnow
