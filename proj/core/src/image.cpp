#include "winnow/image.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>

#include "winnow/errors.hpp"

namespace winnow {

namespace {

constexpr uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void put_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& data) {
  put_u32be(out, static_cast<uint32_t>(data.size()));
  const size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + type_at, static_cast<uInt>(4 + data.size())));
  put_u32be(out, crc);
}

uint8_t paeth(uint8_t a, uint8_t b, uint8_t c) {
  const int p = static_cast<int>(a) + static_cast<int>(b) - static_cast<int>(c);
  const int pa = std::abs(p - static_cast<int>(a));
  const int pb = std::abs(p - static_cast<int>(b));
  const int pc = std::abs(p - static_cast<int>(c));
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

ImageU8 make_image(int64_t width, int64_t height, uint8_t fill) {
  if (width < 1 || height < 1) throw ConfigError("image extents must be >= 1");
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.pixels.assign(static_cast<size_t>(width * height), fill);
  return img;
}

std::vector<uint8_t> encode_png_gray8(const ImageU8& image) {
  if (image.width < 1 || image.height < 1 ||
      image.pixels.size() !=
          static_cast<size_t>(image.width * image.height)) {
    throw ConfigError("malformed image buffer");
  }

  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(image.height * (image.width + 1)));
  for (int64_t y = 0; y < image.height; ++y) {
    raw.push_back(0);  // filter: none
    const uint8_t* row = image.pixels.data() + y * image.width;
    raw.insert(raw.end(), row, row + image.width);
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw FormatError("png deflate failed");
  }
  comp.resize(comp_len);

  std::vector<uint8_t> out(kSignature, kSignature + 8);
  std::vector<uint8_t> ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(image.width));
  put_u32be(ihdr, static_cast<uint32_t>(image.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // color type: grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", comp);
  put_chunk(out, "IEND", {});
  return out;
}

ImageU8 decode_png_gray8(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
    throw FormatError("not a png file");
  }

  int64_t width = 0, height = 0;
  bool have_ihdr = false, have_iend = false;
  std::vector<uint8_t> idat;

  size_t pos = 8;
  while (pos + 12 <= bytes.size() && !have_iend) {
    const uint32_t len = get_u32be(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw FormatError("truncated png chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* data = bytes.data() + pos + 8;
    const uint32_t stored_crc = get_u32be(data + len);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0, bytes.data() + pos + 4, static_cast<uInt>(4 + len)));
    if (crc != stored_crc) throw FormatError("png chunk crc mismatch");

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw FormatError("bad IHDR length");
      width = get_u32be(data);
      height = get_u32be(data + 4);
      const uint8_t depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8 || color != 0) {
        throw FormatError("unsupported png: only 8-bit grayscale is handled");
      }
      if (interlace != 0) throw FormatError("unsupported png: interlaced");
      have_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      have_iend = true;
    }
    pos += 12 + len;
  }
  if (!have_ihdr || !have_iend || width < 1 || height < 1) {
    throw FormatError("png missing required chunks");
  }

  const size_t stride = static_cast<size_t>(width) + 1;
  std::vector<uint8_t> raw(stride * static_cast<size_t>(height));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  const int rc = uncompress(raw.data(), &raw_len, idat.data(),
                            static_cast<uLong>(idat.size()));
  if (rc != Z_OK || raw_len != raw.size()) {
    throw FormatError("png inflate failed");
  }

  ImageU8 img = make_image(width, height);
  std::vector<uint8_t> prev(static_cast<size_t>(width), 0);
  for (int64_t y = 0; y < height; ++y) {
    const uint8_t filter = raw[static_cast<size_t>(y) * stride];
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * stride + 1;
    uint8_t* dst = img.pixels.data() + y * width;
    switch (filter) {
      case 0:
        std::memcpy(dst, src, static_cast<size_t>(width));
        break;
      case 1:  // sub
        dst[0] = src[0];
        for (int64_t x = 1; x < width; ++x) {
          dst[x] = static_cast<uint8_t>(src[x] + dst[x - 1]);
        }
        break;
      case 2:  // up
        for (int64_t x = 0; x < width; ++x) {
          dst[x] = static_cast<uint8_t>(src[x] + prev[static_cast<size_t>(x)]);
        }
        break;
      case 3:  // average
        for (int64_t x = 0; x < width; ++x) {
          const int left = x > 0 ? dst[x - 1] : 0;
          const int up = prev[static_cast<size_t>(x)];
          dst[x] = static_cast<uint8_t>(src[x] + ((left + up) >> 1));
        }
        break;
      case 4:  // paeth
        for (int64_t x = 0; x < width; ++x) {
          const uint8_t left = x > 0 ? dst[x - 1] : 0;
          const uint8_t up = prev[static_cast<size_t>(x)];
          const uint8_t upleft = x > 0 ? prev[static_cast<size_t>(x - 1)] : 0;
          dst[x] = static_cast<uint8_t>(src[x] + paeth(left, up, upleft));
        }
        break;
      default:
        throw FormatError("png scanline filter " + std::to_string(filter) +
                          " invalid");
    }
    std::memcpy(prev.data(), dst, static_cast<size_t>(width));
  }
  return img;
}

void write_png_gray8(const std::string& path, const ImageU8& image) {
  const auto bytes = encode_png_gray8(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

ImageU8 read_png_gray8(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open '" + path + "'");
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw IoError("read failed for '" + path + "'");
  return decode_png_gray8(bytes);
}

ImageU8 pad_replicate(const ImageU8& image, int64_t pad) {
  if (pad < 0) throw ConfigError("pad must be >= 0");
  if (pad == 0) return image;
  ImageU8 out = make_image(image.width + 2 * pad, image.height + 2 * pad);
  for (int64_t y = 0; y < out.height; ++y) {
    const int64_t sy = std::min(std::max<int64_t>(y - pad, 0), image.height - 1);
    for (int64_t x = 0; x < out.width; ++x) {
      const int64_t sx = std::min(std::max<int64_t>(x - pad, 0), image.width - 1);
      out.at(x, y) = image.at(sx, sy);
    }
  }
  return out;
}

ImageU8 crop(const ImageU8& image, int64_t x0, int64_t y0, int64_t width,
             int64_t height) {
  if (x0 < 0 || y0 < 0 || width < 1 || height < 1 ||
      x0 + width > image.width || y0 + height > image.height) {
    throw ConfigError("crop window outside image bounds");
  }
  ImageU8 out = make_image(width, height);
  for (int64_t y = 0; y < height; ++y) {
    std::memcpy(out.pixels.data() + y * width,
                image.pixels.data() + (y0 + y) * image.width + x0,
                static_cast<size_t>(width));
  }
  return out;
}

ImageU8 hflip(const ImageU8& image) {
  ImageU8 out = make_image(image.width, image.height);
  for (int64_t y = 0; y < image.height; ++y) {
    for (int64_t x = 0; x < image.width; ++x) {
      out.at(x, y) = image.at(image.width - 1 - x, y);
    }
  }
  return out;
}

}  // namespace winnow
