// Minimal PNG reader/writer over zlib. Writes filter-0 scanlines (gray16 and
// rgb8); reads any of the five standard filters, color types 0 and 2 at bit
// depth 8 or 16, no interlace, no palette.
#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "monokd/common.hpp"

namespace monokd {

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 (gray) or 3 (rgb)
  int bit_depth = 0;  // 8 or 16
  std::vector<std::uint8_t> raw;  // big-endian sample order, row-major

  std::uint16_t sample16(int y, int x, int c = 0) const {
    const std::size_t i = ((static_cast<std::size_t>(y) * width + x) * channels + c) * 2;
    return static_cast<std::uint16_t>((raw[i] << 8) | raw[i + 1]);
  }
  std::uint8_t sample8(int y, int x, int c = 0) const {
    return raw[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

namespace pngdetail {

inline void put_u32be(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

inline std::uint32_t get_u32be(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

inline void append_chunk(std::vector<std::uint8_t>& png, const char type[5],
                         const std::vector<std::uint8_t>& data) {
  put_u32be(png, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = png.size();
  png.insert(png.end(), type, type + 4);
  png.insert(png.end(), data.begin(), data.end());
  const std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0L, png.data() + start, static_cast<uInt>(4 + data.size())));
  put_u32be(png, crc);
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

inline std::vector<std::uint8_t> encode(const std::vector<std::uint8_t>& samples, int width,
                                        int height, int channels, int bit_depth) {
  const int bpp = channels * bit_depth / 8;
  const std::size_t stride = static_cast<std::size_t>(width) * bpp;
  if (samples.size() != stride * height) throw IoError("png encode: sample buffer size mismatch");

  std::vector<std::uint8_t> filtered;
  filtered.reserve((stride + 1) * height);
  for (int y = 0; y < height; ++y) {
    filtered.push_back(0);  // filter: none
    filtered.insert(filtered.end(), samples.begin() + y * stride,
                    samples.begin() + (y + 1) * stride);
  }

  uLongf bound = compressBound(static_cast<uLong>(filtered.size()));
  std::vector<std::uint8_t> idat(bound);
  if (compress2(idat.data(), &bound, filtered.data(), static_cast<uLong>(filtered.size()), 6) !=
      Z_OK)
    throw IoError("png encode: deflate failed");
  idat.resize(bound);

  std::vector<std::uint8_t> png = {137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<std::uint8_t> ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(width));
  put_u32be(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(static_cast<std::uint8_t>(bit_depth));
  ihdr.push_back(channels == 1 ? 0 : 2);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(png, "IHDR", ihdr);
  append_chunk(png, "IDAT", idat);
  append_chunk(png, "IEND", {});
  return png;
}

}  // namespace pngdetail

inline std::vector<std::uint8_t> png_encode_gray16(const std::vector<std::uint16_t>& pix,
                                                   int width, int height) {
  if (pix.size() != static_cast<std::size_t>(width) * height)
    throw IoError("png encode: pixel count mismatch");
  std::vector<std::uint8_t> raw(pix.size() * 2);
  for (std::size_t i = 0; i < pix.size(); ++i) {
    raw[2 * i] = static_cast<std::uint8_t>(pix[i] >> 8);
    raw[2 * i + 1] = static_cast<std::uint8_t>(pix[i] & 0xff);
  }
  return pngdetail::encode(raw, width, height, 1, 16);
}

inline std::vector<std::uint8_t> png_encode_rgb8(const std::vector<std::uint8_t>& pix, int width,
                                                 int height) {
  if (pix.size() != static_cast<std::size_t>(width) * height * 3)
    throw IoError("png encode: pixel count mismatch");
  return pngdetail::encode(pix, width, height, 3, 8);
}

inline PngImage png_decode(const std::vector<std::uint8_t>& bytes) {
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw IoError("png decode: bad signature");

  PngImage img;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = pngdetail::get_u32be(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw IoError("png decode: truncated chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const std::uint8_t* data = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("png decode: bad IHDR");
      img.width = static_cast<int>(pngdetail::get_u32be(data));
      img.height = static_cast<int>(pngdetail::get_u32be(data + 4));
      img.bit_depth = data[8];
      const int color = data[9];
      if (data[12] != 0) throw IoError("png decode: interlace unsupported");
      if (color == 0) img.channels = 1;
      else if (color == 2) img.channels = 3;
      else throw IoError("png decode: color type unsupported");
      if (img.bit_depth != 8 && img.bit_depth != 16)
        throw IoError("png decode: bit depth unsupported");
      if (img.width <= 0 || img.height <= 0) throw IoError("png decode: bad dimensions");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty()) throw IoError("png decode: missing chunks");

  const int bpp = img.channels * img.bit_depth / 8;
  const std::size_t stride = static_cast<std::size_t>(img.width) * bpp;
  std::vector<std::uint8_t> filtered((stride + 1) * img.height);
  uLongf out_len = static_cast<uLongf>(filtered.size());
  if (uncompress(filtered.data(), &out_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      out_len != filtered.size())
    throw IoError("png decode: inflate failed");

  img.raw.assign(stride * img.height, 0);
  std::vector<std::uint8_t> prior(stride, 0);
  for (int y = 0; y < img.height; ++y) {
    const std::uint8_t f = filtered[y * (stride + 1)];
    const std::uint8_t* src = &filtered[y * (stride + 1) + 1];
    std::uint8_t* dst = &img.raw[y * stride];
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
      const int b = prior[i];
      const int c = i >= static_cast<std::size_t>(bpp) ? prior[i - bpp] : 0;
      int v = src[i];
      switch (f) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += pngdetail::paeth(a, b, c); break;
        default: throw IoError("png decode: unknown filter " + std::to_string(f));
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
    std::memcpy(prior.data(), dst, stride);
  }
  return img;
}

}  // namespace monokd
