#include <zlib.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "rlq/image.hpp"

namespace rlq {

void validate_image(const Image& img) {
  if (img.height < 16 || img.width < 8) {
    throw std::invalid_argument("image: minimum size is 16x8");
  }
  if (img.data.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
    throw std::invalid_argument("image: buffer size does not match dimensions");
  }
}

namespace {

const std::array<std::uint8_t, 8> kPngSignature = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32_be(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = crc32(0, out.data() + type_pos, static_cast<uInt>(4 + payload.size()));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  if (img.height <= 0 || img.width <= 0 ||
      img.data.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
    throw std::invalid_argument("write_png: malformed image");
  }
  // raw scanlines, filter byte 0 per row
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw[y * (stride + 1)] = 0;
    std::memcpy(&raw[y * (stride + 1) + 1], &img.data[y * stride], stride);
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw std::runtime_error("write_png: deflate failed");
  }
  comp.resize(comp_len);

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kPngSignature.begin(), kPngSignature.end());

  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write_png: short write to " + path);
}

namespace {

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_png: cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 8 || !std::equal(kPngSignature.begin(), kPngSignature.end(), buf.begin())) {
    throw std::runtime_error("read_png: not a PNG file: " + path);
  }

  std::size_t pos = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<std::uint8_t> idat;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t len = get_u32_be(&buf[pos]);
    const char* type = reinterpret_cast<const char*>(&buf[pos + 4]);
    const std::uint8_t* payload = &buf[pos + 8];
    if (pos + 12 + len > buf.size()) throw std::runtime_error("read_png: truncated chunk");
    if (std::memcmp(type, "IHDR", 4) == 0) {
      width = static_cast<int>(get_u32_be(payload));
      height = static_cast<int>(get_u32_be(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      interlace = payload[12];
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) throw std::runtime_error("read_png: missing IHDR");
  if (bit_depth != 8 || (color_type != 2 && color_type != 6) || interlace != 0) {
    throw std::runtime_error("read_png: only 8-bit RGB/RGBA non-interlaced supported");
  }
  const int channels = color_type == 6 ? 4 : 3;
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw((stride + 1) * height);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size()) {
    throw std::runtime_error("read_png: inflate failed");
  }

  // undo scanline filters in place
  std::vector<std::uint8_t> prev(stride, 0);
  Image img(height, width);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    std::uint8_t* row = &raw[y * (stride + 1) + 1];
    for (std::size_t x = 0; x < stride; ++x) {
      const int left = x >= static_cast<std::size_t>(channels) ? row[x - channels] : 0;
      const int up = prev[x];
      const int upleft = x >= static_cast<std::size_t>(channels) ? prev[x - channels] : 0;
      int v = row[x];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) / 2; break;
        case 4: v += paeth(left, up, upleft); break;
        default: throw std::runtime_error("read_png: unknown filter type");
      }
      row[x] = static_cast<std::uint8_t>(v & 0xff);
    }
    std::memcpy(prev.data(), row, stride);
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x * channels + c];
    }
  }
  return img;
}

}  // namespace rlq
