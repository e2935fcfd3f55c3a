#include "aoglab/error.hpp"
#include "aoglab/viz.hpp"

#include <zlib.h>

#include <array>

namespace aoglab {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  const std::array<char, 4> b{char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.append(b.data(), 4);
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, std::uint32_t(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32(out, std::uint32_t(crc32(0, reinterpret_cast<const Bytef*>(body.data()), uInt(body.size()))));
}

}  // namespace

std::string encode_png_gray(const Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& pixels) {
  const auto h = std::uint32_t(pixels.rows());
  const auto w = std::uint32_t(pixels.cols());
  if (w == 0 || h == 0) throw Error("PNG: empty image");

  std::string raw;
  raw.reserve(std::size_t(h) * (w + 1));
  for (std::uint32_t i = 0; i < h; ++i) {
    raw.push_back(0);  // filter: none
    for (std::uint32_t j = 0; j < w; ++j) raw.push_back(char(pixels(i, j)));
  }
  uLongf zlen = compressBound(uLong(raw.size()));
  std::string z(zlen, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &zlen, reinterpret_cast<const Bytef*>(raw.data()), uLong(raw.size()), 6) != Z_OK)
    throw Error("PNG: deflate failed");
  z.resize(zlen);

  std::string ihdr;
  put_u32(ihdr, w);
  put_u32(ihdr, h);
  ihdr += std::string{char(8), char(0), char(0), char(0), char(0)};  // 8-bit gray, no interlace

  std::string png("\x89PNG\r\n\x1a\n", 8);
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", z);
  put_chunk(png, "IEND", {});
  return png;
}

}  // namespace aoglab
